"""等相関多変量正規分布の equicoordinate 分位点と、漸近的なバンド幅・被覆率。

Σ は対角 1、非対角 ρ (0 ≤ ρ < 1)。Z_j = √ρ W + √(1-ρ) ε_j の 1 因子表現で
max_j |Z_j| をモンテカルロ生成し、その分布から

- sup-t の尺度 q_{Σ,1-α}（(1-α) 分位点）
- pointwise (z_{1-α/2}) / Bonferroni (z_{1-α/(2J)}) の漸近被覆率
- 幅の比 z_{1-α/(2J)} / q、q / z_{1-α/2}

を求める。直前に使った (J, ρ, mc_draws, seed) の標本だけを保持して使い回す。
"""
from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from .bands import normal_quantile
from .errors import InvalidInputError
from .rng import STREAM_EQUICORR, chunk_generator
from .utils import chunk_ranges, ordered_map

logger = logging.getLogger(__name__)

DEFAULT_MC_DRAWS = 2_000_000
DEFAULT_RHO_VALUES: tuple[float, ...] = (0.0, 0.3, 0.6)
MC_CHUNK = 1 << 16

# 既定の mc_draws では 1 エントリ 16 MB になるので 1 件だけ持つ
_DRAW_CACHE: dict[tuple[int, float, int, int], NDArray[np.float64]] = {}
_DRAW_CACHE_LOCK = threading.Lock()


@dataclass(frozen=True)
class EquicorrSpec:
    J: int
    rho: float
    alpha: float = 0.1
    mc_draws: int = DEFAULT_MC_DRAWS
    seed: int = 0

    def __post_init__(self) -> None:
        if self.J < 1:
            raise InvalidInputError(f"J は 1 以上である必要があります: {self.J}")
        if not (0.0 <= self.rho < 1.0):
            raise InvalidInputError(f"rho は [0, 1) である必要があります: {self.rho}")
        if not (0.0 < self.alpha < 1.0):
            raise InvalidInputError(f"alpha は (0, 1) である必要があります: {self.alpha}")
        if self.mc_draws < 1:
            raise InvalidInputError(f"mc_draws は 1 以上である必要があります: {self.mc_draws}")
        if not (0 <= self.seed < 2**64):
            raise InvalidInputError(f"seed は 64bit 符号なし整数である必要があります: {self.seed}")


def _simulate_max_abs(J: int, rho: float, mc_draws: int, seed: int, workers: int | None) -> NDArray[np.float64]:
    """max_j |Z_j| のモンテカルロ標本（昇順ソート済み、読み取り専用）。"""
    load = math.sqrt(rho)
    resid = math.sqrt(1.0 - rho)

    def run_chunk(item: tuple[int, tuple[int, int]]) -> NDArray[np.float64]:
        chunk, (lo, hi) = item
        rng = chunk_generator(seed, STREAM_EQUICORR, chunk)
        k = hi - lo
        common = rng.standard_normal(k)
        eps = rng.standard_normal((k, J))
        z = load * common[:, None] + resid * eps
        return np.abs(z).max(axis=1)

    chunks = list(enumerate(chunk_ranges(mc_draws, MC_CHUNK)))
    draws = np.sort(np.concatenate(ordered_map(run_chunk, chunks, workers=workers)))
    draws.flags.writeable = False
    logger.debug("equicorrelated draws: J=%d rho=%g n=%d", J, rho, mc_draws)
    return draws


def max_abs_draws(spec: EquicorrSpec, *, workers: int | None = None) -> NDArray[np.float64]:
    # スレッド数は結果に影響しないのでキャッシュキーに含めない
    key = (spec.J, float(spec.rho), spec.mc_draws, spec.seed)
    with _DRAW_CACHE_LOCK:
        draws = _DRAW_CACHE.get(key)
    if draws is None:
        draws = _simulate_max_abs(*key, workers)
        with _DRAW_CACHE_LOCK:
            _DRAW_CACHE.clear()
            _DRAW_CACHE[key] = draws
    return draws


def _upper_order_statistic(draws: NDArray[np.float64], alpha: float) -> float:
    rank = min(max(math.ceil((1.0 - alpha) * draws.size - 1e-9), 1), draws.size)
    return float(draws[rank - 1])


def _fraction_below(draws: NDArray[np.float64], threshold: float) -> float:
    return float(np.searchsorted(draws, threshold, side="right") / draws.size)


def equicoordinate_quantile(spec: EquicorrSpec, *, workers: int | None = None) -> float:
    """P(max_j |Z_j| ≤ c) = 1-α となる c（⌈(1-α)M⌉ 番目の順序統計量）。"""
    return _upper_order_statistic(max_abs_draws(spec, workers=workers), spec.alpha)


def equicoordinate_quantile_independent(J: int, alpha: float) -> float:
    """ρ=0 の閉形式: (2Φ(c)-1)^J = 1-α の解 Φ^{-1}((1 + (1-α)^{1/J}) / 2)。"""
    if J < 1:
        raise InvalidInputError(f"J は 1 以上である必要があります: {J}")
    if not (0.0 < alpha < 1.0):
        raise InvalidInputError(f"alpha は (0, 1) である必要があります: {alpha}")
    return normal_quantile((1.0 + (1.0 - alpha) ** (1.0 / J)) / 2.0)


def asymptotic_coverage(spec: EquicorrSpec, threshold: float, *, workers: int | None = None) -> float:
    """P(max_j |Z_j| ≤ threshold) のモンテカルロ推定。"""
    return _fraction_below(max_abs_draws(spec, workers=workers), threshold)


def pointwise_asymptotic_coverage(spec: EquicorrSpec, *, workers: int | None = None) -> float:
    return asymptotic_coverage(spec, normal_quantile(1.0 - spec.alpha / 2.0), workers=workers)


def bonferroni_asymptotic_coverage(spec: EquicorrSpec, *, workers: int | None = None) -> float:
    return asymptotic_coverage(spec, normal_quantile(1.0 - spec.alpha / (2.0 * spec.J)), workers=workers)


def width_ratio_bonf_vs_supt(spec: EquicorrSpec, *, workers: int | None = None) -> float:
    return normal_quantile(1.0 - spec.alpha / (2.0 * spec.J)) / equicoordinate_quantile(spec, workers=workers)


def width_ratio_supt_vs_pointwise(spec: EquicorrSpec, *, workers: int | None = None) -> float:
    return equicoordinate_quantile(spec, workers=workers) / normal_quantile(1.0 - spec.alpha / 2.0)


def asymptotic_table(
    J_values: Sequence[int],
    rho_values: Sequence[float] = DEFAULT_RHO_VALUES,
    *,
    alpha: float = 0.1,
    mc_draws: int = DEFAULT_MC_DRAWS,
    seed: int = 0,
    workers: int | None = None,
) -> pd.DataFrame:
    """(J, ρ) ごとの分位点・幅の比・被覆率の tidy 表。"""
    rows = []
    z_pointwise = normal_quantile(1.0 - alpha / 2.0)
    for rho in rho_values:
        for J in J_values:
            spec = EquicorrSpec(J=int(J), rho=float(rho), alpha=alpha, mc_draws=mc_draws, seed=seed)
            draws = _simulate_max_abs(spec.J, spec.rho, spec.mc_draws, spec.seed, workers)
            q = _upper_order_statistic(draws, alpha)
            z_bonf = normal_quantile(1.0 - alpha / (2.0 * spec.J))
            rows.append(
                {
                    "J": spec.J,
                    "rho": spec.rho,
                    "alpha": alpha,
                    "supt_quantile": q,
                    "pointwise_z": z_pointwise,
                    "bonferroni_z": z_bonf,
                    "supt_vs_pointwise": q / z_pointwise,
                    "bonf_vs_supt": z_bonf / q,
                    "pointwise_coverage": _fraction_below(draws, z_pointwise),
                    "bonferroni_coverage": _fraction_below(draws, z_bonf),
                }
            )
        logger.info("asymptotics: rho=%g 完了 (J=%s)", rho, list(J_values))
    return pd.DataFrame(rows)
