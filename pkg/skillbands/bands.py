"""ブートストラップによる pointwise / Bonferroni / sup-t 信頼バンド。

手順:
  1. 元パネルで点推定（スキルスコア・期待スコア・相対精度のいずれか）
  2-3. moving block bootstrap で B 個のリサンプルを作り、それぞれの推定値を計算
  4. 各要素の標準偏差 σ*_j（除数 B-1）
  5. スケーリング定数: pointwise z_{1-α/2}、Bonferroni z_{1-α/(2J)}、
     sup-t は max_j |SS*_j - SS_j| / σ*_j の ⌈(1-α)B⌉ 番目の順序統計量
  6. 対称バンド [SS_j - σ*_j c, SS_j + σ*_j c]

要求されたバンド種別はすべて同じ B 個のリサンプルから作る。

乱数: 複製を REPLICATE_CHUNK 個ずつのチャンクに分け、チャンク c は
``rng.chunk_generator(seed, STREAM_BOOTSTRAP, c)`` のストリームだけを使う。
チャンク分割はスレッド数に依存しないので、結果はビット単位で一致する。
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Literal, Sequence

import numpy as np
import pandas as pd
from numba import njit
from numpy.typing import NDArray
from scipy.special import ndtri

from .errors import InvalidInputError, ZeroSigmaError
from .panel import TARGETS, ComparisonSelector, ScorePanel, TargetEvaluator, select_target
from .rng import STREAM_BOOTSTRAP, chunk_generator
from .utils import chunk_ranges, ordered_map

logger = logging.getLogger(__name__)

BandType = Literal["pointwise", "bonferroni", "supt"]
BAND_TYPES: tuple[str, ...] = ("supt", "bonferroni", "pointwise")

DEFAULT_ALPHA = 0.1
DEFAULT_N_BOOT = 4000
DEFAULT_BLOCK_Q = 3
DEFAULT_SEED = 0
REPLICATE_CHUNK = 256
# 同等の予測精度を表す値
NULL_VALUES = {"skill": 0.0, "relative": 1.0}
REPORT_COLUMNS = ("entry", "estimate", "sigma")


def normal_quantile(p: float) -> float:
    """標準正規分布の p 分位点 Φ^{-1}(p)。"""
    p = float(p)
    if not (0.0 < p < 1.0):
        raise InvalidInputError(f"p は (0, 1) である必要があります: {p}")
    return float(ndtri(p))


def _fourth_root_floor(n: int) -> int:
    r = int(round(n ** 0.25))
    while r > 0 and r**4 > n:
        r -= 1
    while (r + 1) ** 4 <= n:
        r += 1
    return r


def default_block_length(n_time: int, q: int = DEFAULT_BLOCK_Q) -> int:
    """l = q⌊N^{1/4}⌋ を [1, N] に収めたもの。q=0 は iid ブートストラップ (l=1)。"""
    if n_time < 1:
        raise InvalidInputError(f"N は 1 以上である必要があります: {n_time}")
    if q < 0:
        raise InvalidInputError(f"block_q は 0 以上である必要があります: {q}")
    return max(1, min(n_time, q * _fourth_root_floor(n_time)))


@dataclass(frozen=True)
class BandConfig:
    alpha: float = DEFAULT_ALPHA
    n_boot: int = DEFAULT_N_BOOT
    block_length: int | None = None
    block_q: int = DEFAULT_BLOCK_Q
    seed: int = DEFAULT_SEED
    band_types: tuple[str, ...] = BAND_TYPES
    target: str = "skill"

    def __post_init__(self) -> None:
        object.__setattr__(self, "band_types", tuple(self.band_types))
        if not (0.0 < self.alpha < 1.0):
            raise InvalidInputError(f"alpha は (0, 1) である必要があります: {self.alpha}")
        if self.n_boot < 2:
            raise InvalidInputError(f"B は 2 以上である必要があります: {self.n_boot}")
        if self.block_length is not None and self.block_length < 1:
            raise InvalidInputError(f"ブロック長は 1 以上である必要があります: {self.block_length}")
        if self.block_q < 0:
            raise InvalidInputError(f"block_q は 0 以上である必要があります: {self.block_q}")
        if not (0 <= self.seed < 2**64):
            raise InvalidInputError(f"seed は 64bit 符号なし整数である必要があります: {self.seed}")
        if not self.band_types:
            raise InvalidInputError("band_types が空です")
        unknown = [t for t in self.band_types if t not in BAND_TYPES]
        if unknown:
            raise InvalidInputError(f"未知のバンド種別: {unknown} (選択肢: {', '.join(BAND_TYPES)})")
        if len(set(self.band_types)) != len(self.band_types):
            raise InvalidInputError(f"バンド種別が重複しています: {list(self.band_types)}")
        if self.target not in TARGETS:
            raise InvalidInputError(f"未知の target: {self.target!r} (選択肢: {', '.join(TARGETS)})")

    def resolve_block_length(self, n_time: int) -> int:
        length = self.block_length if self.block_length is not None else default_block_length(n_time, self.block_q)
        if not (1 <= length <= n_time):
            raise InvalidInputError(f"ブロック長 l は 1 ≤ l ≤ N={n_time} である必要があります: {length}")
        return length

    def quantile_rank(self) -> int:
        """sup-t で使う順序統計量の順位 k = ⌈(1-α)B⌉。"""
        # (1-α)B が整数のとき浮動小数点誤差で k+1 にならないように
        k = math.ceil((1.0 - self.alpha) * self.n_boot - 1e-9)
        return min(max(k, 1), self.n_boot)


@dataclass(frozen=True, eq=False)
class BandResult:
    estimates: NDArray[np.float64]
    sigma_hat: NDArray[np.float64]
    scaling: dict[str, float]
    lower: dict[str, NDArray[np.float64]]
    upper: dict[str, NDArray[np.float64]]
    entry_labels: tuple[str, ...]
    metadata: dict[str, Any] = field(default_factory=dict)
    entry_fields: tuple[str, ...] = ()
    entry_keys: tuple[tuple[str, ...], ...] = ()

    @classmethod
    def from_scaling(
        cls,
        estimates: Sequence[float],
        sigma_hat: Sequence[float],
        scaling: dict[str, float],
        *,
        entry_labels: Sequence[str] | None = None,
        metadata: dict[str, Any] | None = None,
        entry_fields: Sequence[str] = (),
        entry_keys: Sequence[Sequence[str]] = (),
    ) -> "BandResult":
        est = np.asarray(estimates, dtype=np.float64)
        sig = np.asarray(sigma_hat, dtype=np.float64)
        if est.shape != sig.shape or est.ndim != 1:
            raise InvalidInputError(f"estimates と sigma_hat の形が一致しません: {est.shape} vs {sig.shape}")
        if np.any(sig <= 0):
            raise ZeroSigmaError([str(i) for i in np.flatnonzero(sig <= 0)])
        labels = tuple(entry_labels) if entry_labels is not None else tuple(str(i) for i in range(est.size))
        fields = tuple(entry_fields)
        keys = tuple(tuple(k) for k in entry_keys)
        if keys and (len(keys) != est.size or any(len(k) != len(fields) for k in keys)):
            raise InvalidInputError(f"entry_keys は {est.size} 個の長さ {len(fields)} の組である必要があります")
        lower = {t: est - sig * c for t, c in scaling.items()}
        upper = {t: est + sig * c for t, c in scaling.items()}
        return cls(
            estimates=est,
            sigma_hat=sig,
            scaling=dict(scaling),
            lower=lower,
            upper=upper,
            entry_labels=labels,
            metadata=dict(metadata or {}),
            entry_fields=fields,
            entry_keys=keys,
        )

    @property
    def band_types(self) -> tuple[str, ...]:
        return tuple(self.scaling)

    def covers(self, values: Sequence[float] | float, band_type: str) -> NDArray[np.bool_]:
        v = np.broadcast_to(np.asarray(values, dtype=np.float64), self.estimates.shape)
        return (self.lower[band_type] <= v) & (v <= self.upper[band_type])

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "metadata": self.metadata,
            "entries": list(self.entry_labels),
            "estimates": self.estimates.tolist(),
            "sigma_hat": self.sigma_hat.tolist(),
            "scaling": {t: float(c) for t, c in self.scaling.items()},
            "lower": {t: v.tolist() for t, v in self.lower.items()},
            "upper": {t: v.tolist() for t, v in self.upper.items()},
        }


def draw_block_starts(rng: np.random.Generator, n_time: int, block_length: int) -> NDArray[np.int64]:
    """N-l+1 個のブロックから ⌈N/l⌉ 個の開始位置（0 始まり）を復元抽出する。"""
    n_blocks = -(-n_time // block_length)
    return rng.integers(0, n_time - block_length + 1, size=n_blocks, dtype=np.int64)


def resample_indices(starts: NDArray[np.int64], block_length: int, n_time: int) -> NDArray[np.int64]:
    """ブロックを連結し、末尾の ⌈N/l⌉l - N 個を捨てた行番号。"""
    idx = (np.asarray(starts, dtype=np.int64)[:, None] + np.arange(block_length, dtype=np.int64)).ravel()
    return idx[:n_time]


def moving_block_resample(panel: ScorePanel, block_length: int, rng: np.random.Generator) -> ScorePanel:
    """スコアベクトル全体（行）を単位にした moving block bootstrap。l=1 は iid ブートストラップ。"""
    n_time = panel.n_time
    if not (1 <= block_length <= n_time):
        raise InvalidInputError(f"ブロック長 l は 1 ≤ l ≤ N={n_time} である必要があります: {block_length}")
    starts = draw_block_starts(rng, n_time, block_length)
    return panel.with_values(panel.values[resample_indices(starts, block_length, n_time)])


# cache=False: パッケージ外から直接読み込まれた場合のキャッシュ名の衝突を避ける。
@njit(cache=False, nogil=True)
def _resample_means(csum, starts, block_length, n_time):
    n_rep, n_blocks = starts.shape
    n_cols = csum.shape[1]
    last_len = n_time - (n_blocks - 1) * block_length
    out = np.empty((n_rep, n_cols))
    for b in range(n_rep):
        for j in range(n_cols):
            acc = 0.0
            for i in range(n_blocks - 1):
                s = starts[b, i]
                acc += csum[s + block_length, j] - csum[s, j]
            s = starts[b, n_blocks - 1]
            acc += csum[s + last_len, j] - csum[s, j]
            out[b, j] = acc / n_time
    return out


def _cumulative_scores(values: NDArray[np.float64]) -> NDArray[np.float64]:
    csum = np.zeros((values.shape[0] + 1, values.shape[1]), dtype=np.float64)
    np.cumsum(values, axis=0, out=csum[1:])
    return csum


def bootstrap_replicates(
    panel: ScorePanel,
    selector: ComparisonSelector | None,
    config: BandConfig,
    *,
    workers: int | None = None,
) -> tuple[NDArray[np.float64], TargetEvaluator, NDArray[np.float64]]:
    """点推定・評価器・B × J のブートストラップ推定値を返す。

    リサンプルごとのベンチマーク平均が 0 以下なら複製番号付きで
    DegenerateBenchmarkError を送出して打ち切る（引き直しはしない）。
    """
    estimates, evaluator = select_target(panel, selector, config.target)
    n_time = panel.n_time
    block_length = config.resolve_block_length(n_time)
    n_blocks = -(-n_time // block_length)
    csum = _cumulative_scores(np.ascontiguousarray(panel.values))

    def run_chunk(item: tuple[int, tuple[int, int]]) -> NDArray[np.float64]:
        chunk, (lo, hi) = item
        rng = chunk_generator(config.seed, STREAM_BOOTSTRAP, chunk)
        starts = np.empty((hi - lo, n_blocks), dtype=np.int64)
        for i in range(hi - lo):
            starts[i] = draw_block_starts(rng, n_time, block_length)
        means = _resample_means(csum, starts, block_length, n_time)
        logger.debug("chunk %d: replicates %d..%d", chunk, lo, hi - 1)
        return evaluator(means, replicate_offset=lo)

    chunks = list(enumerate(chunk_ranges(config.n_boot, REPLICATE_CHUNK)))
    draws = np.concatenate(ordered_map(run_chunk, chunks, workers=workers), axis=0)
    return estimates, evaluator, draws


def bootstrap_bands(
    panel: ScorePanel,
    selector: ComparisonSelector | None,
    config: BandConfig,
    *,
    workers: int | None = None,
) -> BandResult:
    block_length = config.resolve_block_length(panel.n_time)
    logger.info(
        "bootstrap 開始: target=%s N=%d P=%d B=%d l=%d seed=%d",
        config.target, panel.n_time, panel.n_columns, config.n_boot, block_length, config.seed,
    )
    estimates, evaluator, draws = bootstrap_replicates(panel, selector, config, workers=workers)
    n_entries = evaluator.size

    sigma_hat = draws.std(axis=0, ddof=1)
    degenerate = ~(sigma_hat > 0)
    if np.any(degenerate):
        raise ZeroSigmaError([evaluator.entry_labels[j] for j in np.flatnonzero(degenerate)])

    scaling: dict[str, float] = {}
    rank = config.quantile_rank()
    for band_type in config.band_types:
        if band_type == "pointwise":
            scaling[band_type] = normal_quantile(1.0 - config.alpha / 2.0)
        elif band_type == "bonferroni":
            scaling[band_type] = normal_quantile(1.0 - config.alpha / (2.0 * n_entries))
        else:
            t_max = np.max(np.abs(draws - estimates) / sigma_hat, axis=1)
            scaling[band_type] = float(np.partition(t_max, rank - 1)[rank - 1])

    metadata = {
        "alpha": config.alpha,
        "confidence_level": 1.0 - config.alpha,
        "n_boot": config.n_boot,
        "block_length": block_length,
        "block_q": config.block_q if config.block_length is None else None,
        "seed": config.seed,
        "target": config.target,
        "band_types": list(config.band_types),
        "J": n_entries,
        "N": panel.n_time,
        "P": panel.n_columns,
        "supt_rank": rank,
        "sigma_ddof": 1,
        "dimensions": [
            {"name": d.name, "labels": list(d.labels), "method_axis": d.is_method_axis} for d in panel.dims
        ],
        "pairs": [list(p) for p in selector.pairs] if selector is not None and config.target != "expected" else [],
        "mixed_roles": list(evaluator.mixed_roles),
        "entry_fields": list(evaluator.entry_fields),
        "entry_keys": [list(k) for k in evaluator.entry_keys],
    }
    result = BandResult.from_scaling(
        estimates,
        sigma_hat,
        scaling,
        entry_labels=evaluator.entry_labels,
        metadata=metadata,
        entry_fields=evaluator.entry_fields,
        entry_keys=evaluator.entry_keys,
    )
    logger.info("bootstrap 終了: J=%d scaling=%s", n_entries, {t: round(c, 4) for t, c in scaling.items()})
    return result


def band_report(result: BandResult) -> pd.DataFrame:
    """要素ごとの行。

    ``entry`` の後に要素のラベル組（手法・ベンチマーク・各次元）を 1 列ずつ置く。
    ``<type>_covers_zero`` は 0 がバンド内にあるか、``<type>_covers_null`` は
    同等の予測精度（スキル 0、相対精度 1）がバンド内にあるか。
    """
    table: dict[str, Any] = {"entry": list(result.entry_labels)}
    for i, name in enumerate(result.entry_fields if result.entry_keys else ()):
        column = name if name not in REPORT_COLUMNS else f"dim_{name}"
        table[column] = [k[i] for k in result.entry_keys]
    table["estimate"] = result.estimates
    table["sigma"] = result.sigma_hat
    null = NULL_VALUES.get(result.metadata.get("target", ""))
    for band_type in result.band_types:
        table[f"{band_type}_scaling"] = np.full(result.estimates.size, result.scaling[band_type])
        table[f"{band_type}_lower"] = result.lower[band_type]
        table[f"{band_type}_upper"] = result.upper[band_type]
        table[f"{band_type}_covers_zero"] = result.covers(0.0, band_type)
        if null is not None:
            table[f"{band_type}_covers_null"] = result.covers(null, band_type)
    return pd.DataFrame(table)


def average_band_width(result: BandResult) -> dict[str, float]:
    return {t: float(np.mean(result.upper[t] - result.lower[t])) for t in result.band_types}
