"""VAR(1) スコア過程と、信頼バンドの被覆率シミュレーション。

S_t = c + a S_{t-1} + ε_t,  c = (1 - a) E[S_t],  ε_t ~ N(0, vJ + (1-v)I)

全列の期待スコアが等しいので、真のスキルスコアベクトルは 0、
真の期待スコアは平均ベクトル、真の相対精度は 1。被覆判定には常にこの
解析的な真値を使う（推定値は使わない）。

各セル (a, v, P, N, q, target) は R 回繰り返し、複製 r の乱数は
(seed, セルキー, r) から導出する。セルや複製の実行順・並列度で結果は変わらない。
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
import pandas as pd
from numpy.typing import NDArray
from scipy.signal import lfilter

from .bands import BAND_TYPES, BandConfig, bootstrap_bands, default_block_length
from .errors import DegenerateBenchmarkError, InvalidInputError, ZeroSigmaError
from .panel import TARGETS, ComparisonSelector, DimensionSpec, ScorePanel
from .rng import derived_generator, derived_seed, quantize
from .utils import ordered_map

logger = logging.getLogger(__name__)

DEFAULT_MEAN = 10.0
DEFAULT_BURN_IN = 100
DEFAULT_REPLICATIONS = 1000
HIGH_DIM_THRESHOLD = 100
# q=0 は iid ブートストラップ (l=1) を表す
IID_ARM = 0
TARGET_CODES = {name: i for i, name in enumerate(TARGETS)}
BAND_LABELS = {"supt": "Sup-t", "bonferroni": "Bonf.", "pointwise": "Pointw."}


@dataclass(frozen=True)
class Var1Config:
    P: int
    N: int
    a: float = 0.0
    v: float = 0.0
    mean: tuple[float, ...] | None = None
    burn_in: int = DEFAULT_BURN_IN
    seed: int = 0

    def __post_init__(self) -> None:
        if self.P < 2:
            raise InvalidInputError(f"P は 2 以上である必要があります: {self.P}")
        if self.N < 2:
            raise InvalidInputError(f"N は 2 以上である必要があります: {self.N}")
        if not (0.0 <= self.a < 1.0):
            raise InvalidInputError(f"a は [0, 1) である必要があります（定常性）: {self.a}")
        if not (0.0 <= self.v < 1.0):
            raise InvalidInputError(f"v は [0, 1) である必要があります（誤差共分散の正定値性）: {self.v}")
        if self.burn_in < 0:
            raise InvalidInputError(f"burn_in は 0 以上である必要があります: {self.burn_in}")
        if self.mean is not None:
            mean = tuple(float(x) for x in self.mean)
            if len(mean) == 1:
                mean = mean * self.P
            if len(mean) != self.P:
                raise InvalidInputError(f"mean の長さ {len(mean)} が P={self.P} と一致しません")
            object.__setattr__(self, "mean", mean)

    @property
    def mean_vector(self) -> NDArray[np.float64]:
        if self.mean is None:
            return np.full(self.P, DEFAULT_MEAN)
        return np.asarray(self.mean, dtype=np.float64)


def method_labels(P: int) -> tuple[str, ...]:
    return tuple(f"m{i}" for i in range(1, P + 1))


def simulate_var1_scores(cfg: Var1Config, rng: np.random.Generator | None = None) -> ScorePanel:
    """S_0 = 平均から burn_in + N ステップ進め、最後の N 行を返す。"""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    steps = cfg.burn_in + cfg.N
    mu = cfg.mean_vector
    common = rng.standard_normal((steps, 1))
    idio = rng.standard_normal((steps, cfg.P))
    eps = math.sqrt(cfg.v) * common + math.sqrt(1.0 - cfg.v) * idio
    # 平均からの偏差 x_t = a x_{t-1} + ε_t, x_0 = 0
    deviations = lfilter([1.0], [1.0, -cfg.a], eps, axis=0)
    scores = mu + deviations[cfg.burn_in:]
    return ScorePanel(values=scores, dims=(DimensionSpec("method", method_labels(cfg.P), True),))


def benchmark_selector(P: int) -> ComparisonSelector:
    """最後 (P 番目) のスコアをベンチマークとする J = P-1 個の比較。"""
    labels = method_labels(P)
    return ComparisonSelector.against_benchmark(labels[:-1], labels[-1])


def true_target(cfg: Var1Config, target: str) -> NDArray[np.float64]:
    if target == "skill":
        return np.zeros(cfg.P - 1)
    if target == "relative":
        return np.ones(cfg.P - 1)
    return cfg.mean_vector.copy()


@dataclass(frozen=True)
class CoverageGrid:
    a_values: tuple[float, ...] = (0.0,)
    v_values: tuple[float, ...] = (0.0,)
    P_values: tuple[int, ...] = (2, 5, 25)
    N_values: tuple[int, ...] = (400,)
    q_values: tuple[int, ...] = (IID_ARM, 3)
    band_types: tuple[str, ...] = BAND_TYPES
    targets: tuple[str, ...] = ("skill",)
    high_dim: bool = False

    def __post_init__(self) -> None:
        for name in ("a_values", "v_values", "P_values", "N_values", "q_values", "band_types", "targets"):
            value = tuple(getattr(self, name))
            if not value:
                raise InvalidInputError(f"{name} が空です")
            object.__setattr__(self, name, value)
        if any(q < 0 for q in self.q_values):
            raise InvalidInputError(f"q は 0 以上である必要があります（0 は iid）: {self.q_values}")
        unknown = [t for t in self.targets if t not in TARGETS]
        if unknown:
            raise InvalidInputError(f"未知の target: {unknown}")
        if not self.high_dim and any(P >= HIGH_DIM_THRESHOLD for P in self.P_values):
            raise InvalidInputError(
                f"P ≥ {HIGH_DIM_THRESHOLD} の高次元セルは実行時間が長いため --high-dim が必要です: {self.P_values}"
            )
        # 各値の検証は Var1Config / BandConfig に任せる
        for a in self.a_values:
            for v in self.v_values:
                for P in self.P_values:
                    for N in self.N_values:
                        Var1Config(P=P, N=N, a=a, v=v)
        BandConfig(band_types=self.band_types)

    def cells(self) -> list["CellKey"]:
        return [
            CellKey(a=a, v=v, P=P, N=N, q=q, target=target)
            for target in self.targets
            for a in self.a_values
            for v in self.v_values
            for q in self.q_values
            for N in self.N_values
            for P in self.P_values
        ]

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "a": list(self.a_values),
            "v": list(self.v_values),
            "P": list(self.P_values),
            "N": list(self.N_values),
            "q": list(self.q_values),
            "types": list(self.band_types),
            "targets": list(self.targets),
            "high_dim": self.high_dim,
        }

    @classmethod
    def from_json_dict(cls, payload: dict[str, Any]) -> "CoverageGrid":
        if not isinstance(payload, dict):
            raise InvalidInputError(f"グリッド JSON はオブジェクトである必要があります: {type(payload).__name__}")
        known = {"a", "v", "P", "N", "q", "types", "targets", "high_dim"}
        unknown = set(payload) - known
        if unknown:
            raise InvalidInputError(f"グリッド JSON に未知のキーがあります: {sorted(unknown)}")
        kwargs: dict[str, Any] = {}
        mapping = {
            "a": ("a_values", float),
            "v": ("v_values", float),
            "P": ("P_values", int),
            "N": ("N_values", int),
            "q": ("q_values", int),
            "types": ("band_types", str),
            "targets": ("targets", str),
        }
        for key, (attr, cast) in mapping.items():
            if key not in payload:
                continue
            values = payload[key]
            if isinstance(values, (str, bytes)) or not isinstance(values, list):
                values = [values]
            try:
                kwargs[attr] = tuple(cast(x) for x in values)
            except (TypeError, ValueError) as e:
                raise InvalidInputError(f"グリッド JSON の {key!r} を {cast.__name__} に変換できません: {payload[key]!r}") from e
        if "high_dim" in payload:
            kwargs["high_dim"] = bool(payload["high_dim"])
        return cls(**kwargs)


@dataclass(frozen=True)
class CellKey:
    a: float
    v: float
    P: int
    N: int
    q: int
    target: str

    @property
    def boot(self) -> str:
        return "iid" if self.q == IID_ARM else "block"

    def block_length(self) -> int:
        return 1 if self.q == IID_ARM else default_block_length(self.N, self.q)

    def seed_keys(self) -> tuple[int, ...]:
        return (quantize(self.a), quantize(self.v), self.P, self.N, self.q, TARGET_CODES[self.target])


@dataclass(frozen=True)
class CoverageCell:
    a: float
    v: float
    P: int
    N: int
    q: int
    boot: str
    block_length: int
    band_type: str
    target: str
    replications: int
    hits: int
    failures: int = 0

    @property
    def coverage(self) -> float:
        return self.hits / self.replications if self.replications else float("nan")

    @property
    def mc_se(self) -> float:
        if not self.replications:
            return float("nan")
        c = self.coverage
        return math.sqrt(c * (1.0 - c) / self.replications)


# 被覆率表のプリセット
PRESETS: dict[str, CoverageGrid] = {
    "appendix-e-small": CoverageGrid(P_values=(2, 5), q_values=(IID_ARM,)),
    "cover-ss-indep": CoverageGrid(
        v_values=(0.0, 0.3, 0.6), N_values=(100, 400), q_values=(IID_ARM, 3)
    ),
    "cover-ss": CoverageGrid(
        a_values=(0.3, 0.6), v_values=(0.0, 0.3, 0.6), N_values=(100, 400), q_values=(IID_ARM, 3)
    ),
    "cover-es-indep": CoverageGrid(
        v_values=(0.0, 0.3, 0.6), N_values=(100, 400), q_values=(IID_ARM, 3), targets=("expected",)
    ),
    "cover-es": CoverageGrid(
        a_values=(0.3, 0.6), v_values=(0.0, 0.3, 0.6), N_values=(100, 400), q_values=(IID_ARM, 3),
        targets=("expected",),
    ),
    "block-length": CoverageGrid(
        a_values=(0.0, 0.3, 0.6), v_values=(0.0, 0.3, 0.6), N_values=(100, 400), q_values=(1, 2, 3),
        band_types=("supt", "bonferroni"),
    ),
    "high-dim": CoverageGrid(
        a_values=(0.0, 0.3, 0.6), v_values=(0.0, 0.3, 0.6), P_values=(100, 400), N_values=(100, 400),
        q_values=(1, 2, 3), band_types=("supt", "bonferroni"), high_dim=True,
    ),
}


@dataclass
class _ReplicateOutcome:
    hits: dict[str, bool] = field(default_factory=dict)
    failed: bool = False


def _run_replicate(
    cell: CellKey,
    r: int,
    *,
    alpha: float,
    n_boot: int,
    seed: int,
    band_types: Sequence[str],
    mean: float,
    burn_in: int,
) -> _ReplicateOutcome:
    cfg = Var1Config(P=cell.P, N=cell.N, a=cell.a, v=cell.v, mean=(mean,), burn_in=burn_in)
    rng = derived_generator(seed, *cell.seed_keys(), r)
    panel = simulate_var1_scores(cfg, rng)
    config = BandConfig(
        alpha=alpha,
        n_boot=n_boot,
        block_length=cell.block_length(),
        seed=derived_seed(seed, *cell.seed_keys(), r, 1),
        band_types=tuple(band_types),
        target=cell.target,
    )
    selector = None if cell.target == "expected" else benchmark_selector(cell.P)
    try:
        # 複製単位で並列化しているので内側は逐次
        result = bootstrap_bands(panel, selector, config, workers=1)
    except (DegenerateBenchmarkError, ZeroSigmaError) as e:
        logger.warning("複製 r=%d を中断しました (%s): %s", r, cell, e)
        return _ReplicateOutcome(failed=True)
    truth = true_target(cfg, cell.target)
    return _ReplicateOutcome(hits={t: bool(np.all(result.covers(truth, t))) for t in band_types})


def run_coverage_cell(
    cell: CellKey,
    *,
    replications: int = DEFAULT_REPLICATIONS,
    alpha: float = 0.1,
    n_boot: int = 4000,
    band_types: Sequence[str] = BAND_TYPES,
    seed: int = 0,
    mean: float = DEFAULT_MEAN,
    burn_in: int = DEFAULT_BURN_IN,
    workers: int | None = None,
) -> list[CoverageCell]:
    """1 セルを R 回繰り返す。バンド種別ごとに同じリサンプルから判定する。"""
    if replications < 1:
        raise InvalidInputError(f"R は 1 以上である必要があります: {replications}")

    def job(r: int) -> _ReplicateOutcome:
        return _run_replicate(
            cell, r, alpha=alpha, n_boot=n_boot, seed=seed, band_types=band_types, mean=mean, burn_in=burn_in
        )

    outcomes = ordered_map(job, list(range(replications)), workers=workers)
    failures = sum(o.failed for o in outcomes)
    done = [o for o in outcomes if not o.failed]
    cells = [
        CoverageCell(
            a=cell.a,
            v=cell.v,
            P=cell.P,
            N=cell.N,
            q=cell.q,
            boot=cell.boot,
            block_length=cell.block_length(),
            band_type=t,
            target=cell.target,
            replications=len(done),
            hits=sum(o.hits[t] for o in done),
            failures=failures,
        )
        for t in band_types
    ]
    logger.info(
        "セル完了 %s: %s (失敗 %d)",
        cell,
        {c.band_type: round(c.coverage, 3) for c in cells},
        failures,
    )
    return cells


def run_coverage_experiment(
    grid: CoverageGrid,
    *,
    replications: int = DEFAULT_REPLICATIONS,
    alpha: float = 0.1,
    n_boot: int = 4000,
    seed: int = 0,
    mean: float = DEFAULT_MEAN,
    burn_in: int = DEFAULT_BURN_IN,
    workers: int | None = None,
) -> list[CoverageCell]:
    results: list[CoverageCell] = []
    cells = grid.cells()
    for i, cell in enumerate(cells, start=1):
        logger.info("セル %d/%d: %s", i, len(cells), cell)
        results.extend(
            run_coverage_cell(
                cell,
                replications=replications,
                alpha=alpha,
                n_boot=n_boot,
                band_types=grid.band_types,
                seed=seed,
                mean=mean,
                burn_in=burn_in,
                workers=workers,
            )
        )
    return results


COVERAGE_COLUMNS = [
    "a", "v", "boot", "q", "block_length", "type", "target", "P", "N",
    "coverage", "mc_se", "replications", "failures",
]


def coverage_table(cells: Sequence[CoverageCell]) -> pd.DataFrame:
    rows = [
        {
            "a": c.a,
            "v": c.v,
            "boot": c.boot,
            "q": c.q,
            "block_length": c.block_length,
            "type": c.band_type,
            "target": c.target,
            "P": c.P,
            "N": c.N,
            "coverage": c.coverage,
            "mc_se": c.mc_se,
            "replications": c.replications,
            "failures": c.failures,
        }
        for c in cells
    ]
    return pd.DataFrame(rows, columns=COVERAGE_COLUMNS)


def pivot_coverage_table(df: pd.DataFrame) -> pd.DataFrame:
    """横持ちの被覆率表（行 a, v, type, boot / 列 N × P）。"""
    table = df.assign(type=df["type"].map(lambda t: BAND_LABELS.get(t, t)))
    wide = table.pivot_table(
        index=["target", "a", "v", "type", "boot", "q"],
        columns=["N", "P"],
        values="coverage",
        aggfunc="first",
        sort=False,
    )
    wide.columns = [f"N={n} P={p}" for n, p in wide.columns]
    return wide.reset_index()
