"""多次元インデックス付きスコアパネルと、平均スコア → スキルスコアの写像。

列の並びは次元の宣言順での辞書式（C 順）展開。時点 × (一般インデックス,
変数, 予報時間, 手法) のスコアを N × P 行列として持つ。
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DegenerateBenchmarkError, InvalidInputError
from .utils import unique_in_order

logger = logging.getLogger(__name__)

Target = Literal["skill", "expected", "relative"]
TARGETS: tuple[str, ...] = ("skill", "expected", "relative")

LABEL_SEP = "|"


@dataclass(frozen=True)
class DimensionSpec:
    name: str
    labels: tuple[str, ...]
    is_method_axis: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "labels", tuple(str(x) for x in self.labels))
        if not self.name:
            raise InvalidInputError("次元名が空です")
        if len(self.labels) < 1:
            raise InvalidInputError(f"次元 {self.name!r} にラベルがありません")
        if len(set(self.labels)) != len(self.labels):
            dup = [x for x in unique_in_order(self.labels) if self.labels.count(x) > 1]
            raise InvalidInputError(f"次元 {self.name!r} のラベルが重複しています: {dup}")

    @property
    def size(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(str(label))
        except ValueError:
            raise InvalidInputError(
                f"次元 {self.name!r} にラベル {label!r} がありません (候補: {list(self.labels)})"
            ) from None


@dataclass(frozen=True, eq=False)
class ScorePanel:
    """N × P の実現スコア行列（不変）。"""

    values: NDArray[np.float64]
    dims: tuple[DimensionSpec, ...]
    time_labels: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        dims = tuple(self.dims)
        object.__setattr__(self, "dims", dims)
        if not dims:
            raise InvalidInputError("パネルには 1 つ以上の次元が必要です")
        names = [d.name for d in dims]
        if len(set(names)) != len(names):
            raise InvalidInputError(f"次元名が重複しています: {names}")
        n_method_axes = sum(d.is_method_axis for d in dims)
        if n_method_axes != 1:
            raise InvalidInputError(f"手法軸はちょうど 1 つ必要です (現在 {n_method_axes} 個)")

        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2:
            raise InvalidInputError(f"スコアは N × P 行列である必要があります: shape={values.shape}")
        n_time, n_cols = values.shape
        if n_time < 2:
            raise InvalidInputError(f"時点数 N は 2 以上である必要があります: N={n_time}")
        expected_cols = int(np.prod([d.size for d in dims]))
        if n_cols != expected_cols:
            raise InvalidInputError(
                f"列数 {n_cols} が次元サイズの積 {expected_cols} と一致しません"
            )
        if not np.all(np.isfinite(values)):
            bad_t, bad_p = np.argwhere(~np.isfinite(values))[0]
            raise InvalidInputError(
                f"スコアに非有限値があります: t={bad_t}, 列={self._name_of(dims, int(bad_p))}"
            )
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

        if self.time_labels is not None:
            labels = tuple(str(x) for x in self.time_labels)
            if len(labels) != n_time:
                raise InvalidInputError(
                    f"time_labels の長さ {len(labels)} が N={n_time} と一致しません"
                )
            object.__setattr__(self, "time_labels", labels)

    @staticmethod
    def _name_of(dims: Sequence[DimensionSpec], p: int) -> str:
        idx = np.unravel_index(p, tuple(d.size for d in dims))
        return LABEL_SEP.join(d.labels[i] for d, i in zip(dims, idx))

    @property
    def n_time(self) -> int:
        return self.values.shape[0]

    @property
    def n_columns(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(d.size for d in self.dims)

    @property
    def method_axis(self) -> int:
        return next(i for i, d in enumerate(self.dims) if d.is_method_axis)

    @property
    def method_dim(self) -> DimensionSpec:
        return self.dims[self.method_axis]

    def dim(self, name: str) -> DimensionSpec:
        for d in self.dims:
            if d.name == name:
                return d
        raise InvalidInputError(f"次元 {name!r} がありません (候補: {[d.name for d in self.dims]})")

    def unflatten_column(self, p: int) -> tuple[str, ...]:
        if not 0 <= p < self.n_columns:
            raise InvalidInputError(f"列番号が範囲外です: {p} (P={self.n_columns})")
        idx = np.unravel_index(p, self.shape)
        return tuple(d.labels[i] for d, i in zip(self.dims, idx))

    def flatten_labels(self, labels: Sequence[str]) -> int:
        if len(labels) != len(self.dims):
            raise InvalidInputError(
                f"ラベル数 {len(labels)} が次元数 {len(self.dims)} と一致しません"
            )
        idx = tuple(d.index(lab) for d, lab in zip(self.dims, labels))
        return int(np.ravel_multi_index(idx, self.shape))

    def column_names(self) -> list[str]:
        return [LABEL_SEP.join(self.unflatten_column(p)) for p in range(self.n_columns)]

    def with_values(self, values: ArrayLike) -> "ScorePanel":
        """同じ次元構成で値だけ差し替えたパネル（リサンプル用）。"""
        return ScorePanel(values=np.asarray(values), dims=self.dims)

    def select_columns(self, **filters: str | Sequence[str]) -> "ScorePanel":
        """次元名=ラベル（または列）で部分パネルを作る。"""
        new_dims: list[DimensionSpec] = []
        index_sets: list[list[int]] = []
        for d in self.dims:
            if d.name in filters:
                wanted = filters[d.name]
                wanted = [wanted] if isinstance(wanted, str) else list(wanted)
                idx = [d.index(w) for w in wanted]
                new_dims.append(DimensionSpec(d.name, tuple(d.labels[i] for i in idx), d.is_method_axis))
                index_sets.append(idx)
            else:
                new_dims.append(d)
                index_sets.append(list(range(d.size)))
        unknown = set(filters) - {d.name for d in self.dims}
        if unknown:
            raise InvalidInputError(f"存在しない次元で絞り込もうとしました: {sorted(unknown)}")
        cols = [
            int(np.ravel_multi_index(combo, self.shape))
            for combo in itertools.product(*index_sets)
        ]
        return ScorePanel(values=self.values[:, cols], dims=tuple(new_dims), time_labels=self.time_labels)


@dataclass(frozen=True)
class ComparisonSelector:
    """(手法, ベンチマーク) の組の集合。各組は手法軸以外の全ラベル組合せに展開される。"""

    pairs: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        pairs = tuple((str(m1), str(m2)) for m1, m2 in self.pairs)
        object.__setattr__(self, "pairs", pairs)
        if not pairs:
            raise InvalidInputError("比較ペアが空です")
        for m1, m2 in pairs:
            if m1 == m2:
                raise InvalidInputError(f"手法とベンチマークが同じです: {m1!r}")
        if len(set(pairs)) != len(pairs):
            raise InvalidInputError(f"比較ペアが重複しています: {list(pairs)}")

    @classmethod
    def against_benchmark(cls, methods: Sequence[str], benchmark: str) -> "ComparisonSelector":
        return cls(tuple((m, benchmark) for m in methods if m != benchmark))

    @classmethod
    def parse(cls, text: str) -> "ComparisonSelector":
        """``tvp:const,bvar:const`` 形式。"""
        pairs = []
        for part in (p.strip() for p in text.split(",")):
            if not part:
                continue
            if part.count(":") != 1:
                raise InvalidInputError(f"比較ペアは method:benchmark 形式で指定してください: {part!r}")
            m1, m2 = (x.strip() for x in part.split(":"))
            pairs.append((m1, m2))
        return cls(tuple(pairs))

    @property
    def mixed_roles(self) -> list[str]:
        """手法としてもベンチマークとしても使われているラベル。"""
        methods = {m1 for m1, _ in self.pairs}
        return sorted(m for m in unique_in_order(m2 for _, m2 in self.pairs) if m in methods)


@dataclass(frozen=True, eq=False)
class TargetEvaluator:
    """平均スコアベクトル（または B × P 行列）を推定対象ベクトルに写す。"""

    target: str
    numerator: NDArray[np.intp]
    denominator: NDArray[np.intp] | None
    entry_labels: tuple[str, ...]
    column_names: tuple[str, ...] = field(repr=False)
    mixed_roles: tuple[str, ...] = ()
    # 要素ごとのラベル組。entry_keys[k] は entry_fields の順
    entry_fields: tuple[str, ...] = ()
    entry_keys: tuple[tuple[str, ...], ...] = field(default=(), repr=False)

    @property
    def size(self) -> int:
        return len(self.entry_labels)

    def __call__(self, means: ArrayLike, *, replicate_offset: int | None = None) -> NDArray[np.float64]:
        m = np.asarray(means, dtype=np.float64)
        if self.target == "expected":
            return m[..., self.numerator].copy()
        denom = m[..., self.denominator]
        bad = denom <= 0
        if np.any(bad):
            first = np.argwhere(bad)[0]
            col = int(self.denominator[first[-1]])
            replicate = None
            if m.ndim == 2:
                replicate = int(first[0]) + (replicate_offset or 0)
            raise DegenerateBenchmarkError(self.column_names[col], float(denom[tuple(first)]), replicate)
        ratio = m[..., self.numerator] / denom
        if self.target == "relative":
            return ratio
        return 1.0 - ratio


def comparison_fields(panel: ScorePanel) -> tuple[str, ...]:
    """比較要素のラベル名: 手法、ベンチマーク、手法軸以外の各次元。"""
    method = panel.method_dim.name
    names = {d.name for d in panel.dims}
    benchmark = "benchmark" if "benchmark" not in names else f"{method}_benchmark"
    others = tuple(d.name for i, d in enumerate(panel.dims) if i != panel.method_axis)
    return (method, benchmark, *others)


def build_evaluator(panel: ScorePanel, selector: ComparisonSelector | None, target: str) -> TargetEvaluator:
    if target not in TARGETS:
        raise InvalidInputError(f"未知の target: {target!r} (選択肢: {', '.join(TARGETS)})")
    names = tuple(panel.column_names())
    if target == "expected":
        return TargetEvaluator(
            target=target,
            numerator=np.arange(panel.n_columns, dtype=np.intp),
            denominator=None,
            entry_labels=names,
            column_names=names,
            entry_fields=tuple(d.name for d in panel.dims),
            entry_keys=tuple(panel.unflatten_column(p) for p in range(panel.n_columns)),
        )
    if selector is None:
        raise InvalidInputError(f"target={target!r} には比較ペアが必要です")

    method_axis = panel.method_axis
    method_dim = panel.method_dim
    other_dims = [d for i, d in enumerate(panel.dims) if i != method_axis]
    numer: list[int] = []
    denom: list[int] = []
    labels: list[str] = []
    keys: list[tuple[str, ...]] = []
    for m1, m2 in selector.pairs:
        i1, i2 = method_dim.index(m1), method_dim.index(m2)
        for combo in itertools.product(*(range(d.size) for d in other_dims)):
            idx1 = list(combo)
            idx1.insert(method_axis, i1)
            idx2 = list(combo)
            idx2.insert(method_axis, i2)
            numer.append(int(np.ravel_multi_index(idx1, panel.shape)))
            denom.append(int(np.ravel_multi_index(idx2, panel.shape)))
            rest = " ".join(f"{d.name}={d.labels[i]}" for d, i in zip(other_dims, combo))
            labels.append(f"{m1}/{m2}" + (f" | {rest}" if rest else ""))
            keys.append((m1, m2, *(d.labels[i] for d, i in zip(other_dims, combo))))

    mixed = tuple(selector.mixed_roles)
    if mixed:
        logger.warning("手法とベンチマークの両方に使われているラベルがあります: %s", list(mixed))
    return TargetEvaluator(
        target=target,
        numerator=np.asarray(numer, dtype=np.intp),
        denominator=np.asarray(denom, dtype=np.intp),
        entry_labels=tuple(labels),
        column_names=names,
        mixed_roles=mixed,
        entry_fields=comparison_fields(panel),
        entry_keys=tuple(keys),
    )


def average_scores(panel: ScorePanel) -> NDArray[np.float64]:
    return panel.values.mean(axis=0)


def skill_from_means(
    means: ArrayLike, selector: ComparisonSelector, panel: ScorePanel
) -> NDArray[np.float64]:
    """SS = 1 - mean(m1) / mean(m2)。ベンチマーク平均が 0 以下ならエラー。"""
    return build_evaluator(panel, selector, "skill")(means)


def relative_accuracy_from_means(
    means: ArrayLike, selector: ComparisonSelector, panel: ScorePanel
) -> NDArray[np.float64]:
    """RA = mean(m1) / mean(m2) = 1 - SS。"""
    return build_evaluator(panel, selector, "relative")(means)


def select_target(
    panel: ScorePanel, selector: ComparisonSelector | None, target: str
) -> tuple[NDArray[np.float64], TargetEvaluator]:
    """点推定と、任意の平均スコアに使い回せる評価器を返す。target='expected' では selector を無視する。"""
    evaluator = build_evaluator(panel, selector, target)
    return evaluator(average_scores(panel)), evaluator
