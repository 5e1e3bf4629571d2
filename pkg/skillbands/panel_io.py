"""縦持ち CSV ⇔ ScorePanel の読み書きと、アンサンブル予測ファイルの採点。

スコアパネル (PanelFile)::

    # {"dimensions": [{"name": "lead", "labels": ["1", "2"]},
    #                 {"name": "method", "method_axis": true}],
    #  "time_column": "time", "value_column": "value"}
    time,lead,method,value
    2020-01-01,1,tvp,0.31
    ...

ヘッダ JSON は先頭の ``#`` 行（インライン）か、同名の ``.json`` サイドカー。
どちらもなければ ``time`` / ``value`` 以外の列を次元とみなし、``method`` 列を
手法軸とする。ラベルを省略した次元は出現順。

予測ファイル (ForecastFile) は ``member`` 列（メンバー番号か ``obs``）と
``value_columns`` で指定する D 個の値の列を持つ。
"""
from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import CompletenessError, DuplicateKeyError, InvalidInputError, PanelParseError
from .panel import DimensionSpec, ScorePanel
from .scoring import RULES, UNIVARIATE_RULES, score_ensemble
from .utils import read_text, unique_in_order, write_json

logger = logging.getLogger(__name__)

DEFAULT_TIME_COLUMN = "time"
DEFAULT_VALUE_COLUMN = "value"
DEFAULT_METHOD_COLUMN = "method"
DEFAULT_MEMBER_COLUMN = "member"
OBS_MEMBER = "obs"

HeaderLike = Mapping[str, Any] | str | Path | None


@dataclass(frozen=True)
class DimensionHeader:
    name: str
    labels: tuple[str, ...] | None = None
    method_axis: bool = False


@dataclass(frozen=True)
class FileHeader:
    dimensions: tuple[DimensionHeader, ...]
    time_column: str = DEFAULT_TIME_COLUMN
    value_column: str = DEFAULT_VALUE_COLUMN
    member_column: str = DEFAULT_MEMBER_COLUMN
    value_columns: tuple[str, ...] | None = None

    @classmethod
    def from_json_dict(cls, payload: Mapping[str, Any]) -> "FileHeader":
        try:
            dims = tuple(
                DimensionHeader(
                    name=str(d["name"]),
                    labels=None if d.get("labels") is None else tuple(str(x) for x in d["labels"]),
                    method_axis=bool(d.get("method_axis", False)),
                )
                for d in payload["dimensions"]
            )
        except (KeyError, TypeError) as e:
            raise PanelParseError(f"ヘッダの dimensions が不正です: {e}") from e
        value_columns = payload.get("value_columns")
        return cls(
            dimensions=dims,
            time_column=str(payload.get("time_column", DEFAULT_TIME_COLUMN)),
            value_column=str(payload.get("value_column", DEFAULT_VALUE_COLUMN)),
            member_column=str(payload.get("member_column", DEFAULT_MEMBER_COLUMN)),
            value_columns=None if value_columns is None else tuple(str(c) for c in value_columns),
        )

    def to_json_dict(self) -> dict[str, Any]:
        payload: dict[str, Any] = {
            "dimensions": [
                {"name": d.name, "labels": list(d.labels or ()), "method_axis": d.method_axis}
                for d in self.dimensions
            ],
            "time_column": self.time_column,
            "value_column": self.value_column,
        }
        if self.value_columns is not None:
            payload["member_column"] = self.member_column
            payload["value_columns"] = list(self.value_columns)
        return payload

    @property
    def dimension_names(self) -> list[str]:
        return [d.name for d in self.dimensions]


def sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")


def _split_inline_header(text: str) -> tuple[str | None, str, int]:
    """先頭の ``#`` 行を取り出す。戻り値は (ヘッダ JSON, CSV 本体, ヘッダ行数)。"""
    lines = text.splitlines(keepends=True)
    n = 0
    while n < len(lines) and lines[n].lstrip().startswith("#"):
        n += 1
    if n == 0:
        return None, text, 0
    header = "".join(line.lstrip()[1:] for line in lines[:n])
    return header, "".join(lines[n:]), n


def _parse_header_json(text: str, source: str) -> dict[str, Any]:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as e:
        raise PanelParseError(f"{source} のヘッダ JSON を解析できません: {e}") from e
    if not isinstance(payload, dict):
        raise PanelParseError(f"{source} のヘッダ JSON はオブジェクトである必要があります")
    return payload


def _read_with_header(path: Path, header: HeaderLike) -> tuple[pd.DataFrame, dict[str, Any] | None, int]:
    path = Path(path)
    text = read_text(path, PanelParseError)
    inline, body, n_header_lines = _split_inline_header(text)

    payload: dict[str, Any] | None
    if isinstance(header, Mapping):
        payload = dict(header)
    elif header is not None:
        header_path = Path(header)
        payload = _parse_header_json(read_text(header_path, PanelParseError), str(header_path))
    elif inline is not None:
        payload = _parse_header_json(inline, f"{path} (インライン)")
    elif sidecar_path(path).exists():
        payload = _parse_header_json(read_text(sidecar_path(path), PanelParseError), str(sidecar_path(path)))
    else:
        payload = None

    try:
        # ラベルは常に文字列として扱う
        df = pd.read_csv(io.StringIO(body), dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise PanelParseError(f"{path} を CSV として読めません: {e}") from e
    return df, payload, n_header_lines


def _infer_header(df: pd.DataFrame, value_columns: Sequence[str] = (DEFAULT_VALUE_COLUMN,)) -> dict[str, Any]:
    skip = {DEFAULT_TIME_COLUMN, DEFAULT_MEMBER_COLUMN, *value_columns}
    dims = [c for c in df.columns if c not in skip]
    if DEFAULT_METHOD_COLUMN not in dims:
        raise PanelParseError(
            f"ヘッダがなく、手法軸の列 {DEFAULT_METHOD_COLUMN!r} も見つかりません (列: {list(df.columns)})"
        )
    return {"dimensions": [{"name": c, "method_axis": c == DEFAULT_METHOD_COLUMN} for c in dims]}


def _require_columns(df: pd.DataFrame, columns: Sequence[str], source: Path) -> None:
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise PanelParseError(f"{source} に列がありません: {missing} (列: {list(df.columns)})")


def _time_index(raw: pd.Series) -> tuple[np.ndarray, tuple[str, ...]]:
    """時点ラベルを 0 始まりの連番に写す。整数はその大小、それ以外は ISO-8601 の日時順。"""
    unique = unique_in_order(raw.tolist())
    try:
        keys = [int(x) for x in unique]
    except ValueError:
        try:
            keys = list(pd.to_datetime(pd.Series(unique), format="ISO8601"))
        except (ValueError, TypeError) as e:
            raise PanelParseError(f"時点は整数か ISO-8601 文字列である必要があります: {e}") from e
    order = sorted(range(len(unique)), key=lambda i: keys[i])
    labels = tuple(unique[i] for i in order)
    position = {label: i for i, label in enumerate(labels)}
    return raw.map(position).to_numpy(dtype=np.int64), labels


def _to_float(text: str) -> float:
    # float() は正しく丸めるので write_panel の repr と往復で一致する
    try:
        return float(text)
    except ValueError:
        return float("nan")


def _parse_values(df: pd.DataFrame, column: str, line_of: np.ndarray) -> np.ndarray:
    values = np.fromiter((_to_float(x) for x in df[column]), dtype=np.float64, count=len(df))
    bad = ~np.isfinite(values)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise PanelParseError(f"{line_of[i]} 行目: 列 {column!r} の値が有限の数値ではありません: {df[column].iloc[i]!r}")
    return values


def _resolve_dimensions(df: pd.DataFrame, header: FileHeader) -> tuple[DimensionSpec, ...]:
    dims = []
    for d in header.dimensions:
        observed = unique_in_order(df[d.name].tolist())
        if d.labels is None:
            labels = tuple(observed)
        else:
            labels = d.labels
            unknown = [x for x in observed if x not in set(labels)]
            if unknown:
                raise PanelParseError(f"次元 {d.name!r} にヘッダで宣言されていないラベルがあります: {unknown}")
        dims.append(DimensionSpec(d.name, labels, d.method_axis))
    return tuple(dims)


def _check_duplicates(df: pd.DataFrame, key_columns: Sequence[str], line_of: np.ndarray) -> None:
    dup = df.duplicated(subset=list(key_columns), keep=False).to_numpy()
    if np.any(dup):
        first = int(np.flatnonzero(dup)[0])
        key = tuple(df[key_columns].iloc[first])
        same = (df[list(key_columns)] == df[list(key_columns)].iloc[first]).all(axis=1).to_numpy()
        raise DuplicateKeyError(key, [int(line_of[i]) for i in np.flatnonzero(same)])


def _dense_values(
    time_idx: np.ndarray,
    time_labels: Sequence[str],
    label_frame: pd.DataFrame,
    dims: Sequence[DimensionSpec],
    values: np.ndarray,
) -> np.ndarray:
    """(時点, ラベル組) → 値 を N × P の密行列にする。欠けたセルがあれば CompletenessError。"""
    shape = (len(time_labels), *(d.size for d in dims))
    codes = [time_idx] + [
        pd.Categorical(label_frame[d.name], categories=list(d.labels)).codes.astype(np.int64) for d in dims
    ]
    flat = np.ravel_multi_index(codes, shape)
    dense = np.full(int(np.prod(shape)), np.nan)
    filled = np.zeros(dense.size, dtype=bool)
    dense[flat] = values
    filled[flat] = True
    if not np.all(filled):
        missing = np.flatnonzero(~filled)
        idx = np.unravel_index(int(missing[0]), shape)
        first = (time_labels[idx[0]], *(d.labels[i] for d, i in zip(dims, idx[1:])))
        raise CompletenessError(first, int(missing.size))
    return dense.reshape(shape[0], -1)


def load_panel(path: str | Path, header: HeaderLike = None) -> ScorePanel:
    """縦持ち CSV を宣言された次元順の密な ScorePanel にする。"""
    path = Path(path)
    df, payload, n_header_lines = _read_with_header(path, header)
    if payload is None:
        payload = _infer_header(df)
        logger.info("%s: ヘッダがないため次元を推定しました: %s", path, payload["dimensions"])
    file_header = FileHeader.from_json_dict(payload)
    dim_names = file_header.dimension_names
    _require_columns(df, [file_header.time_column, *dim_names, file_header.value_column], path)
    if df.empty:
        raise PanelParseError(f"{path} にデータ行がありません")

    # ファイル上の行番号（1 始まり、CSV の列名行を含む）
    line_of = np.arange(len(df)) + n_header_lines + 2
    _check_duplicates(df, [file_header.time_column, *dim_names], line_of)
    values = _parse_values(df, file_header.value_column, line_of)
    time_idx, time_labels = _time_index(df[file_header.time_column])
    dims = _resolve_dimensions(df, file_header)
    dense = _dense_values(time_idx, time_labels, df, dims, values)
    logger.info("%s: N=%d P=%d を読み込みました", path, dense.shape[0], dense.shape[1])
    return ScorePanel(values=dense, dims=dims, time_labels=time_labels)


def panel_header(panel: ScorePanel, **extra: Any) -> dict[str, Any]:
    header = FileHeader(
        dimensions=tuple(DimensionHeader(d.name, d.labels, d.is_method_axis) for d in panel.dims)
    ).to_json_dict()
    header.update(extra)
    return header


def panel_frame(panel: ScorePanel) -> pd.DataFrame:
    n_time, n_cols = panel.values.shape
    times = panel.time_labels if panel.time_labels is not None else tuple(str(t) for t in range(n_time))
    columns = [panel.unflatten_column(p) for p in range(n_cols)]
    data: dict[str, Any] = {DEFAULT_TIME_COLUMN: np.repeat(np.asarray(times, dtype=object), n_cols)}
    for k, d in enumerate(panel.dims):
        data[d.name] = np.tile(np.asarray([c[k] for c in columns], dtype=object), n_time)
    data[DEFAULT_VALUE_COLUMN] = panel.values.ravel()
    return pd.DataFrame(data)


def write_panel(panel: ScorePanel, path: str | Path, *, metadata: Mapping[str, Any] | None = None) -> Path:
    """縦持ち CSV と同名の .json ヘッダを書く。load_panel で値がビット単位で復元される。"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = panel_frame(panel)
    # repr は最短の往復表現
    frame[DEFAULT_VALUE_COLUMN] = [repr(float(v)) for v in panel.values.ravel()]
    frame.to_csv(path, index=False)
    extra = {"metadata": dict(metadata)} if metadata else {}
    write_json(panel_header(panel, **extra), sidecar_path(path))
    return path


@dataclass(frozen=True, eq=False)
class ForecastFrame:
    """検証済みのアンサンブル予測（縦持ち）。"""

    frame: pd.DataFrame
    dims: tuple[DimensionSpec, ...]
    time_labels: tuple[str, ...]
    value_columns: tuple[str, ...]
    member_column: str

    @property
    def n_values(self) -> int:
        return len(self.value_columns)


def load_forecasts(path: str | Path, header: HeaderLike = None) -> ForecastFrame:
    path = Path(path)
    df, payload, n_header_lines = _read_with_header(path, header)
    if payload is None:
        payload = _infer_header(df)
    file_header = FileHeader.from_json_dict(payload)
    value_columns = file_header.value_columns or (file_header.value_column,)
    dim_names = file_header.dimension_names
    member = file_header.member_column
    _require_columns(df, [file_header.time_column, *dim_names, member, *value_columns], path)
    if df.empty:
        raise PanelParseError(f"{path} にデータ行がありません")

    line_of = np.arange(len(df)) + n_header_lines + 2
    _check_duplicates(df, [file_header.time_column, *dim_names, member], line_of)
    numeric = pd.DataFrame({c: _parse_values(df, c, line_of) for c in value_columns})
    time_idx, time_labels = _time_index(df[file_header.time_column])
    dims = _resolve_dimensions(df, file_header)

    frame = df[[*dim_names, member]].copy()
    frame[file_header.time_column] = time_idx
    for c in value_columns:
        frame[c] = numeric[c].to_numpy()
    frame = frame.rename(columns={file_header.time_column: DEFAULT_TIME_COLUMN})

    # 各セルに観測がちょうど 1 行、メンバーが 1 行以上
    keys = [DEFAULT_TIME_COLUMN, *dim_names]
    is_obs = frame[member] == OBS_MEMBER
    counts = frame.assign(_obs=is_obs, _member=~is_obs).groupby(keys, sort=False)[["_obs", "_member"]].sum()
    bad = counts[(counts["_obs"] != 1) | (counts["_member"] < 1)]
    if not bad.empty:
        key = bad.index[0]
        key = key if isinstance(key, tuple) else (key,)
        n_obs, n_mem = (int(x) for x in bad.iloc[0])
        cell = (time_labels[int(key[0])], *key[1:])
        raise InvalidInputError(
            f"予測セル {cell!r} は観測 1 行・メンバー 1 行以上が必要です (観測 {n_obs} 行, メンバー {n_mem} 行)"
        )
    return ForecastFrame(
        frame=frame.reset_index(drop=True),
        dims=dims,
        time_labels=time_labels,
        value_columns=tuple(value_columns),
        member_column=member,
    )


def score_forecasts(
    forecasts: ForecastFrame,
    rule: str,
    *,
    tau: float | None = None,
    aggregate_over: Sequence[str] = (),
) -> ScorePanel:
    """セルごとにスコアを計算し、必要なら指定次元について和をとったパネルを返す。"""
    if rule not in RULES:
        raise InvalidInputError(f"未知のスコアルール: {rule!r} (選択肢: {', '.join(RULES)})")
    if rule in UNIVARIATE_RULES and forecasts.n_values != 1:
        raise InvalidInputError(f"ルール {rule!r} は D=1 のみ対応しています: D={forecasts.n_values}")
    dim_names = [d.name for d in forecasts.dims]
    unknown = [a for a in aggregate_over if a not in dim_names]
    if unknown:
        raise InvalidInputError(f"集約対象の次元がありません: {unknown} (候補: {dim_names})")
    if any(d.is_method_axis and d.name in aggregate_over for d in forecasts.dims):
        raise InvalidInputError("手法軸について集約することはできません")

    frame = forecasts.frame
    member = forecasts.member_column
    cols = list(forecasts.value_columns)
    keys = [DEFAULT_TIME_COLUMN, *dim_names]
    rows = []
    for key, cell in frame.groupby(keys, sort=False):
        is_obs = (cell[member] == OBS_MEMBER).to_numpy()
        y = cell.loc[is_obs, cols].to_numpy()[0]
        members = cell.loc[~is_obs, cols].to_numpy()
        rows.append((*key, score_ensemble(rule, members, y, tau=tau)))
    scores = pd.DataFrame(rows, columns=[*keys, DEFAULT_VALUE_COLUMN])

    kept = tuple(d for d in forecasts.dims if d.name not in set(aggregate_over))
    if aggregate_over:
        scores = scores.groupby([DEFAULT_TIME_COLUMN, *(d.name for d in kept)], sort=False, as_index=False)[
            DEFAULT_VALUE_COLUMN
        ].sum()
    dense = _dense_values(
        scores[DEFAULT_TIME_COLUMN].to_numpy(dtype=np.int64),
        forecasts.time_labels,
        scores,
        kept,
        scores[DEFAULT_VALUE_COLUMN].to_numpy(dtype=np.float64),
    )
    logger.info(
        "score: rule=%s 集約=%s → N=%d P=%d", rule, list(aggregate_over), dense.shape[0], dense.shape[1]
    )
    return ScorePanel(values=dense, dims=kept, time_labels=forecasts.time_labels)

