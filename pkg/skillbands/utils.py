from __future__ import annotations

import argparse
import json
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence, TypeVar

from .errors import InvalidInputError, SkillBandsError

T = TypeVar("T")
R = TypeVar("R")

THREADS_ENV = "SKILLBANDS_THREADS"


def write_json(payload: dict[str, Any], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, ensure_ascii=False)
        f.write("\n")
    return path


def read_text(path: Path, error: type[SkillBandsError] = InvalidInputError) -> str:
    """UTF-8 テキストを読む。デコードできなければ error を送出する。"""
    try:
        return Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise error(f"{path} を UTF-8 テキストとして読めません: {e}") from e


def resolve_workers(workers: int | None, n_tasks: int) -> int:
    """並列ワーカー数を決める。

    None なら環境変数 SKILLBANDS_THREADS、未設定なら CPU コア数。
    0 は順次実行（1 ワーカー）として扱う。
    """
    if workers is None:
        env = os.environ.get(THREADS_ENV, "").strip()
        if env:
            try:
                workers = int(env)
            except ValueError as e:
                raise InvalidInputError(f"{THREADS_ENV} は整数である必要があります: {env!r}") from e
        else:
            workers = os.cpu_count() or 1
    if workers < 0:
        raise InvalidInputError(f"ワーカー数は 0 以上である必要があります: {workers}")
    return max(1, min(workers, max(n_tasks, 1)))


def ordered_map(
    fn: Callable[[T], R], items: Sequence[T], *, workers: int | None = None
) -> list[R]:
    """items に fn を適用し、投入順のまま結果を返す。

    スレッド数によらず戻り値の並びは同じ（決定性はここに依存している）。
    """
    max_workers = resolve_workers(workers, len(items))
    if max_workers == 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        return list(executor.map(fn, items))


def parse_float_list(text: str) -> list[float]:
    """コンマ区切りの数値文字列を float のリストに変換する。"""
    try:
        return [float(x.strip()) for x in text.split(",") if x.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"Invalid float list: {e}")


def parse_int_list(text: str) -> list[int]:
    """``1,3,10`` または ``1:25``（両端を含む）、その混在を受け付ける。"""
    values: list[int] = []
    try:
        for part in (p.strip() for p in text.split(",")):
            if not part:
                continue
            if ":" in part:
                lo, hi = (int(x) for x in part.split(":", 1))
                if hi < lo:
                    raise ValueError(f"range {part!r} is empty")
                values.extend(range(lo, hi + 1))
            else:
                values.append(int(part))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"Invalid integer list: {e}")
    return values


def parse_str_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def chunk_ranges(total: int, chunk: int) -> list[tuple[int, int]]:
    """[0, total) を長さ chunk の半開区間に分割する（最後だけ短い）。"""
    return [(start, min(start + chunk, total)) for start in range(0, total, chunk)]


def unique_in_order(values: Iterable[Any]) -> list[Any]:
    seen: set[Any] = set()
    out: list[Any] = []
    for v in values:
        if v not in seen:
            seen.add(v)
            out.append(v)
    return out
