"""skillbands の例外階層。

CLI は ``category`` をそのまま機械可読なエラー種別として出力し、
``exit_code`` を終了コードに使う。
"""
from __future__ import annotations

from typing import Sequence


class SkillBandsError(Exception):
    category = "error"
    exit_code = 1


class InvalidInputError(SkillBandsError, ValueError):
    category = "invalid_input"
    exit_code = 2


class DegenerateBenchmarkError(SkillBandsError, ValueError):
    """ベンチマークの平均スコアが 0 以下（スキルスコアが定義できない）。"""

    category = "degenerate_benchmark"
    exit_code = 3

    def __init__(self, column: str, mean: float, replicate: int | None = None) -> None:
        self.column = column
        self.mean = mean
        self.replicate = replicate
        where = "元サンプル" if replicate is None else f"ブートストラップ複製 b={replicate}"
        super().__init__(
            f"{where}でベンチマーク列 {column!r} の平均スコアが正ではありません: {mean!r}"
        )


class ZeroSigmaError(SkillBandsError, ValueError):
    category = "zero_sigma"
    exit_code = 4

    def __init__(self, entries: Sequence[str]) -> None:
        self.entries = list(entries)
        shown = ", ".join(self.entries[:5])
        more = "" if len(self.entries) <= 5 else f" ほか {len(self.entries) - 5} 件"
        super().__init__(f"ブートストラップ標準偏差が 0 の要素があります: {shown}{more}")


class DuplicateKeyError(SkillBandsError, ValueError):
    category = "duplicate_key"
    exit_code = 5

    def __init__(self, key: tuple, rows: Sequence[int]) -> None:
        self.key = key
        self.rows = list(rows)
        super().__init__(f"セル {key!r} が重複しています (行番号: {self.rows})")


class CompletenessError(SkillBandsError, ValueError):
    category = "incomplete_panel"
    exit_code = 6

    def __init__(self, missing: tuple, n_missing: int) -> None:
        self.missing = missing
        self.n_missing = n_missing
        super().__init__(
            f"パネルが完全ではありません: {n_missing} セル欠損、最初の欠損 {missing!r}"
        )


class PanelParseError(SkillBandsError, ValueError):
    category = "parse_error"
    exit_code = 7
