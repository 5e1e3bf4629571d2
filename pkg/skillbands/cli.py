#!/usr/bin/env python3
"""skillbands コマンドライン。

サブコマンド:
  bands        スコアパネルからスキルスコア等の信頼バンドを計算する
  score        アンサンブル予測ファイルを採点してスコアパネルを書き出す
  simulate     VAR(1) スコア過程でバンドの被覆率を調べる
  asymptotics  等相関正規分布での sup-t / Bonferroni / pointwise の漸近比較

結果は --out の CSV（表示用に有効数字 6 桁）と、同名の .json（全精度の値と
設定・メタデータ）に書く。--out を省略すると CSV を標準出力に書く。
エラー時は {"error": 種別, "message": ...} を標準エラーに出し、種別ごとの
終了コードで終わる。
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, NoReturn, Sequence

import pandas as pd

from . import __version__
from .asymptotics import DEFAULT_MC_DRAWS, DEFAULT_RHO_VALUES, asymptotic_table
from .bands import (
    BAND_TYPES,
    DEFAULT_ALPHA,
    DEFAULT_BLOCK_Q,
    DEFAULT_N_BOOT,
    DEFAULT_SEED,
    BandConfig,
    average_band_width,
    band_report,
    bootstrap_bands,
)
from .errors import InvalidInputError, SkillBandsError
from .panel import TARGETS, ComparisonSelector
from .panel_io import load_forecasts, load_panel, panel_frame, score_forecasts, write_panel
from .scoring import RULES
from .simulation import (
    DEFAULT_BURN_IN,
    DEFAULT_MEAN,
    DEFAULT_REPLICATIONS,
    PRESETS,
    CoverageGrid,
    coverage_table,
    pivot_coverage_table,
    run_coverage_experiment,
)
from .utils import parse_float_list, parse_int_list, parse_str_list, read_text, write_json

logger = logging.getLogger(__name__)

LOG_ENV = "SKILLBANDS_LOG"
DEFAULT_LOG_LEVEL = "WARNING"
DEFAULT_J_VALUES = "1:25"
CSV_FLOAT_FORMAT = "%.6g"
IO_ERROR_CATEGORY = "io_error"
IO_ERROR_EXIT_CODE = 8


class ArgumentParser(argparse.ArgumentParser):
    """引数エラーを usage 表示と SystemExit ではなく InvalidInputError で送出する。"""

    def error(self, message: str) -> NoReturn:
        raise InvalidInputError(f"{self.prog}: {message}")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=DEFAULT_SEED, help="マスターシード (デフォルト: %(default)s)")
    parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help="並列スレッド数 (デフォルト: 環境変数 SKILLBANDS_THREADS、なければ CPU コア数、0 で順次実行)",
    )
    parser.add_argument("--out", type=Path, default=None, help="出力 CSV（省略時は標準出力）")


def build_parser() -> argparse.ArgumentParser:
    parser = ArgumentParser(
        prog="skillbands",
        description="予測スキルスコアの同時信頼バンド（moving block bootstrap）",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
使用例:
  %(prog)s bands --panel p.csv --target skill --pairs tvp:const --alpha 0.1 --B 4000 --out bands.csv
  %(prog)s score --forecasts f.csv --rule crps --out scores.csv
  %(prog)s simulate --preset appendix-e-small --seed 1 --out cov.csv
  %(prog)s asymptotics --J 1:25 --rho 0,0.3,0.6 --alpha 0.1 --out widths.csv
        """,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "--log-level",
        default=os.environ.get(LOG_ENV, DEFAULT_LOG_LEVEL),
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        type=str.upper,
        help=f"ログレベル (デフォルト: 環境変数 {LOG_ENV}、なければ {DEFAULT_LOG_LEVEL})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bands", help="信頼バンドを計算する")
    p.add_argument("--panel", type=Path, required=True, help="縦持ちスコアパネル CSV")
    p.add_argument("--header", type=Path, default=None, help="ヘッダ JSON（省略時はインラインかサイドカー）")
    p.add_argument("--target", choices=TARGETS, default="skill", help="推定対象 (デフォルト: %(default)s)")
    p.add_argument("--pairs", type=str, default=None, help="比較ペア method:benchmark のコンマ区切り")
    p.add_argument("--benchmark", type=str, default=None, help="全手法をこのベンチマークと比較する（--pairs の代わり）")
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA, help="有意水準 (デフォルト: %(default)s)")
    p.add_argument("--B", dest="n_boot", type=int, default=DEFAULT_N_BOOT, help="ブートストラップ回数 (デフォルト: %(default)s)")
    p.add_argument("--block-q", type=int, default=DEFAULT_BLOCK_Q, help="ブロック長 l = q⌊N^{1/4}⌋ の q (デフォルト: %(default)s)")
    p.add_argument("--block-length", type=int, default=None, help="ブロック長 l を直接指定（--block-q より優先）")
    p.add_argument(
        "--types",
        type=parse_str_list,
        default=list(BAND_TYPES),
        help=f"バンド種別のコンマ区切り (デフォルト: {','.join(BAND_TYPES)})",
    )
    _add_common(p)
    p.set_defaults(handler=cmd_bands)

    p = sub.add_parser("score", help="アンサンブル予測を採点してスコアパネルを書き出す")
    p.add_argument("--forecasts", type=Path, required=True, help="縦持ち予測 CSV（member 列に obs を含む）")
    p.add_argument("--header", type=Path, default=None, help="ヘッダ JSON（省略時はインラインかサイドカー）")
    p.add_argument("--rule", choices=RULES, required=True, help="スコアルール")
    p.add_argument("--tau", type=float, default=None, help="qs の分位水準")
    p.add_argument("--aggregate", type=parse_str_list, default=[], help="和をとる次元のコンマ区切り")
    p.add_argument("--out", type=Path, default=None, help="出力パネル CSV（省略時は標準出力）")
    p.set_defaults(handler=cmd_score)

    p = sub.add_parser("simulate", help="VAR(1) スコア過程で被覆率を調べる")
    p.add_argument("--preset", choices=sorted(PRESETS), default=None, help="グリッドのプリセット")
    p.add_argument("--grid", type=Path, default=None, help="グリッド JSON（プリセットを上書き）")
    p.add_argument("--a", type=parse_float_list, default=None, help="AR 係数 a のコンマ区切り")
    p.add_argument("--v", type=parse_float_list, default=None, help="誤差の等相関 v のコンマ区切り")
    p.add_argument("--P", type=parse_int_list, default=None, help="スコア系列数 P（1:5 の範囲指定可）")
    p.add_argument("--N", type=parse_int_list, default=None, help="時点数 N")
    p.add_argument("--q", type=parse_int_list, default=None, help="ブロック長の倍率 q（0 は iid ブートストラップ）")
    p.add_argument("--types", type=parse_str_list, default=None, help="バンド種別のコンマ区切り")
    p.add_argument("--targets", type=parse_str_list, default=None, help=f"推定対象 ({','.join(TARGETS)})")
    p.add_argument("--R", dest="replications", type=int, default=DEFAULT_REPLICATIONS, help="繰り返し回数 (デフォルト: %(default)s)")
    p.add_argument("--B", dest="n_boot", type=int, default=DEFAULT_N_BOOT, help="ブートストラップ回数 (デフォルト: %(default)s)")
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA, help="有意水準 (デフォルト: %(default)s)")
    p.add_argument("--mean", type=float, default=DEFAULT_MEAN, help="期待スコア E[S_t] の各要素 (デフォルト: %(default)s)")
    p.add_argument("--burn-in", type=int, default=DEFAULT_BURN_IN, help="捨てる初期ステップ数 (デフォルト: %(default)s)")
    p.add_argument("--high-dim", action="store_true", help="P ≥ 100 のセルを許可する")
    p.add_argument("--wide", action="store_true", help="CSV を横持ち（列 N × P）で書く")
    _add_common(p)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("asymptotics", help="等相関正規分布での漸近的な幅と被覆率")
    p.add_argument("--J", dest="J_values", type=parse_int_list, default=parse_int_list(DEFAULT_J_VALUES), help=f"J の値 (デフォルト: {DEFAULT_J_VALUES})")
    p.add_argument(
        "--rho",
        type=parse_float_list,
        default=list(DEFAULT_RHO_VALUES),
        help=f"等相関 ρ のコンマ区切り (デフォルト: {','.join(str(r) for r in DEFAULT_RHO_VALUES)})",
    )
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA, help="有意水準 (デフォルト: %(default)s)")
    p.add_argument("--mc-draws", type=int, default=DEFAULT_MC_DRAWS, help="モンテカルロ標本数 (デフォルト: %(default)s)")
    _add_common(p)
    p.set_defaults(handler=cmd_asymptotics)
    return parser


def _emit(df: pd.DataFrame, out: Path | None, payload: dict[str, Any]) -> None:
    if out is None:
        df.to_csv(sys.stdout, index=False, float_format=CSV_FLOAT_FORMAT)
        return
    out.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(out, index=False, float_format=CSV_FLOAT_FORMAT)
    write_json(payload, out.with_suffix(".json"))
    print(f"結果を {out} に保存しました。", file=sys.stderr)


def _selector(args: argparse.Namespace, methods: Sequence[str]) -> ComparisonSelector | None:
    if args.target == "expected":
        return None
    if args.pairs and args.benchmark:
        raise InvalidInputError("--pairs と --benchmark は同時に指定できません")
    if args.pairs:
        return ComparisonSelector.parse(args.pairs)
    if args.benchmark:
        return ComparisonSelector.against_benchmark(methods, args.benchmark)
    raise InvalidInputError(f"target={args.target!r} には --pairs か --benchmark が必要です")


def cmd_bands(args: argparse.Namespace) -> None:
    panel = load_panel(args.panel, args.header)
    config = BandConfig(
        alpha=args.alpha,
        n_boot=args.n_boot,
        block_length=args.block_length,
        block_q=args.block_q,
        seed=args.seed,
        band_types=tuple(args.types),
        target=args.target,
    )
    selector = _selector(args, panel.method_dim.labels)
    result = bootstrap_bands(panel, selector, config, workers=args.threads)
    payload = result.to_json_dict()
    payload["average_width"] = average_band_width(result)
    payload["input"] = {"panel": str(args.panel), "header": None if args.header is None else str(args.header)}
    _emit(band_report(result), args.out, payload)


def cmd_score(args: argparse.Namespace) -> None:
    forecasts = load_forecasts(args.forecasts, args.header)
    panel = score_forecasts(forecasts, args.rule, tau=args.tau, aggregate_over=tuple(args.aggregate))
    metadata = {"rule": args.rule, "tau": args.tau, "aggregate_over": list(args.aggregate), "source": str(args.forecasts)}
    if args.out is None:
        panel_frame(panel).to_csv(sys.stdout, index=False)
        return
    write_panel(panel, args.out, metadata=metadata)
    print(f"スコアパネルを {args.out} に保存しました (N={panel.n_time}, P={panel.n_columns})。", file=sys.stderr)


def resolve_grid(args: argparse.Namespace) -> CoverageGrid:
    """プリセット → --grid JSON → 個別フラグの順に上書きする。"""
    grid = PRESETS[args.preset] if args.preset else CoverageGrid()
    if args.grid is not None:
        payload = json.loads(read_text(args.grid))
        if not isinstance(payload, dict):
            raise InvalidInputError(f"{args.grid}: グリッド JSON はオブジェクトである必要があります")
        merged = {**grid.to_json_dict(), **payload}
        grid = CoverageGrid.from_json_dict(merged)
    overrides = {
        "a_values": args.a,
        "v_values": args.v,
        "P_values": args.P,
        "N_values": args.N,
        "q_values": args.q,
        "band_types": args.types,
        "targets": args.targets,
    }
    changes: dict[str, Any] = {k: tuple(v) for k, v in overrides.items() if v is not None}
    if args.high_dim:
        changes["high_dim"] = True
    return dataclasses.replace(grid, **changes) if changes else grid


def cmd_simulate(args: argparse.Namespace) -> None:
    grid = resolve_grid(args)
    n_cells = len(grid.cells())
    print(f"被覆率シミュレーション: {n_cells} セル × R={args.replications} (B={args.n_boot})", file=sys.stderr)
    cells = run_coverage_experiment(
        grid,
        replications=args.replications,
        alpha=args.alpha,
        n_boot=args.n_boot,
        seed=args.seed,
        mean=args.mean,
        burn_in=args.burn_in,
        workers=args.threads,
    )
    df = coverage_table(cells)
    payload = {
        "grid": grid.to_json_dict(),
        "preset": args.preset,
        "replications": args.replications,
        "n_boot": args.n_boot,
        "alpha": args.alpha,
        "mean": args.mean,
        "burn_in": args.burn_in,
        "seed": args.seed,
        "cells": df.to_dict(orient="records"),
    }
    _emit(pivot_coverage_table(df) if args.wide else df, args.out, payload)


def cmd_asymptotics(args: argparse.Namespace) -> None:
    df = asymptotic_table(
        args.J_values,
        args.rho,
        alpha=args.alpha,
        mc_draws=args.mc_draws,
        seed=args.seed,
        workers=args.threads,
    )
    payload = {
        "alpha": args.alpha,
        "mc_draws": args.mc_draws,
        "seed": args.seed,
        "rows": df.to_dict(orient="records"),
    }
    _emit(df, args.out, payload)


def _report_error(category: str, message: str) -> None:
    print(json.dumps({"error": category, "message": message}, ensure_ascii=False), file=sys.stderr)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except InvalidInputError as e:
        _report_error(e.category, str(e))
        return e.exit_code
    logging.basicConfig(
        level=getattr(logging, args.log_level, logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    logger.debug("command=%s args=%s", args.command, {k: v for k, v in vars(args).items() if k != "handler"})
    try:
        args.handler(args)
    except SkillBandsError as e:
        _report_error(e.category, str(e))
        return e.exit_code
    except json.JSONDecodeError as e:
        _report_error(InvalidInputError.category, f"JSON を解析できません: {e}")
        return InvalidInputError.exit_code
    except OSError as e:
        _report_error(IO_ERROR_CATEGORY, str(e))
        return IO_ERROR_EXIT_CODE
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
