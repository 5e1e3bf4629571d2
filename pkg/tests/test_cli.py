from __future__ import annotations

import json

import numpy as np
import pandas as pd
import pytest

from skillbands.cli import build_parser, main
from skillbands.panel import DimensionSpec, ScorePanel
from skillbands.panel_io import load_panel, write_panel


@pytest.fixture
def panel_path(tmp_path):
    rng = np.random.default_rng(0)
    dims = (
        DimensionSpec("lead", ("1", "2")),
        DimensionSpec("method", ("tvp", "bvar", "const"), True),
    )
    panel = ScorePanel(values=rng.gamma(2.0, size=(60, 6)), dims=dims)
    return write_panel(panel, tmp_path / "p.csv")


def _error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_bands_writes_table_and_metadata(tmp_path, panel_path):
    out = tmp_path / "bands.csv"
    code = main([
        "bands", "--panel", str(panel_path), "--target", "skill", "--pairs", "tvp:const,bvar:const",
        "--alpha", "0.1", "--B", "300", "--block-q", "3", "--types", "supt,bonferroni,pointwise",
        "--seed", "7", "--threads", "2", "--out", str(out),
    ])
    assert code == 0
    df = pd.read_csv(out)
    assert len(df) == 4
    assert {"entry", "estimate", "sigma", "supt_lower", "supt_upper", "supt_covers_zero"} <= set(df.columns)
    meta = json.loads(out.with_suffix(".json").read_text())
    assert meta["metadata"]["seed"] == 7
    assert meta["metadata"]["block_length"] == 6
    assert set(meta["average_width"]) == {"supt", "bonferroni", "pointwise"}


def test_bands_output_is_byte_identical(tmp_path, panel_path):
    outputs = []
    for i, threads in enumerate(("1", "4")):
        out = tmp_path / f"b{i}.csv"
        args = ["bands", "--panel", str(panel_path), "--benchmark", "const", "--B", "300", "--seed", "3"]
        assert main(args + ["--threads", threads, "--out", str(out)]) == 0
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1]


def test_expected_target_needs_no_pairs(tmp_path, panel_path):
    out = tmp_path / "es.csv"
    assert main(["bands", "--panel", str(panel_path), "--target", "expected", "--B", "100", "--out", str(out)]) == 0
    assert len(pd.read_csv(out)) == 6


def test_missing_pairs_is_invalid_input(panel_path, capsys):
    assert main(["bands", "--panel", str(panel_path), "--B", "100"]) == 2
    assert _error(capsys)["error"] == "invalid_input"


def test_incomplete_panel_exit_code(tmp_path, capsys):
    path = tmp_path / "p.csv"
    path.write_text("time,method,value\n1,a,1\n1,b,2\n2,a,3\n", encoding="utf-8")
    assert main(["bands", "--panel", str(path), "--pairs", "a:b"]) == 6
    assert _error(capsys)["error"] == "incomplete_panel"


def test_unreadable_file_exit_code(tmp_path, capsys):
    assert main(["bands", "--panel", str(tmp_path / "missing.csv"), "--pairs", "a:b"]) == 8
    assert _error(capsys)["error"] == "io_error"


def test_argument_errors_are_reported_as_invalid_input(panel_path, capsys):
    # argparse の usage 表示ではなく機械可読なエラー行を出す
    assert main(["bands", "--panel", str(panel_path), "--bogus"]) == 2
    assert _error(capsys)["error"] == "invalid_input"
    assert main(["bands", "--panel", str(panel_path), "--pairs", "tvp:const", "--B", "many"]) == 2
    assert _error(capsys)["error"] == "invalid_input"
    assert main(["no-such-command"]) == 2
    assert _error(capsys)["error"] == "invalid_input"


def test_non_utf8_panel_is_a_parse_error(tmp_path, capsys):
    path = tmp_path / "p.csv"
    path.write_bytes(b"time,method,value\n1,a,\xff\xfe\n")
    assert main(["bands", "--panel", str(path), "--pairs", "a:b"]) == 7
    assert _error(capsys)["error"] == "parse_error"


@pytest.mark.parametrize(
    "content",
    [
        json.dumps({"P": ["x"]}),
        json.dumps({"N": {"a": 1}}),
        json.dumps([1, 2]),
        "{not json",
    ],
)
def test_bad_grid_file_is_invalid_input(tmp_path, capsys, content):
    grid = tmp_path / "grid.json"
    grid.write_text(content, encoding="utf-8")
    assert main(["simulate", "--grid", str(grid), "--R", "2", "--B", "19"]) == 2
    assert _error(capsys)["error"] == "invalid_input"


def test_non_utf8_grid_file_is_invalid_input(tmp_path, capsys):
    grid = tmp_path / "grid.json"
    grid.write_bytes(b"\xff\xfe{}")
    assert main(["simulate", "--grid", str(grid), "--R", "2", "--B", "19"]) == 2
    assert _error(capsys)["error"] == "invalid_input"


def test_score_output_feeds_bands(tmp_path):
    rows = ["time,method,member,value"]
    rng = np.random.default_rng(1)
    for t in range(30):
        y = rng.normal()
        for method, spread in (("a", 0.5), ("b", 1.5)):
            rows.append(f"{t},{method},obs,{y!r}")
            for k in range(3):
                rows.append(f"{t},{method},{k},{y + spread * rng.normal()!r}")
    forecasts = tmp_path / "f.csv"
    forecasts.write_text("\n".join(rows) + "\n", encoding="utf-8")

    scores = tmp_path / "scores.csv"
    assert main(["score", "--forecasts", str(forecasts), "--rule", "crps", "--out", str(scores)]) == 0
    panel = load_panel(scores)
    assert (panel.n_time, panel.n_columns) == (30, 2)
    assert json.loads(scores.with_suffix(".json").read_text())["metadata"]["rule"] == "crps"

    out = tmp_path / "bands.csv"
    assert main(["bands", "--panel", str(scores), "--pairs", "a:b", "--B", "200", "--out", str(out)]) == 0


def test_asymptotics_command(tmp_path):
    out = tmp_path / "widths.csv"
    code = main(["asymptotics", "--J", "1:3", "--rho", "0,0.3", "--alpha", "0.1", "--mc-draws", "20000", "--out", str(out)])
    assert code == 0
    df = pd.read_csv(out)
    assert len(df) == 6
    assert len(json.loads(out.with_suffix(".json").read_text())["rows"]) == 6


def test_simulate_command(tmp_path):
    out = tmp_path / "cov.csv"
    args = ["simulate", "--P", "2,3", "--N", "40", "--q", "0", "--R", "4", "--B", "49", "--seed", "1", "--out", str(out)]
    assert main(args) == 0
    df = pd.read_csv(out)
    assert len(df) == 2 * 3
    meta = json.loads(out.with_suffix(".json").read_text())
    assert meta["grid"]["P"] == [2, 3]

    wide = tmp_path / "wide.csv"
    assert main(args[:-1] + [str(wide), "--wide"]) == 0
    assert "N=40 P=3" in pd.read_csv(wide).columns


def test_simulate_preset_with_overrides(tmp_path):
    out = tmp_path / "cov.csv"
    code = main(["simulate", "--preset", "appendix-e-small", "--N", "40", "--R", "3", "--B", "19", "--out", str(out)])
    assert code == 0
    df = pd.read_csv(out)
    assert set(df["P"]) == {2, 5}
    assert set(df["boot"]) == {"iid"}


def test_simulate_grid_file_and_high_dim_gate(tmp_path, capsys):
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"P": [100], "N": [40], "q": [0]}), encoding="utf-8")
    assert main(["simulate", "--grid", str(grid), "--R", "2", "--B", "19"]) == 2
    assert _error(capsys)["error"] == "invalid_input"


def test_flags_reach_every_config_field():
    parser = build_parser()
    bands = parser.parse_args(["bands", "--panel", "p.csv", "--block-length", "5"])
    assert (bands.alpha, bands.n_boot, bands.block_q, bands.block_length, bands.seed) == (0.1, 4000, 3, 5, 0)
    sim = parser.parse_args(["simulate", "--a", "0.3", "--v", "0.6", "--mean", "5", "--burn-in", "50"])
    assert (sim.a, sim.v, sim.mean, sim.burn_in, sim.replications) == ([0.3], [0.6], 5.0, 50, 1000)
    asy = parser.parse_args(["asymptotics"])
    assert asy.J_values == list(range(1, 26))
    assert asy.rho == [0.0, 0.3, 0.6]
