"""ブートストラップ信頼バンドのテスト。"""

from __future__ import annotations

from statistics import NormalDist

import numpy as np
import pytest
from scipy.special import log_ndtr

from skillbands.bands import (
    BandConfig,
    BandResult,
    _fourth_root_floor,
    average_band_width,
    band_report,
    bootstrap_bands,
    bootstrap_replicates,
    default_block_length,
    draw_block_starts,
    moving_block_resample,
    normal_quantile,
    resample_indices,
)
from skillbands.errors import DegenerateBenchmarkError, InvalidInputError, ZeroSigmaError
from skillbands.panel import ComparisonSelector, DimensionSpec, ScorePanel
from skillbands.rng import STREAM_BOOTSTRAP, chunk_generator


def _panel(values, labels=None):
    values = np.asarray(values, dtype=float)
    labels = labels or tuple(f"m{i}" for i in range(1, values.shape[1] + 1))
    return ScorePanel(values=values, dims=(DimensionSpec("method", labels, True),))


def test_normal_quantile_matches_independent_oracle():
    oracle = NormalDist()
    grid = np.linspace(1e-4, 1 - 1e-4, 10_000)
    worst = max(abs(normal_quantile(p) - oracle.inv_cdf(p)) for p in grid)
    assert worst <= 1e-9


def test_normal_quantile_in_the_tails():
    # 分位点を対数 CDF に戻して元の確率と比べる
    lower = np.logspace(-300, -2, 300)
    for p in lower:
        assert log_ndtr(normal_quantile(p)) == pytest.approx(np.log(p), abs=1e-9)
    upper = 1.0 - np.logspace(-16, -2, 100)
    for p in upper:
        assert log_ndtr(-normal_quantile(p)) == pytest.approx(np.log1p(-p), abs=1e-9)
    xs = [normal_quantile(p) for p in np.concatenate([lower, upper[::-1]])]
    assert np.all(np.diff(xs) > 0)
    assert normal_quantile(1 - 1e-16) > 8.0


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
def test_normal_quantile_domain(p):
    with pytest.raises(InvalidInputError):
        normal_quantile(p)


@pytest.mark.parametrize(
    "n_time, q, expected",
    [(400, 3, 12), (100, 3, 9), (81, 3, 9), (80, 3, 6), (16, 1, 2), (2, 3, 2), (400, 0, 1)],
)
def test_default_block_length(n_time, q, expected):
    assert default_block_length(n_time, q) == expected


def test_fourth_root_floor_is_exact():
    for n in range(1, 5000):
        r = _fourth_root_floor(n)
        assert r**4 <= n < (r + 1) ** 4


def test_band_config_validation():
    with pytest.raises(InvalidInputError):
        BandConfig(alpha=0.0)
    with pytest.raises(InvalidInputError):
        BandConfig(n_boot=1)
    with pytest.raises(InvalidInputError):
        BandConfig(block_length=0)
    with pytest.raises(InvalidInputError):
        BandConfig(band_types=("supt", "simultaneous"))
    with pytest.raises(InvalidInputError):
        BandConfig(band_types=())
    with pytest.raises(InvalidInputError):
        BandConfig(target="ratio")
    with pytest.raises(InvalidInputError):
        BandConfig(block_length=11).resolve_block_length(10)


@pytest.mark.parametrize("alpha, n_boot, rank", [(0.1, 4000, 3600), (0.1, 10, 9), (0.1, 3, 3), (0.05, 999, 950)])
def test_quantile_rank(alpha, n_boot, rank):
    assert BandConfig(alpha=alpha, n_boot=n_boot).quantile_rank() == rank


def test_resample_indices_are_contiguous_blocks_truncated_to_n():
    idx = resample_indices(np.array([0, 4, 2]), 3, 7)
    np.testing.assert_array_equal(idx, [0, 1, 2, 4, 5, 6, 2])


def test_block_starts_stay_inside_the_sample():
    rng = np.random.default_rng(0)
    for n_time, l in [(10, 1), (10, 3), (10, 10), (101, 9)]:
        starts = draw_block_starts(rng, n_time, l)
        assert starts.size == -(-n_time // l)
        assert starts.min() >= 0 and starts.max() <= n_time - l


def test_resampled_rows_come_from_contiguous_windows():
    values = np.arange(40.0).reshape(20, 2)
    panel = _panel(values)
    out = moving_block_resample(panel, 6, np.random.default_rng(4))
    rows = out.values[:, 0] / 2
    for start in range(0, 20, 6):
        block = rows[start:start + 6]
        np.testing.assert_array_equal(np.diff(block), 1.0)


def test_full_length_block_reproduces_the_sample():
    panel = _panel(np.random.default_rng(0).normal(size=(15, 3)))
    out = moving_block_resample(panel, 15, np.random.default_rng(9))
    np.testing.assert_array_equal(out.values, panel.values)


def test_unit_block_is_the_iid_bootstrap():
    panel = _panel(np.random.default_rng(0).normal(size=(25, 3)))
    out = moving_block_resample(panel, 1, np.random.default_rng(5))
    idx = np.random.default_rng(5).integers(0, 25, size=25, dtype=np.int64)
    np.testing.assert_array_equal(out.values, panel.values[idx])


def test_block_length_outside_range_is_rejected():
    panel = _panel(np.ones((5, 2)))
    with pytest.raises(InvalidInputError):
        moving_block_resample(panel, 6, np.random.default_rng(0))
    with pytest.raises(InvalidInputError):
        moving_block_resample(panel, 0, np.random.default_rng(0))


def test_replicates_match_explicit_resampling():
    rng = np.random.default_rng(3)
    panel = _panel(rng.gamma(2.0, size=(37, 3)))
    config = BandConfig(n_boot=300, block_length=5, seed=11, target="expected")
    _, _, draws = bootstrap_replicates(panel, None, config, workers=1)
    assert draws.shape == (300, 3)

    for chunk, first in [(0, 0), (1, 256)]:
        gen = chunk_generator(11, STREAM_BOOTSTRAP, chunk)
        for b in range(first, first + 3):
            idx = resample_indices(draw_block_starts(gen, 37, 5), 5, 37)
            np.testing.assert_allclose(draws[b], panel.values[idx].mean(axis=0), rtol=1e-12)


def test_results_do_not_depend_on_thread_count():
    rng = np.random.default_rng(8)
    panel = _panel(rng.gamma(3.0, size=(80, 4)))
    selector = ComparisonSelector.against_benchmark(["m1", "m2", "m3"], "m4")
    config = BandConfig(n_boot=1000, block_q=3, seed=7)
    serial = bootstrap_bands(panel, selector, config, workers=1)
    threaded = bootstrap_bands(panel, selector, config, workers=4)
    np.testing.assert_array_equal(serial.sigma_hat, threaded.sigma_hat)
    for t in serial.band_types:
        assert serial.scaling[t] == threaded.scaling[t]
        np.testing.assert_array_equal(serial.lower[t], threaded.lower[t])
        np.testing.assert_array_equal(serial.upper[t], threaded.upper[t])


def test_bands_are_symmetric_and_nested():
    rng = np.random.default_rng(12)
    panel = _panel(rng.normal(10.0, 1.0, size=(300, 5)))
    config = BandConfig(n_boot=4000, block_length=1, seed=1, target="expected")
    result = bootstrap_bands(panel, None, config, workers=2)

    for t in result.band_types:
        np.testing.assert_allclose(result.lower[t] + result.upper[t], 2 * result.estimates, rtol=1e-12)
    pw, bonf, supt = (result.scaling[t] for t in ("pointwise", "bonferroni", "supt"))
    assert pw <= bonf
    assert pw - 0.05 <= supt <= bonf + 0.05
    assert pw == pytest.approx(NormalDist().inv_cdf(0.95))
    assert bonf == pytest.approx(NormalDist().inv_cdf(1 - 0.1 / 10))
    assert np.all(result.upper["bonferroni"] - result.lower["bonferroni"] >= result.upper["pointwise"] - result.lower["pointwise"])


def test_single_entry_scalings():
    panel = _panel(np.random.default_rng(2).normal(5.0, 1.0, size=(200, 1)), labels=("a",))
    result = bootstrap_bands(panel, None, BandConfig(n_boot=4000, block_length=1, target="expected"), workers=1)
    assert result.scaling["pointwise"] == result.scaling["bonferroni"]
    assert result.scaling["supt"] == pytest.approx(result.scaling["pointwise"], abs=0.1)


def test_metadata_describes_the_run():
    panel = _panel(np.random.default_rng(1).gamma(2.0, size=(100, 3)))
    selector = ComparisonSelector.against_benchmark(["m1", "m2"], "m3")
    result = bootstrap_bands(panel, selector, BandConfig(n_boot=200, seed=5, band_types=("supt",)), workers=1)
    meta = result.metadata
    assert meta["block_length"] == 9
    assert meta["J"] == 2 and meta["N"] == 100 and meta["P"] == 3
    assert meta["supt_rank"] == 180
    assert meta["pairs"] == [["m1", "m3"], ["m2", "m3"]]
    assert result.band_types == ("supt",)
    assert result.entry_labels == ("m1/m3", "m2/m3")
    payload = result.to_json_dict()
    assert set(payload) >= {"metadata", "entries", "estimates", "sigma_hat", "scaling", "lower", "upper"}


def test_zero_bootstrap_sigma_is_an_error():
    values = np.ones((30, 2))
    values[:, 1] = np.random.default_rng(0).normal(size=30)
    panel = _panel(values, labels=("flat", "noisy"))
    with pytest.raises(ZeroSigmaError) as info:
        bootstrap_bands(panel, None, BandConfig(n_boot=100, block_length=1, target="expected"), workers=1)
    assert info.value.entries == ["flat"]


def test_degenerate_benchmark_in_a_replicate_aborts():
    values = np.zeros((20, 2))
    values[:, 0] = 1.0
    values[0, 1] = 1.0
    panel = _panel(values, labels=("m", "b"))
    with pytest.raises(DegenerateBenchmarkError) as info:
        bootstrap_bands(panel, ComparisonSelector((("m", "b"),)), BandConfig(n_boot=200, block_length=1), workers=1)
    assert info.value.column == "b"
    assert info.value.replicate is not None


def test_band_report_arithmetic():
    result = BandResult.from_scaling(
        [0.062, 0.2], [0.0852, 0.05], {"supt": 1.0}, entry_labels=["energy/ref", "crps/ref"]
    )
    report = band_report(result)
    assert list(report["entry"]) == ["energy/ref", "crps/ref"]
    assert report.loc[0, "supt_lower"] == pytest.approx(0.062 - 0.0852, abs=1e-12)
    assert report.loc[0, "supt_upper"] == pytest.approx(0.147, abs=5e-4)
    assert bool(report.loc[0, "supt_covers_zero"]) is True
    assert bool(report.loc[1, "supt_covers_zero"]) is False
    assert average_band_width(result)["supt"] == pytest.approx(0.0852 + 0.05)


def test_from_scaling_rejects_zero_sigma():
    with pytest.raises(ZeroSigmaError):
        BandResult.from_scaling([0.1], [0.0], {"pointwise": 1.645})


def _lead_panel():
    dims = (
        DimensionSpec("lead", ("1", "2")),
        DimensionSpec("method", ("tvp", "bvar", "const"), True),
    )
    return ScorePanel(values=np.random.default_rng(4).gamma(2.0, size=(80, 6)), dims=dims)


def test_entry_keys_restore_the_array_layout():
    panel = _lead_panel()
    selector = ComparisonSelector.against_benchmark(["tvp", "bvar", "const"], "const")
    result = bootstrap_bands(panel, selector, BandConfig(n_boot=100, band_types=("pointwise",)), workers=1)
    assert result.entry_fields == ("method", "benchmark", "lead")
    assert result.entry_keys == (
        ("tvp", "const", "1"),
        ("tvp", "const", "2"),
        ("bvar", "const", "1"),
        ("bvar", "const", "2"),
    )
    assert result.metadata["entry_keys"][1] == ["tvp", "const", "2"]
    assert result.to_json_dict()["metadata"]["entry_fields"] == ["method", "benchmark", "lead"]

    report = band_report(result)
    assert list(report["benchmark"]) == ["const"] * 4
    wide = report.pivot(index="method", columns="lead", values="estimate")
    assert wide.loc["bvar", "2"] == pytest.approx(result.estimates[3])
    assert wide.loc["tvp", "1"] == pytest.approx(result.estimates[0])


def test_expected_score_entries_carry_every_dimension():
    panel = _lead_panel()
    result = bootstrap_bands(panel, None, BandConfig(n_boot=100, target="expected", band_types=("pointwise",)), workers=1)
    assert result.entry_fields == ("lead", "method")
    assert result.entry_keys[4] == ("2", "bvar")
    report = band_report(result)
    assert list(report.columns[:3]) == ["entry", "lead", "method"]
    assert "pointwise_covers_null" not in report.columns


def test_covers_null_uses_the_equal_accuracy_value():
    relative = BandResult.from_scaling([0.99, 1.2], [0.05, 0.05], {"pointwise": 1.0}, metadata={"target": "relative"})
    report = band_report(relative)
    assert list(report["pointwise_covers_null"]) == [True, False]
    assert list(report["pointwise_covers_zero"]) == [False, False]

    skill = BandResult.from_scaling([0.01, 0.2], [0.05, 0.05], {"pointwise": 1.0}, metadata={"target": "skill"})
    report = band_report(skill)
    assert list(report["pointwise_covers_null"]) == list(report["pointwise_covers_zero"]) == [True, False]


def test_entry_keys_must_match_the_entries():
    with pytest.raises(InvalidInputError):
        BandResult.from_scaling([0.1, 0.2], [0.1, 0.1], {"pointwise": 1.0}, entry_fields=("method",), entry_keys=[("a",)])
