"""スコア関数の性質テスト。"""

from __future__ import annotations

import itertools

import numpy as np
import pytest

from skillbands.errors import InvalidInputError
from skillbands.scoring import (
    aggregate_scores,
    brier_score,
    crps_ensemble,
    energy_score_ensemble,
    multivariate_squared_error,
    quantile_score,
    score_ensemble,
    squared_error,
)


def _crps_brute_force(members, y):
    m = len(members)
    first = sum(abs(x - y) for x in members) / m
    second = sum(abs(a - b) for a, b in itertools.product(members, members)) / (2 * m * m)
    return first - second


def _energy_brute_force(members, y):
    m = len(members)
    first = sum(np.linalg.norm(x - y) for x in members) / m
    second = sum(np.linalg.norm(a - b) for a, b in itertools.product(members, members)) / (2 * m * m)
    return first - second


def test_squared_error_and_brier():
    assert squared_error(1.5, 3.0) == pytest.approx(2.25)
    assert brier_score(0.8, 1) == pytest.approx(0.04)
    assert brier_score(0.8, 0) == pytest.approx(0.64)


@pytest.mark.parametrize("p, y", [(1.2, 1), (-0.1, 0), (0.5, 2), (0.5, 0.5)])
def test_brier_rejects_invalid_inputs(p, y):
    with pytest.raises(InvalidInputError):
        brier_score(p, y)


def test_quantile_score_is_pinball_loss():
    # 予測が低すぎると tau、高すぎると 1 - tau の重み
    assert quantile_score(1.0, 3.0, 0.9) == pytest.approx(1.8)
    assert quantile_score(3.0, 1.0, 0.9) == pytest.approx(0.2)
    assert quantile_score(2.0, 5.0, 0.5) == pytest.approx(0.5 * abs(5.0 - 2.0))


@pytest.mark.parametrize("tau", [0.0, 1.0, -0.2, float("nan")])
def test_quantile_score_rejects_tau(tau):
    with pytest.raises(InvalidInputError):
        quantile_score(0.0, 1.0, tau)


def test_scores_are_non_negative_and_zero_for_perfect_forecasts():
    rng = np.random.default_rng(0)
    for _ in range(200):
        x, y = rng.normal(size=2)
        tau = rng.uniform(0.01, 0.99)
        members = rng.normal(size=rng.integers(1, 12))
        assert squared_error(x, y) >= 0
        assert quantile_score(x, y, tau) >= 0
        assert crps_ensemble(members, y) >= 0
        assert energy_score_ensemble(rng.normal(size=(5, 3)), rng.normal(size=3)) >= 0

    assert squared_error(0.3, 0.3) == 0.0
    assert quantile_score(0.3, 0.3, 0.25) == 0.0
    assert multivariate_squared_error([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert crps_ensemble([0.7, 0.7, 0.7], 0.7) == 0.0
    assert energy_score_ensemble([[1.0, 2.0]], [1.0, 2.0]) == 0.0


def test_crps_single_member_is_absolute_error():
    assert crps_ensemble([2.5], 4.0) == pytest.approx(1.5)


def test_crps_matches_double_sum():
    rng = np.random.default_rng(1)
    for m in (2, 3, 7, 20):
        members = rng.normal(size=m)
        y = rng.normal()
        assert crps_ensemble(members, y) == pytest.approx(_crps_brute_force(members, y), abs=1e-12)


def test_crps_counts_duplicate_members():
    members = [0.0, 0.0, 1.0]
    assert crps_ensemble(members, 0.5) == pytest.approx(_crps_brute_force(members, 0.5), abs=1e-12)
    assert crps_ensemble(members, 0.5) != pytest.approx(crps_ensemble([0.0, 1.0], 0.5))


def test_energy_score_equals_crps_in_one_dimension():
    rng = np.random.default_rng(2)
    for scale, m in itertools.product((1.0, 100.0, 1e4), (1, 2, 5, 50)):
        members = scale * rng.normal(size=m)
        y = scale * rng.normal()
        assert abs(energy_score_ensemble(members.reshape(-1, 1), [y]) - crps_ensemble(members, y)) <= 1e-12


def test_energy_score_matches_double_sum():
    rng = np.random.default_rng(3)
    members = rng.normal(size=(6, 3))
    y = rng.normal(size=3)
    assert energy_score_ensemble(members, y) == pytest.approx(_energy_brute_force(members, y), abs=1e-12)


def test_multivariate_squared_error_is_sum_of_componentwise_errors():
    x = np.array([1.0, -2.0, 0.5])
    y = np.array([0.0, 1.0, 0.5])
    assert multivariate_squared_error(x, y) == pytest.approx(sum(squared_error(a, b) for a, b in zip(x, y)))


def test_aggregate_scores_is_sum():
    scores = [0.1, 0.2, 0.7]
    assert aggregate_scores(scores) == pytest.approx(1.0)
    with pytest.raises(InvalidInputError):
        aggregate_scores([])


def test_dimension_mismatch_is_rejected():
    with pytest.raises(InvalidInputError):
        multivariate_squared_error([1.0, 2.0], [1.0])
    with pytest.raises(InvalidInputError):
        energy_score_ensemble(np.zeros((3, 2)), [0.0, 0.0, 0.0])
    with pytest.raises(InvalidInputError):
        crps_ensemble(np.zeros((3, 2)), 0.0)


@pytest.mark.parametrize("bad", [float("nan"), float("inf")])
def test_non_finite_inputs_are_rejected(bad):
    with pytest.raises(InvalidInputError):
        squared_error(bad, 1.0)
    with pytest.raises(InvalidInputError):
        crps_ensemble([0.0, bad], 1.0)


def test_score_ensemble_dispatch():
    members = np.array([[1.0], [2.0], [4.0]])
    assert score_ensemble("se", members, [3.0]) == pytest.approx(squared_error(7.0 / 3.0, 3.0))
    assert score_ensemble("crps", members, [3.0]) == pytest.approx(crps_ensemble(members[:, 0], 3.0))
    assert score_ensemble("energy", members, [3.0]) == pytest.approx(crps_ensemble(members[:, 0], 3.0), abs=1e-12)
    assert score_ensemble("qs", members, [3.0], tau=0.5) == pytest.approx(quantile_score(2.0, 3.0, 0.5))
    mv = np.array([[1.0, 0.0], [3.0, 2.0]])
    assert score_ensemble("mv_se", mv, [2.0, 2.0]) == pytest.approx(multivariate_squared_error([2.0, 1.0], [2.0, 2.0]))


def test_score_ensemble_errors():
    with pytest.raises(InvalidInputError):
        score_ensemble("qs", [[1.0]], [1.0])
    with pytest.raises(InvalidInputError):
        score_ensemble("qs", [[1.0]], [1.0], tau=1.5)
    with pytest.raises(InvalidInputError):
        score_ensemble("se", np.zeros((2, 2)), [0.0, 0.0])
    with pytest.raises(InvalidInputError):
        score_ensemble("log", [[1.0]], [1.0])
