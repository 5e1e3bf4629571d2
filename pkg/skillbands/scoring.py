"""点予測・分位点予測・アンサンブル予測のスコア関数。

すべて非負で、完全予測ではスコア 0 になる。確率予測はアンサンブル
（メンバーの経験分布）としてのみ扱い、CRPS とエネルギースコアは
経験分布に対する閉形式で評価する。対数スコアはスキルスコアの前提
（期待スコアが正）を満たさないので実装しない。
"""
from __future__ import annotations

import math
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial.distance import cdist, pdist

from .errors import InvalidInputError

Rule = Literal["se", "mv_se", "qs", "crps", "energy"]
RULES: tuple[str, ...] = ("se", "mv_se", "qs", "crps", "energy")
# D=1 が必要なルール
UNIVARIATE_RULES: frozenset[str] = frozenset({"se", "qs", "crps"})


def _finite_scalar(value: float, name: str) -> float:
    x = float(value)
    if not math.isfinite(x):
        raise InvalidInputError(f"{name} は有限値である必要があります: {value!r}")
    return x


def _finite_vector(values: ArrayLike, name: str) -> NDArray[np.float64]:
    arr = np.atleast_1d(np.asarray(values, dtype=np.float64))
    if arr.ndim != 1:
        raise InvalidInputError(f"{name} は 1 次元ベクトルである必要があります: shape={arr.shape}")
    if arr.size == 0:
        raise InvalidInputError(f"{name} が空です")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} に非有限値が含まれています")
    return arr


def _ensemble_members(members: ArrayLike) -> NDArray[np.float64]:
    """メンバーを M_e × D 行列に整形する（1 次元入力は D=1 とみなす）。"""
    arr = np.asarray(members, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise InvalidInputError(f"アンサンブルは M_e × D 行列である必要があります: shape={arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise InvalidInputError("アンサンブルが空です")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("アンサンブルに非有限値が含まれています")
    return arr


def squared_error(x: float, y: float) -> float:
    """(y - x)^2。y ∈ {0,1}, x ∈ [0,1] のときブライアスコア。"""
    u = _finite_scalar(y, "y") - _finite_scalar(x, "x")
    return u * u


def brier_score(p: float, y: float) -> float:
    p = _finite_scalar(p, "p")
    if not 0.0 <= p <= 1.0:
        raise InvalidInputError(f"確率予測 p は [0, 1] である必要があります: {p}")
    if y not in (0, 1):
        raise InvalidInputError(f"二値の観測 y は 0 か 1 である必要があります: {y!r}")
    return squared_error(p, float(y))


def multivariate_squared_error(x: ArrayLike, y: ArrayLike) -> float:
    xv = _finite_vector(x, "x")
    yv = _finite_vector(y, "y")
    if xv.shape != yv.shape:
        raise InvalidInputError(f"次元が一致しません: dim(x)={xv.size}, dim(y)={yv.size}")
    d = yv - xv
    return float(np.dot(d, d))


def quantile_score(x: float, y: float, tau: float) -> float:
    """ピンボール損失 ρ_τ(y - x)。"""
    tau = _finite_scalar(tau, "tau")
    if not 0.0 < tau < 1.0:
        raise InvalidInputError(f"tau は (0, 1) である必要があります: {tau}")
    u = _finite_scalar(y, "y") - _finite_scalar(x, "x")
    return u * (tau - (1.0 if u < 0 else 0.0))


def crps_ensemble(members: ArrayLike, y: float) -> float:
    """経験分布に対する CRPS の厳密値。

    (1/M)Σ|x_i - y| - (1/(2M^2))ΣΣ|x_i - x_j|。二重和はソート済みメンバーで
    2Σ(2i - M - 1)x_(i) と書けるので O(M log M)。重複メンバーはそのまま数える。
    """
    ens = _ensemble_members(members)
    if ens.shape[1] != 1:
        raise InvalidInputError(f"CRPS は D=1 のアンサンブルのみ: D={ens.shape[1]}")
    return _crps_sorted(ens[:, 0], _finite_scalar(y, "y"))


def _crps_sorted(values: NDArray[np.float64], yv: float) -> float:
    x = np.sort(values)
    m = x.size
    spread = 2.0 * np.dot(2.0 * np.arange(1, m + 1) - m - 1.0, x)
    score = np.mean(np.abs(x - yv)) - spread / (2.0 * m * m)
    # 丸め誤差で負にならないように
    return max(float(score), 0.0)


def energy_score_ensemble(members: ArrayLike, y: ArrayLike) -> float:
    """経験分布に対するエネルギースコア（全ペア推定量）。D=1 では CRPS と一致する。"""
    ens = _ensemble_members(members)
    yv = _finite_vector(y, "y")
    if yv.size != ens.shape[1]:
        raise InvalidInputError(f"次元が一致しません: D={ens.shape[1]}, dim(y)={yv.size}")
    if ens.shape[1] == 1:
        # CRPS と同じ加算順にして値を一致させる
        return _crps_sorted(ens[:, 0], float(yv[0]))
    m = ens.shape[0]
    first = float(np.mean(cdist(ens, yv.reshape(1, -1))))
    # pdist は i<j のみなので全ペア和はその 2 倍
    second = 2.0 * float(np.sum(pdist(ens))) / (2.0 * m * m) if m > 1 else 0.0
    return max(first - second, 0.0)


def aggregate_scores(scores: ArrayLike) -> float:
    """等重みの集約（単純和）。"""
    return float(np.sum(_finite_vector(scores, "scores")))


def score_ensemble(rule: str, members: ArrayLike, y: ArrayLike, *, tau: float | None = None) -> float:
    """ルール名でスコア関数を選ぶ。

    点予測のルールにメンバーが複数ある場合、se / mv_se はアンサンブル平均、
    qs は経験 tau 分位点を予測値とする。
    """
    ens = _ensemble_members(members)
    yv = _finite_vector(y, "y")
    if rule in UNIVARIATE_RULES and (ens.shape[1] != 1 or yv.size != 1):
        raise InvalidInputError(f"ルール {rule!r} は D=1 のみ対応しています: D={ens.shape[1]}")
    if rule == "se":
        return squared_error(float(ens[:, 0].mean()), float(yv[0]))
    if rule == "mv_se":
        return multivariate_squared_error(ens.mean(axis=0), yv)
    if rule == "qs":
        if tau is None:
            raise InvalidInputError("ルール 'qs' には tau が必要です")
        if not 0.0 < float(tau) < 1.0:
            raise InvalidInputError(f"tau は (0, 1) である必要があります: {tau}")
        return quantile_score(float(np.quantile(ens[:, 0], tau)), float(yv[0]), tau)
    if rule == "crps":
        return crps_ensemble(ens, float(yv[0]))
    if rule == "energy":
        return energy_score_ensemble(ens, yv)
    raise InvalidInputError(f"未知のスコアルール: {rule!r} (選択肢: {', '.join(RULES)})")
