"""Numerical checks of the variational task-distortion bound and the MSE/MI trend."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import spearmanr

from .distortion import SemanticSource, task_distortion_mi_form
from .prob import DimensionError, entropy, mutual_information

SLACK_TOL = 1e-9


@dataclass(frozen=True)
class BoundReport:
    lhs: float
    rhs: float
    slack: float
    satisfied: bool
    degenerate_q: bool = False


def _joint_xhat_y(src: SemanticSource, mapping):
    w = np.asarray(src.px)[:, None] * np.asarray(mapping, dtype=float)
    return w.T @ np.asarray(src.py_given_x)


def cross_entropy_term(src: SemanticSource, mapping, q) -> float:
    """-E_{p(y,x̂)} log q(y|x̂) in nats; `inf` if q misses mass that p(y,x̂) needs."""
    pj = _joint_xhat_y(src, mapping)
    q = np.asarray(q, dtype=float)
    if q.shape != pj.shape:
        raise DimensionError(f"q has shape {q.shape}, predictor has {pj.shape}")
    need = pj > 0
    if np.any(q[need] <= 0):
        return np.inf
    return float(-np.sum(pj[need] * np.log(q[need])))


def variational_dt_bound(src: SemanticSource, mapping, q) -> BoundReport:
    """D_T <= I(X;Y) - H(Y) - E log q(y|x̂), with equality at the Bayes predictor."""
    lhs = task_distortion_mi_form(src, mapping)
    i_xy = mutual_information(np.asarray(src.px)[:, None] * np.asarray(src.py_given_x))
    ce = cross_entropy_term(src, mapping, q)
    rhs = i_xy - entropy(src.label_marginal()) + ce
    slack = rhs - lhs
    return BoundReport(lhs, rhs, slack, bool(slack >= -SLACK_TOL), degenerate_q=bool(np.isinf(ce)))


def conditional_label_entropy(src: SemanticSource, mapping) -> float:
    """H(Y|X̂) in nats."""
    pj = _joint_xhat_y(src, mapping)
    return entropy(pj.ravel()) - entropy(pj.sum(axis=1))


@dataclass(frozen=True)
class CorrespondenceReport:
    distortions: np.ndarray
    rates_nats: np.ndarray
    rank_correlation: float
    monotone: bool


def mse_mi_correspondence(src: SemanticSource, mapping_list: Sequence, pixel=None, slack: float = SLACK_TOL) -> CorrespondenceReport:
    """Expected pixel distortion vs. I(X;X̂) over a family of mappings.

    `monotone` holds when, sorted by rate, distortion never goes up by more
    than `slack`. Only meaningful for beta = 0 sweeps.
    """
    if len(mapping_list) < 3:
        raise ValueError("need at least 3 mappings")
    d = np.asarray(pixel if pixel is not None else src.pixel_distortion(), dtype=float)
    px = np.asarray(src.px)
    dist, rate = [], []
    for m in mapping_list:
        w = px[:, None] * np.asarray(m, dtype=float)
        dist.append(float(np.sum(w * d)))
        rate.append(mutual_information(w))
    dist, rate = np.asarray(dist), np.asarray(rate)
    order = np.argsort(rate, kind="stable")
    mono = bool(np.all(np.diff(dist[order]) <= slack))
    if np.ptp(rate) == 0 or np.ptp(dist) == 0:
        rho = float("nan")
    else:
        rho = float(spearmanr(rate, dist)[0])
    return CorrespondenceReport(dist, rate, rho, mono)

