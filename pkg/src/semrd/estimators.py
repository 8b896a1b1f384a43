"""Sample-based MI estimation with a linear-Gaussian variational conditional."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .prob import DimensionError, mutual_information, to_bits

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-12
RIDGE = 1e-8


@dataclass(frozen=True, eq=False)
class SampleSet:
    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        ys = np.asarray(self.ys, dtype=float)
        xs = xs[:, None] if xs.ndim == 1 else xs
        ys = ys[:, None] if ys.ndim == 1 else ys
        if xs.shape[0] != ys.shape[0] or xs.shape[0] < 2:
            raise DimensionError(f"need >= 2 paired rows, got {xs.shape[0]} and {ys.shape[0]}")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            raise ValueError("samples must be finite")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    def __len__(self):
        return self.xs.shape[0]


@dataclass(frozen=True, eq=False)
class GaussianConditionalModel:
    """q(y|x) = N(weight @ x + bias, diag(noise_variance))."""

    weight: np.ndarray
    bias: np.ndarray
    noise_variance: np.ndarray
    ridge_fallback: bool = False

    def __post_init__(self):
        if np.any(np.asarray(self.noise_variance) <= 0):
            raise ValueError("noise variances must be positive")

    def mean(self, xs):
        return np.asarray(xs) @ np.asarray(self.weight).T + self.bias

    def log_prob(self, xs, ys):
        var = np.asarray(self.noise_variance)
        r = np.asarray(ys) - self.mean(xs)
        return -0.5 * np.sum(np.log(2 * np.pi * var) + r * r / var, axis=-1)


def fit_gaussian_conditional(s: SampleSet) -> GaussianConditionalModel:
    n, dx = s.xs.shape
    if n <= dx + 1:
        raise ValueError(f"need more than {dx + 1} samples to fit a {dx}-input model")
    design = np.hstack([s.xs, np.ones((n, 1))])
    ridge = np.linalg.matrix_rank(design) < design.shape[1]
    if ridge:
        log.warning("rank-deficient design matrix, using ridge penalty %g", RIDGE)
        gram = design.T @ design + RIDGE * np.eye(design.shape[1])
        coef = np.linalg.solve(gram, design.T @ s.ys)
    else:
        coef = np.linalg.lstsq(design, s.ys, rcond=None)[0]
    resid = s.ys - design @ coef
    var = np.maximum(resid.var(axis=0), VAR_FLOOR)
    return GaussianConditionalModel(coef[:-1].T, coef[-1], var, ridge_fallback=ridge)


def club_estimate(s: SampleSet, model: GaussianConditionalModel) -> float:
    """Contrastive log-ratio upper bound on I(X;Y), in nats.

    Positive pairs are the given rows; negatives are all N^2 cross pairs.
    For a Gaussian q the cross term has a closed form:
    mean_j (y_j - mu_i)^2 = var(y) + (mean(y) - mu_i)^2, so it is exact
    for every N without forming the N x N matrix.
    """
    if np.asarray(model.weight).shape != (s.ys.shape[1], s.xs.shape[1]):
        raise DimensionError("model dimensions do not match the samples")
    var = np.asarray(model.noise_variance)
    mu = model.mean(s.xs)
    positive = model.log_prob(s.xs, s.ys).mean()
    y_mean = s.ys.mean(axis=0)
    y_var = s.ys.var(axis=0)
    cross_sq = y_var[None, :] + (y_mean[None, :] - mu) ** 2
    negative = np.mean(-0.5 * np.sum(np.log(2 * np.pi * var) + cross_sq / var, axis=1))
    return float(positive - negative)


def club_pairwise(s: SampleSet, model: GaussianConditionalModel, chunk: int = 2048) -> float:
    """Same bound as `club_estimate`, summing the N^2 log-densities explicitly."""
    positive = model.log_prob(s.xs, s.ys).mean()
    total = 0.0
    for start in range(0, len(s), chunk):
        xb = s.xs[start:start + chunk]
        lp = model.log_prob(xb[:, None, :], s.ys[None, :, :])
        total += lp.sum()
    return float(positive - total / len(s) ** 2)


def l1out_estimate(s: SampleSet, model: GaussianConditionalModel, chunk: int = 2048) -> float:
    """Leave-one-out variant: log q(y_i|x_i) against the mixture of q(y_i|x_j), j != i."""
    n = len(s)
    vals = np.empty(n)
    for start in range(0, n, chunk):
        yb = s.ys[start:start + chunk]
        lp = model.log_prob(s.xs[None, :, :], yb[:, None, :])   # (b, n)
        rows = np.arange(yb.shape[0])
        own = lp[rows, start + rows].copy()
        lp[rows, start + rows] = -np.inf
        vals[start:start + yb.shape[0]] = own - (logsumexp(lp, axis=1) - np.log(n - 1))
    return float(vals.mean())


def analytic_gaussian_mi(rho: float) -> float:
    if not abs(rho) < 1:
        raise ValueError("|rho| must be < 1")
    return float(-0.5 * np.log1p(-rho * rho))


def gaussian_pairs(rho: float, n: int, seed) -> SampleSet:
    """Standard bivariate normal samples with correlation `rho`."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    y = rho * x + np.sqrt(1 - rho * rho) * rng.standard_normal(n)
    return SampleSet(x, y)


def discrete_mi_report(px, mapping, py_given_x) -> dict:
    """Exact I(X;X̂) and I(X̂;Y) in bits for the chain Y - X - X̂."""
    p = np.asarray(px, dtype=float)
    m = np.asarray(mapping, dtype=float)
    joint_x_xhat = p[:, None] * m
    joint_xhat_y = joint_x_xhat.T @ np.asarray(py_given_x, dtype=float)
    return {
        "i_x_xhat_bits": to_bits(mutual_information(joint_x_xhat)),
        "i_xhat_y_bits": to_bits(mutual_information(joint_xhat_y)),
    }
