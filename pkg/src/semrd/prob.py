"""Finite discrete distributions and exact information functionals.

Everything here works in nats. Arrays are plain numpy arrays; the small
wrapper types validate once at construction and are read-only afterwards.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

SUM_TOL = 1e-12
CLAMP_EPS = 1e-15
LOG2 = np.log(2.0)


class DimensionError(ValueError):
    pass


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def clean(p, axis=-1, eps=CLAMP_EPS):
    """Zero out entries below `eps` and renormalize along `axis`."""
    p = np.where(np.asarray(p, dtype=float) < eps, 0.0, p)
    return p / p.sum(axis=axis, keepdims=True)


@dataclass(frozen=True, eq=False)
class Distribution:
    mass: np.ndarray

    def __post_init__(self):
        m = _frozen(self.mass)
        if m.ndim != 1 or m.size < 1:
            raise DimensionError(f"distribution must be a nonempty vector, got shape {m.shape}")
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise ValueError("distribution has negative or non-finite entries")
        if abs(m.sum() - 1.0) > SUM_TOL:
            raise ValueError(f"distribution sums to {m.sum()!r}, not 1")
        object.__setattr__(self, "mass", m)

    @classmethod
    def normalized(cls, weights) -> "Distribution":
        w = np.asarray(weights, dtype=float)
        return cls(w / w.sum())

    @classmethod
    def uniform(cls, n: int) -> "Distribution":
        return cls(np.full(n, 1.0 / n))

    def __array__(self, dtype=None, copy=None):
        return self.mass if dtype is None else self.mass.astype(dtype)

    def __len__(self):
        return self.mass.size


@dataclass(frozen=True, eq=False)
class ConditionalDistribution:
    """Row-stochastic matrix; row `i` is the distribution given symbol `i`."""

    rows: np.ndarray

    def __post_init__(self):
        r = _frozen(self.rows)
        if r.ndim != 2 or r.shape[0] < 1 or r.shape[1] < 1:
            raise DimensionError(f"conditional must be a nonempty matrix, got shape {r.shape}")
        if not np.all(np.isfinite(r)) or np.any(r < 0):
            raise ValueError("conditional has negative or non-finite entries")
        if np.max(np.abs(r.sum(axis=1) - 1.0)) > SUM_TOL:
            raise ValueError("conditional rows do not sum to 1")
        object.__setattr__(self, "rows", r)

    @classmethod
    def normalized(cls, weights) -> "ConditionalDistribution":
        w = np.asarray(weights, dtype=float)
        return cls(w / w.sum(axis=1, keepdims=True))

    @property
    def shape(self):
        return self.rows.shape

    def __array__(self, dtype=None, copy=None):
        return self.rows if dtype is None else self.rows.astype(dtype)

    def __getitem__(self, i):
        return Distribution(self.rows[i])


@dataclass(frozen=True, eq=False)
class JointDistribution:
    mass: np.ndarray

    def __post_init__(self):
        m = _frozen(self.mass)
        if m.ndim < 2:
            raise DimensionError("joint distribution needs at least two axes")
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise ValueError("joint has negative or non-finite entries")
        if abs(m.sum() - 1.0) > SUM_TOL:
            raise ValueError(f"joint sums to {m.sum()!r}, not 1")
        object.__setattr__(self, "mass", m)

    def marginal(self, axis: int) -> Distribution:
        other = tuple(i for i in range(self.mass.ndim) if i != axis)
        return Distribution(self.mass.sum(axis=other))

    def __array__(self, dtype=None, copy=None):
        return self.mass if dtype is None else self.mass.astype(dtype)


def entropy(d) -> float:
    p = np.asarray(d, dtype=float)
    return float(max(-xlogy(p, p).sum(), 0.0))


def kl_divergence(p, q) -> float:
    """KL(p || q) in nats; `inf` when p puts mass where q has none."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise DimensionError(f"length mismatch: {p.shape} vs {q.shape}")
    support = p > 0
    if np.any(q[support] == 0):
        return np.inf
    return float(max(np.sum(p[support] * np.log(p[support] / q[support])), 0.0))


def kl_matrix(p_rows, q_rows):
    """Pairwise KL(p_rows[i] || q_rows[j]) as an |P| x |Q| matrix, with `inf` sentinels."""
    p = np.asarray(p_rows, dtype=float)
    q = np.asarray(q_rows, dtype=float)
    if p.shape[1] != q.shape[1]:
        raise DimensionError(f"label alphabets differ: {p.shape[1]} vs {q.shape[1]}")
    neg_h = xlogy(p, p).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        logq = np.log(q)
        # 0 * log 0 terms must vanish, including 0 * (-inf)
        cross = np.where(p[:, None, :] > 0, p[:, None, :] * logq[None, :, :], 0.0).sum(axis=2)
    return np.maximum(neg_h[:, None] - cross, 0.0)


def mutual_information(j) -> float:
    pj = np.asarray(j, dtype=float)
    if pj.ndim != 2:
        raise DimensionError("mutual_information expects a 2-D joint")
    pa = pj.sum(axis=1, keepdims=True)
    pb = pj.sum(axis=0, keepdims=True)
    outer = pa * pb
    nz = pj > 0
    return float(max(np.sum(pj[nz] * np.log(pj[nz] / outer[nz])), 0.0))


def bayes_invert(prior, forward, return_mask: bool = False):
    """Posterior p(a|b) from prior p(a) and forward channel p(b|a).

    Output symbols that are never reached get a uniform posterior row; pass
    ``return_mask=True`` to also get the boolean mask of those rows.
    """
    px = np.asarray(prior, dtype=float)
    fwd = np.asarray(forward, dtype=float)
    if fwd.ndim != 2 or fwd.shape[0] != px.size:
        raise DimensionError(f"prior length {px.size} does not match forward rows {fwd.shape}")
    joint = px[:, None] * fwd
    pb = joint.sum(axis=0)
    dead = pb <= 0
    post = np.empty((fwd.shape[1], px.size))
    post[~dead] = (joint[:, ~dead] / pb[~dead]).T
    post[dead] = 1.0 / px.size
    post = ConditionalDistribution(post / post.sum(axis=1, keepdims=True))
    return (post, dead) if return_mask else post


def compose_markov(px, py_given_x, pxhat_given_x) -> JointDistribution:
    """Joint p(x, x̂, y) for the chain Y - X - X̂; axes are (x, x̂, y)."""
    p = np.asarray(px, dtype=float)
    pyx = np.asarray(py_given_x, dtype=float)
    pzx = np.asarray(pxhat_given_x, dtype=float)
    if pyx.shape[0] != p.size or pzx.shape[0] != p.size:
        raise DimensionError("conditionals must have one row per source symbol")
    return JointDistribution(p[:, None, None] * pzx[:, :, None] * pyx[:, None, :])


def random_distribution(seed, n: int, concentration: float = 1.0) -> Distribution:
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    return Distribution.normalized(rng.dirichlet(np.full(n, concentration)))


def random_conditional(seed, n_rows: int, n_cols: int, concentration: float = 1.0) -> ConditionalDistribution:
    if n_rows < 1 or n_cols < 1:
        raise ValueError("dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    return ConditionalDistribution.normalized(rng.dirichlet(np.full(n_cols, concentration), size=n_rows))


def to_bits(nats):
    return nats / LOG2
