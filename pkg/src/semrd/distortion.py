"""Pixel, task and combined distortion measures over finite alphabets."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .prob import (
    ConditionalDistribution,
    DimensionError,
    Distribution,
    bayes_invert,
    compose_markov,
    kl_matrix,
    mutual_information,
)

KINDS = ("pixel", "task", "combined")


@dataclass(frozen=True, eq=False)
class DistortionMatrix:
    costs: np.ndarray
    kind: str = "pixel"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown distortion kind {self.kind!r}")
        c = np.array(self.costs, dtype=float)
        if c.ndim != 2:
            raise DimensionError(f"distortion must be a matrix, got shape {c.shape}")
        if np.any(np.isnan(c)) or np.any(c < 0):
            raise ValueError("distortion entries must be nonnegative")
        if self.kind == "pixel" and not np.all(np.isfinite(c)):
            raise ValueError("pixel distortion must be finite")
        if not np.all(np.isfinite(c.min(axis=1))):
            raise ValueError("every source symbol needs at least one finite-cost reconstruction")
        c.setflags(write=False)
        object.__setattr__(self, "costs", c)

    @property
    def shape(self):
        return self.costs.shape

    def __array__(self, dtype=None, copy=None):
        return self.costs if dtype is None else self.costs.astype(dtype)


@dataclass(frozen=True, eq=False)
class SemanticSource:
    """A finite source with labels and coordinates for each symbol.

    ``alt_py_given_x`` is a second label function over the same symbols,
    used only for transfer scoring. ``d_rd`` overrides the embedding MSE.
    """

    px: Distribution
    py_given_x: ConditionalDistribution
    embeddings: np.ndarray
    alt_py_given_x: Optional[ConditionalDistribution] = None
    xhat_embeddings: Optional[np.ndarray] = None
    d_rd: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(self.px)
        emb = np.asarray(self.embeddings, dtype=float)
        if emb.ndim == 1:
            emb = emb[:, None]
        if self.py_given_x.shape[0] != n or emb.shape[0] != n:
            raise DimensionError("px, py_given_x and embeddings disagree on |X|")
        if self.alt_py_given_x is not None and self.alt_py_given_x.shape[0] != n:
            raise DimensionError("alternate task must condition on the same alphabet")
        object.__setattr__(self, "embeddings", emb)
        if self.xhat_embeddings is not None:
            xe = np.asarray(self.xhat_embeddings, dtype=float)
            object.__setattr__(self, "xhat_embeddings", xe[:, None] if xe.ndim == 1 else xe)
        if self.d_rd is not None:
            d = np.asarray(self.d_rd, dtype=float)
            if d.shape[0] != n:
                raise DimensionError("d_rd must have one row per source symbol")
            object.__setattr__(self, "d_rd", d)

    @property
    def n_symbols(self) -> int:
        return len(self.px)

    @property
    def n_labels(self) -> int:
        return self.py_given_x.shape[1]

    @property
    def n_recon(self) -> int:
        if self.d_rd is not None:
            return self.d_rd.shape[1]
        return self.recon_embeddings.shape[0]

    @property
    def recon_embeddings(self) -> np.ndarray:
        return self.embeddings if self.xhat_embeddings is None else self.xhat_embeddings

    def label_marginal(self, alt: bool = False) -> np.ndarray:
        pyx = self.alt_py_given_x if alt else self.py_given_x
        return np.asarray(self.px) @ np.asarray(pyx)

    def pixel_distortion(self) -> DistortionMatrix:
        if self.d_rd is not None:
            return DistortionMatrix(self.d_rd, "pixel")
        return mse_matrix(self)


def mse_matrix(src: SemanticSource) -> DistortionMatrix:
    a = src.embeddings
    b = src.recon_embeddings
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"embedding dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    diff = a[:, None, :] - b[None, :, :]
    return DistortionMatrix(np.einsum("ijk,ijk->ij", diff, diff), "pixel")


def hamming_matrix(n: int) -> DistortionMatrix:
    if n < 1:
        raise ValueError("alphabet size must be >= 1")
    return DistortionMatrix(1.0 - np.eye(n), "pixel")


def task_distortion_matrix(py_given_x, py_given_xhat) -> DistortionMatrix:
    """d_T(x, x̂) = KL(p(y|x) || p(y|x̂)); unreachable labels give `inf`."""
    costs = kl_matrix(py_given_x, py_given_xhat)
    # bypass the finite-row-minimum check: an all-inf row is reported by the solver
    dm = object.__new__(DistortionMatrix)
    costs.setflags(write=False)
    object.__setattr__(dm, "costs", costs)
    object.__setattr__(dm, "kind", "task")
    return dm


def expected_task_distortion(src: SemanticSource, mapping, py_given_xhat) -> float:
    """Average KL between source and reconstruction label posteriors under p(x)p(x̂|x)."""
    m = np.asarray(mapping, dtype=float)
    px = np.asarray(src.px)
    if m.shape[0] != px.size:
        raise DimensionError("mapping must have one row per source symbol")
    d = kl_matrix(src.py_given_x, py_given_xhat)
    w = px[:, None] * m
    live = w > 0
    if np.any(np.isinf(d[live])):
        return np.inf
    return float(np.sum(w[live] * d[live]))


def bayes_predictor(src: SemanticSource, mapping, alt: bool = False) -> np.ndarray:
    """p(y|x̂) implied by the mapping; unreachable x̂ rows get the label marginal."""
    pyx = np.asarray(src.alt_py_given_x if alt else src.py_given_x)
    post, dead = bayes_invert(src.px, mapping, return_mask=True)
    pred = np.asarray(post) @ pyx
    pred[dead] = src.label_marginal(alt)
    return pred


def task_distortion_mi_form(src: SemanticSource, mapping) -> float:
    """I(X;Y) - I(X̂;Y) from exact joints."""
    joint = np.asarray(compose_markov(src.px, src.py_given_x, mapping))
    return mutual_information(joint.sum(axis=1)) - mutual_information(joint.sum(axis=0))


def combined_distortion(pixel: DistortionMatrix, task: DistortionMatrix, beta: float) -> DistortionMatrix:
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if pixel.shape != task.shape:
        raise DimensionError(f"shape mismatch: {pixel.shape} vs {task.shape}")
    if beta == 0:
        return DistortionMatrix(pixel.costs, "combined")
    return DistortionMatrix(pixel.costs + beta * task.costs, "combined")


def random_source(seed, n_symbols: int = 4, n_recon: int = 3, n_labels: int = 2, dim: int = 2) -> SemanticSource:
    """Seeded instance with Dirichlet p(x), p(y|x) and Gaussian symbol/reconstruction points."""
    rng = np.random.default_rng(seed)
    px = Distribution.normalized(rng.dirichlet(np.ones(n_symbols)))
    pyx = ConditionalDistribution.normalized(rng.dirichlet(np.ones(n_labels), size=n_symbols))
    return SemanticSource(px, pyx, rng.standard_normal((n_symbols, dim)),
                          xhat_embeddings=rng.standard_normal((n_recon, dim)))
