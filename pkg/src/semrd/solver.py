"""Blahut-Arimoto style solver for rate vs. pixel-plus-task distortion.

The functional minimized is

    L = lam * I(X;X̂) + D_R + beta * D_T,

with D_T the expected KL between p(y|x) and the Bayes predictor p(y|x̂).
One iteration rebuilds the combined cost from the current predictor, takes
the Gibbs mapping against the current reconstruction marginal, then
refreshes the marginal and the predictor from that mapping.
"""
from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .distortion import DistortionMatrix, SemanticSource, bayes_predictor
from .prob import CLAMP_EPS, ConditionalDistribution, Distribution, clean, kl_matrix, mutual_information, to_bits

log = logging.getLogger(__name__)

BRUTE_MAX_X = 4
BRUTE_MAX_XHAT = 3
BRUTE_MAX_Y = 3
LITERAL_MAX_CANDIDATES = 2_000_000


class InfeasibleError(RuntimeError):
    """Some source symbol has infinite cost against every reconstruction."""


@dataclass(frozen=True)
class SolverConfig:
    lam: float
    beta: float = 0.0
    max_iters: int = 10_000
    tol: float = 1e-10
    init_pxhat: str = "uniform"
    seed: Optional[int] = None
    epsilon_clamp: float = CLAMP_EPS
    # a tiny |dL| alone can hide a mapping that is still drifting
    fixed_point_tol: float = 1e-9
    # extra seeded-random starts; the lowest-Lagrangian run is kept
    restarts: int = 0

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be > 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.init_pxhat not in ("uniform", "seeded-random"):
            raise ValueError(f"unknown init {self.init_pxhat!r}")
        if self.restarts < 0:
            raise ValueError("restarts must be >= 0")


@dataclass
class BAState:
    pxhat: np.ndarray
    py_given_xhat: np.ndarray
    mapping: Optional[np.ndarray] = None


@dataclass
class SolverResult:
    mapping: ConditionalDistribution
    pxhat: Distribution
    py_given_xhat: ConditionalDistribution
    rate_nats: float
    pixel_distortion: float
    task_distortion_nats: float
    lagrangian: float
    iterations: int
    converged: bool
    residual: float = math.nan
    history: List[float] = field(default_factory=list, repr=False)

    @property
    def support(self) -> np.ndarray:
        """Indices of reconstruction symbols that carry mass."""
        return np.flatnonzero(np.asarray(self.pxhat) > 0)

    @property
    def monotone(self) -> bool:
        h = np.asarray(self.history)
        return bool(np.all(np.diff(h) <= 1e-10)) if h.size > 1 else True


@dataclass(frozen=True)
class RDPoint:
    lam: float
    beta: float
    rate_bits: float
    pixel_distortion: float
    task_distortion_bits: float
    task_mi_bits: float
    converged: bool = True
    feasible: bool = True


def initial_state(src: SemanticSource, n_recon: int, cfg: SolverConfig) -> BAState:
    if cfg.init_pxhat == "uniform":
        pxhat = np.full(n_recon, 1.0 / n_recon)
    else:
        pxhat = np.random.default_rng(cfg.seed).dirichlet(np.ones(n_recon))
    pred = np.tile(src.label_marginal(), (n_recon, 1))
    return BAState(pxhat, pred)


def semantic_costs(src: SemanticSource, pixel, py_given_xhat, beta: float) -> np.ndarray:
    d = np.asarray(pixel, dtype=float)
    if beta == 0:
        return d
    return d + beta * kl_matrix(src.py_given_x, py_given_xhat)


def gibbs_mapping(pxhat, d_s, lam: float, eps: float = CLAMP_EPS) -> np.ndarray:
    """Row-normalized p(x̂) * exp(-d_s / lam), computed in the log domain."""
    with np.errstate(divide="ignore"):
        logw = np.log(pxhat)[None, :] - d_s / lam
    norm = logsumexp(logw, axis=1, keepdims=True)
    if not np.all(np.isfinite(norm)):
        bad = np.flatnonzero(~np.isfinite(norm[:, 0]))
        raise InfeasibleError(f"source symbols {bad.tolist()} have no reachable reconstruction")
    return clean(np.exp(logw - norm), eps=eps)


def lagrangian_terms(src: SemanticSource, pixel, mapping, lam: float, beta: float, pred=None):
    """Exact (L, rate, D_R, D_T, pxhat, predictor) for a mapping, all in nats."""
    px = np.asarray(src.px)
    m = np.asarray(mapping, dtype=float)
    pxhat = px @ m
    if pred is None:
        pred = bayes_predictor(src, m)
    w = px[:, None] * m
    nz = w > 0
    ratio = np.divide(m, pxhat[None, :], out=np.ones_like(m), where=nz)
    rate = max(float(np.sum(w[nz] * np.log(ratio[nz]))), 0.0)
    d_r = float(np.sum(w * np.asarray(pixel)))
    kl = kl_matrix(src.py_given_x, pred)
    d_t = float(np.sum(w[nz] * kl[nz]))
    return lam * rate + d_r + beta * d_t, rate, d_r, d_t, pxhat, pred


def ba_step(state: BAState, src: SemanticSource, pixel, cfg: SolverConfig) -> BAState:
    d_s = semantic_costs(src, pixel, state.py_given_xhat, cfg.beta)
    mapping = gibbs_mapping(state.pxhat, d_s, cfg.lam, cfg.epsilon_clamp)
    pxhat = np.asarray(src.px) @ mapping
    pred = bayes_predictor(src, mapping)
    return BAState(pxhat, pred, mapping)


def solve(src: SemanticSource, pixel=None, cfg: SolverConfig = None, state: Optional[BAState] = None) -> SolverResult:
    """Alternating minimization from `state` (or the configured init).

    With ``cfg.restarts > 0`` the run is repeated from seeded-random
    initial marginals and the lowest Lagrangian wins; ties keep the
    earliest run, so the primary start is preferred.
    """
    if pixel is None:
        pixel = src.pixel_distortion()
    d = np.asarray(pixel, dtype=float)
    if d.shape[0] != src.n_symbols:
        raise ValueError(f"pixel distortion has {d.shape[0]} rows for {src.n_symbols} symbols")
    best = _solve_once(src, d, cfg, state)
    base_seed = 0 if cfg.seed is None else cfg.seed
    for k in range(cfg.restarts):
        alt_cfg = replace(cfg, init_pxhat="seeded-random", seed=base_seed + 1 + k, restarts=0)
        res = _solve_once(src, d, alt_cfg, None)
        if res.lagrangian < best.lagrangian - 1e-12:
            best = res
    return best


def _solve_once(src, d, cfg, state):
    if state is None:
        state = initial_state(src, d.shape[1], cfg)

    history = []
    prev_L = math.inf
    prev_moved = math.inf
    converged = False
    k = 0
    for k in range(1, cfg.max_iters + 1):
        new = ba_step(state, src, d, cfg)
        L = lagrangian_terms(src, d, new.mapping, cfg.lam, cfg.beta, pred=new.py_given_xhat)[0]
        history.append(L)
        moved = math.inf if state.mapping is None else float(np.max(np.abs(new.mapping - state.mapping)))
        # linear convergence: distance to the limit is about step / (1 - contraction)
        ratio = moved / prev_moved if prev_moved > 0 else 0.0
        remaining = moved / (1.0 - ratio) if ratio < 1.0 else math.inf
        state = new
        if abs(prev_L - L) < cfg.tol and (moved == 0.0 or remaining < cfg.fixed_point_tol):
            converged = True
            break
        prev_L = L
        prev_moved = moved

    L, rate, d_r, d_t, pxhat, pred = lagrangian_terms(src, d, state.mapping, cfg.lam, cfg.beta, pred=state.py_given_xhat)
    result = SolverResult(
        mapping=ConditionalDistribution(state.mapping),
        pxhat=Distribution.normalized(pxhat),
        py_given_xhat=ConditionalDistribution.normalized(pred),
        rate_nats=rate,
        pixel_distortion=d_r,
        task_distortion_nats=d_t,
        lagrangian=L,
        iterations=k,
        converged=converged,
        history=history,
    )
    result.residual = verify_self_consistency(result, src, d, cfg)
    if not converged:
        log.warning("solver stopped after %d iterations (lam=%g, beta=%g, residual=%.2e)",
                    k, cfg.lam, cfg.beta, result.residual)
    return result


def verify_self_consistency(result: SolverResult, src: SemanticSource, pixel, cfg: SolverConfig) -> float:
    """Largest violation of the three stationarity equations at `result`."""
    m = np.asarray(result.mapping)
    pxhat = np.asarray(src.px) @ m
    pred = bayes_predictor(src, m)
    d_s = semantic_costs(src, pixel, pred, cfg.beta)
    target = gibbs_mapping(pxhat, d_s, cfg.lam, cfg.epsilon_clamp)
    return max(
        float(np.max(np.abs(m - target))),
        float(np.max(np.abs(np.asarray(result.pxhat) - pxhat))),
        float(np.max(np.abs(np.asarray(result.py_given_xhat) - pred))),
    )


def to_rdpoint(result: SolverResult, src: SemanticSource, cfg: SolverConfig) -> RDPoint:
    joint_xhat_y = (np.asarray(src.px)[:, None] * np.asarray(result.mapping)).T @ np.asarray(src.py_given_x)
    return RDPoint(
        lam=cfg.lam,
        beta=cfg.beta,
        rate_bits=to_bits(result.rate_nats),
        pixel_distortion=result.pixel_distortion,
        task_distortion_bits=to_bits(result.task_distortion_nats),
        task_mi_bits=to_bits(mutual_information(joint_xhat_y)),
        converged=result.converged,
    )


def rd_curve(src: SemanticSource, pixel, lambda_grid: Sequence[float], beta: float = 0.0,
             base: Optional[SolverConfig] = None, threads: int = 1) -> List[RDPoint]:
    """One solved point per lambda, sorted by rate.

    Infeasible lambdas come back with ``feasible=False`` and NaN values,
    after the feasible points.
    """
    grid = list(lambda_grid)
    if not grid:
        raise ValueError("lambda grid is empty")
    if any(not lam > 0 for lam in grid):
        raise ValueError("every lambda must be > 0")
    base = base or SolverConfig(lam=1.0)
    if pixel is None:
        pixel = src.pixel_distortion()

    def one(lam):
        cfg = replace(base, lam=float(lam), beta=float(beta))
        try:
            return to_rdpoint(solve(src, pixel, cfg), src, cfg)
        except InfeasibleError as exc:
            log.warning("lambda=%g skipped: %s", lam, exc)
            nan = math.nan
            return RDPoint(float(lam), float(beta), nan, nan, nan, nan, converged=False, feasible=False)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            points = list(pool.map(one, grid))
    else:
        points = [one(lam) for lam in grid]
    ok = sorted((p for p in points if p.feasible), key=lambda p: (p.rate_bits, p.lam))
    return ok + [p for p in points if not p.feasible]


def simplex_grid(dim: int, step: float) -> np.ndarray:
    """All points of the probability simplex in R^dim whose coordinates are multiples of `step`."""
    n = int(round(1.0 / step))
    if abs(n * step - 1.0) > 1e-9:
        raise ValueError(f"grid step {step} does not divide 1")
    pts = []
    for c in itertools.combinations(range(n + dim - 1), dim - 1):
        bounds = (-1,) + c + (n + dim - 1,)
        pts.append([bounds[i + 1] - bounds[i] - 1 for i in range(dim)])
    return np.asarray(pts, dtype=float) / n


def brute_force_solve(src: SemanticSource, pixel, cfg: SolverConfig, grid_step: float = 0.05):
    """Grid-search minimum of the Lagrangian for tiny alphabets.

    When the product grid of mapping rows is small it is enumerated
    directly. Otherwise the search runs over the free marginals
    (q(x̂), q(y|x̂)) on the same grid: for fixed marginals the functional
    separates per source symbol and its row minimum is a log-partition
    value, and minimizing over the marginals recovers the Lagrangian.
    Either way the returned value is the exact Lagrangian of the returned
    mapping, so it is an upper bound on the true minimum.
    """
    d = np.asarray(pixel if pixel is not None else src.pixel_distortion(), dtype=float)
    nx, nz = d.shape
    ny = src.n_labels
    if nx > BRUTE_MAX_X or nz > BRUTE_MAX_XHAT or ny > BRUTE_MAX_Y:
        raise ValueError(f"brute force refuses |X|={nx}, |X̂|={nz}, |Y|={ny} "
                         f"(caps {BRUTE_MAX_X}, {BRUTE_MAX_XHAT}, {BRUTE_MAX_Y})")
    if not 0 < grid_step <= 0.5:
        raise ValueError("grid_step must be in (0, 0.5]")
    rows = simplex_grid(nz, grid_step)
    if rows.shape[0] ** nx <= LITERAL_MAX_CANDIDATES:
        return _brute_literal(src, d, cfg, rows)
    return _brute_marginals(src, d, cfg, rows, grid_step)


def count_literal_candidates(n_symbols: int, n_recon: int, grid_step: float) -> int:
    return simplex_grid(n_recon, grid_step).shape[0] ** n_symbols


def _brute_literal(src, d, cfg, rows, chunk=50_000):
    px = np.asarray(src.px)
    pyx = np.asarray(src.py_given_x)
    nx, nz = d.shape
    n_rows = rows.shape[0]
    i_xy = mutual_information(px[:, None] * pyx)
    best = (math.inf, None)
    total = n_rows ** nx
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        digits = np.stack([(idx // n_rows ** k) % n_rows for k in range(nx)], axis=1)
        m = rows[digits]                                  # (C, nx, nz)
        w = px[None, :, None] * m
        pxhat = w.sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            rate = np.where(w > 0, w * np.log(m / pxhat[:, None, :]), 0.0).sum(axis=(1, 2))
            pj = np.einsum("cxz,xy->czy", w, pyx)
            pz = pj.sum(axis=2, keepdims=True)
            py = pj.sum(axis=1, keepdims=True)
            i_zy = np.where(pj > 0, pj * np.log(pj / (pz * py)), 0.0).sum(axis=(1, 2))
        L = cfg.lam * rate + (w * d[None]).sum(axis=(1, 2)) + cfg.beta * (i_xy - i_zy)
        j = int(np.argmin(L))
        if L[j] < best[0]:
            best = (float(L[j]), m[j].copy())
    m = best[1]
    return m, lagrangian_terms(src, d, m, cfg.lam, cfg.beta)[0]


def _brute_marginals(src, d, cfg, qx_grid, step):
    px = np.asarray(src.px)
    pyx = np.asarray(src.py_given_x)
    nx, nz = d.shape
    lam, beta = cfg.lam, cfg.beta
    if beta > 0:
        yg = simplex_grid(pyx.shape[1], step)
        # the optimal predictor lies in the hull of the p(y|x) rows
        lo, hi = pyx.min(axis=0) - 1e-12, pyx.max(axis=0) + 1e-12
        yg = yg[np.all((yg >= lo) & (yg <= hi), axis=1)]
        if yg.shape[0] == 0:
            yg = pyx.mean(axis=0, keepdims=True)
        K = kl_matrix(pyx, yg)                            # (nx, G)
    else:
        yg = src.label_marginal()[None, :]
        K = np.zeros((nx, 1))
    G = yg.shape[0]
    expo = (d[:, :, None] + beta * K[:, None, :]) / lam    # (nx, nz, G)
    shift = np.min(np.where(np.isfinite(expo), expo, np.inf), axis=(1, 2))
    E = np.exp(-(expo - shift[:, None, None])).astype(np.float32)
    A = qx_grid.astype(np.float32)                         # (nA, nz)

    best_val, best_arg = math.inf, None
    shape = (A.shape[0],) + (G,) * (nz - 1)
    w = (lam * px).astype(np.float32)
    cols = [A[:, k].reshape((-1,) + (1,) * (nz - 1)) for k in range(nz)]
    obj = np.empty(shape, dtype=np.float32)
    S = np.empty(shape, dtype=np.float32)
    for j0 in range(G):
        obj.fill(0.0)
        for x in range(nx):
            S[...] = cols[0] * E[x, 0, j0]
            for k in range(1, nz):
                bshape = [1] * nz
                bshape[k] = G
                S += cols[k] * E[x, k, :].reshape(bshape)
            with np.errstate(divide="ignore"):
                np.log(S, out=S)
            S *= -w[x]
            obj += S
        flat = int(np.argmin(obj))
        if obj.flat[flat] < best_val:
            best_val = float(obj.flat[flat])
            best_arg = (j0,) + np.unravel_index(flat, shape)
    a_idx, js = best_arg[1], (best_arg[0],) + tuple(best_arg[2:])
    qx = qx_grid[a_idx]
    qy = yg[list(js)]
    d_s = d + beta * kl_matrix(pyx, qy) if beta > 0 else d
    m = gibbs_mapping(qx, d_s, lam)
    return m, lagrangian_terms(src, d, m, lam, beta)[0]
