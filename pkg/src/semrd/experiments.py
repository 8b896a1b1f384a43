"""Synthetic semantic sources, the end-to-end pipeline, transfer scoring and result files."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .channel import flip_prob_from_snr, index_channel, index_channel_matrix
from .distortion import SemanticSource, bayes_predictor
from .prob import ConditionalDistribution, Distribution, entropy, mutual_information, to_bits
from .solver import InfeasibleError, SolverConfig, SolverResult, solve

log = logging.getLogger(__name__)

CSV_COLUMNS = [
    "lambda", "beta", "snr_or_flip", "rate_bits", "entropy_bits", "mse",
    "accuracy", "task_distortion_bits", "i_xhat_y_bits", "transfer_accuracy",
]

REFERENCE = dict(n_symbols=4, n_labels=2, seed=7)


@dataclass(frozen=True)
class GeometryConfig:
    radius: float = 0.25
    spread: float = 0.75
    label_noise: float = 0.1        # p(y|x) = (1 - eps) * onehot + eps / k
    prior: str = "uniform"          # or "dirichlet"
    hard: bool = False              # forces label_noise = 0
    alt_task: bool = True


def _soft_onehot(idx, k, eps):
    return (1.0 - eps) * np.eye(k)[idx] + eps / k


def generate_semantic_source(n_symbols: int, n_labels: int, geometry: Optional[GeometryConfig] = None,
                             seed=0) -> SemanticSource:
    """Symbols scattered around one planar cluster centre per label.

    Labels follow cluster membership, softened by ``label_noise``. With a
    small radius and a wide spread the clusters overlap in embedding space,
    so the label partition disagrees with the nearest-neighbour geometry.
    The alternate task splits symbols into equal groups along the axis
    orthogonal to the centres, cutting across the primary clusters.
    """
    if n_labels < 2 or n_symbols < n_labels:
        raise ValueError("need n_symbols >= n_labels >= 2")
    g = geometry or GeometryConfig()
    eps = 0.0 if g.hard else g.label_noise
    if not 0.0 <= eps <= 1.0:
        raise ValueError("label_noise must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    theta0 = rng.uniform(0, 2 * np.pi)
    angles = theta0 + 2 * np.pi * np.arange(n_labels) / n_labels
    centers = g.radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    member = np.arange(n_symbols) % n_labels
    emb = centers[member] + g.spread * rng.standard_normal((n_symbols, 2))
    pyx = _soft_onehot(member, n_labels, eps)

    if g.prior == "uniform":
        px = np.full(n_symbols, 1.0 / n_symbols)
    elif g.prior == "dirichlet":
        px = rng.dirichlet(np.ones(n_symbols))
    else:
        raise ValueError(f"unknown prior {g.prior!r}")

    alt = None
    if g.alt_task:
        axis = np.array([-np.sin(theta0), np.cos(theta0)])
        groups = np.empty(n_symbols, dtype=int)
        groups[np.argsort(emb @ axis, kind="stable")] = np.arange(n_symbols) * n_labels // n_symbols
        alt = ConditionalDistribution.normalized(_soft_onehot(groups, n_labels, eps))

    return SemanticSource(Distribution.normalized(px), ConditionalDistribution.normalized(pyx), emb,
                          alt_py_given_x=alt)


def reference_source() -> SemanticSource:
    return generate_semantic_source(**REFERENCE)


# source files

def source_to_json(src: SemanticSource) -> dict:
    d = {
        "px": np.asarray(src.px).tolist(),
        "py_given_x": np.asarray(src.py_given_x).tolist(),
        "embeddings": src.embeddings.tolist(),
    }
    if src.alt_py_given_x is not None:
        d["alt_py_given_x"] = np.asarray(src.alt_py_given_x).tolist()
    if src.xhat_embeddings is not None:
        d["xhat_embeddings"] = src.xhat_embeddings.tolist()
    if src.d_rd is not None:
        d["d_rd"] = np.asarray(src.d_rd).tolist()
    return d


FILE_SUM_TOL = 1e-6


def _file_pmf(name, weights, axis=-1):
    """Renormalize text-rounded probabilities; reject anything that is not close to normalized."""
    w = np.asarray(weights, dtype=float)
    if np.any(np.abs(w.sum(axis=axis) - 1.0) > FILE_SUM_TOL):
        raise ValueError(f"{name} does not sum to 1 (tolerance {FILE_SUM_TOL})")
    return w


def source_from_json(d: dict) -> SemanticSource:
    if "generate" in d:
        gen = dict(d["generate"])
        geo = GeometryConfig(**gen.pop("geometry", {}))
        return generate_semantic_source(geometry=geo, **gen)
    alt = d.get("alt_py_given_x")
    return SemanticSource(
        Distribution.normalized(_file_pmf("px", d["px"])),
        ConditionalDistribution.normalized(_file_pmf("py_given_x", d["py_given_x"])),
        np.asarray(d.get("embeddings", np.zeros((len(d["px"]), 1))), dtype=float),
        alt_py_given_x=None if alt is None else ConditionalDistribution.normalized(_file_pmf("alt_py_given_x", alt)),
        xhat_embeddings=d.get("xhat_embeddings"),
        d_rd=d.get("d_rd"),
    )


def load_source(path) -> SemanticSource:
    with open(path) as fh:
        return source_from_json(json.load(fh))


def save_source(src: SemanticSource, path) -> None:
    with open(path, "w") as fh:
        json.dump(source_to_json(src), fh, indent=2)


# quantizer

@dataclass(frozen=True, eq=False)
class Quantizer:
    mode: str
    matrix: np.ndarray      # row-stochastic p(x̂|x) actually used for transmission

    def assign(self, xs, seed=None) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.int64)
        if self.mode == "argmax":
            return np.argmax(self.matrix, axis=1)[xs]
        rng = np.random.default_rng(seed)
        cdf = np.cumsum(self.matrix, axis=1)
        u = rng.random(xs.shape)
        out = (u[:, None] >= cdf[xs]).sum(axis=1)
        return np.minimum(out, self.matrix.shape[1] - 1)


def design_quantizer(result: SolverResult, mode: str = "argmax") -> Quantizer:
    m = np.asarray(result.mapping)
    if mode == "argmax":
        # np.argmax returns the first maximum, i.e. lowest index on ties
        return Quantizer(mode, np.eye(m.shape[1])[np.argmax(m, axis=1)])
    if mode == "stochastic":
        return Quantizer(mode, m.copy())
    raise ValueError(f"unknown mapping mode {mode!r}")


# pipeline

@dataclass
class ExperimentConfig:
    source: dict = field(default_factory=lambda: {"generate": dict(REFERENCE)})
    lambda_grid: List[float] = field(default_factory=lambda: [1.0])
    beta_grid: List[float] = field(default_factory=lambda: [0.0, 0.1])
    flip_grid: Optional[List[float]] = None
    snr_grid: Optional[List[float]] = None
    seed: int = 0
    output: Optional[str] = None
    mapping_mode: str = "argmax"
    n_transmissions: int = 100_000
    threads: int = 1
    # the task term makes the objective non-convex; extra starts avoid poor local minima
    restarts: int = 8

    def __post_init__(self):
        if not self.lambda_grid or not self.beta_grid:
            raise ValueError("lambda and beta grids must be nonempty")
        if any(not lam > 0 for lam in self.lambda_grid):
            raise ValueError("every lambda must be > 0")
        if any(b < 0 for b in self.beta_grid):
            raise ValueError("every beta must be >= 0")
        if self.flip_grid is not None and self.snr_grid is not None:
            raise ValueError("give either flip_grid or snr_grid, not both")
        if self.flip_grid is not None and not self.flip_grid:
            raise ValueError("flip grid is empty")
        if self.snr_grid is not None and not self.snr_grid:
            raise ValueError("snr grid is empty")
        if self.mapping_mode not in ("argmax", "stochastic"):
            raise ValueError(f"unknown mapping mode {self.mapping_mode!r}")
        if self.restarts < 0:
            raise ValueError("restarts must be >= 0")

    @classmethod
    def from_json(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if isinstance(d.get("source"), str):
            d["source"] = json.loads(Path(d["source"]).read_text())
        return cls(**d)

    def channel_axis(self):
        if self.snr_grid is not None:
            return [(float(s), True) for s in self.snr_grid]
        return [(float(f), False) for f in (self.flip_grid if self.flip_grid is not None else [0.0])]


@dataclass
class ExperimentRecord:
    lam: float
    beta: float
    snr_or_flip: float
    rate_bits: float
    entropy_bits: float
    mse: float
    task_accuracy: float
    task_distortion_bits: float
    i_xhat_y_bits: float
    transfer_accuracy: Optional[float] = None
    feasible: bool = True

    def row(self) -> list:
        return [self.lam, self.beta, self.snr_or_flip, self.rate_bits, self.entropy_bits, self.mse,
                self.task_accuracy, self.task_distortion_bits, self.i_xhat_y_bits, self.transfer_accuracy]


def hard_labels(pyx) -> np.ndarray:
    return np.argmax(np.asarray(pyx), axis=1)


def _accuracy(src: SemanticSource, encode, channel, alt=False, predictor=None) -> float:
    """Exact P(classifier(x̂_rx) == argmax p(y|x)) with the receiver's Bayes classifier."""
    pyx = src.alt_py_given_x if alt else src.py_given_x
    if predictor is None:
        predictor = bayes_predictor(src, encode, alt=alt)
    yhat = np.argmax(predictor, axis=1)
    eff = np.asarray(encode) @ channel
    hit = yhat[None, :] == hard_labels(pyx)[:, None]
    return float(np.sum(np.asarray(src.px)[:, None] * eff * hit))


def evaluate_cell(src: SemanticSource, result: SolverResult, beta: float, lam: float, channel_value: float,
                  flip: float, mode: str = "argmax", n_transmissions: int = 100_000, seed=0) -> ExperimentRecord:
    q = design_quantizer(result, mode)
    px = np.asarray(src.px)
    pyx = np.asarray(src.py_given_x)
    T = index_channel_matrix(q.matrix.shape[1], flip)
    sent = px[:, None] * q.matrix
    eff = q.matrix @ T
    recv = px[:, None] * eff
    i_xy = mutual_information(px[:, None] * pyx)
    i_rx_y = mutual_information(recv.T @ pyx)
    d = np.asarray(src.pixel_distortion())
    transfer = None
    if mode == "stochastic":
        # Monte-Carlo only for the per-transmission statistics
        rng = np.random.default_rng(seed)
        xs = rng.choice(px.size, size=n_transmissions, p=px)
        sent_idx = q.assign(xs, seed=[seed, 1])
        rx = index_channel(sent_idx, flip, seed=[seed, 2], n_symbols=q.matrix.shape[1])
        yhat = np.argmax(bayes_predictor(src, q.matrix), axis=1)
        acc = float(np.mean(yhat[rx] == hard_labels(pyx)[xs]))
        mse = float(np.mean(d[xs, rx]))
        if src.alt_py_given_x is not None:
            yb = np.argmax(bayes_predictor(src, q.matrix, alt=True), axis=1)
            transfer = float(np.mean(yb[rx] == hard_labels(src.alt_py_given_x)[xs]))
    else:
        acc = _accuracy(src, q.matrix, T)
        mse = float(np.sum(recv * d))
        if src.alt_py_given_x is not None:
            transfer = _accuracy(src, q.matrix, T, alt=True)
    return ExperimentRecord(
        lam=lam, beta=beta, snr_or_flip=channel_value,
        rate_bits=to_bits(mutual_information(sent)),
        entropy_bits=to_bits(entropy(sent.sum(axis=0))),
        mse=mse,
        task_accuracy=acc,
        task_distortion_bits=to_bits(max(i_xy - i_rx_y, 0.0)),
        i_xhat_y_bits=to_bits(i_rx_y),
        transfer_accuracy=transfer,
    )


def _infeasible_record(lam, beta, value):
    nan = math.nan
    return ExperimentRecord(lam, beta, value, nan, nan, nan, nan, nan, nan, None, feasible=False)


def run_pipeline(cfg: ExperimentConfig, src: Optional[SemanticSource] = None) -> List[ExperimentRecord]:
    src = src or source_from_json(cfg.source)
    pixel = src.pixel_distortion()
    cells = [(float(lam), float(b)) for lam in cfg.lambda_grid for b in cfg.beta_grid]

    def solve_cell(cell):
        lam, beta = cell
        try:
            return solve(src, pixel, SolverConfig(lam=lam, beta=beta, restarts=cfg.restarts))
        except InfeasibleError as exc:
            log.warning("lambda=%g beta=%g infeasible: %s", lam, beta, exc)
            return None

    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            results = list(pool.map(solve_cell, cells))
    else:
        results = [solve_cell(c) for c in cells]

    records = []
    for (lam, beta), res in zip(cells, results):
        for value, is_snr in cfg.channel_axis():
            if res is None:
                records.append(_infeasible_record(lam, beta, value))
                continue
            flip = flip_prob_from_snr(value, pixel.shape[1]) if is_snr else value
            records.append(evaluate_cell(src, res, beta, lam, value, flip, cfg.mapping_mode,
                                         cfg.n_transmissions, cfg.seed))
    records.sort(key=lambda r: (r.lam, r.beta, r.snr_or_flip))
    return records


@dataclass(frozen=True)
class TransferRecord:
    beta: float
    task_a_accuracy: float
    task_b_accuracy: float


def transfer_eval(src: SemanticSource, mappings: Mapping[float, object], flip_prob: float = 0.0) -> List[TransferRecord]:
    """Score mappings solved for the primary task against the alternate labels.

    Each task's receiver uses the Bayes predictor for its own labels given
    the (frozen) mapping; nothing is re-solved.
    """
    if src.alt_py_given_x is None:
        raise ValueError("source has no alternate task")
    out = []
    for beta in sorted(mappings):
        m = np.asarray(mappings[beta], dtype=float)
        T = index_channel_matrix(m.shape[1], flip_prob)
        out.append(TransferRecord(float(beta), _accuracy(src, m, T), _accuracy(src, m, T, alt=True)))
    return out


def solve_for_betas(src: SemanticSource, lam: float, betas: Sequence[float], mode: str = "argmax",
                    restarts: int = 8) -> Dict[float, np.ndarray]:
    """Deployed quantizer matrices, one per beta, for `transfer_eval`."""
    pixel = src.pixel_distortion()
    out = {}
    for b in betas:
        res = solve(src, pixel, SolverConfig(lam=lam, beta=float(b), restarts=restarts))
        out[float(b)] = design_quantizer(res, mode).matrix
    return out


# result files

def _fmt(v) -> str:
    if v is None:
        return ""
    return format(float(v), ".9g")


def format_results(records: Sequence[ExperimentRecord], fmt: str = "csv") -> str:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([_fmt(v) for v in r.row()])
        return buf.getvalue()
    if fmt == "json":
        rows = [{k: (None if v is None else float(_fmt(v))) for k, v in zip(CSV_COLUMNS, r.row())} for r in records]
        return json.dumps(rows, indent=2) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


def emit_results(records: Sequence[ExperimentRecord], path, fmt: str = "csv") -> Path:
    path = Path(path)
    text = format_results(records, fmt)
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return path


def _record_from_row(row: dict) -> ExperimentRecord:
    def num(k):
        v = row[k]
        return None if v in ("", None) else float(v)

    return ExperimentRecord(num("lambda"), num("beta"), num("snr_or_flip"), num("rate_bits"), num("entropy_bits"),
                            num("mse"), num("accuracy"), num("task_distortion_bits"), num("i_xhat_y_bits"),
                            num("transfer_accuracy"))


def load_results(path) -> List[ExperimentRecord]:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json" or text.lstrip().startswith("["):
        return [_record_from_row(r) for r in json.loads(text)]
    return [_record_from_row(r) for r in csv.DictReader(io.StringIO(text))]


def record_dict(r: ExperimentRecord) -> dict:
    return asdict(r)
