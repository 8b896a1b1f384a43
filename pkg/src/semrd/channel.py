"""Memoryless AWGN / flat Rayleigh channel, uncoded BPSK and 16-QAM, index flips."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import erfc

KINDS = ("awgn", "rayleigh")

# Gray-coded 4-PAM per I/Q rail: bit pair -> level
_PAM4 = {(0, 0): -3.0, (0, 1): -1.0, (1, 1): 1.0, (1, 0): 3.0}
_PAM4_LEVELS = np.array([-3.0, -1.0, 1.0, 3.0])
_PAM4_BITS = np.array([[0, 0], [0, 1], [1, 1], [1, 0]])
_QAM16_NORM = np.sqrt(10.0)


@dataclass(frozen=True)
class ChannelConfig:
    kind: str = "awgn"
    snr_db: float = 20.0
    seed: Optional[int] = None
    csi: str = "perfect"
    fading: str = "block"       # "block": one h per call; "symbol": fresh h per symbol

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown channel kind {self.kind!r}")
        if not np.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")
        if self.csi not in ("perfect", "none"):
            raise ValueError(f"unknown csi mode {self.csi!r}")
        if self.fading not in ("block", "symbol"):
            raise ValueError(f"unknown fading mode {self.fading!r}")

    @property
    def noise_variance(self) -> float:
        return 10.0 ** (-self.snr_db / 10.0)


def _complex_gaussian(rng, n, variance):
    return np.sqrt(variance / 2.0) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))


def transmit(block, cfg: ChannelConfig):
    """Return (received, h). `h` is None on AWGN, a scalar for block fading, else an array."""
    s = np.asarray(block, dtype=complex)
    rng = np.random.default_rng(cfg.seed)
    h = None
    if cfg.kind == "rayleigh":
        h = _complex_gaussian(rng, 1 if cfg.fading == "block" else s.size, 1.0)
        h = h[0] if cfg.fading == "block" else h
        faded = h * s
    else:
        faded = s
    n = _complex_gaussian(rng, s.size, cfg.noise_variance)
    return faded + n, h


def _check_bits(bits, per_symbol):
    b = np.asarray(bits, dtype=np.int64).ravel()
    if b.size % per_symbol:
        raise ValueError(f"bit count {b.size} is not a multiple of {per_symbol}")
    if np.any((b != 0) & (b != 1)):
        raise ValueError("bits must be 0 or 1")
    return b


def modulate_bpsk(bits) -> np.ndarray:
    b = _check_bits(bits, 1)
    return (1.0 - 2.0 * b).astype(complex)


def modulate_qam16(bits) -> np.ndarray:
    b = _check_bits(bits, 4).reshape(-1, 4)
    idx_i = 2 * b[:, 0] + b[:, 1]
    idx_q = 2 * b[:, 2] + b[:, 3]
    gray = np.array([_PAM4[(0, 0)], _PAM4[(0, 1)], _PAM4[(1, 0)], _PAM4[(1, 1)]])
    return (gray[idx_i] + 1j * gray[idx_q]) / _QAM16_NORM


def _equalize(received, h):
    r = np.asarray(received, dtype=complex)
    return r if h is None else r / h


def demodulate_bpsk(received, h=None) -> np.ndarray:
    r = _equalize(received, h)
    return (r.real < 0).astype(np.int64)


def demodulate_qam16(received, h=None) -> np.ndarray:
    r = _equalize(received, h) * _QAM16_NORM
    i = np.argmin(np.abs(r.real[:, None] - _PAM4_LEVELS), axis=1)
    q = np.argmin(np.abs(r.imag[:, None] - _PAM4_LEVELS), axis=1)
    return np.hstack([_PAM4_BITS[i], _PAM4_BITS[q]]).ravel()


MODULATIONS = {
    "bpsk": (1, modulate_bpsk, demodulate_bpsk),
    "qam16": (4, modulate_qam16, demodulate_qam16),
}


def qfunc(x):
    return 0.5 * erfc(np.asarray(x) / np.sqrt(2.0))


def bpsk_awgn_ser(snr_db):
    return qfunc(np.sqrt(2.0 * 10.0 ** (np.asarray(snr_db) / 10.0)))


def bpsk_rayleigh_ber(snr_db):
    g = 10.0 ** (np.asarray(snr_db) / 10.0)
    return 0.5 * (1.0 - np.sqrt(g / (1.0 + g)))


def measure_ser(modulation: str, cfg: ChannelConfig, n_symbols: int):
    """Monte-Carlo (symbol error rate, bit error rate) for uncoded transmission."""
    per, mod, demod = MODULATIONS[modulation]
    rng = np.random.default_rng(None if cfg.seed is None else [cfg.seed, 1])
    bits = rng.integers(0, 2, n_symbols * per)
    rx, h = transmit(mod(bits), cfg)
    hat = demod(rx, h if cfg.csi == "perfect" else None)
    wrong = (hat != bits).reshape(-1, per)
    return float(wrong.any(axis=1).mean()), float(wrong.mean())


def index_channel(indices, flip_prob: float, seed=None, n_symbols: Optional[int] = None):
    """Replace each index, with probability `flip_prob`, by a uniformly drawn different index."""
    if not 0 <= flip_prob < 1:
        raise ValueError("flip_prob must be in [0, 1)")
    idx = np.asarray(indices, dtype=np.int64)
    n = int(idx.max()) + 1 if n_symbols is None else n_symbols
    if n < 2 or flip_prob == 0:
        return idx.copy()
    rng = np.random.default_rng(seed)
    flip = rng.random(idx.shape) < flip_prob
    # draw from the n-1 other symbols by skipping over the current one
    other = rng.integers(0, n - 1, idx.shape)
    other = other + (other >= idx)
    return np.where(flip, other, idx)


def index_channel_matrix(n_symbols: int, flip_prob: float) -> np.ndarray:
    """Exact transition matrix T[sent, received] of `index_channel`."""
    if not 0 <= flip_prob < 1:
        raise ValueError("flip_prob must be in [0, 1)")
    if n_symbols == 1:
        return np.ones((1, 1))
    t = np.full((n_symbols, n_symbols), flip_prob / (n_symbols - 1))
    np.fill_diagonal(t, 1.0 - flip_prob)
    return t


def flip_prob_from_snr(snr_db: float, n_symbols: int, kind: str = "awgn") -> float:
    """Index corruption probability when ceil(log2 n) bits go uncoded over BPSK."""
    if n_symbols < 2:
        return 0.0
    ber = float(bpsk_awgn_ser(snr_db) if kind == "awgn" else bpsk_rayleigh_ber(snr_db))
    k = int(np.ceil(np.log2(n_symbols)))
    return min(1.0 - (1.0 - ber) ** k, 1.0 - 1e-12)
