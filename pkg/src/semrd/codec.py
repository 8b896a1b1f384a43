"""Quantization, Gaussian-mixture integer PMF, rate loss and arithmetic coding.

Payload layout (all integers and floats big-endian)::

    b"SRDC" | version u8 | model kind u8 | model block | z_min i64 | z_max i64
    | count u64 | bit_length u64 | crc32(body) u32 | body

GMM model block: M u16, then M weights, M means, M scales as f64.
Table model block: lo i64, K u32, then K probabilities as f64.
"""
from __future__ import annotations

import bisect
import logging
import math
import struct
import zlib
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np
from scipy.special import logsumexp, ndtr

log = logging.getLogger(__name__)

MAGIC = b"SRDC"
VERSION = 1
KIND_GMM = 0
KIND_TABLE = 1

TAIL_SIGMAS = 12.0
FREQ_BITS = 32
FREQ_TOTAL = 1 << FREQ_BITS          # escape symbol always gets exactly one count
MAX_MODELED = 1 << 20
MAX_ESCAPE_SPAN = 1 << 48
SCALE_MIN = 1e-6
EM_SCALE_FLOOR = 1e-3


class CodecError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SymbolStream:
    values: np.ndarray
    z_min: int = 0
    z_max: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.int64).ravel()
        if v.size and (v.min() < self.z_min or v.max() > self.z_max):
            raise ValueError("symbols fall outside the stream bounds")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_values(cls, values) -> "SymbolStream":
        v = np.asarray(values, dtype=np.int64).ravel()
        if v.size == 0:
            return cls(v, 0, 0)
        return cls(v, int(v.min()), int(v.max()))

    def __len__(self):
        return self.values.size

    def __eq__(self, other):
        return (isinstance(other, SymbolStream) and self.z_min == other.z_min
                and self.z_max == other.z_max and np.array_equal(self.values, other.values))


@dataclass(frozen=True, eq=False)
class GmmPmfModel:
    weights: np.ndarray
    means: np.ndarray
    scales: np.ndarray
    degenerate: bool = False
    loglik_history: List[float] = field(default_factory=list, repr=False)

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        mu = np.atleast_1d(np.asarray(self.means, dtype=float))
        s = np.atleast_1d(np.asarray(self.scales, dtype=float))
        if not (w.shape == mu.shape == s.shape) or w.size < 1:
            raise ValueError("weights, means and scales must be equal-length and nonempty")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must lie on the simplex")
        if np.any(s < SCALE_MIN):
            raise ValueError(f"scales must be >= {SCALE_MIN}")
        for name, a in (("weights", w), ("means", mu), ("scales", s)):
            object.__setattr__(self, name, a)

    @property
    def M(self) -> int:
        return self.weights.size

    def support(self):
        smax = self.scales.max()
        lo = math.floor(self.means.min() - TAIL_SIGMAS * smax)
        hi = math.ceil(self.means.max() + TAIL_SIGMAS * smax)
        return lo, hi

    def pmf(self, z):
        return pmf_integrate(self, z)

    def to_json(self) -> dict:
        return {"kind": "gmm", "weights": self.weights.tolist(),
                "means": self.means.tolist(), "scales": self.scales.tolist()}


@dataclass(frozen=True, eq=False)
class TablePmfModel:
    """Explicit PMF over the integers lo .. lo + len(probs) - 1."""

    lo: int
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size < 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("table PMF must be a nonnegative vector summing to 1")
        object.__setattr__(self, "probs", p)

    def support(self):
        return self.lo, self.lo + self.probs.size - 1

    def pmf(self, z):
        z = np.asarray(z, dtype=np.int64)
        idx = z - self.lo
        inside = (idx >= 0) & (idx < self.probs.size)
        out = np.zeros(z.shape)
        out[inside] = self.probs[idx[inside]]
        return out if out.ndim else float(out)

    def to_json(self) -> dict:
        return {"kind": "table", "lo": int(self.lo), "probs": self.probs.tolist()}

    @classmethod
    def uniform(cls, n: int, lo: int = 0) -> "TablePmfModel":
        return cls(lo, np.full(n, 1.0 / n))


def model_from_json(d: dict):
    kind = d.get("kind", "gmm")
    if kind == "gmm":
        return GmmPmfModel(d["weights"], d["means"], d["scales"])
    if kind == "table":
        return TablePmfModel(int(d["lo"]), d["probs"])
    raise CodecError(f"unknown model kind {kind!r}")


# quantization

def quantize_train_proxy(e, seed=None):
    """Additive Uniform(-1/2, 1/2) noise, the differentiable stand-in for rounding."""
    e = np.asarray(e, dtype=float)
    rng = np.random.default_rng(seed)
    return e + rng.uniform(-0.5, 0.5, size=e.shape)


def quantize_inference(e) -> SymbolStream:
    # np.rint rounds half to even
    return SymbolStream.from_values(np.rint(np.asarray(e, dtype=float)).astype(np.int64))


# entropy model

def _bin_mass(lo, hi):
    """Phi(hi) - Phi(lo), evaluated on the far side of the mean to keep tail precision."""
    upper = lo > 0
    return np.where(upper, ndtr(-lo) - ndtr(-hi), ndtr(hi) - ndtr(lo))


def pmf_integrate(model: GmmPmfModel, z):
    """Mixture mass of the unit bin centred on each integer z."""
    z = np.asarray(z, dtype=float)
    zz = z[..., None]
    a = (zz - 0.5 - model.means) / model.scales
    b = (zz + 0.5 - model.means) / model.scales
    p = np.sum(model.weights * _bin_mass(a, b), axis=-1)
    return p if p.ndim else float(p)


def _kmeanspp(x, k, rng):
    centers = [x[rng.integers(x.size)]]
    for _ in range(1, k):
        d2 = np.min((x[:, None] - np.asarray(centers)[None, :]) ** 2, axis=1)
        total = d2.sum()
        if total <= 0:
            centers.append(x[rng.integers(x.size)])
        else:
            centers.append(x[rng.choice(x.size, p=d2 / total)])
    return np.asarray(centers, dtype=float)


def fit_gmm_pmf(samples, M: int = 3, seed=0, max_iter: int = 200, tol: float = 1e-8) -> GmmPmfModel:
    """EM fit of an M-component 1-D Gaussian mixture with k-means++ seeding.

    Scales that collapse below 1e-3 are floored there and the model is
    marked degenerate.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if M < 1:
        raise ValueError("M must be >= 1")
    if x.size < 10 * M:
        raise ValueError(f"need at least {10 * M} samples for M={M}")
    rng = np.random.default_rng(seed)
    mu = _kmeanspp(x, M, rng)
    sd = np.full(M, max(x.std(), EM_SCALE_FLOOR))
    w = np.full(M, 1.0 / M)
    degenerate = False
    history = []
    prev = -np.inf
    for _ in range(max_iter):
        logp = (np.log(w) - 0.5 * np.log(2 * np.pi * sd ** 2)
                - 0.5 * ((x[:, None] - mu) / sd) ** 2)
        norm = logsumexp(logp, axis=1)
        ll = float(norm.mean())
        history.append(ll)
        if ll - prev < tol:
            break
        prev = ll
        r = np.exp(logp - norm[:, None])
        nk = r.sum(axis=0)
        empty = nk <= 0
        nk = np.where(empty, 1.0, nk)
        w = np.where(empty, 0.0, nk / x.size)
        mu = np.where(empty, mu, (r * x[:, None]).sum(axis=0) / nk)
        var = (r * (x[:, None] - mu) ** 2).sum(axis=0) / nk
        sd = np.sqrt(var)
        if np.any(sd < EM_SCALE_FLOOR):
            degenerate = True
            sd = np.maximum(sd, EM_SCALE_FLOOR)
        w = np.maximum(w, 1e-300)
        w = w / w.sum()
    if degenerate:
        log.warning("GMM component collapsed; scale floored at %g", EM_SCALE_FLOOR)
    return GmmPmfModel(w, mu, sd, degenerate=degenerate, loglik_history=history)


def _escape_bits(stream: SymbolStream) -> float:
    return FREQ_BITS + math.log2(stream.z_max - stream.z_min + 1)


def rate_loss(model, stream: SymbolStream, escape: bool = True) -> float:
    """Total -log2 p(z_i) in bits; symbols the model gives no mass cost an escape."""
    if len(stream) == 0:
        return 0.0
    p = np.asarray(model.pmf(stream.values), dtype=float)
    zero = p <= 0
    if np.any(zero) and not escape:
        raise CodecError(f"symbol {int(stream.values[np.argmax(zero)])} has zero probability")
    bits = -np.log2(p[~zero]).sum()
    return float(bits + zero.sum() * _escape_bits(stream))


def frequency_table(model):
    """Integer frequencies over the modeled range plus one escape count; totals 2**32."""
    lo, hi = model.support()
    k = hi - lo + 1
    if k > MAX_MODELED:
        raise CodecError(f"model covers {k} symbols, more than the coder supports ({MAX_MODELED})")
    p = np.asarray(model.pmf(np.arange(lo, hi + 1)), dtype=float)
    p = p / p.sum()
    scale = FREQ_TOTAL - 1 - k
    f = 1 + np.floor(p * scale).astype(np.int64)
    f[int(np.argmax(f))] += FREQ_TOTAL - 1 - int(f.sum())
    cum = [0]
    for v in f.tolist():
        cum.append(cum[-1] + v)
    cum.append(FREQ_TOTAL)
    return lo, hi, cum


# arithmetic coder: 64-bit state with deferred (underflow) bits

_STATE_BITS = 64
_FULL = 1 << _STATE_BITS
_HALF = _FULL >> 1
_QUARTER = _FULL >> 2
_MASK = _FULL - 1


class _Encoder:
    def __init__(self):
        self.low = 0
        self.high = _MASK
        self.pending = 0
        self.bits: List[int] = []

    def _emit(self, bit):
        self.bits.append(bit)
        if self.pending:
            self.bits.extend([bit ^ 1] * self.pending)
            self.pending = 0

    def encode(self, c_lo, c_hi, total):
        rng = self.high - self.low + 1
        self.high = self.low + rng * c_hi // total - 1
        self.low = self.low + rng * c_lo // total
        while True:
            if self.high < _HALF:
                self._emit(0)
            elif self.low >= _HALF:
                self._emit(1)
                self.low -= _HALF
                self.high -= _HALF
            elif self.low >= _QUARTER and self.high < 3 * _QUARTER:
                self.pending += 1
                self.low -= _QUARTER
                self.high -= _QUARTER
            else:
                break
            self.low <<= 1
            self.high = (self.high << 1) | 1

    def finish(self) -> List[int]:
        self.pending += 1
        self._emit(0 if self.low < _QUARTER else 1)
        return self.bits


class _Decoder:
    def __init__(self, body: bytes, bit_length: int):
        self.body = body
        self.bit_length = bit_length
        self.pos = 0
        self.low = 0
        self.high = _MASK
        self.code = 0
        for _ in range(_STATE_BITS):
            self.code = (self.code << 1) | self._bit()

    def _bit(self):
        i = self.pos
        self.pos += 1
        if i >= self.bit_length:
            return 0
        return (self.body[i >> 3] >> (7 - (i & 7))) & 1

    def target(self, total):
        rng = self.high - self.low + 1
        return ((self.code - self.low + 1) * total - 1) // rng

    def consume(self, c_lo, c_hi, total):
        rng = self.high - self.low + 1
        self.high = self.low + rng * c_hi // total - 1
        self.low = self.low + rng * c_lo // total
        while True:
            if self.high < _HALF:
                pass
            elif self.low >= _HALF:
                self.low -= _HALF
                self.high -= _HALF
                self.code -= _HALF
            elif self.low >= _QUARTER and self.high < 3 * _QUARTER:
                self.low -= _QUARTER
                self.high -= _QUARTER
                self.code -= _QUARTER
            else:
                break
            self.low <<= 1
            self.high = (self.high << 1) | 1
            self.code = (self.code << 1) | self._bit()


@dataclass(frozen=True)
class BitPayload:
    """Serialized stream. `bit_length` counts coded body bits, excluding the header."""

    data: bytes
    bit_length: int
    header_size: int

    @property
    def header_bits(self) -> int:
        return 8 * self.header_size


def _pack_model(model) -> bytes:
    if isinstance(model, GmmPmfModel):
        m = model.M
        return (struct.pack(">BH", KIND_GMM, m)
                + struct.pack(f">{m}d", *model.weights)
                + struct.pack(f">{m}d", *model.means)
                + struct.pack(f">{m}d", *model.scales))
    if isinstance(model, TablePmfModel):
        k = model.probs.size
        return struct.pack(">BqI", KIND_TABLE, model.lo, k) + struct.pack(f">{k}d", *model.probs)
    raise CodecError(f"cannot serialize model of type {type(model).__name__}")


def _unpack_model(buf: bytes, off: int):
    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(buf):
            raise CodecError(f"payload truncated at byte {off} while reading the model")
        vals = struct.unpack_from(fmt, buf, off)
        off += size
        return vals

    (kind,) = take(">B")
    try:
        if kind == KIND_GMM:
            (m,) = take(">H")
            w = take(f">{m}d")
            mu = take(f">{m}d")
            s = take(f">{m}d")
            return GmmPmfModel(np.array(w), np.array(mu), np.array(s)), off
        if kind == KIND_TABLE:
            lo, k = take(">qI")
            return TablePmfModel(lo, np.array(take(f">{k}d"))), off
    except ValueError as exc:
        if isinstance(exc, CodecError):
            raise
        raise CodecError(f"invalid model parameters in header: {exc}") from exc
    raise CodecError(f"unknown model kind {kind} at byte {off - 1}")


def arithmetic_encode(stream: SymbolStream, model) -> BitPayload:
    lo, hi, cum = frequency_table(model)
    esc = hi - lo + 1
    span = stream.z_max - stream.z_min + 1
    enc = _Encoder()
    for z in stream.values.tolist():
        if lo <= z <= hi:
            i = z - lo
            enc.encode(cum[i], cum[i + 1], FREQ_TOTAL)
        else:
            if span > MAX_ESCAPE_SPAN:
                raise CodecError(f"stream span {span} too wide to escape-code")
            enc.encode(cum[esc], cum[esc + 1], FREQ_TOTAL)
            off = z - stream.z_min
            enc.encode(off, off + 1, span)
    bits = enc.finish() if len(stream) else []
    body = bytearray((len(bits) + 7) // 8)
    for i, b in enumerate(bits):
        if b:
            body[i >> 3] |= 0x80 >> (i & 7)
    body = bytes(body)
    header = (MAGIC + struct.pack(">B", VERSION) + _pack_model(model)
              + struct.pack(">qqQQI", stream.z_min, stream.z_max, len(stream), len(bits), zlib.crc32(body)))
    return BitPayload(header + body, len(bits), len(header))


def arithmetic_decode(payload) -> SymbolStream:
    buf = payload.data if isinstance(payload, BitPayload) else bytes(payload)
    if buf[:4] != MAGIC:
        raise CodecError("bad magic at byte 0")
    if len(buf) < 5 or buf[4] != VERSION:
        raise CodecError(f"unsupported version at byte 4: {buf[4] if len(buf) > 4 else None}")
    model, off = _unpack_model(buf, 5)
    tail = struct.calcsize(">qqQQI")
    if off + tail > len(buf):
        raise CodecError(f"payload truncated at byte {off} while reading stream fields")
    z_min, z_max, count, bit_length, crc = struct.unpack_from(">qqQQI", buf, off)
    off += tail
    body = buf[off:]
    if bit_length > 8 * len(body):
        raise CodecError(f"body at byte {off} holds {8 * len(body)} bits, header claims {bit_length}")
    if zlib.crc32(body) != crc:
        raise CodecError(f"body checksum mismatch (body starts at byte {off})")
    if z_max < z_min:
        raise CodecError("stream bounds are inverted")
    lo, hi, cum = frequency_table(model)
    esc = hi - lo + 1
    span = z_max - z_min + 1
    out = np.empty(count, dtype=np.int64)
    if count:
        dec = _Decoder(body, bit_length)
        for n in range(count):
            t = dec.target(FREQ_TOTAL)
            if not 0 <= t < FREQ_TOTAL:
                raise CodecError(f"coder state out of range at symbol {n}")
            i = bisect.bisect_right(cum, t) - 1
            dec.consume(cum[i], cum[i + 1], FREQ_TOTAL)
            if i == esc:
                t = dec.target(span)
                if not 0 <= t < span:
                    raise CodecError(f"escape value out of range at symbol {n}")
                dec.consume(t, t + 1, span)
                z = z_min + t
            else:
                z = lo + i
            if not z_min <= z <= z_max:
                raise CodecError(f"decoded symbol {z} outside [{z_min}, {z_max}] at symbol {n}")
            out[n] = z
    return SymbolStream(out, z_min, z_max)


def encoded_overhead_bits(payload: BitPayload, model, stream: SymbolStream) -> float:
    return payload.bit_length - rate_loss(model, stream)
