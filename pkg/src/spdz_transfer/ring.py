"""Wraparound arithmetic over Z_{2^k} and the fixed-point codec.

Ring elements are stored as numpy arrays.  For ``kappa <= 64`` the backing
dtype is ``uint64`` and reduction is implicit (plus a mask for narrower rings);
wider rings fall back to object arrays of Python ints, which is slow but exact.
Every operation accepts scalars or arrays and broadcasts like numpy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import RangeError

HEADROOM_BITS = 16


class Ring:
    """The ring Z_{2^kappa}."""

    def __init__(self, kappa: int = 64):
        if kappa < 8 or kappa > 128 or kappa % 8:
            raise ValueError(f"kappa must be a multiple of 8 in [8, 128], got {kappa}")
        self.kappa = kappa
        self.modulus = 1 << kappa
        self.nbytes = kappa // 8
        self.native = kappa <= 64
        self.dtype = np.dtype(np.uint64) if self.native else np.dtype(object)
        self._mask = np.uint64(self.modulus - 1) if self.native else None

    def __repr__(self) -> str:
        return f"Ring(kappa={self.kappa})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Ring) and other.kappa == self.kappa

    def __hash__(self) -> int:
        return hash(("Ring", self.kappa))

    # -- conversion ---------------------------------------------------------

    def asarray(self, x) -> np.ndarray:
        """Reduce ints (possibly negative or >= 2^kappa) into ring elements."""
        if isinstance(x, np.ndarray) and x.dtype == self.dtype:
            return self._reduce(x)
        if self.native:
            arr = np.asarray(x)
            if arr.size == 0:
                return np.zeros(arr.shape, dtype=np.uint64)
            if arr.dtype == np.uint64:
                return self._reduce(arr)
            if arr.dtype.kind in "iub":
                return self._reduce(arr.astype(np.int64).astype(np.uint64))
            if arr.dtype == object or arr.dtype.kind == "O":
                flat = [int(v) % self.modulus for v in arr.ravel()]
                return np.array(flat, dtype=np.uint64).reshape(arr.shape)
            raise TypeError(f"cannot convert dtype {arr.dtype} to ring elements")
        arr = np.asarray(x, dtype=object)
        return self._reduce(arr)

    def _reduce(self, arr: np.ndarray) -> np.ndarray:
        if self.native:
            if self.kappa == 64:
                return arr
            return arr & self._mask
        return np.asarray(arr % self.modulus, dtype=object)

    def from_signed(self, v) -> np.ndarray:
        """Two's-complement encode signed integers."""
        return self.asarray(v)

    def to_signed(self, x) -> np.ndarray:
        """Decode ring elements as signed integers in [-2^(k-1), 2^(k-1))."""
        x = self.asarray(x)
        if self.native:
            if self.kappa == 64:
                return x.view(np.int64) if x.ndim else np.int64(x.view(np.int64))
            v = x.astype(np.int64)
            sign = (v >> (self.kappa - 1)) & 1
            return v - (sign << self.kappa)
        half = self.modulus >> 1
        return np.asarray(np.where(x >= half, x - self.modulus, x), dtype=object)

    # -- arithmetic ---------------------------------------------------------

    def add(self, a, b) -> np.ndarray:
        with np.errstate(over="ignore"):
            return self._reduce(self.asarray(a) + self.asarray(b))

    def sub(self, a, b) -> np.ndarray:
        with np.errstate(over="ignore"):
            return self._reduce(self.asarray(a) - self.asarray(b))

    def neg(self, a) -> np.ndarray:
        with np.errstate(over="ignore"):
            a = self.asarray(a)
            if self.native:
                return self._reduce(np.zeros_like(a) - a)
            return self._reduce(-a)

    def mul(self, a, b) -> np.ndarray:
        with np.errstate(over="ignore"):
            return self._reduce(self.asarray(a) * self.asarray(b))

    def sum(self, a, axis=None) -> np.ndarray:
        with np.errstate(over="ignore"):
            a = self.asarray(a)
            if self.native:
                return self._reduce(np.sum(a, axis=axis, dtype=np.uint64))
            return self._reduce(np.sum(a, axis=axis))

    def dot(self, a, b, axis=-1) -> np.ndarray:
        """Sum of elementwise products along ``axis``."""
        return self.sum(self.mul(a, b), axis=axis)

    def zeros(self, shape) -> np.ndarray:
        if self.native:
            return np.zeros(shape, dtype=np.uint64)
        out = np.empty(shape, dtype=object)
        out.fill(0)
        return out

    def random(self, rng: np.random.Generator, shape=()) -> np.ndarray:
        """Uniform ring elements."""
        if self.native:
            return self._reduce(rng.integers(0, 1 << 64, size=shape, dtype=np.uint64))
        lo = rng.integers(0, 1 << 64, size=shape, dtype=np.uint64)
        hi = rng.integers(0, 1 << 64, size=shape, dtype=np.uint64)
        out = np.empty(np.shape(lo), dtype=object)
        for idx in np.ndindex(out.shape):
            out[idx] = ((int(hi[idx]) << 64) | int(lo[idx])) % self.modulus
        return out

    def random_odd(self, rng: np.random.Generator, shape=()) -> np.ndarray:
        x = self.random(rng, shape)
        if self.native:
            return x | np.uint64(1)
        return np.asarray(x | 1, dtype=object)

    # -- serialization ------------------------------------------------------

    def to_bytes(self, x) -> bytes:
        """Little-endian, ``kappa/8`` bytes per element, C order."""
        x = self.asarray(x)
        if self.native:
            if self.kappa == 64:
                return np.ascontiguousarray(x, dtype="<u8").tobytes()
            raw = np.ascontiguousarray(x, dtype="<u8").view(np.uint8).reshape(-1, 8)
            return raw[:, : self.nbytes].tobytes()
        return b"".join(int(v).to_bytes(self.nbytes, "little") for v in x.ravel())

    def from_bytes(self, buf: bytes, shape=None) -> np.ndarray:
        count = len(buf) // self.nbytes
        if count * self.nbytes != len(buf):
            raise ValueError(f"buffer length {len(buf)} is not a multiple of {self.nbytes}")
        if self.native:
            if self.kappa == 64:
                out = np.frombuffer(buf, dtype="<u8").astype(np.uint64)
            else:
                raw = np.zeros((count, 8), dtype=np.uint8)
                raw[:, : self.nbytes] = np.frombuffer(buf, dtype=np.uint8).reshape(count, self.nbytes)
                out = raw.view("<u8").reshape(count).astype(np.uint64)
        else:
            nb = self.nbytes
            out = np.array(
                [int.from_bytes(buf[i * nb:(i + 1) * nb], "little") for i in range(count)],
                dtype=object,
            )
        return out.reshape(shape) if shape is not None else out


DEFAULT_RING = Ring(64)


def ring_add(a, b, ring: Ring = DEFAULT_RING):
    return ring.add(a, b)


def ring_sub(a, b, ring: Ring = DEFAULT_RING):
    return ring.sub(a, b)


def ring_neg(a, ring: Ring = DEFAULT_RING):
    return ring.neg(a)


def ring_mul(a, b, ring: Ring = DEFAULT_RING):
    return ring.mul(a, b)


@dataclass(frozen=True)
class FixedPointCodec:
    """Fixed-point encoding with ``precision`` fractional bits.

    Encoding rounds to nearest, ties upward: ``floor(m * 2^p + 1/2)``.
    """

    precision: int = 8
    ring: Ring = field(default_factory=lambda: DEFAULT_RING)

    def __post_init__(self):
        if self.precision < 1:
            raise ValueError("precision must be at least 1 bit")
        if 2 * self.precision + HEADROOM_BITS > self.ring.kappa:
            raise ValueError(
                f"2*p + {HEADROOM_BITS} must not exceed kappa "
                f"(p={self.precision}, kappa={self.ring.kappa})"
            )

    @property
    def kappa(self) -> int:
        return self.ring.kappa

    @property
    def scale(self) -> int:
        return 1 << self.precision

    @property
    def bound(self) -> float:
        """Exclusive magnitude bound on encodable reals."""
        return float(2 ** (self.ring.kappa - 1 - self.precision))

    def quantize(self, m):
        m = np.asarray(m, dtype=np.float64)
        if not np.all(np.isfinite(m)):
            raise RangeError("cannot quantize a non-finite value")
        if m.size and np.max(np.abs(m)) >= self.bound:
            worst = float(np.max(np.abs(m)))
            raise RangeError(f"|m| = {worst:g} exceeds the representable bound {self.bound:g}")
        scaled = np.floor(m * self.scale + 0.5)
        if self.ring.native:
            return self.ring.from_signed(scaled.astype(np.int64))
        ints = np.empty(scaled.shape, dtype=object)
        for idx in np.ndindex(scaled.shape):
            ints[idx] = int(scaled[idx])
        return self.ring.from_signed(ints)

    def dequantize(self, x):
        s = self.ring.to_signed(x)
        if self.ring.native:
            return np.asarray(s, dtype=np.float64) / self.scale
        return np.asarray([float(v) for v in np.ravel(s)]).reshape(np.shape(s)) / self.scale

    def truncate(self, x):
        """Rescale a 2^(2p)-scaled product back to scale 2^p.

        Rounds the signed value to nearest (ties up) and saturates at the
        representable range [-2^(k-1-p), 2^(k-1-p)).  Applied to opened,
        public values only, so it is deterministic.
        """
        s = self.ring.to_signed(x)
        p = self.precision
        lo = -(1 << (self.ring.kappa - 1 - p))
        hi = (1 << (self.ring.kappa - 1 - p)) - 1
        if self.ring.native:
            s = np.asarray(s, dtype=np.int64)
            q = (s >> p) + ((s >> (p - 1)) & 1)
            return self.ring.from_signed(np.clip(q, lo, hi))
        s = np.asarray(s, dtype=object)
        q = (s >> p) + ((s >> (p - 1)) & 1)
        q = np.asarray(np.minimum(np.maximum(q, lo), hi), dtype=object)
        return self.ring.from_signed(q)


DEFAULT_CODEC = FixedPointCodec()


def quantize(m, codec: FixedPointCodec = DEFAULT_CODEC):
    return codec.quantize(m)


def dequantize(x, codec: FixedPointCodec = DEFAULT_CODEC):
    return codec.dequantize(x)


def truncate(x, codec: FixedPointCodec = DEFAULT_CODEC):
    return codec.truncate(x)
