"""MAC-authenticated additive secret sharing over Z_{2^k}.

A party's slice of a shared value ``x`` is an :class:`AuthShare` holding the
value share ``x_i`` and the MAC share ``gamma_i``, with ``sum x_i = x`` and
``sum gamma_i = alpha * x``.  Both fields are numpy arrays, so one AuthShare
can carry a whole tensor of shared elements.

Parties are identified by 1-based ids throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ring import DEFAULT_RING, Ring


@dataclass(frozen=True)
class AuthShare:
    value: np.ndarray
    mac: np.ndarray

    @property
    def shape(self) -> tuple:
        return np.shape(self.value)

    def __getitem__(self, idx) -> "AuthShare":
        return AuthShare(self.value[idx], self.mac[idx])

    def reshape(self, *shape) -> "AuthShare":
        return AuthShare(np.reshape(self.value, *shape), np.reshape(self.mac, *shape))

    def ravel(self) -> "AuthShare":
        return AuthShare(np.ravel(self.value), np.ravel(self.mac))


def stack_shares(shares: Sequence[AuthShare], axis: int = 0) -> AuthShare:
    return AuthShare(
        np.stack([s.value for s in shares], axis=axis),
        np.stack([s.mac for s in shares], axis=axis),
    )


def concat_shares(shares: Sequence[AuthShare]) -> AuthShare:
    return AuthShare(
        np.concatenate([np.ravel(s.value) for s in shares]),
        np.concatenate([np.ravel(s.mac) for s in shares]),
    )


def _additive_split(total: np.ndarray, n: int, rng: np.random.Generator, ring: Ring) -> list[np.ndarray]:
    # Parties 1..n-1 get uniform randomness; party n absorbs the residual.
    parts = [ring.random(rng, np.shape(total)) for _ in range(n - 1)]
    residual = total
    for r in parts:
        residual = ring.sub(residual, r)
    return parts + [residual]


def share(x, n: int, alpha, rng: np.random.Generator, ring: Ring = DEFAULT_RING) -> list[AuthShare]:
    """Split ``x`` into ``n`` authenticated shares under the global key ``alpha``.

    This is the dealer-side operation: it needs ``alpha`` in the clear.  Online,
    parties input values through preprocessed masks instead (see ``protocol``).
    """
    if n < 2:
        raise ValueError(f"need at least 2 parties, got {n}")
    x = ring.asarray(x)
    values = _additive_split(x, n, rng, ring)
    macs = _additive_split(ring.mul(alpha, x), n, rng, ring)
    return [AuthShare(v, m) for v, m in zip(values, macs)]


def reconstruct(shares: Sequence[AuthShare], ring: Ring = DEFAULT_RING) -> np.ndarray:
    """Sum of value shares.  MAC validity is checked separately."""
    return ring.sum(np.stack([s.value for s in shares]), axis=0)


def reconstruct_mac(shares: Sequence[AuthShare], ring: Ring = DEFAULT_RING) -> np.ndarray:
    return ring.sum(np.stack([s.mac for s in shares]), axis=0)


def add_shares(a: AuthShare, b: AuthShare, ring: Ring = DEFAULT_RING) -> AuthShare:
    return AuthShare(ring.add(a.value, b.value), ring.add(a.mac, b.mac))


def sub_shares(a: AuthShare, b: AuthShare, ring: Ring = DEFAULT_RING) -> AuthShare:
    return AuthShare(ring.sub(a.value, b.value), ring.sub(a.mac, b.mac))


def mul_public(a: AuthShare, c, ring: Ring = DEFAULT_RING) -> AuthShare:
    c = ring.asarray(c)
    return AuthShare(ring.mul(a.value, c), ring.mul(a.mac, c))


def add_public(a: AuthShare, c, alpha_i, my_id: int, ring: Ring = DEFAULT_RING) -> AuthShare:
    """Add a public constant.

    Party 1 absorbs ``c`` into its value share; every party adds
    ``alpha_i * c`` to its MAC share.
    """
    c = ring.asarray(c)
    value = ring.add(a.value, c) if my_id == 1 else ring.add(a.value, ring.zeros(np.shape(c)))
    return AuthShare(value, ring.add(a.mac, ring.mul(alpha_i, c)))


def sum_shares(a: AuthShare, axis: int = 0, ring: Ring = DEFAULT_RING) -> AuthShare:
    return AuthShare(ring.sum(a.value, axis=axis), ring.sum(a.mac, axis=axis))


# -- wire format ------------------------------------------------------------


def encode_shares(s: AuthShare, ring: Ring = DEFAULT_RING) -> bytes:
    """Records of (value share, MAC share), each ``kappa/8`` bytes little-endian."""
    values = ring.asarray(np.ravel(s.value))
    macs = ring.asarray(np.ravel(s.mac))
    inter = np.empty(2 * values.size, dtype=ring.dtype)
    inter[0::2] = values
    inter[1::2] = macs
    return ring.to_bytes(inter)


def decode_shares(buf: bytes, ring: Ring = DEFAULT_RING, shape=None) -> AuthShare:
    flat = ring.from_bytes(buf)
    values, macs = flat[0::2].copy(), flat[1::2].copy()
    if shape is not None:
        values, macs = values.reshape(shape), macs.reshape(shape)
    return AuthShare(values, macs)
