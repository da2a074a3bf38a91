"""Cross and weave transfer units.

A transfer unit mixes the activation maps of ``n`` domains location by
location: with ``V`` the vector of the domains' elements at one location,
domain ``i`` receives ``(Theta @ V)[i]``.  The cross unit is the ``n = 2``
case.  The plaintext functions here are the reference used for testing and
for the plaintext baseline; :func:`weave_forward_secure` computes the same
mixing on MAC-authenticated shares.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RangeError, ShapeMismatch
from .protocol import Party
from .ring import DEFAULT_CODEC, FixedPointCodec
from .sharing import AuthShare
from .transport import MessageKind


@dataclass(frozen=True)
class DegreeMatrix:
    """Symmetric n x n mixing weights with entries in [0, 1]."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.array(self.entries, dtype=np.float64)
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise ValueError(f"degree matrix must be square, got shape {e.shape}")
        if not np.all(np.isfinite(e)) or e.min() < 0 or e.max() > 1:
            raise ValueError("degree matrix entries must lie in [0, 1]")
        if not np.allclose(e, e.T, rtol=0, atol=1e-12):
            raise ValueError("degree matrix must be symmetric")
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def row(self, party_id: int) -> np.ndarray:
        return self.entries[party_id - 1]

    @classmethod
    def identity(cls, n: int) -> "DegreeMatrix":
        return cls(np.eye(n))

    @classmethod
    def uniform(cls, n: int, theta_t: float = 0.1) -> "DegreeMatrix":
        """Off-diagonal ``theta_t``, diagonal ``1 - (n-1) theta_t`` (row-stochastic)."""
        theta_s = 1.0 - (n - 1) * theta_t
        if theta_s < 0:
            raise ValueError(f"theta_t={theta_t} is too large for n={n}")
        e = np.full((n, n), float(theta_t))
        np.fill_diagonal(e, theta_s)
        return cls(e)

    def tolist(self) -> list[list[float]]:
        return self.entries.tolist()


def _check_shapes(xs) -> tuple:
    shape = np.shape(xs[0])
    for i, x in enumerate(xs[1:], start=2):
        if np.shape(x) != shape:
            raise ShapeMismatch(f"domain {i} tensor has shape {np.shape(x)}, domain 1 has {shape}")
    return shape


def weave_forward_plain(xs: list[np.ndarray], theta: DegreeMatrix) -> list[np.ndarray]:
    if len(xs) != theta.n:
        raise ShapeMismatch(f"{len(xs)} tensors for a {theta.n}-domain degree matrix")
    _check_shapes(xs)
    mixed = np.tensordot(theta.entries, np.stack(xs), axes=1)
    return list(mixed)


def cross_forward_plain(x1: np.ndarray, x2: np.ndarray, theta: DegreeMatrix) -> tuple[np.ndarray, np.ndarray]:
    if theta.n != 2:
        raise ShapeMismatch("the cross unit takes a 2 x 2 degree matrix")
    y1, y2 = weave_forward_plain([x1, x2], theta)
    return y1, y2


def weave_backward(grad_out: list[np.ndarray], theta: DegreeMatrix) -> list[np.ndarray]:
    """Map gradients w.r.t. mixed maps to gradients w.r.t. the inputs: Theta^T g."""
    if len(grad_out) != theta.n:
        raise ShapeMismatch(f"{len(grad_out)} gradients for a {theta.n}-domain degree matrix")
    _check_shapes(grad_out)
    return list(np.tensordot(theta.entries.T, np.stack(grad_out), axes=1))


def cross_backward(g1: np.ndarray, g2: np.ndarray, theta: DegreeMatrix) -> tuple[np.ndarray, np.ndarray]:
    d1, d2 = weave_backward([g1, g2], theta)
    return d1, d2


def quantize_tensor(x: np.ndarray, codec: FixedPointCodec = DEFAULT_CODEC, layer: int | str | None = None):
    try:
        return codec.quantize(x)
    except RangeError as exc:
        x = np.asarray(x, dtype=np.float64)
        bad = np.unravel_index(int(np.argmax(np.where(np.isfinite(x), np.abs(x), np.inf))), x.shape)
        raise RangeError(f"layer {layer}, location {tuple(int(i) for i in bad)}: {exc}") from exc


def dequantize_tensor(x, codec: FixedPointCodec = DEFAULT_CODEC) -> np.ndarray:
    return codec.dequantize(x)


def _float_bytes(x: np.ndarray) -> bytes:
    return np.ascontiguousarray(x, dtype="<f8").tobytes()


def weave_forward_secure(
    party: Party,
    local_x: np.ndarray,
    theta_row,
    theta: DegreeMatrix | None = None,
    secret_theta: bool = False,
    layer: int | str | None = None,
) -> np.ndarray:
    """Secure weave unit, called by every party in lockstep.

    Each party inputs its quantized activation map (and, with
    ``secret_theta``, its degree row).  The mixed map for domain ``i`` is
    computed on authenticated shares, opened privately to ``i``, MAC-checked
    together with every other value opened in this invocation, and finally
    truncated back to scale 2^p.  Any failed check aborts the whole call.

    With public degrees (the default) ``theta`` must be the full matrix and
    the weights multiply shares locally; with secret degrees each row is
    secret-shared and multiplied through Beaver triples.
    """
    ring, codec = party.ring, party.codec
    n, me = party.n, party.id
    shape = np.shape(local_x)
    size = int(np.prod(shape))
    row = np.asarray(theta_row, dtype=np.float64)
    if row.shape != (n,):
        raise ShapeMismatch(f"degree row has shape {row.shape}, expected ({n},)")
    xq = quantize_tensor(local_x, codec, layer).ravel()

    if secret_theta:
        inputs = party.input(np.concatenate([codec.quantize(row), xq]), [n + size] * n)
        th = AuthShare(
            np.stack([s.value[:n] for s in inputs]), np.stack([s.mac[:n] for s in inputs])
        )  # (row owner i, column j)
        xs = AuthShare(
            np.stack([s.value[n:] for s in inputs]), np.stack([s.mac[n:] for s in inputs])
        )  # (source j, location)
        lhs = AuthShare(
            np.broadcast_to(th.value[:, :, None], (n, n, size)), np.broadcast_to(th.mac[:, :, None], (n, n, size))
        )
        rhs = AuthShare(
            np.broadcast_to(xs.value[None], (n, n, size)), np.broadcast_to(xs.mac[None], (n, n, size))
        )
        prod = party.beaver_mul(lhs, rhs)
        z = AuthShare(ring.sum(prod.value, axis=1), ring.sum(prod.mac, axis=1))
    else:
        if theta is None or theta.n != n:
            raise ShapeMismatch("public-degree mode needs the full n x n degree matrix")
        if not np.allclose(theta.row(me), row, rtol=0, atol=1e-12):
            raise ValueError(f"party {me}: degree row disagrees with the public matrix")
        inputs = party.input(xq, [size] * n)
        xs = AuthShare(np.stack([s.value for s in inputs]), np.stack([s.mac for s in inputs]))
        qt = codec.quantize(theta.entries)[:, :, None]
        z = AuthShare(
            ring.sum(ring.mul(qt, xs.value[None]), axis=1),
            ring.sum(ring.mul(qt, xs.mac[None]), axis=1),
        )

    outputs = party.open_private([z[i] for i in range(n)])
    party.mac_check()
    mixed = outputs[me - 1].reveal(party)
    return codec.dequantize(codec.truncate(mixed)).reshape(shape)


def weave_forward_clear(party: Party, local_x: np.ndarray, theta: DegreeMatrix) -> np.ndarray:
    """Plaintext baseline: domains exchange raw activations."""
    payloads = party.exchange(MessageKind.PLAIN_ACTIVATION, _float_bytes(local_x))
    xs = [np.frombuffer(p, dtype="<f8").reshape(np.shape(local_x)) for p in payloads]
    _check_shapes(xs)
    return np.tensordot(theta.row(party.id), np.stack(xs), axes=1)


def weave_backward_exchange(party: Party, local_grad: np.ndarray, theta: DegreeMatrix) -> np.ndarray:
    """Gradient step of the unit for one domain.

    Domains exchange their upstream gradients in the clear (the joint
    objective's cross terms) and each applies its column of Theta.
    """
    payloads = party.exchange(MessageKind.GRADIENT, _float_bytes(local_grad))
    grads = [np.frombuffer(p, dtype="<f8").reshape(np.shape(local_grad)) for p in payloads]
    return weave_backward(grads, theta)[party.id - 1]
