"""Online phase: input, partial opening, batched MAC check, Beaver multiplication.

One :class:`Party` engine runs per party.  Every method that communicates is
a collective call: all parties must invoke the same sequence of methods with
same-shaped arguments, which keeps rounds and preprocessing cursors aligned.

Opened values are collected into a pending batch until :meth:`Party.mac_check`
verifies them in a single broadcast round.  Only values marked ``checked`` may
be used to derive results that leave the protocol layer.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from .dealer import PartyPreprocessing
from .errors import MacCheckFailed, ProtocolAbort, ShapeMismatch, TransportError
from .ring import DEFAULT_CODEC, FixedPointCodec
from .sharing import AuthShare, add_public, add_shares, mul_public, sub_shares, sum_shares
from .transport import MessageKind, Transport

logger = logging.getLogger(__name__)


@dataclass
class OpenedValue:
    """A partially opened value: the sum of every party's announced share."""

    value: np.ndarray
    provenance: np.ndarray  # announced shares, leading axis = party
    checked: bool = False

    def require_checked(self) -> np.ndarray:
        if not self.checked:
            raise RuntimeError("opened value used before its MAC check")
        return self.value


@dataclass
class Transcript:
    """Append-only log of every message a party sent or received."""

    entries: list[tuple[int, int, str, str]] = field(default_factory=list)

    def record(self, round: int, sender: int, kind: MessageKind, payload: bytes) -> None:
        self.entries.append((round, sender, kind.name, hashlib.sha256(payload).hexdigest()[:16]))

    def to_bytes(self) -> bytes:
        return "".join(f"{r}\t{s}\t{k}\t{d}\n" for r, s, k, d in self.entries).encode()

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


@dataclass
class PrivateOutput:
    """Output opened to ``owner`` through a mask only the owner knows."""

    owner: int
    masked: OpenedValue
    mask: np.ndarray | None

    def reveal(self, party: "Party") -> np.ndarray:
        if party.id != self.owner:
            raise PermissionError(f"party {party.id} is not the owner of this output")
        return party.ring.add(self.masked.require_checked(), self.mask)


class Party:
    def __init__(
        self,
        pre: PartyPreprocessing,
        transport: Transport,
        codec: FixedPointCodec = DEFAULT_CODEC,
    ):
        if pre.party_id != transport.party_id:
            raise ValueError("preprocessing and transport belong to different parties")
        if pre.ring != codec.ring:
            raise ValueError("codec ring differs from the preprocessing ring")
        self.pre = pre
        self.net = transport
        self.codec = codec
        self.ring = codec.ring
        self.id = pre.party_id
        self.n = pre.n
        self.alpha_i = pre.alpha_share
        self.round = 0
        self.transcript = Transcript()
        self._pending: list[tuple[OpenedValue, np.ndarray]] = []
        self._checks = 0

    # -- communication ----------------------------------------------------

    def _next_round(self) -> int:
        self.round += 1
        return self.round

    def exchange(self, kind: MessageKind, payload: bytes) -> list[bytes]:
        """Broadcast ``payload`` and return all payloads ordered by sender id."""
        rnd = self._next_round()
        payloads = self.net.exchange(rnd, kind, payload)
        for sender, p in enumerate(payloads, start=1):
            self.transcript.record(rnd, sender, kind, p)
        return payloads

    def barrier(self) -> None:
        self.net.round_barrier(self._next_round())

    def abort(self) -> None:
        self.net.abort(self.round)

    # -- inputs -------------------------------------------------------------

    def input(self, my_values, counts: list[int]) -> list[AuthShare]:
        """Every party inputs a private vector in one round.

        ``counts[j-1]`` is the public length of party ``j``'s input; ``my_values``
        are this party's ring-encoded values (length ``counts[self.id-1]``).
        Returns authenticated shares of each party's input, in party order.
        """
        masks = [self.pre.take_masks(j, counts[j - 1]) for j in range(1, self.n + 1)]
        mine = masks[self.id - 1]
        x = self.ring.asarray(np.ravel(my_values))
        if x.size != counts[self.id - 1]:
            raise ValueError(f"party {self.id} input has {x.size} elements, expected {counts[self.id - 1]}")
        eps = self.ring.sub(x, mine.clear)
        payloads = self.exchange(MessageKind.INPUT_ANNOUNCE, self.ring.to_bytes(eps))
        out = []
        for j, (m, p) in enumerate(zip(masks, payloads), start=1):
            eps_j = self.ring.from_bytes(p)
            if eps_j.size != counts[j - 1]:
                raise ShapeMismatch(f"party {j} announced {eps_j.size} inputs, expected {counts[j - 1]}")
            out.append(add_public(m.shares, eps_j, self.alpha_i, self.id, self.ring))
        return out

    # -- opening and checking ----------------------------------------------

    def partial_open(self, x: AuthShare) -> OpenedValue:
        """Announce value shares and sum them; MAC shares stay pending."""
        shape = np.shape(x.value)
        payloads = self.exchange(MessageKind.SHARE_ANNOUNCE, self.ring.to_bytes(x.value))
        shares = []
        for j, p in enumerate(payloads, start=1):
            s = self.ring.from_bytes(p)
            if s.size != int(np.prod(shape)):
                raise TransportError(f"party {j} announced {s.size} shares, expected {int(np.prod(shape))}")
            shares.append(s.reshape(shape))
        provenance = np.stack(shares)
        opened = OpenedValue(self.ring.sum(provenance, axis=0), provenance)
        self._pending.append((opened, self.ring.asarray(x.mac)))
        return opened

    @property
    def unchecked(self) -> int:
        return sum(int(np.size(o.value)) for o, _ in self._pending)

    def check_vector(self, size: int) -> np.ndarray:
        """The agreed random coefficients for the next MAC check.

        Derived by every party from the dealer's shared seed and a check
        counter through the counter-based Philox generator.
        """
        ss = np.random.SeedSequence([self.pre.check_seed, self._checks])
        rng = np.random.Generator(np.random.Philox(ss))
        return self.ring.random(rng, (size,))

    def mac_check(self) -> None:
        """Verify every pending opened value in one broadcast round.

        Raises MacCheckFailed (after broadcasting ABORT) when the sigma shares
        do not sum to zero.
        """
        if not self._pending:
            return
        ring = self.ring
        values = np.concatenate([np.ravel(o.value) for o, _ in self._pending])
        macs = np.concatenate([np.ravel(m) for _, m in self._pending])
        r = self.check_vector(values.size)
        self._checks += 1
        c = ring.dot(r, values)
        gamma_c = ring.dot(r, macs)
        sigma = ring.sub(gamma_c, ring.mul(self.alpha_i, c))
        payloads = self.exchange(MessageKind.SIGMA_ANNOUNCE, ring.to_bytes(sigma))
        total = ring.sum(np.stack([ring.from_bytes(p)[0] for p in payloads]))
        pending, self._pending = self._pending, []
        if int(total) != 0:
            self.abort()
            raise MacCheckFailed(
                f"party {self.id}: MAC check failed in round {self.round}", round=self.round, party=self.id
            )
        for opened, _ in pending:
            opened.checked = True

    # -- arithmetic ---------------------------------------------------------

    def add_public(self, x: AuthShare, c) -> AuthShare:
        return add_public(x, c, self.alpha_i, self.id, self.ring)

    def beaver_mul(self, x: AuthShare, y: AuthShare) -> AuthShare:
        """Elementwise product of two shared arrays, one triple per element.

        mu = x - a and nu = y - b are opened together in one round and join
        the pending MAC-check batch.
        """
        ring = self.ring
        shape = np.shape(x.value)
        if np.shape(y.value) != shape:
            raise ValueError(f"operand shapes differ: {shape} vs {np.shape(y.value)}")
        size = int(np.prod(shape))
        t = self.pre.take_triples(size)
        x, y = x.ravel(), y.ravel()
        mu_nu = AuthShare(
            np.concatenate([ring.sub(x.value, t.a.value), ring.sub(y.value, t.b.value)]),
            np.concatenate([ring.sub(x.mac, t.a.mac), ring.sub(y.mac, t.b.mac)]),
        )
        opened = self.partial_open(mu_nu)
        mu, nu = opened.value[:size], opened.value[size:]
        z = add_shares(t.c, mul_public(t.b, mu, ring), ring)
        z = add_shares(z, mul_public(t.a, nu, ring), ring)
        z = self.add_public(z, ring.mul(mu, nu))
        return z.reshape(shape)

    def vector_mul(self, theta: AuthShare, v: AuthShare) -> OpenedValue:
        """Opened, MAC-checked, truncated dot product over the leading axis.

        ``theta`` and ``v`` are fixed-point encodings at scale 2^p with shape
        ``(n, ...)``; the result has the trailing shape and scale 2^p.
        """
        if np.shape(theta.value) != np.shape(v.value):
            raise ValueError("theta and v must have the same shape")
        prod = self.beaver_mul(theta, v)
        z = self.partial_open(sum_shares(prod, axis=0, ring=self.ring))
        self.mac_check()
        return OpenedValue(self.codec.truncate(z.require_checked()), z.provenance, checked=True)

    def open_private(self, outputs: list[AuthShare]) -> list[PrivateOutput]:
        """Open ``outputs[j-1]`` to party ``j`` only, all in one round.

        Each output is masked with a preprocessed mask owned by its recipient;
        the masked values are opened publicly and join the MAC-check batch.
        """
        masks = [self.pre.take_masks(j, int(np.size(o.value))) for j, o in enumerate(outputs, start=1)]
        masked = [sub_shares(o.ravel(), m.shares, self.ring) for o, m in zip(outputs, masks)]
        sizes = [int(np.size(o.value)) for o in outputs]
        joint = self.partial_open(
            AuthShare(np.concatenate([m.value for m in masked]), np.concatenate([m.mac for m in masked]))
        )
        out = []
        start = 0
        for j, (size, m, o) in enumerate(zip(sizes, masks, outputs), start=1):
            part = _SliceView(joint, slice(start, start + size), np.shape(o.value))
            out.append(PrivateOutput(j, part, None if m.clear is None else m.clear.reshape(np.shape(o.value))))
            start += size
        return out


class _SliceView:
    """A window onto a larger opened batch that shares its checked flag."""

    def __init__(self, parent: OpenedValue, sl: slice, shape):
        self._parent = parent
        self._sl = sl
        self._shape = shape

    @property
    def value(self) -> np.ndarray:
        return self._parent.value[self._sl].reshape(self._shape)

    @property
    def provenance(self) -> np.ndarray:
        return self._parent.provenance[:, self._sl]

    @property
    def checked(self) -> bool:
        return self._parent.checked

    def require_checked(self) -> np.ndarray:
        self._parent.require_checked()
        return self.value


__all__ = [
    "OpenedValue",
    "Party",
    "PrivateOutput",
    "ProtocolAbort",
    "Transcript",
]
