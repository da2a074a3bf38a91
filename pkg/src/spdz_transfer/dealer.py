"""Trusted-dealer preprocessing: MAC key, Beaver triples, and input masks.

The dealer samples the global MAC key ``alpha`` (forced odd), splits it among
the parties, and produces two kinds of correlated randomness:

* Beaver triples ``([a], [b], [c = ab])`` consumed one per multiplication.
* Input masks: for each owner party ``j``, values ``r`` known to ``j`` in the
  clear and ``[r]`` held by everyone.  They let ``j`` input a private value by
  broadcasting ``x - r``, and receive a private output by having the others
  open ``[z - r]``.

Each party sees only its own :class:`PartyPreprocessing` view.  Views either
hold fixed arrays (from :func:`deal` or a preprocessing file) or draw lazily
from a :class:`StreamingDealer` shared by all in-process parties.
"""

from __future__ import annotations

import math
from fractions import Fraction
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import TriplesExhausted
from .ring import DEFAULT_RING, Ring
from .sharing import AuthShare, decode_shares, encode_shares, share

MAGIC = b"VTLP"
VERSION = 1
_HEADER = struct.Struct("<4sBHHHQ")

_KIND_TRIPLE = 1
_KIND_MASK = 2
_KIND_KEY = 3


@dataclass(frozen=True)
class MacKeyShare:
    party_id: int
    alpha_i: np.ndarray


@dataclass(frozen=True)
class TripleSlice:
    """One party's slice of a block of consecutive Beaver triples."""

    indices: np.ndarray
    a: AuthShare
    b: AuthShare
    c: AuthShare

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class MaskSlice:
    """Shares of owner masks; ``clear`` is set only in the owner's view."""

    owner: int
    indices: np.ndarray
    shares: AuthShare
    clear: np.ndarray | None = None


@dataclass
class Demand:
    """Preprocessing material a run will consume."""

    triples: int = 0
    masks: list[int] = field(default_factory=list)

    def with_margin(self, margin: float = 0.1) -> "Demand":
        # Exact rational arithmetic: 100 * 1.1 must give 110, not 111.
        factor = 1 + Fraction(str(margin))
        return Demand(math.ceil(self.triples * factor), [math.ceil(m * factor) for m in self.masks])

    def __add__(self, other: "Demand") -> "Demand":
        width = max(len(self.masks), len(other.masks))
        pad = lambda m: list(m) + [0] * (width - len(m))  # noqa: E731
        return Demand(self.triples + other.triples, [a + b for a, b in zip(pad(self.masks), pad(other.masks))])

    def scaled(self, k: int) -> "Demand":
        return Demand(self.triples * k, [m * k for m in self.masks])


def _split(x: np.ndarray, n: int, alpha, rng, ring: Ring) -> tuple[np.ndarray, np.ndarray]:
    parts = share(x, n, alpha, rng, ring)
    return np.stack([p.value for p in parts]), np.stack([p.mac for p in parts])


def _deal_triples(count: int, n: int, alpha, rng, ring: Ring):
    a = ring.random(rng, (count,))
    b = ring.random(rng, (count,))
    c = ring.mul(a, b)
    return [_split(v, n, alpha, rng, ring) for v in (a, b, c)]


def _deal_masks(count: int, n: int, alpha, rng, ring: Ring):
    r = ring.random(rng, (count,))
    return r, _split(r, n, alpha, rng, ring)


class PartyPreprocessing:
    """A party's exclusive view of the preprocessing material.

    All parties must consume triples and masks in the same order; the views
    keep independent cursors and return slices with matching indices.
    """

    party_id: int
    n: int
    ring: Ring
    alpha_share: np.ndarray
    check_seed: int

    def take_triples(self, count: int) -> TripleSlice:
        raise NotImplementedError

    def take_masks(self, owner: int, count: int) -> MaskSlice:
        raise NotImplementedError

    def take_triple(self) -> TripleSlice:
        return self.take_triples(1)

    @property
    def mac_key(self) -> MacKeyShare:
        return MacKeyShare(self.party_id, self.alpha_share)


class StaticPreprocessing(PartyPreprocessing):
    def __init__(
        self,
        party_id: int,
        n: int,
        ring: Ring,
        alpha_share,
        check_seed: int,
        triples: tuple[AuthShare, AuthShare, AuthShare] | None = None,
        masks: dict[int, AuthShare] | None = None,
        own_masks: np.ndarray | None = None,
    ):
        self.party_id = party_id
        self.n = n
        self.ring = ring
        self.alpha_share = ring.asarray(alpha_share)
        self.check_seed = int(check_seed)
        empty = AuthShare(ring.zeros((0,)), ring.zeros((0,)))
        self.triples = triples if triples is not None else (empty, empty, empty)
        self.masks = masks if masks is not None else {j: empty for j in range(1, n + 1)}
        self.own_masks = own_masks if own_masks is not None else ring.zeros((0,))
        self._triple_cursor = 0
        self._mask_cursor = {j: 0 for j in range(1, n + 1)}

    @property
    def triples_remaining(self) -> int:
        return len(self.triples[0].value) - self._triple_cursor

    def masks_remaining(self, owner: int) -> int:
        return len(self.masks[owner].value) - self._mask_cursor[owner]

    def take_triples(self, count: int) -> TripleSlice:
        start = self._triple_cursor
        if count > self.triples_remaining:
            raise TriplesExhausted(
                f"party {self.party_id} needs {count} triples, {self.triples_remaining} left"
            )
        self._triple_cursor += count
        sl = slice(start, start + count)
        a, b, c = (t[sl] for t in self.triples)
        return TripleSlice(np.arange(start, start + count), a, b, c)

    def take_masks(self, owner: int, count: int) -> MaskSlice:
        start = self._mask_cursor[owner]
        if count > self.masks_remaining(owner):
            raise TriplesExhausted(
                f"party {self.party_id} needs {count} masks of owner {owner}, "
                f"{self.masks_remaining(owner)} left"
            )
        self._mask_cursor[owner] += count
        sl = slice(start, start + count)
        clear = self.own_masks[sl] if owner == self.party_id else None
        return MaskSlice(owner, np.arange(start, start + count), self.masks[owner][sl], clear)


@dataclass
class PreprocessingBundle:
    """Everything the dealer produced.  ``alpha`` is dealer-only knowledge."""

    n: int
    ring: Ring
    alpha: np.ndarray
    shared_randomness_seed: int
    views: list[PartyPreprocessing]

    @property
    def mac_key_shares(self) -> list[MacKeyShare]:
        return [v.mac_key for v in self.views]

    def view(self, party_id: int) -> PartyPreprocessing:
        return self.views[party_id - 1]


def _key_material(n: int, rng: np.random.Generator, ring: Ring):
    alpha = ring.random_odd(rng)
    parts = [ring.random(rng) for _ in range(n - 1)]
    last = alpha
    for p in parts:
        last = ring.sub(last, p)
    seed = int(rng.integers(0, 1 << 63))
    return alpha, parts + [last], seed


def deal(
    n: int,
    num_triples: int,
    rng: np.random.Generator,
    ring: Ring = DEFAULT_RING,
    num_masks: int | list[int] = 0,
) -> PreprocessingBundle:
    """Sample the MAC key and materialize triples and masks for ``n`` parties.

    ``num_masks`` is a per-owner count, either one int for all owners or a list.
    """
    if n < 2:
        raise ValueError(f"need at least 2 parties, got {n}")
    if num_triples < 0:
        raise ValueError("num_triples must be non-negative")
    if isinstance(num_masks, int):
        num_masks = [num_masks] * n
    alpha, alpha_shares, seed = _key_material(n, rng, ring)
    (av, am), (bv, bm), (cv, cm) = _deal_triples(num_triples, n, alpha, rng, ring)
    mask_clear, mask_shares = {}, {}
    for owner in range(1, n + 1):
        r, (rv, rm) = _deal_masks(num_masks[owner - 1], n, alpha, rng, ring)
        mask_clear[owner] = r
        mask_shares[owner] = (rv, rm)
    views = []
    for i in range(n):
        pid = i + 1
        triples = (AuthShare(av[i], am[i]), AuthShare(bv[i], bm[i]), AuthShare(cv[i], cm[i]))
        masks = {j: AuthShare(mask_shares[j][0][i], mask_shares[j][1][i]) for j in mask_shares}
        views.append(StaticPreprocessing(pid, n, ring, alpha_shares[i], seed, triples, masks, mask_clear[pid]))
    return PreprocessingBundle(n, ring, alpha, seed, views)


class StreamingDealer:
    """Lazily generated preprocessing for in-process runs.

    Material is produced in fixed-size blocks, each from its own seeded
    stream, so the result does not depend on which party asks first.  A block
    is dropped once all parties have collected their slice.  ``capacity`` caps
    the total triples/masks; ``None`` means unbounded.
    """

    def __init__(
        self,
        n: int,
        seed: int,
        ring: Ring = DEFAULT_RING,
        block_size: int = 1 << 15,
        capacity: Demand | None = None,
    ):
        if n < 2:
            raise ValueError(f"need at least 2 parties, got {n}")
        self.n = n
        self.ring = ring
        self.seed = int(seed)
        self.block_size = block_size
        self.capacity = capacity
        rng = np.random.default_rng([self.seed, _KIND_KEY])
        self.alpha, self._alpha_shares, self.check_seed = _key_material(n, rng, ring)
        self._lock = threading.Lock()
        self._blocks: dict[tuple, dict] = {}

    def view(self, party_id: int) -> "StreamingView":
        return StreamingView(self, party_id)

    def views(self) -> list["StreamingView"]:
        return [self.view(i) for i in range(1, self.n + 1)]

    def bundle(self) -> PreprocessingBundle:
        return PreprocessingBundle(self.n, self.ring, self.alpha, self.check_seed, self.views())

    def _generate(self, key: tuple) -> dict:
        kind, owner, block = key
        rng = np.random.default_rng([self.seed, kind, owner, block])
        if kind == _KIND_TRIPLE:
            return {"data": _deal_triples(self.block_size, self.n, self.alpha, rng, self.ring), "taken": set()}
        r, split = _deal_masks(self.block_size, self.n, self.alpha, rng, self.ring)
        return {"data": (r, split), "taken": set()}

    def _slice(self, key: tuple, party_id: int) -> tuple:
        with self._lock:
            entry = self._blocks.get(key)
            if entry is None:
                entry = self._blocks[key] = self._generate(key)
            if party_id in entry["taken"]:
                raise RuntimeError(f"party {party_id} fetched block {key} twice")
            entry["taken"].add(party_id)
            i = party_id - 1
            if key[0] == _KIND_TRIPLE:
                out = tuple((v[i], m[i]) for v, m in entry["data"])
            else:
                r, (rv, rm) = entry["data"]
                out = (r if party_id == key[1] else None, (rv[i], rm[i]))
            if len(entry["taken"]) == self.n:
                del self._blocks[key]
            return out


class StreamingView(PartyPreprocessing):
    def __init__(self, dealer: StreamingDealer, party_id: int):
        self.dealer = dealer
        self.party_id = party_id
        self.n = dealer.n
        self.ring = dealer.ring
        self.alpha_share = dealer._alpha_shares[party_id - 1]
        self.check_seed = dealer.check_seed
        self._triple_cursor = 0
        self._mask_cursor = {j: 0 for j in range(1, self.n + 1)}
        # Per-kind buffers of already-fetched but not yet consumed material.
        self._triple_buf: list | None = None
        self._triple_buf_start = 0
        self._mask_buf: dict[int, tuple] = {}

    def _check_capacity(self, used: int, cap: int | None, what: str):
        if cap is not None and used > cap:
            raise TriplesExhausted(f"party {self.party_id}: {what} capacity {cap} exceeded")

    def _collect(self, kind: int, owner: int, start: int, count: int):
        """Gather ``count`` items from index ``start`` across blocks."""
        bs = self.dealer.block_size
        pieces = []
        pos = start
        end = start + count
        cache = self._triple_buf if kind == _KIND_TRIPLE else self._mask_buf.get(owner)
        while pos < end:
            block = pos // bs
            if cache is None or cache[0] != block:
                cache = (block, self.dealer._slice((kind, owner, block), self.party_id))
            lo = pos - block * bs
            hi = min(end - block * bs, bs)
            pieces.append((cache[1], lo, hi))
            pos = block * bs + hi
        if kind == _KIND_TRIPLE:
            self._triple_buf = cache
        else:
            self._mask_buf[owner] = cache
        return pieces

    def take_triples(self, count: int) -> TripleSlice:
        start = self._triple_cursor
        cap = self.dealer.capacity.triples if self.dealer.capacity is not None else None
        self._check_capacity(start + count, cap, "triple")
        self._triple_cursor += count
        pieces = self._collect(_KIND_TRIPLE, 0, start, count)
        parts = []
        for k in range(3):
            v = np.concatenate([p[k][0][lo:hi] for p, lo, hi in pieces]) if pieces else self.ring.zeros((0,))
            m = np.concatenate([p[k][1][lo:hi] for p, lo, hi in pieces]) if pieces else self.ring.zeros((0,))
            parts.append(AuthShare(v, m))
        return TripleSlice(np.arange(start, start + count), *parts)

    def take_masks(self, owner: int, count: int) -> MaskSlice:
        start = self._mask_cursor[owner]
        cap = None
        if self.dealer.capacity is not None and self.dealer.capacity.masks:
            cap = self.dealer.capacity.masks[owner - 1]
        self._check_capacity(start + count, cap, f"mask (owner {owner})")
        self._mask_cursor[owner] += count
        pieces = self._collect(_KIND_MASK, owner, start, count)
        empty = self.ring.zeros((0,))
        v = np.concatenate([p[1][0][lo:hi] for p, lo, hi in pieces]) if pieces else empty
        m = np.concatenate([p[1][1][lo:hi] for p, lo, hi in pieces]) if pieces else empty
        clear = None
        if owner == self.party_id:
            clear = np.concatenate([p[0][lo:hi] for p, lo, hi in pieces]) if pieces else empty
        return MaskSlice(owner, np.arange(start, start + count), AuthShare(v, m), clear)


# -- preprocessing files ----------------------------------------------------
#
# Layout (little-endian):
#   "VTLP" | version u8 | kappa u16 | n u16 | party u16 | triple count u64
#   alpha_i (kappa/8) | check seed u64
#   triple records: a, b, c AuthShare records (value, MAC) per triple
#   for each owner 1..n: mask count u64 | mask AuthShare records
#   own clear masks (kappa/8 each, count = this party's own mask count)


def write_preprocessing(path: str | Path, view: StaticPreprocessing) -> None:
    ring = view.ring
    a, b, c = view.triples
    count = len(a.value)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, ring.kappa, view.n, view.party_id, count))
        fh.write(ring.to_bytes(view.alpha_share))
        fh.write(struct.pack("<Q", view.check_seed))
        if count:
            recs = np.empty((count, 6), dtype=ring.dtype)
            for k, s in enumerate((a, b, c)):
                recs[:, 2 * k] = s.value
                recs[:, 2 * k + 1] = s.mac
            fh.write(ring.to_bytes(recs))
        for owner in range(1, view.n + 1):
            m = view.masks[owner]
            fh.write(struct.pack("<Q", len(m.value)))
            fh.write(encode_shares(m, ring))
        fh.write(ring.to_bytes(view.own_masks))


def read_preprocessing(path: str | Path) -> StaticPreprocessing:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated preprocessing header")
    magic, version, kappa, n, party, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    ring = Ring(kappa)
    nb = ring.nbytes
    pos = _HEADER.size
    alpha_share = ring.from_bytes(data[pos:pos + nb])[0]
    pos += nb
    (seed,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    recs = ring.from_bytes(data[pos:pos + 6 * nb * count]).reshape(count, 6)
    pos += 6 * nb * count
    triples = tuple(AuthShare(recs[:, 2 * k].copy(), recs[:, 2 * k + 1].copy()) for k in range(3))
    masks = {}
    for owner in range(1, n + 1):
        (m,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        masks[owner] = decode_shares(data[pos:pos + 2 * nb * m], ring)
        pos += 2 * nb * m
    own = ring.from_bytes(data[pos:pos + nb * len(masks[party].value)])
    pos += nb * len(masks[party].value)
    if pos != len(data):
        raise ValueError(f"{path}: {len(data) - pos} trailing bytes")
    return StaticPreprocessing(party, n, ring, alpha_share, seed, triples, masks, own)
