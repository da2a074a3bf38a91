"""Scripted deviations by corrupted parties, and what the honest ones see.

A :class:`TamperPlan` names a strategy, the corrupted parties, and when and
by how much to deviate.  Message-level strategies are installed as transport
hooks on the corrupted parties, so the protocol code itself runs unchanged;
the triple skew is applied to the corrupted parties' preprocessing views.

:func:`run_with_adversary` classifies a run as :class:`Completed`,
:class:`Aborted` or :class:`UndetectedDeviation` (a deviation fired yet every
MAC check passed).
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Sequence

import numpy as np
from scipy import stats

from .dealer import PartyPreprocessing, StreamingDealer, TripleSlice
from .errors import ProtocolAbort
from .protocol import Party
from .ring import DEFAULT_CODEC, FixedPointCodec, Ring
from .sharing import AuthShare
from .simulation import first_error, make_parties, run_threads
from .transport import DEFAULT_TIMEOUT, Envelope, MessageKind


class Strategy(str, Enum):
    ADD_DELTA_TO_VALUE_SHARE = "AddDeltaToValueShare"
    CORRUPT_MAC_SHARE = "CorruptMacShare"
    SKEW_BEAVER_TRIPLE = "SkewBeaverTriple"
    INCONSISTENT_BROADCAST = "InconsistentBroadcast"
    HONEST_BUT_CURIOUS = "HonestButCurious"


_TAMPERED_KIND = {
    Strategy.ADD_DELTA_TO_VALUE_SHARE: MessageKind.SHARE_ANNOUNCE,
    Strategy.CORRUPT_MAC_SHARE: MessageKind.SIGMA_ANNOUNCE,
    Strategy.INCONSISTENT_BROADCAST: MessageKind.SHARE_ANNOUNCE,
}


@dataclass(frozen=True)
class TamperPlan:
    """Who deviates, how, and when.

    The deviation fires once: on the first matching message (or triple
    fetch) at or after ``trigger_round``, at element ``trigger_index`` of
    that message (reduced modulo the message length).
    """

    strategy: Strategy
    targets: tuple[int, ...] = (1,)
    delta: int = 1
    trigger_round: int = 0
    trigger_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        object.__setattr__(self, "targets", tuple(sorted(set(int(t) for t in self.targets))))
        if not self.targets:
            raise ValueError("a tamper plan needs at least one corrupted party")
        if self.trigger_round < 0 or self.trigger_index < 0:
            raise ValueError("trigger round and index must be non-negative")

    def validate(self, n: int) -> None:
        if any(t < 1 or t > n for t in self.targets):
            raise ValueError(f"tamper targets {self.targets} outside parties 1..{n}")
        if len(self.targets) >= n:
            raise ValueError(f"at most n-1 = {n - 1} parties may be corrupted, got {len(self.targets)}")

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy.value,
            "targets": list(self.targets),
            "delta": int(self.delta),
            "trigger_round": self.trigger_round,
            "trigger_index": self.trigger_index,
        }


@dataclass
class Observation:
    """One message seen by a corrupted party."""

    party: int
    round: int
    sender: int
    kind: MessageKind
    payload: bytes


@dataclass
class Injection:
    """Record of a deviation that actually fired."""

    party: int
    round: int
    kind: str
    index: int
    recipients: list[int] = field(default_factory=list)


class _MessageTamper:
    """Outgoing hook for one corrupted party."""

    def __init__(self, plan: TamperPlan, party_id: int, n: int, ring: Ring, log: list[Injection]):
        self.plan = plan
        self.party_id = party_id
        self.ring = ring
        self.kind = _TAMPERED_KIND[plan.strategy]
        self.log = log
        self.fired: Injection | None = None
        # Inconsistent broadcast lies only to the highest-numbered other party.
        self.victim = max(j for j in range(1, n + 1) if j != party_id)

    def __call__(self, env: Envelope, to: int) -> Envelope:
        if env.kind != self.kind or not env.payload:
            return env
        if self.fired is None:
            if env.round < self.plan.trigger_round:
                return env
            count = len(env.payload) // self.ring.nbytes
            self.fired = Injection(self.party_id, env.round, env.kind.name, self.plan.trigger_index % count)
            self.log.append(self.fired)
        if env.round != self.fired.round:
            return env
        if self.plan.strategy == Strategy.INCONSISTENT_BROADCAST and to != self.victim:
            return env
        if to != self.party_id:
            self.fired.recipients.append(to)
        vals = self.ring.from_bytes(env.payload).copy()
        vals[self.fired.index] = self.ring.add(vals[self.fired.index], self.ring.asarray(self.plan.delta))
        return Envelope(env.round, env.sender, env.kind, self.ring.to_bytes(vals))


class SkewedPreprocessing(PartyPreprocessing):
    """A corrupted party's view whose Beaver triple ``c`` share is shifted by delta."""

    def __init__(self, inner: PartyPreprocessing, plan: TamperPlan, log: list[Injection]):
        self.inner = inner
        self.plan = plan
        self.log = log
        self.party_id = inner.party_id
        self.n = inner.n
        self.ring = inner.ring
        self.alpha_share = inner.alpha_share
        self.check_seed = inner.check_seed
        self._fetches = 0
        self._fired = False

    def take_masks(self, owner: int, count: int):
        return self.inner.take_masks(owner, count)

    def take_triples(self, count: int) -> TripleSlice:
        t = self.inner.take_triples(count)
        fetch = self._fetches
        self._fetches += 1
        if self._fired or fetch < self.plan.trigger_round or count == 0:
            return t
        self._fired = True
        idx = self.plan.trigger_index % count
        cv = np.array(t.c.value, copy=True)
        cv[idx] = self.ring.add(cv[idx], self.ring.asarray(self.plan.delta))
        self.log.append(Injection(self.party_id, fetch, "TRIPLE", idx))
        return TripleSlice(t.indices, t.a, t.b, AuthShare(cv, t.c.mac))


@dataclass
class Completed:
    results: list[Any]
    observations: list[Observation] = field(default_factory=list)

    name = "Completed"


@dataclass
class Aborted:
    round: int
    party: int
    reason: str
    error: str = "ProtocolAbort"

    name = "Aborted"


@dataclass
class UndetectedDeviation:
    results: list[Any]
    injections: list[Injection]

    name = "UndetectedDeviation"


Outcome = Completed | Aborted | UndetectedDeviation


def install_plan(parties: Sequence[Party], plan: TamperPlan | None) -> tuple[list[Injection], list[Observation]]:
    """Attach ``plan``'s hooks to the corrupted parties; returns the live logs."""
    injections: list[Injection] = []
    observations: list[Observation] = []
    if plan is None:
        return injections, observations
    n = len(parties)
    plan.validate(n)
    lock = threading.Lock()
    for party in parties:
        if party.id not in plan.targets:
            continue
        if plan.strategy == Strategy.HONEST_BUT_CURIOUS:
            def record(env: Envelope, pid=party.id) -> None:
                with lock:
                    observations.append(Observation(pid, env.round, env.sender, env.kind, env.payload))
            party.net.incoming_hook = record
        elif plan.strategy == Strategy.SKEW_BEAVER_TRIPLE:
            party.pre = SkewedPreprocessing(party.pre, plan, injections)
        else:
            party.net.outgoing_hook = _MessageTamper(plan, party.id, n, party.ring, injections)
    return injections, observations


def classify(results, injections: list[Injection], observations: list[Observation]) -> Outcome:
    err = first_error(results)
    if err is not None:
        if isinstance(err, ProtocolAbort):
            return Aborted(err.round, err.party, str(err), type(err).__name__)
        raise err
    values = [r.value for r in results]
    if injections:
        return UndetectedDeviation(values, list(injections))
    return Completed(values, observations)


def run_with_adversary(
    plan: TamperPlan | None,
    fn: Callable[[Party], Any],
    n: int,
    seed: int = 0,
    codec: FixedPointCodec = DEFAULT_CODEC,
    block_size: int = 1 << 15,
    timeout: float = DEFAULT_TIMEOUT,
) -> Outcome:
    """Run ``fn`` on ``n`` in-process parties with ``plan``'s corruptions applied."""
    views = StreamingDealer(n, seed, codec.ring, block_size=block_size).views()
    parties = make_parties(n, views, codec, timeout=timeout)
    injections, observations = install_plan(parties, plan)
    return classify(run_threads(parties, fn), injections, observations)


def tiny_weave(size: int = 4, secret_theta: bool = False) -> Callable[[Party], np.ndarray]:
    """A minimal experiment: one weave-unit call on a small random tensor per party."""
    from .transfer import DegreeMatrix, weave_forward_secure

    def fn(party: Party) -> np.ndarray:
        theta = DegreeMatrix.uniform(party.n, 0.1)
        rng = np.random.default_rng([party.id, 0xF00D])
        x = rng.uniform(-1, 1, size)
        return weave_forward_secure(party, x, theta.row(party.id), theta, secret_theta)

    return fn


def detection_rate(
    plan: TamperPlan,
    trials: int,
    n: int = 2,
    seed: int = 0,
    experiment: Callable[[Party], Any] | None = None,
    kappa: int = 64,
) -> float:
    """Fraction of ``trials`` independent runs that end in :class:`Aborted`.

    Each trial uses a fresh dealer (fresh MAC key and check coefficients).
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    codec = DEFAULT_CODEC if kappa == 64 else FixedPointCodec(DEFAULT_CODEC.precision, Ring(kappa))
    secret = plan is not None and plan.strategy == Strategy.SKEW_BEAVER_TRIPLE
    experiment = experiment or tiny_weave(secret_theta=secret)
    aborted = 0
    for t in range(trials):
        outcome = run_with_adversary(plan, experiment, n, seed=seed * 1_000_003 + t, codec=codec, block_size=64)
        aborted += isinstance(outcome, Aborted)
    return aborted / trials


@dataclass
class PrivacyAudit:
    statistic: str
    ks_stat: float
    p_value: float
    samples: int

    def passed(self, significance: float = 0.01) -> bool:
        return self.p_value >= significance


def _observed_input(observations: list[Observation], sender: int, ring: Ring) -> np.ndarray:
    for o in observations:
        if o.kind == MessageKind.INPUT_ANNOUNCE and o.sender == sender:
            return ring.from_bytes(o.payload)
    raise LookupError(f"no input announcement from party {sender} was observed")


def _observed_opening(observations: list[Observation], sender: int, ring: Ring) -> np.ndarray:
    for o in observations:
        if o.kind == MessageKind.SHARE_ANNOUNCE and o.sender == sender:
            return ring.from_bytes(o.payload)
    raise LookupError(f"no share announcement from party {sender} was observed")


def privacy_audit(n: int = 2, samples: int = 10_000, seed: int = 0, honest: int = 1) -> list[PrivacyAudit]:
    """What n-1 curious parties see of the honest party's activations.

    Runs the weave unit twice: once with the honest party holding a fixed
    tensor, once with a random one, each with ``samples`` elements.  Every
    message the corrupted parties receive from the honest party is compared
    across the two runs with a two-sample Kolmogorov-Smirnov test on the ring
    elements scaled to [0, 1).
    """
    from .transfer import DegreeMatrix, weave_forward_secure

    corrupted = tuple(j for j in range(1, n + 1) if j != honest)
    plan = TamperPlan(Strategy.HONEST_BUT_CURIOUS, corrupted)
    theta = DegreeMatrix.uniform(n, 0.1)

    def experiment(fixed: bool):
        def fn(party: Party):
            rng = np.random.default_rng([seed, party.id, int(fixed)])
            if party.id == honest and fixed:
                x = np.full(samples, 0.5)
            else:
                x = rng.uniform(-1, 1, samples)
            return weave_forward_secure(party, x, theta.row(party.id), theta)

        return fn

    seen = {}
    for fixed in (True, False):
        outcome = run_with_adversary(plan, experiment(fixed), n, seed=seed * 2 + int(fixed))
        if not isinstance(outcome, Completed):
            raise RuntimeError(f"curious run did not complete: {outcome}")
        ring = DEFAULT_CODEC.ring
        seen[fixed] = {
            "input_announcement": _observed_input(outcome.observations, honest, ring),
            "opening_share": _observed_opening(outcome.observations, honest, ring),
        }
    audits = []
    scale = float(2**64)
    for name in seen[True]:
        a = seen[True][name].astype(np.float64) / scale
        b = seen[False][name].astype(np.float64) / scale
        res = stats.ks_2samp(a, b)
        audits.append(PrivacyAudit(name, float(res.statistic), float(res.pvalue), len(a)))
    return audits
