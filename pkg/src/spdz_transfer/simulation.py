"""Run n party engines as threads inside one process."""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Any, Callable, Sequence

from .dealer import PartyPreprocessing, StreamingDealer
from .errors import ProtocolAbort
from .protocol import Party
from .ring import DEFAULT_CODEC, FixedPointCodec
from .transport import DEFAULT_TIMEOUT, InProcessNetwork


@dataclass
class PartyResult:
    party_id: int
    value: Any = None
    error: BaseException | None = None


def run_threads(parties: Sequence[Party], fn: Callable[[Party], Any]) -> list[PartyResult]:
    """Run ``fn(party)`` for every party concurrently and collect outcomes.

    A party that fails with anything other than a protocol abort broadcasts
    ABORT itself so its peers stop waiting instead of timing out.
    """
    results = [PartyResult(p.id) for p in parties]

    def body(idx: int, party: Party) -> None:
        try:
            results[idx].value = fn(party)
        except ProtocolAbort as exc:
            results[idx].error = exc
        except BaseException as exc:  # noqa: BLE001 - reported to the caller
            results[idx].error = exc
            party.abort()

    threads = [threading.Thread(target=body, args=(i, p), daemon=True) for i, p in enumerate(parties)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    return results


def first_error(results: Sequence[PartyResult]) -> BaseException | None:
    """The most informative error: a MAC failure or transport fault beats a peer abort."""
    errors = [r.error for r in results if r.error is not None]
    if not errors:
        return None
    from .errors import PeerAborted

    primary = [e for e in errors if not isinstance(e, PeerAborted)]
    return (primary or errors)[0]


def make_parties(
    n: int,
    views: Sequence[PartyPreprocessing] | None = None,
    codec: FixedPointCodec = DEFAULT_CODEC,
    seed: int = 0,
    timeout: float = DEFAULT_TIMEOUT,
    network: InProcessNetwork | None = None,
) -> list[Party]:
    """Wire ``n`` parties to a fresh in-process network.

    Without explicit ``views`` an unbounded streaming dealer seeded with
    ``seed`` supplies the preprocessing.
    """
    if views is None:
        views = StreamingDealer(n, seed, codec.ring).views()
    network = network or InProcessNetwork(n, timeout)
    return [Party(views[i], network.endpoint(i + 1), codec) for i in range(n)]


def run_protocol(
    n: int,
    fn: Callable[[Party], Any],
    views: Sequence[PartyPreprocessing] | None = None,
    codec: FixedPointCodec = DEFAULT_CODEC,
    seed: int = 0,
    timeout: float = DEFAULT_TIMEOUT,
) -> list[Any]:
    """Run ``fn`` on every party and return their results, raising the first error."""
    parties = make_parties(n, views, codec, seed, timeout)
    results = run_threads(parties, fn)
    err = first_error(results)
    if err is not None:
        raise err
    return [r.value for r in results]
