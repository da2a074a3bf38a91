"""Party-to-party messaging.

Two transports share one mailbox implementation:

* :class:`InProcessNetwork` hands out one endpoint per party inside a single
  OS process.  Delivery is immediate; receivers read by ``(round, sender,
  kind)`` key, so the observed order never depends on thread scheduling.
* :class:`TcpTransport` connects one OS process per party over plain TCP.
  Links are assumed authenticated (no TLS layer here).

TCP frame layout (big-endian)::

    length u32 | kind u8 | round u32 | sender u16 | payload

``length`` counts the payload bytes only.
"""

from __future__ import annotations

import logging
import socket
import struct
import threading
import time
from dataclasses import dataclass
from enum import IntEnum
from typing import Callable

from .errors import PeerAborted, TransportError

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 30.0

FRAME_HEADER = struct.Struct(">IBIH")


class MessageKind(IntEnum):
    SHARE_ANNOUNCE = 1
    SIGMA_ANNOUNCE = 2
    ABORT = 3
    INPUT_ANNOUNCE = 4
    GRADIENT = 5
    BARRIER = 6
    PLAIN_ACTIVATION = 7
    HELLO = 8


@dataclass(frozen=True)
class Envelope:
    round: int
    sender: int
    kind: MessageKind
    payload: bytes = b""

    def __post_init__(self):
        if len(self.payload) >= 1 << 32:
            raise ValueError("payload too large for a frame")


def encode_frame(env: Envelope) -> bytes:
    return FRAME_HEADER.pack(len(env.payload), int(env.kind), env.round, env.sender) + env.payload


def decode_frame(buf: bytes) -> tuple[Envelope, int]:
    """Parse one frame from the front of ``buf``; returns it and bytes consumed."""
    if len(buf) < FRAME_HEADER.size:
        raise ValueError("incomplete frame header")
    length, kind, rnd, sender = FRAME_HEADER.unpack_from(buf)
    end = FRAME_HEADER.size + length
    if len(buf) < end:
        raise ValueError("incomplete frame payload")
    return Envelope(rnd, sender, MessageKind(kind), bytes(buf[FRAME_HEADER.size:end])), end


class Mailbox:
    """Keyed message store with blocking lookup."""

    def __init__(self):
        self._cond = threading.Condition()
        self._messages: dict[tuple[int, int, int], bytes] = {}
        self._abort: Envelope | None = None
        self._error: str | None = None
        self._dead: dict[int, str] = {}

    def put(self, env: Envelope) -> None:
        with self._cond:
            if env.kind == MessageKind.ABORT:
                if self._abort is None:
                    self._abort = env
            else:
                key = (env.round, env.sender, int(env.kind))
                if key in self._messages:
                    self._error = f"duplicate message {key}"
                else:
                    self._messages[key] = env.payload
            self._cond.notify_all()

    def fail(self, reason: str, peer: int | None = None) -> None:
        """Fail pending and future receives: from ``peer`` only, or all of them."""
        with self._cond:
            if peer is not None:
                self._dead.setdefault(peer, reason)
            elif self._error is None:
                self._error = reason
            self._cond.notify_all()

    def take(self, round: int, sender: int, kind: MessageKind, timeout: float) -> bytes:
        key = (round, sender, int(kind))
        deadline = time.monotonic() + timeout
        with self._cond:
            while True:
                if key in self._messages:
                    return self._messages.pop(key)
                if self._abort is not None:
                    raise PeerAborted(
                        f"party {self._abort.sender} aborted in round {self._abort.round}",
                        round=self._abort.round,
                        party=self._abort.sender,
                    )
                if self._error is not None:
                    raise TransportError(self._error)
                if sender in self._dead:
                    raise TransportError(self._dead[sender])
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise TransportError(
                        f"timed out after {timeout:g}s waiting for {MessageKind(kind).name} "
                        f"from party {sender} in round {round}"
                    )
                self._cond.wait(remaining)


class Transport:
    """One party's handle on the network.

    ``outgoing_hook`` may rewrite (or drop, by returning None) each envelope
    just before it is delivered to recipient ``to``; the adversary harness
    installs it on corrupted parties.  ``incoming_hook`` observes every
    envelope delivered to this party.
    """

    def __init__(self, party_id: int, n: int, timeout: float = DEFAULT_TIMEOUT):
        self.party_id = party_id
        self.n = n
        self.timeout = timeout
        self.mailbox = Mailbox()
        self.outgoing_hook: Callable[[Envelope, int], Envelope | None] | None = None
        self.incoming_hook: Callable[[Envelope], None] | None = None
        self._send_lock = threading.Lock()

    @property
    def peers(self) -> list[int]:
        return [j for j in range(1, self.n + 1) if j != self.party_id]

    def _deliver(self, to: int, env: Envelope) -> None:
        raise NotImplementedError

    def send(self, to: int, env: Envelope) -> None:
        with self._send_lock:
            if self.outgoing_hook is not None:
                env = self.outgoing_hook(env, to)
                if env is None:
                    return
            self._deliver(to, env)

    def broadcast(self, env: Envelope) -> None:
        """Send ``env`` to every other party (one copy each)."""
        for to in self.peers:
            self.send(to, env)

    def recv(self, round: int, sender: int, kind: MessageKind, timeout: float | None = None) -> bytes:
        return self.mailbox.take(round, sender, kind, self.timeout if timeout is None else timeout)

    def exchange(self, round: int, kind: MessageKind, payload: bytes) -> list[bytes]:
        """Broadcast ``payload`` and collect everyone's payload, ordered by sender.

        With an outgoing hook installed, the party's own copy is the hook's
        rewrite addressed to itself, so a deviating party acts on what it
        claims to have sent.
        """
        env = Envelope(round, self.party_id, kind, payload)
        self.broadcast(env)
        own = payload
        if self.outgoing_hook is not None:
            claimed = self.outgoing_hook(env, self.party_id)
            own = payload if claimed is None else claimed.payload
        out = []
        for j in range(1, self.n + 1):
            out.append(own if j == self.party_id else self.recv(round, j, kind))
        return out

    def round_barrier(self, round: int) -> None:
        """Return once every party has entered ``round``."""
        self.exchange(round, MessageKind.BARRIER, b"")

    def abort(self, round: int) -> None:
        try:
            self.broadcast(Envelope(round, self.party_id, MessageKind.ABORT))
        except TransportError:
            logger.debug("party %d: failed to deliver ABORT", self.party_id)

    def _on_receive(self, env: Envelope) -> None:
        if self.incoming_hook is not None:
            self.incoming_hook(env)
        self.mailbox.put(env)

    def close(self) -> None:
        pass


class InProcessNetwork:
    """Deterministic in-memory network of ``n`` endpoints."""

    def __init__(self, n: int, timeout: float = DEFAULT_TIMEOUT):
        self.n = n
        self.endpoints = [InProcessTransport(self, i, n, timeout) for i in range(1, n + 1)]
        self._dead: set[int] = set()

    def endpoint(self, party_id: int) -> "InProcessTransport":
        return self.endpoints[party_id - 1]

    def kill(self, party_id: int) -> None:
        """Simulate a crashed party: its traffic is dropped from now on."""
        self._dead.add(party_id)

    def deliver(self, to: int, env: Envelope) -> None:
        if env.sender in self._dead or to in self._dead:
            return
        self.endpoints[to - 1]._on_receive(env)


class InProcessTransport(Transport):
    def __init__(self, network: InProcessNetwork, party_id: int, n: int, timeout: float):
        super().__init__(party_id, n, timeout)
        self.network = network

    def _deliver(self, to: int, env: Envelope) -> None:
        self.network.deliver(to, env)


def _recv_exact(sock: socket.socket, count: int) -> bytes:
    buf = bytearray()
    while len(buf) < count:
        chunk = sock.recv(count - len(buf))
        if not chunk:
            raise ConnectionError("peer closed the connection")
        buf.extend(chunk)
    return bytes(buf)


def read_frame(sock: socket.socket) -> Envelope:
    header = _recv_exact(sock, FRAME_HEADER.size)
    length, _, _, _ = FRAME_HEADER.unpack(header)
    env, _ = decode_frame(header + _recv_exact(sock, length))
    return env


class TcpTransport(Transport):
    """Full mesh of TCP links; party ``i`` dials every ``j < i`` and accepts ``j > i``.

    ``roster`` lists ``(host, port)`` for parties 1..n in order.
    """

    def __init__(self, party_id: int, roster: list[tuple[str, int]], timeout: float = DEFAULT_TIMEOUT):
        super().__init__(party_id, len(roster), timeout)
        self.roster = roster
        self._socks: dict[int, socket.socket] = {}
        self._closed = False
        host, port = roster[party_id - 1]
        self._server = socket.create_server((host, port), reuse_port=False)
        self._server.settimeout(timeout)
        self._connect()

    def _connect(self) -> None:
        deadline = time.monotonic() + self.timeout
        for j in range(1, self.party_id):
            host, port = self.roster[j - 1]
            while True:
                try:
                    sock = socket.create_connection((host, port), timeout=self.timeout)
                    break
                except OSError as exc:
                    if time.monotonic() > deadline:
                        raise TransportError(f"cannot reach party {j} at {host}:{port}: {exc}") from exc
                    time.sleep(0.05)
            sock.sendall(encode_frame(Envelope(0, self.party_id, MessageKind.HELLO)))
            self._socks[j] = sock
        expected = self.n - self.party_id
        while expected:
            try:
                sock, _ = self._server.accept()
            except socket.timeout as exc:
                raise TransportError(f"party {self.party_id}: peers did not connect in time") from exc
            sock.settimeout(self.timeout)
            hello = read_frame(sock)
            if hello.kind != MessageKind.HELLO or hello.sender <= self.party_id or hello.sender in self._socks:
                sock.close()
                raise TransportError(f"unexpected handshake from party {hello.sender}")
            self._socks[hello.sender] = sock
            expected -= 1
        for j, sock in self._socks.items():
            sock.settimeout(None)
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            threading.Thread(target=self._reader, args=(j, sock), daemon=True).start()

    def _reader(self, peer: int, sock: socket.socket) -> None:
        try:
            while True:
                env = read_frame(sock)
                if env.sender != peer:
                    self.mailbox.fail(f"party {peer} sent a frame claiming sender {env.sender}")
                    return
                self._on_receive(env)
        except (OSError, ConnectionError, ValueError) as exc:
            if not self._closed:
                self.mailbox.fail(f"link to party {peer} failed: {exc}", peer)

    def _deliver(self, to: int, env: Envelope) -> None:
        try:
            self._socks[to].sendall(encode_frame(env))
        except OSError as exc:
            raise TransportError(f"send to party {to} failed: {exc}") from exc

    def close(self) -> None:
        self._closed = True
        for sock in self._socks.values():
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            sock.close()
        self._server.close()
