"""Deterministic discrete-event network: one multicast bus plus unicast replies.

Virtual time is integer milliseconds.  Every random decision (loss, jitter in
the nodes) draws from rngs seeded by the scenario, and simultaneous events run
in scheduling order, so a run is a pure function of its inputs.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Protocol, Sequence, TextIO, Union

from ..tlv import DataPacket, InterestPacket, decode_packet, encode_data, encode_interest

Packet = Union[InterestPacket, DataPacket]


class Node(Protocol):
    name: str

    def on_packet(self, packet: Packet, sender: str) -> None: ...

    def on_online(self, online: bool) -> None: ...


@dataclass(frozen=True)
class Partition:
    start: int
    end: int
    groups: tuple[frozenset[str], ...]

    def separates(self, a: str, b: str, t: int) -> bool:
        if not self.start <= t < self.end:
            return False
        ga = next((i for i, g in enumerate(self.groups) if a in g), None)
        gb = next((i for i, g in enumerate(self.groups) if b in g), None)
        return ga is not None and gb is not None and ga != gb


@dataclass
class LinkConfig:
    delay_ms: int = 50
    loss_prob: float = 0.0


@dataclass
class _Attachment:
    node: Node
    router: str
    online: list[tuple[int, int]] | None  # None = always online

    def is_online(self, t: int) -> bool:
        return self.online is None or any(a <= t < b for a, b in self.online)


def encode_packet(p: Packet) -> bytes:
    return encode_data(p) if isinstance(p, DataPacket) else encode_interest(p)


class Face:
    """A node's handle on the network."""

    def __init__(self, net: "SimNet", owner: str):
        self.net = net
        self.owner = owner

    @property
    def now(self) -> int:
        return self.net.now

    def send(self, packet: Packet) -> None:
        """Multicast to every other node."""
        self.net.multicast(self.owner, packet)

    def reply(self, dst: str, packet: Packet) -> None:
        self.net.unicast(self.owner, dst, packet)

    def timer(self, at: int, label: str, fn: Callable[[], None]) -> None:
        self.net.schedule(at, self.owner, label, fn)

    def online(self) -> bool:
        return self.net.is_online(self.owner, self.net.now)


@dataclass(order=True)
class _Event:
    t: int
    seq: int
    owner: str = field(compare=False)
    kind: str = field(compare=False)
    label: str = field(compare=False)
    action: Callable[[], None] = field(compare=False)


class SimNet:
    def __init__(
        self,
        seed: int = 0,
        link: LinkConfig | None = None,
        partitions: Iterable[Partition] = (),
        log: TextIO | None = None,
    ):
        self.now = 0
        self.rng = random.Random(seed)
        self.link = link or LinkConfig()
        self.partitions = list(partitions)
        self.nodes: dict[str, _Attachment] = {}
        self._heap: list[_Event] = []
        self._seq = 0
        self.log_lines: list[str] = []
        self._log = log
        self.sent = 0
        self.dropped = 0

    # -- topology -------------------------------------------------------------

    def attach(self, node: Node, router: str = "r0", online: Sequence[tuple[int, int]] | None = None) -> Face:
        if node.name in self.nodes:
            raise ValueError(f"duplicate node {node.name}")
        spans = None if online is None else sorted((int(a), int(b)) for a, b in online)
        self.nodes[node.name] = _Attachment(node, router, spans)
        if spans is not None:
            for a, b in spans:
                self.schedule(a, node.name, "ONLINE", lambda n=node: n.on_online(True))
                self.schedule(b, node.name, "OFFLINE", lambda n=node: n.on_online(False))
        return Face(self, node.name)

    def is_online(self, name: str, t: int) -> bool:
        return self.nodes[name].is_online(t)

    def delay(self, a: str, b: str) -> int:
        """One hop within a router, two hops through the rendezvous link across routers."""
        same = self.nodes[a].router == self.nodes[b].router
        return self.link.delay_ms * (1 if same else 2)

    def connected(self, a: str, b: str, t: int) -> bool:
        return not any(p.separates(a, b, t) for p in self.partitions)

    # -- events ---------------------------------------------------------------

    def _push(self, t: int, owner: str, kind: str, label: str, action: Callable[[], None]) -> None:
        if t < self.now:
            t = self.now
        self._seq += 1
        heapq.heappush(self._heap, _Event(t, self._seq, owner, kind, label, action))

    def schedule(self, at: int, owner: str, label: str, fn: Callable[[], None]) -> None:
        self._push(at, owner, "TIMER", label, fn)

    def _emit(self, owner: str, kind: str, label: str) -> None:
        line = f"{self.now} {owner} {kind} {label}"
        self.log_lines.append(line)
        if self._log is not None:
            self._log.write(line + "\n")

    def _transmit(self, src: str, dst: str, wire: bytes, label: str) -> None:
        if self.link.loss_prob > 0 and self.rng.random() < self.link.loss_prob:
            self.dropped += 1
            self._emit(dst, "DROP", label)
            return
        if not self.connected(src, dst, self.now):
            self.dropped += 1
            self._emit(dst, "DROP", label)
            return

        def deliver() -> None:
            if not self.is_online(dst, self.now):
                self.dropped += 1
                self._emit(dst, "DROP", label)
                return
            self._emit(dst, "RECV", label)
            self.nodes[dst].node.on_packet(decode_packet(wire), src)

        self._push(self.now + self.delay(src, dst), dst, "DELIVER", label, deliver)

    def _send(self, src: str, dsts: list[str], packet: Packet) -> None:
        label = str(packet.name)
        if not self.is_online(src, self.now):
            self._emit(src, "DROP", label)
            self.dropped += 1
            return
        wire = encode_packet(packet)
        self.sent += 1
        self._emit(src, "SEND", label)
        for dst in dsts:
            self._transmit(src, dst, wire, label)

    def multicast(self, src: str, packet: Packet) -> None:
        self._send(src, [n for n in self.nodes if n != src], packet)

    def unicast(self, src: str, dst: str, packet: Packet) -> None:
        self._send(src, [dst], packet)

    def step(self) -> bool:
        """Process the next event; False when nothing is scheduled."""
        if not self._heap:
            return False
        ev = heapq.heappop(self._heap)
        self.now = ev.t
        if ev.kind == "TIMER":
            self._emit(ev.owner, "TIMER", ev.label)
        ev.action()
        return True

    def run(self, until: int | None = None) -> None:
        while self._heap and (until is None or self._heap[0].t <= until):
            self.step()
        if until is not None and until > self.now:
            self.now = until

    def pending_events(self) -> int:
        return len(self._heap)
