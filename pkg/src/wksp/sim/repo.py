"""In-network storage node: joins the sync group, fetches and keeps every publication.

The repo holds no keys and no document.  It stores packets as received
(it cannot decrypt them and does not need to trust them; members validate
what they fetch) and answers Interests from that store.  When it hears a
vector that is behind the newest one it has seen, it replays that newest
vector so stale members learn what to fetch.
"""

from __future__ import annotations

from ..crdt import PublicationError, SegmentPointer, parse_envelope
from ..naming import Name, NamingError, make_data_name, make_sync_name
from ..svs import Fetcher, SvsConfig, parse_sync_params, sv_gaps, sv_merge
from ..tlv import ContentType, DataPacket, InterestPacket, TlvError, decode_data, encode_state_vector, iter_tlv
from .net import Face, Packet
from .store import PacketStore


class RepoNode:
    def __init__(self, name: str, workspace: Name, store: PacketStore | None = None, config: SvsConfig | None = None):
        self.name = name
        self.workspace = workspace
        self.sync_name = make_sync_name(workspace)
        self.store = store if store is not None else PacketStore()
        self.fetcher = Fetcher(config or SvsConfig())
        self.vector: dict[str, int] = {}
        self.face: Face | None = None
        self.replays = 0
        self._timers: set[int] = set()

    def attach(self, face: Face) -> None:
        self.face = face

    def on_online(self, online: bool) -> None:
        if online:
            self.fetcher.reissue_all(self.face.now)
            self._pump()

    def on_packet(self, packet: Packet, sender: str) -> None:
        if isinstance(packet, DataPacket):
            self.on_data(packet)
        elif packet.name == self.sync_name:
            self.on_sync_interest(packet)
        else:
            reply = self.on_interest(packet)
            if reply is not None:
                self.face.reply(sender, reply)
        self._pump()

    def _key(self, name: Name):
        ws = self.workspace
        if len(name) < len(ws) + 3 or not ws.is_prefix_of(name):
            return None
        rel = name[len(ws):]
        try:
            if len(rel) == 3 and rel[1] == b"DATA":
                return (rel.text(0), int(rel.text(2).removeprefix("seq=")))
            if len(rel) == 4 and rel[1] == b"BLOB":
                return name
        except (ValueError, NamingError):
            return None
        return None

    def on_data(self, p: DataPacket) -> bool:
        """Store a publication or segment of this sync group; True if new."""
        key = self._key(p.name)
        if key is None or not self.store.persist(p):
            return False
        self.fetcher.complete(key)
        if isinstance(key, tuple) and p.content_type == ContentType.BLOB:
            try:
                env = parse_envelope(p)
            except PublicationError:
                return True
            if isinstance(env, SegmentPointer):
                self.fetcher.enqueue([n for n in env.segment_names() if n not in self.store], self.face.now)
        return True

    def on_interest(self, interest: InterestPacket) -> DataPacket | None:
        hit = self.store.get(interest.name)
        if hit is None and interest.can_be_prefix:
            hit = self.store.highest_under(interest.name)
        return hit

    def on_sync_interest(self, interest: InterestPacket) -> InterestPacket | None:
        params = interest.app_params or b""
        parsed = parse_sync_params(params)
        if parsed is None:
            return None
        remote, end = parsed
        try:
            for el in iter_tlv(params[end:]):
                self.on_data(decode_data(el.encode()))
        except TlvError:
            pass
        self.fetcher.enqueue(
            [g for g in sv_gaps(self.vector, remote) if g not in self.fetcher.delivered], self.face.now
        )
        stale = any(v > remote.get(k, 0) for k, v in self.vector.items())
        self.vector = sv_merge(self.vector, remote)
        if not stale:
            return None
        replay = InterestPacket(self.sync_name, app_params=encode_state_vector(self.vector))
        self.replays += 1
        self.face.send(replay)
        return replay

    def _pump(self) -> None:
        if not self.face.online():
            return
        now = self.face.now
        for key in self.fetcher.due(now):
            name = key if isinstance(key, Name) else make_data_name(self.workspace, *key)
            self.face.send(InterestPacket(name))
        nxt = self.fetcher.next_deadline()
        if nxt is not None and nxt not in self._timers:
            self._timers.add(nxt)
            self.face.timer(nxt, f"{self.name}/fetch", lambda t=nxt: self._on_timer(t))

    def _on_timer(self, t: int) -> None:
        self._timers.discard(t)
        self._pump()
