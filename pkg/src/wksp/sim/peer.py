"""A workspace member running on the simulated network.

Receive path: every Data packet lands in an inbox, is verified against the
certificate chain and trust rules, and is then held until its publisher is
known to have been a member at publication time.  Only then is it persisted
and applied.  Publications that never become acceptable stay held, so the
outcome does not depend on arrival order.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Hashable

from ..crdt import (
    BlobRef,
    CorruptBlob,
    Delta,
    Document,
    Incomplete,
    PublicationError,
    Publisher,
    SegmentPointer,
    decode_payload,
    encode_blob,
    encode_delta,
    open_publication,
    parse_envelope,
    snapshot_digest,
)
from ..membership import (
    Invitation,
    MembershipError,
    MembershipModel,
    MemberState,
    Status,
    WorkspaceInstance,
    bootstrap_initiator,
    bootstrap_member,
    parse_invitation,
    record_invitation,
    validate_invitation,
)
from ..naming import Name, NamingError, make_blob_name, make_data_name
from ..security import AuthFailure, Certificate, CertError, KeyPair, Validator, VerifyResult, sign_data, verify_data
from ..svs import Fetcher, SvsConfig, SvsState, parse_sync_params
from ..tlv import ContentType, DataPacket, InterestPacket, SigInfo, TlvError, decode_data, encode_data, iter_tlv
from .net import Face, Packet
from .store import PacketStore

FetchKey = Hashable  # (producer, seq) for publications, a Name for blob segments


@dataclass
class PeerConfig:
    svs: SvsConfig = field(default_factory=SvsConfig)
    batch_ms: int = 500
    max_payload: int = 8800
    enforce_own_expiry: bool = True


@dataclass
class _Inbound:
    packet: DataPacket
    verified: bool = False


@dataclass(frozen=True)
class Violation:
    t: int
    name: Name
    reason: str


DeliveryHook = Callable[["Peer", DataPacket, Delta], None]


class Peer:
    def __init__(
        self,
        username: str,
        personal_key: KeyPair,
        domain_cert: Certificate,
        config: PeerConfig | None = None,
        seed: int = 0,
        store: PacketStore | None = None,
        on_delivery: DeliveryHook | None = None,
    ):
        self.name = username
        self.personal_key = personal_key
        self.domain_cert = domain_cert
        self.config = config or PeerConfig()
        self.seed = seed
        self.rng = random.Random(f"{seed}/{username}")
        self.store = store if store is not None else PacketStore()
        self.on_delivery = on_delivery
        self.face: Face | None = None
        self.instance: WorkspaceInstance | None = None
        self.member: MemberState | None = None
        self.violations: list[Violation] = []
        self.refused_edits = 0
        self._boot_time = 0
        self._reset_volatile()

    def _reset_volatile(self) -> None:
        self.validator: Validator | None = None
        self.svs: SvsState | None = None
        self.fetcher = Fetcher(self.config.svs)
        self.doc = Document(self.name)
        self.inbox: dict[Name, _Inbound] = {}
        self.segments: dict[Name, DataPacket] = {}
        self.awaiting: dict[Name, tuple[DataPacket, SegmentPointer]] = {}
        self.blobs: dict[Name, bytes] = {}
        self._batch: Delta | None = None
        self._flush_at: int | None = None
        self._steady_timer: int | None = None
        self._reply_timer: int | None = None
        self._fetch_timers: set[int] = set()

    # -- plumbing -------------------------------------------------------------

    @property
    def now(self) -> int:
        return self.face.now if self.face else 0

    @property
    def joined(self) -> bool:
        return self.member is not None

    @property
    def workspace(self) -> Name:
        assert self.member is not None
        return self.member.workspace

    def attach(self, face: Face) -> None:
        self.face = face

    def _online(self) -> bool:
        return self.face is not None and self.face.online()

    def _nonce(self, n: int) -> bytes:
        return self.rng.randbytes(n)

    def _violation(self, name: Name, reason: str) -> None:
        self.violations.append(Violation(self.now, name, reason))

    def status(self) -> Status:
        return self.member.status(self.now) if self.member else Status.UNKNOWN

    def digest(self) -> str:
        return snapshot_digest(self.doc)

    # -- joining --------------------------------------------------------------

    def start_as_initiator(self, instance: WorkspaceInstance) -> None:
        self.instance = instance
        self._boot_time = self.now
        self.member = bootstrap_initiator(instance, self.name, self.personal_key, self.now)
        self.store.set_anchor(self.domain_cert.packet)
        self._init_workspace()
        self._announce()

    def accept_invitation(self, inv: Invitation) -> None:
        """Out-of-band delivery: join on the first invitation, extend membership on later ones."""
        if self.member is None:
            self.member = bootstrap_member(self.name, self.personal_key, inv, self.domain_cert, self.now)
            self.store.set_anchor(self.domain_cert.packet)
            self.store.persist(inv.packet)
            self._init_workspace()
            self._announce()
            return
        self._record_own_invitation(inv)
        self.store.persist(inv.packet)

    def _record_own_invitation(self, inv: Invitation) -> None:
        assert self.member is not None
        if inv.invitee != self.name or inv.invitee_cert.public_key != self.personal_key.public_key:
            raise MembershipError(f"{inv.name} is not addressed to {self.name}")
        validate_invitation(inv, self.domain_cert, inv.not_before)
        assert self.validator is not None
        self.validator.admit(inv.certificates())
        record_invitation(self.member.records, inv)

    def _init_workspace(self) -> None:
        m = self.member
        assert m is not None
        self.validator = Validator(m.schema, [self.domain_cert])
        certs = m.certificates()
        if m.invitation is not None:
            certs += m.invitation.certificates()
        self.validator.admit(certs)
        self.svs = SvsState(m.workspace, self.config.svs, self.rng)
        self.publisher = Publisher(
            m.workspace, self.name, m.workspace_identity.keypair, m.workspace_identity.cert_name, m.group_key
        )
        self._arm_steady(self.svs.reset_steady(self.now))

    def _announce(self) -> None:
        """First publication: the certificates others need to validate ours."""
        content = b"".join(encode_data(c.packet) for c in self.member.certificates())
        self._publish(lambda seq: [self._signed(seq, content, ContentType.KEY)])

    def _signed(self, seq: int, content: bytes, ctype: ContentType) -> DataPacket:
        name = make_data_name(self.workspace, self.name, seq)
        pkt = DataPacket(name, content, ctype, SigInfo(self.publisher.cert_name, self.now, self.now + 10 * 365 * 86_400_000))
        return sign_data(pkt, self.publisher.keypair, self.publisher.cert_name)

    # -- publishing -----------------------------------------------------------

    def _publish(self, build: Callable[[int], list[DataPacket]]) -> int:
        assert self.svs is not None
        seq = self.svs.publish(self.name)
        packets = build(seq)
        for p in packets:
            self.store.persist(p)
        self.fetcher.complete((self.name, seq))
        wire = b"".join(encode_data(p) for p in packets)
        self._send_sync(wire if len(wire) <= self.config.max_payload else b"")
        return seq

    def publish_invitation(self, inv: Invitation) -> int:
        return self._publish(lambda seq: [self._signed(seq, encode_data(inv.packet), ContentType.INVITE)])

    def may_edit(self) -> bool:
        if self.member is None:
            return False
        if self.config.enforce_own_expiry and self.status() is not Status.ACTIVE:
            self.refused_edits += 1
            return False
        return True

    def edit(self, op: str, path: str, pos: int = 0, text: str = "", count: int = 0, data: bytes = b"") -> bool:
        """Apply one local edit and queue it for publication; False if refused."""
        if not self.may_edit():
            return False
        d = self.doc
        if op == "insert":
            delta = d.local_insert(path, pos, text)
        elif op == "delete":
            delta = d.local_delete(path, pos, count)
        elif op == "mkdir":
            delta = d.mkdir(path, parents=True)
        elif op == "create":
            parent = path.rstrip("/").rpartition("/")[0]
            delta = d.mkdir(parent, parents=True) if parent else Delta(())
            delta = delta.merged(d.create_file(path))
        elif op == "blob":
            ref = self._publish_blob(data)
            parent = path.rstrip("/").rpartition("/")[0]
            delta = d.mkdir(parent, parents=True) if parent else Delta(())
            delta = delta.merged(d.attach_blob(path, ref))
        else:
            raise ValueError(f"unknown edit op {op!r}")
        self._queue(delta)
        return True

    def _publish_blob(self, data: bytes) -> BlobRef:
        holder: list[BlobRef] = []

        def build(seq: int) -> list[DataPacket]:
            packets, ref = encode_blob(data, self.publisher, seq, self.now, self.config.max_payload, self._nonce)
            holder.append(ref)
            return packets

        self._publish(build)
        self.blobs[holder[0].object_name] = data
        return holder[0]

    def _queue(self, delta: Delta) -> None:
        if not delta.ops:
            return
        self._batch = delta if self._batch is None else self._batch.merged(delta)
        if self.config.batch_ms <= 0:
            self.flush()
        elif self._flush_at is None:
            self._flush_at = self.now + self.config.batch_ms
            self.face.timer(self._flush_at, f"{self.name}/flush", self._on_flush)

    def _on_flush(self) -> None:
        self._flush_at = None
        self.flush()

    def flush(self) -> None:
        batch, self._batch = self._batch, None
        if batch is None or not batch.ops:
            return
        self._publish(lambda seq: encode_delta(batch, self.publisher, seq, self.now, self.config.max_payload, self._nonce))

    # -- sync -----------------------------------------------------------------

    def _send_sync(self, piggyback: bytes = b"") -> None:
        assert self.svs is not None
        if self._online():
            self.face.send(self.svs.sync_interest(piggyback))
        self.svs.sent_sync(self.now)
        self._arm_steady(self.svs.steady_at)

    def _arm_steady(self, at: int) -> None:
        if self._steady_timer is not None and self._steady_timer <= at:
            return  # the outstanding timer re-arms itself when it fires early
        self._steady_timer = at
        self.face.timer(at, f"{self.name}/steady", self._on_steady)

    def _on_steady(self) -> None:
        self._steady_timer = None
        if self.svs is None:
            return
        if self.svs.steady_due(self.now):
            self._send_sync()
        else:
            self._arm_steady(self.svs.steady_at)

    def _arm_reply(self, at: int | None) -> None:
        if at is None or self._reply_timer == at:
            return
        self._reply_timer = at
        self.face.timer(at, f"{self.name}/reply", self._on_reply)

    def _on_reply(self) -> None:
        self._reply_timer = None
        if self.svs is not None and self.svs.reply_due(self.now):
            self._send_sync()

    def _fetch_name(self, key: FetchKey) -> Name:
        if isinstance(key, Name):
            return key
        user, seq = key
        return make_data_name(self.workspace, user, seq)

    def _pump(self) -> None:
        if self._online():
            for key in self.fetcher.due(self.now):
                self.face.send(InterestPacket(self._fetch_name(key)))
        nxt = self.fetcher.next_deadline()
        if nxt is not None and nxt not in self._fetch_timers:
            if self._online() or nxt > self.now:
                self._fetch_timers.add(nxt)
                self.face.timer(nxt, f"{self.name}/fetch", lambda t=nxt: self._on_fetch_timer(t))

    def _on_fetch_timer(self, t: int) -> None:
        self._fetch_timers.discard(t)
        if self.svs is not None:
            self._pump()

    def on_online(self, online: bool) -> None:
        if not online or self.svs is None:
            return
        self.fetcher.reissue_all(self.now)
        self._send_sync()
        self._pump()

    # -- receive path ---------------------------------------------------------

    def on_packet(self, packet: Packet, sender: str) -> None:
        if self.member is None:
            return
        if isinstance(packet, DataPacket):
            self.ingest(packet)
            self._pump()
            return
        if packet.name == self.svs.sync_name:
            self._on_sync(packet)
            return
        hit = self.store.get(packet.name)
        if hit is None and packet.can_be_prefix:
            hit = self.store.highest_under(packet.name)
        if hit is not None and self.workspace.is_prefix_of(hit.name):
            self.face.reply(sender, hit)

    def _on_sync(self, interest: InterestPacket) -> None:
        params = interest.app_params or b""
        parsed = parse_sync_params(params)
        if parsed is None:
            self.svs.malformed += 1
            return
        vector, end = parsed
        try:
            carried = [decode_data(el.encode()) for el in iter_tlv(params[end:])]
        except TlvError:
            carried = []
        for p in carried:
            self.ingest(p)
        outcome = self.svs.on_sync_vector(vector, self.now)
        self.fetcher.enqueue(outcome.gaps, self.now)
        self._arm_reply(outcome.reply_at)
        self._pump()

    def _classify(self, name: Name) -> FetchKey | None:
        ws = self.workspace
        if len(name) < len(ws) + 3 or not ws.is_prefix_of(name):
            return None
        rel = name[len(ws):]
        try:
            if len(rel) == 3 and rel[1] == b"DATA" and rel.text(2).startswith("seq="):
                return (rel.text(0), int(rel.text(2)[4:]))
            if len(rel) == 4 and rel[1] == b"BLOB" and rel.text(3).startswith("seg="):
                return name
        except (ValueError, NamingError):
            return None
        return None

    def ingest(self, p: DataPacket) -> None:
        key = self._classify(p.name)
        if key is None or p.name in self.store:
            return
        if isinstance(key, Name):
            if p.name not in self.segments:
                self.segments[p.name] = p
                self.fetcher.complete(key)
                self._try_segments()
            return
        if p.name in self.inbox:
            return
        self.inbox[p.name] = _Inbound(p)
        self.fetcher.complete(key)
        self._process()

    def _reject(self, name: Name, reason: str, refetch: FetchKey | None = None) -> None:
        self._violation(name, reason)
        if refetch is not None:
            self.fetcher.delivered.discard(refetch)
            self.fetcher.enqueue([refetch], self.now + self.config.svs.retry_base_ms)

    def covered(self, user: str, t: int) -> bool:
        m = self.member
        if user == m.policy.initiator:
            return True
        rec = m.records.get(user)
        return rec is not None and rec.covers(t)

    def _admit_announced(self, p: DataPacket) -> None:
        certs = []
        try:
            for el in iter_tlv(p.content):
                try:
                    certs.append(Certificate(decode_data(el.encode())))
                except (CertError, TlvError):
                    continue
        except TlvError:
            return
        self.validator.admit(certs)

    def _process(self) -> None:
        progress = True
        while progress:
            progress = False
            for name in sorted(self.inbox):
                entry = self.inbox[name]
                p = entry.packet
                user, seq = self._classify(name)
                if not entry.verified:
                    if p.content_type == ContentType.KEY:
                        self._admit_announced(p)
                    verdict = self.validator.validate(p, self.now)
                    if verdict.verify is VerifyResult.UNKNOWN_CERT:
                        continue
                    if not verdict:
                        del self.inbox[name]
                        self._reject(name, verdict.reason, (user, seq))
                        continue
                    entry.verified = True
                if not self.covered(user, p.sig_info.not_before):
                    continue
                del self.inbox[name]
                self.store.persist(p)
                if self._deliver(p, user):
                    progress = True

    def held(self) -> list[Name]:
        """Verified publications waiting on (or refused for lack of) membership."""
        return sorted(n for n, e in self.inbox.items() if e.verified)

    def _deliver(self, p: DataPacket, user: str) -> bool:
        """Apply an accepted publication; True if trust or membership state changed."""
        ct = p.content_type
        if ct == ContentType.KEY:
            return False
        if ct == ContentType.INVITE:
            return self._on_invitation(p, user)
        try:
            env = parse_envelope(p)
        except PublicationError as e:
            self._violation(p.name, str(e))
            return False
        if isinstance(env, SegmentPointer):
            self.awaiting[p.name] = (p, env)
            self.fetcher.enqueue([n for n in env.segment_names() if n not in self.segments], self.now)
            self._try_segments()
            return False
        self._open(p)
        return False

    def _on_invitation(self, p: DataPacket, publisher: str) -> bool:
        m = self.member
        try:
            inv = parse_invitation(decode_data(p.content))
            if inv.workspace != m.workspace or inv.inviter != publisher:
                raise MembershipError("invitation published outside its inviter's namespace")
            if m.model is MembershipModel.INITIATOR_ONLY and inv.inviter != m.policy.initiator:
                raise MembershipError(f"{inv.inviter} may not invite under the initiator-only model")
            if not self.covered(inv.inviter, inv.not_before):
                raise MembershipError(f"{inv.inviter} was not a member when inviting")
            validate_invitation(inv, self.domain_cert, inv.not_before)
            # the carried policy is the inviter's claim; judge the packet by ours as well
            self.validator.admit(inv.certificates())
            verdict = self.validator.validate(inv.packet, inv.not_before)
            if not verdict:
                raise MembershipError(verdict.reason)
        except (MembershipError, TlvError, CertError) as e:
            self._violation(p.name, f"invitation refused: {e}")
            return False
        record_invitation(m.records, inv)
        return True

    def _try_segments(self) -> None:
        for name in sorted(self.awaiting):
            p, env = self.awaiting[name]
            names = env.segment_names()
            if not all(n in self.segments or n in self.store for n in names):
                continue
            segs = {n: self.segments.get(n) or self.store.get(n) for n in names}
            bad = [
                n
                for n, s in segs.items()
                if s.sig_info.key_locator != p.sig_info.key_locator
                or verify_data(s, self.validator.store, self.now) is not VerifyResult.OK
            ]
            if bad:
                for n in bad:
                    self.segments.pop(n, None)
                    self._reject(n, "segment not signed by the publication's key", n)
                continue
            try:
                plaintext = open_publication(p, self.member.group_key, segs)
            except CorruptBlob as e:
                for n in names:
                    self.segments.pop(n, None)
                    self._reject(n, str(e), n)
                continue
            except (Incomplete, AuthFailure) as e:
                self._violation(name, str(e))
                del self.awaiting[name]
                continue
            del self.awaiting[name]
            for n in names:
                if n in self.segments:
                    self.store.persist(self.segments.pop(n))
            self._apply_payload(p, plaintext)

    def _open(self, p: DataPacket) -> None:
        try:
            plaintext = open_publication(p, self.member.group_key)
        except (AuthFailure, PublicationError) as e:
            self._violation(p.name, f"cannot open publication: {e}")
            return
        self._apply_payload(p, plaintext)

    def _apply_payload(self, p: DataPacket, plaintext: bytes) -> None:
        try:
            payload = decode_payload(plaintext)
        except (PublicationError, TlvError) as e:
            self._violation(p.name, f"bad payload: {e}")
            return
        if isinstance(payload, Delta):
            self.doc.apply_remote(payload)
            if self.on_delivery is not None:
                self.on_delivery(self, p, payload)
        else:
            user, seq = self._classify(p.name)
            self.blobs[make_blob_name(self.workspace, user, seq)] = payload

    # -- crash / restart ------------------------------------------------------

    def restart(self) -> None:
        """Drop all volatile state and rebuild it from the on-disk store."""
        if self.member is None:
            return
        old = self.member
        self.member = None
        self._reset_volatile()
        packets = self.store.load_all()
        self.store.clear_memory()  # replayed packets are re-validated before they count as stored
        if self.instance is not None:
            self.member = bootstrap_initiator(self.instance, self.name, self.personal_key, self._boot_time)
            invitations = []
        else:
            invitations = sorted(
                (i for i in (self._as_invitation(p) for p in packets) if i and i.invitee == self.name),
                key=lambda i: (i.not_before, i.name),
            )
            first = invitations[0]
            self.member = bootstrap_member(self.name, self.personal_key, first, self.domain_cert, first.not_before)
            invitations = invitations[1:]
        self.member.last_invite_version = old.last_invite_version
        self.member.invited = dict(old.invited)
        self._init_workspace()
        for inv in invitations:
            self._record_own_invitation(inv)
        for p in packets:
            self.ingest(p)
        self._rebuild_vector(packets)
        self._send_sync()
        self._pump()

    def _as_invitation(self, p: DataPacket) -> Invitation | None:
        if p.content_type != ContentType.INVITE or len(p.name) < 2 or p.name[-2] != b"INVITE":
            return None
        try:
            return parse_invitation(p)
        except MembershipError:
            return None

    def _rebuild_vector(self, packets: list[DataPacket]) -> None:
        highest: dict[str, int] = {}
        have: set[tuple[str, int]] = set()
        for p in packets:
            key = self._classify(p.name)
            if isinstance(key, tuple):
                have.add(key)
                highest[key[0]] = max(highest.get(key[0], 0), key[1])
        for user, top in sorted(highest.items()):
            self.svs.restore_own(user, top)
            self.fetcher.enqueue([(user, s) for s in range(1, top + 1) if (user, s) not in have], self.now)
