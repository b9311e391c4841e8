"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line (visible with ``-s``); the
same lines are repeated in the terminal summary by ``conftest.py``.  Every
threshold below is pinned as a module constant.

Run alone with ``pytest tests/test_acceptance.py -s`` or
``python tests/test_acceptance.py``.
"""

from __future__ import annotations

import itertools
import json
import random
import statistics
import sys
import time
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from conftest import DOMAIN, WS, YEAR, keypair, make_root, personal_cert, seeded_bytes
from docgen import history
from gen import encode_any, mutate, random_packet
from wksp.audit import verify_store
from wksp.crdt import Document, Publisher, encode_delta, snapshot
from wksp.harness import Run, bench, load_scenario, parse_scenario, run_scenario
from wksp.membership import (
    MembershipModel,
    bootstrap_initiator,
    bootstrap_member,
    create_invitation,
    create_workspace,
    encode_invitation_content,
)
from wksp.naming import Name, make_data_name, make_invite_name
from wksp.security import CertStore, issue_cert, self_sign, sign_data, wot_authenticate
from wksp.sim import Peer, SimNet
from wksp.tlv import ContentType, DataPacket, SigInfo, TlvError, decode_packet, encode_data

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"

# 1. codec
ROUNDTRIP_PACKETS = 10_000
FUZZ_INPUTS = 100_000
CODEC_BUDGET_S = 30.0
# 2. trust enforcement
MIN_VIOLATION_CASES = 12
# 3. web of trust
WOT_GRAPHS = 1000
WOT_MAX_NODES = 10
# 4. CRDT convergence
EXHAUSTIVE_MAX_REPLICAS = 4
EXHAUSTIVE_MAX_OPS = 6
EXHAUSTIVE_SEEDS_AT_MAX = 8
RANDOM_REPLICAS = 16
RANDOM_EDITS = 200
RANDOM_SEEDS = 100
CRDT_BUDGET_S = 120.0
# 5. sync liveness
LIVENESS_SEEDS = 50
LIVENESS_LOSS = 0.5
PARTITION_START_MS = 20_000
PARTITION_MS = 60_000
HEAL_DEADLINE_MS = 600_000
# 8. latency
BENCH_USERS = 16
BENCH_ROUTERS = 4
BENCH_DELAYS_MS = (25, 50, 95)
LATENCY_REL_TOL = 0.05

RESULTS: list[str] = []


@contextmanager
def criterion(n: int, title: str):
    """Record PASS if the block completes, FAIL if it raises; ``info`` collects detail text."""
    info: list[str] = []
    try:
        yield info
    except BaseException:
        _emit("FAIL", n, title, info)
        raise
    _emit("PASS", n, title, info)


def _emit(verdict: str, n: int, title: str, info: list[str]) -> None:
    line = f"{verdict} [{n}] {title}" + (f" ({'; '.join(info)})" if info else "")
    RESULTS.append(line)
    print(line)


# -- 1. codec -------------------------------------------------------------------


def test_codec_roundtrip_and_fuzz():
    with criterion(1, "codec round-trip and mutation fuzz") as info:
        rng = random.Random(2024)
        start = time.perf_counter()
        seeds = []
        for _ in range(ROUNDTRIP_PACKETS):
            p = random_packet(rng)
            wire = encode_any(p)
            assert decode_packet(wire) == p
            seeds.append(wire)
        crashes, decoded = [], 0
        for _ in range(FUZZ_INPUTS):
            buf = mutate(rng, rng.choice(seeds))
            try:
                p = decode_packet(buf)
            except TlvError:
                continue
            except Exception as e:  # anything but a TlvError is a decoder crash
                crashes.append((buf.hex(), repr(e)))
                continue
            decoded += 1
            assert decode_packet(encode_any(p)) == p
        elapsed = time.perf_counter() - start
        info.append(f"{ROUNDTRIP_PACKETS} round-trips, {FUZZ_INPUTS} fuzz inputs, "
                    f"{decoded} still decodable, {elapsed:.1f}s")
        assert not crashes, crashes[:3]
        assert elapsed < CODEC_BUDGET_S


# -- 2. trust enforcement -------------------------------------------------------

FAR = 10 * YEAR


class TrustLab:
    """A receiving peer joined to a workspace, plus members whose packets it judges.

    ``bob`` initiates; ``alice``, ``charlie`` and ``dave`` (whose invitation
    lapses at t=1000) are invited.  Every case feeds the same preamble of
    certificate announcements and invitation publications, then the packets
    under test, through the peer's normal intake path.
    """

    def __init__(self):
        self.root = make_root()
        self.rand = seeded_bytes("trust-lab")
        self.instance = create_workspace(WS, self.root, MembershipModel.INITIATOR_ONLY, 0, self.rand)
        self.bob = bootstrap_initiator(self.instance, "bob", keypair("bob"), 0)
        self.members = {"bob": self.bob}
        self.invites = {}
        self.rx_invite = create_invitation(self.bob, personal_cert("rx")[1], YEAR, 0, self.rand)
        for user, life in (("alice", YEAR), ("charlie", YEAR), ("dave", 1000), ("erin", YEAR)):
            kp, cert = personal_cert(user)
            self.invites[user] = inv = create_invitation(self.bob, cert, life, 0, self.rand)
            self.members[user] = bootstrap_member(user, kp, inv, self.root.cert, 0)

    def preamble(self) -> list[DataPacket]:
        return [
            self.announce("bob", 1),
            self.carry(self.invites["alice"].packet, "bob", 2),
            self.carry(self.invites["charlie"].packet, "bob", 3),
            self.carry(self.invites["dave"].packet, "bob", 4),
            self.announce("alice", 1),
            self.announce("charlie", 1),
            self.announce("dave", 1),
        ]

    def receive(self, packets: list[DataPacket], at: int = 0, preamble: bool = True) -> Peer:
        net = SimNet(0)
        rx = Peer("rx", keypair("rx"), self.root.cert)
        rx.attach(net.attach(rx))
        rx.accept_invitation(self.rx_invite)
        net.run(at)
        for p in (self.preamble() if preamble else []) + packets:
            rx.ingest(p)
        return rx

    def signed(self, user, seq, content, ctype, kp=None, cert_name=None, t=0) -> DataPacket:
        m = self.members[user]
        cert_name = cert_name or m.cert_name
        pkt = DataPacket(make_data_name(WS, user, seq), content, ctype, SigInfo(cert_name, t, FAR))
        return sign_data(pkt, kp or m.workspace_identity.keypair, cert_name)

    def announce(self, user, seq, certs=None, **kw) -> DataPacket:
        certs = self.members[user].certificates() if certs is None else certs
        return self.signed(user, seq, b"".join(encode_data(c.packet) for c in certs), ContentType.KEY, **kw)

    def carry(self, invitation: DataPacket, publisher, seq) -> DataPacket:
        return self.signed(publisher, seq, encode_data(invitation), ContentType.INVITE)

    def edit(self, user, seq, kp=None, cert_name=None, t=0, size=0) -> list[DataPacket]:
        m = self.members[user]
        doc = Document(user)
        path = f"/{user}-{seq}"
        delta = doc.create_file(path)
        if size:
            rng = random.Random(seq)
            text = "".join(rng.choice("abcdefgh") for _ in range(size))
            delta = delta.merged(doc.local_insert(path, 0, text))
        pub = Publisher(WS, user, kp or m.workspace_identity.keypair, cert_name or m.cert_name, self.bob.group_key)
        return encode_delta(delta, pub, seq, t, nonce_source=self.rand)

    def forged_member(self, user, endorser_kp, endorser_cert_name, label="x") -> tuple:
        """A fresh personal key endorsed by ``endorser`` plus a workspace cert and key for ``user``."""
        personal, ws_kp = keypair(f"forged/{label}/p"), keypair(f"forged/{label}/w")
        endorsement = issue_cert(endorser_kp, endorser_cert_name, personal.public_key, Name([user]), 0, FAR)
        ws_cert = issue_cert(personal, endorsement.name, ws_kp.public_key, WS.append(user), 0, FAR, issuer_label=user)
        return [endorsement, ws_cert], ws_kp, ws_cert


def _applied(rx: Peer, user: str, seq: int) -> bool:
    return rx.doc.exists(f"/{user}-{seq}")


def _stored(rx: Peer, packets) -> bool:
    return any(p.name in rx.store for p in packets)


def _data_case(packets, user, seq, at=0):
    """Packets to feed, receive time, and whether the publication counts as accepted."""
    return packets, at, lambda rx: all(p.name in rx.store for p in packets) and _applied(rx, user, seq)


def _rejected_data(packets, user, seq, at=0, carrier=()):
    """Like ``_data_case``; ``carrier`` packets only deliver certificates and are not judged."""
    return [*carrier, *packets], at, lambda rx: _stored(rx, packets) or _applied(rx, user, seq)


def _invite_case(packets, invitee, at=0):
    return packets, at, lambda rx: rx.covered(invitee, at)


def _forged_invitation(lab, inviter, invitee_cert, sign_kp, sign_cert_name, version=9):
    inviter_state = lab.members[inviter]
    content = encode_invitation_content(
        lab.instance.instance_cert, invitee_cert, b"\x00" * 80, inviter_state.policy, inviter_state.endorsement_chain
    )
    name = make_invite_name(WS, inviter, version)
    pkt = DataPacket(name, content, ContentType.INVITE, SigInfo(sign_cert_name, 0, FAR))
    return sign_data(pkt, sign_kp, sign_cert_name)


def _violation_cases(lab: TrustLab) -> dict:
    m = lab.members
    alice, charlie, bob = m["alice"], m["charlie"], m["bob"]
    mallory_kp, mallory_self = personal_cert("mallory")
    cases = {}

    # wrong signer for application data
    cases["data signed by another member's workspace key"] = _rejected_data(
        lab.edit("alice", 2, charlie.workspace_identity.keypair, charlie.cert_name), "alice", 2)
    cases["data signed by the publisher's personal key"] = _rejected_data(
        lab.edit("alice", 2, alice.personal.keypair, alice.personal.cert_name), "alice", 2)
    cases["data signed by the initiator's workspace key"] = _rejected_data(
        lab.edit("alice", 2, bob.workspace_identity.keypair, bob.cert_name), "alice", 2)
    cases["data signed by the instance key"] = _rejected_data(
        lab.edit("alice", 2, lab.instance.keypair, lab.instance.instance_cert.name), "alice", 2)

    # forged invitations, judged by whether the invitee becomes a member
    erin = lab.invites["erin"]
    tampered = replace(erin.packet, content=encode_invitation_content(
        erin.instance_cert, erin.invitee_cert, b"\x00" * len(erin.wrapped_key), erin.policy, erin.inviter_chain))
    cases["invitation with tampered content"] = _invite_case([lab.carry(tampered, "bob", 5)], "erin")
    forged = _forged_invitation(lab, "bob", issue_cert(
        mallory_kp, bob.personal.cert_name, mallory_kp.public_key, Name(["mallory"]), 0, FAR,
        issuer_label="bob"), mallory_kp, bob.personal.cert_name)
    cases["invitation signed by an outsider claiming the initiator"] = _invite_case(
        [lab.carry(forged, "bob", 5)], "mallory")
    forged = _forged_invitation(lab, "bob", issue_cert(
        charlie.personal.keypair, charlie.personal.cert_name, mallory_kp.public_key, Name(["mallory"]), 0, FAR),
        bob.personal.keypair, bob.personal.cert_name)
    cases["invitation whose invitee cert the inviter did not issue"] = _invite_case(
        [lab.carry(forged, "bob", 5)], "mallory")
    forged = _forged_invitation(lab, "alice", issue_cert(
        alice.personal.keypair, alice.personal.cert_name, mallory_kp.public_key, Name(["mallory"]), 0, FAR),
        alice.personal.keypair, alice.personal.cert_name, version=1)
    cases["invitation by a non-initiator under initiator-only"] = _invite_case(
        [lab.carry(forged, "alice", 2)], "mallory")

    # workspace instance certificate not anchored at the domain root
    rogue_kp = keypair("rogue-root")
    rogue_root = self_sign(rogue_kp, DOMAIN, 0, FAR)
    inst_kp = keypair("rogue-instance")
    rogue_inst = issue_cert(rogue_kp, rogue_root.name, inst_kp.public_key, WS, 0, FAR)
    chain, ws_kp, ws_cert = lab.forged_member("alice", inst_kp, rogue_inst.name, "rogue")
    carrier = [lab.announce("charlie", 2, [rogue_root, rogue_inst, *chain])]
    cases["instance cert from an unanchored root"] = _rejected_data(
        lab.edit("alice", 2, ws_kp, ws_cert.name), "alice", 2, carrier=carrier)
    member_inst = issue_cert(alice.personal.keypair, alice.personal.cert_name, inst_kp.public_key, WS, 0, FAR)
    chain, ws_kp, ws_cert = lab.forged_member("alice", inst_kp, member_inst.name, "member-inst")
    carrier = [lab.announce("charlie", 2, [member_inst, *chain])]
    cases["instance cert signed by a member instead of the root"] = _rejected_data(
        lab.edit("alice", 2, ws_kp, ws_cert.name), "alice", 2, carrier=carrier)

    # workspace cert not signed by the owner's personal key
    ws_kp = keypair("forged-ws")
    for label, (kp, cert_name, issuer) in {
        "another member's personal key": (charlie.personal.keypair, charlie.personal.cert_name, "charlie"),
        "the initiator's personal key": (bob.personal.keypair, bob.personal.cert_name, "bob"),
        "the instance key": (lab.instance.keypair, lab.instance.instance_cert.name, "MeetRoom"),
    }.items():
        forged_ws = issue_cert(kp, cert_name, ws_kp.public_key, WS.append("alice"), 0, FAR, issuer_label=issuer)
        carrier = [lab.announce("charlie", 2, [forged_ws])]
        cases[f"workspace cert signed by {label}"] = _rejected_data(
            lab.edit("alice", 2, ws_kp, forged_ws.name), "alice", 2, carrier=carrier)

    # expiry
    short_kp = keypair("alice-short")
    short = issue_cert(alice.personal.keypair, alice.personal.cert_name, short_kp.public_key, WS.append("alice"),
                       0, 1000, issuer_label="alice", version=2)
    carrier = [lab.announce("alice", 2, [short])]
    cases["data signed under an expired workspace cert"] = _rejected_data(
        lab.edit("alice", 3, short_kp, short.name, t=5000), "alice", 3, at=5000, carrier=carrier)
    dave = m["dave"]
    late_kp = keypair("dave-late")
    late = issue_cert(dave.personal.keypair, dave.personal.cert_name, late_kp.public_key, WS.append("dave"),
                      2000, FAR, issuer_label="dave", version=2)
    carrier = [lab.announce("charlie", 2, [late])]
    cases["workspace cert issued after its signer expired"] = _rejected_data(
        lab.edit("dave", 2, late_kp, late.name, t=2000), "dave", 2, at=2000, carrier=carrier)

    # tampering after signing
    (good,) = lab.edit("alice", 2)
    flipped = bytearray(good.content)
    flipped[-1] ^= 1
    cases["content byte flipped"] = _rejected_data([replace(good, content=bytes(flipped))], "alice", 2)
    moved = replace(good, name=make_data_name(WS, "alice", 3))
    cases["name changed"] = _rejected_data([moved], "alice", 2)
    cases["signature truncated"] = _rejected_data([replace(good, sig_value=good.sig_value[:-1])], "alice", 2)
    cases["validity window altered"] = _rejected_data(
        [replace(good, sig_info=replace(good.sig_info, not_before=1))], "alice", 2)
    key = lab.announce("alice", 2, [short])
    cases["certificate announcement altered"] = (
        [replace(key, content=key.content[:-1] + bytes([key.content[-1] ^ 1]))], 0,
        lambda rx: make_data_name(WS, "alice", 2) in rx.store,
    )
    return cases


def _wellformed_cases(lab: TrustLab) -> dict:
    short_kp = keypair("alice-short")
    alice = lab.members["alice"]
    short = issue_cert(alice.personal.keypair, alice.personal.cert_name, short_kp.public_key, WS.append("alice"),
                       0, 1000, issuer_label="alice", version=2)
    cases = {
        "initiator's certificate announcement": (
            [], 0, lambda rx: make_data_name(WS, "bob", 1) in rx.store),
        "member admitted by a published invitation": (
            [], 0, lambda rx: rx.covered("alice", 0) and rx.covered("charlie", 0)),
        "member edit": _data_case(lab.edit("alice", 2), "alice", 2),
        "second member edit": _data_case(lab.edit("charlie", 2), "charlie", 2),
        "initiator edit": _data_case(lab.edit("bob", 5), "bob", 5),
        "new invitation published by the initiator": _invite_case(
            [lab.carry(lab.invites["erin"].packet, "bob", 5)], "erin"),
        "short-lived workspace cert used inside its window": _data_case(
            [lab.announce("alice", 2, [short]), *lab.edit("alice", 3, short_kp, short.name, t=500)],
            "alice", 3, at=500),
        "segmented edit": _data_case(lab.edit("alice", 2, size=20_000), "alice", 2),
        "edit by a member whose invitation later lapses, sent in its window": _data_case(
            lab.edit("dave", 2, t=500), "dave", 2, at=500),
    }
    # everything delivered in reverse, before the certificates and invitations it depends on
    late = lab.edit("alice", 2)
    cases["edit arriving before its prerequisites"] = (
        (late + lab.preamble())[::-1], 0, lambda rx: _applied(rx, "alice", 2))
    return cases


def test_trust_enforcement_matrix():
    with criterion(2, "trust enforcement matrix") as info:
        lab = TrustLab()
        bad, good = _violation_cases(lab), _wellformed_cases(lab)
        accepted_bad = [name for name, (pkts, at, judge) in bad.items() if judge(lab.receive(pkts, at))]
        refused_good = []
        for name, (pkts, at, judge) in good.items():
            rx = lab.receive(pkts, at, preamble=name != "edit arriving before its prerequisites")
            if not judge(rx) or rx.violations:
                refused_good.append((name, [v.reason for v in rx.violations]))
        info.append(f"{len(bad) - len(accepted_bad)}/{len(bad)} violations rejected, "
                    f"{len(good) - len(refused_good)}/{len(good)} well-formed accepted")
        assert len(bad) >= MIN_VIOLATION_CASES
        assert not accepted_bad, accepted_bad
        assert not refused_good, refused_good


# -- 3. web of trust ------------------------------------------------------------


def _random_cert_graph(rng: random.Random, keys):
    """Self certs for every node plus random issued certs, some with a forged signature.

    Returns (certs, owner key index per cert, adjacency matrix of the genuine
    signer relation).  An edge i -> j means cert j's key really signed cert i.
    """
    n = len(keys)
    users = [f"u{i}" for i in range(n)]
    selfs = [self_sign(keys[i], Name([users[i]]), 0, FAR) for i in range(n)]
    certs, owner, signer = list(selfs), list(range(n)), list(range(n))
    for a, b in itertools.permutations(range(n), 2):
        if rng.random() >= 0.25:
            continue
        forged = rng.random() < 0.15
        sig_kp = keys[rng.choice([k for k in range(n) if k != a])] if forged and n > 1 else keys[a]
        c = issue_cert(sig_kp, selfs[a].name, keys[b].public_key, Name([users[b]]), 0, FAR, issuer_label=users[a])
        certs.append(c)
        owner.append(b)
        signer.append(None if forged else a)
    m = len(certs)
    adj = np.zeros((m, m), dtype=bool)
    for i in range(m):
        for j in range(m):
            if i != j and signer[i] is not None and owner[j] == signer[i]:
                adj[i, j] = True
    return certs, adj


def _oracle_distance(adj: np.ndarray, src: int, targets: set[int], max_depth: int) -> int | None:
    """Fewest edges from ``src`` into ``targets`` by boolean matrix powers, or None beyond ``max_depth``."""
    if src in targets:
        return 0
    frontier = np.zeros(len(adj), dtype=bool)
    frontier[src] = True
    a = adj.astype(np.int64)
    for k in range(1, max_depth + 1):
        frontier = (frontier.astype(np.int64) @ a) > 0
        if any(frontier[t] for t in targets):
            return k
    return None


def test_web_of_trust_matches_reachability_oracle():
    with criterion(3, "web-of-trust vs reachability oracle") as info:
        rng = random.Random(77)
        key_pool = [keypair(f"wot{i}") for i in range(WOT_MAX_NODES)]
        found = mismatches = 0
        for g in range(WOT_GRAPHS):
            n = rng.randint(1, WOT_MAX_NODES)
            certs, adj = _random_cert_graph(rng, rng.sample(key_pool, n))
            store = CertStore(certs)
            index = {c.name: i for i, c in enumerate(certs)}
            target = rng.randrange(len(certs))
            roots = set(rng.sample(range(len(certs)), rng.randint(1, min(3, len(certs)))))
            depth = rng.randint(1, 2 * WOT_MAX_NODES)
            chain = wot_authenticate(certs[target], {certs[r].name for r in roots}, store, max_depth=depth)
            expected = _oracle_distance(adj, target, roots, depth)
            if expected is None:
                ok = chain is None
            else:
                path = [index[c] for c in chain or []]
                ok = (
                    len(path) == expected + 1
                    and path[0] == target
                    and path[-1] in roots
                    and all(adj[x, y] for x, y in zip(path, path[1:]))
                )
                found += 1
            mismatches += not ok
        info.append(f"{WOT_GRAPHS} graphs, {found} authenticated, {mismatches} mismatches")
        assert mismatches == 0

        jane, bob, alice = keypair("jane"), keypair("bob"), keypair("alice")
        jane_c = self_sign(jane, Name(["jane"]), 0, FAR)
        bob_c = self_sign(bob, Name(["bob"]), 0, FAR)
        alice_by_bob = issue_cert(bob, bob_c.name, alice.public_key, Name(["alice"]), 0, FAR)
        bob_by_jane = issue_cert(jane, jane_c.name, bob.public_key, Name(["bob"]), 0, FAR)
        jane_by_bob = issue_cert(bob, bob_c.name, jane.public_key, Name(["jane"]), 0, FAR)
        store = CertStore([jane_c, bob_c, alice_by_bob, bob_by_jane, jane_by_bob])
        # Jane trusts Bob's key; Bob vouches for Alice
        chain = wot_authenticate(alice_by_bob, {bob_c.name}, store)
        info.append(f"jane->alice chain {[str(c) for c in chain or []]}")
        assert chain == [alice_by_bob.name, bob_c.name]


# -- 4. CRDT convergence --------------------------------------------------------


def test_crdt_convergence():
    with criterion(4, "CRDT convergence, exhaustive and randomized") as info:
        start = time.perf_counter()
        histories = orders = 0
        for replicas in range(1, EXHAUSTIVE_MAX_REPLICAS + 1):
            for ops in range(1, EXHAUSTIVE_MAX_OPS + 1):
                at_max = (replicas, ops) == (EXHAUSTIVE_MAX_REPLICAS, EXHAUSTIVE_MAX_OPS)
                seeds = EXHAUSTIVE_SEEDS_AT_MAX if at_max else 2
                for seed in range(seeds):
                    rng = random.Random(f"{replicas}/{ops}/{seed}")
                    docs, deltas = history(rng, replicas, ops, gossip=rng.random())
                    expected = Document("ref")
                    for d in deltas:
                        expected.apply_remote(d)
                    want = snapshot(expected)
                    for perm in itertools.permutations(deltas):
                        obs = Document("obs")
                        for d in perm:
                            obs.apply_remote(d)
                        assert not obs.pending and snapshot(obs) == want, (replicas, ops, seed, perm)
                        orders += 1
                    for d in docs:
                        for delta in deltas:
                            d.apply_remote(delta)
                        assert snapshot(d) == want
                    histories += 1
        exhaustive_s = time.perf_counter() - start

        converged = 0
        for seed in range(RANDOM_SEEDS):
            rng = random.Random(seed)
            docs, deltas = history(rng, RANDOM_REPLICAS, RANDOM_EDITS)
            for d in docs:
                order = deltas + rng.sample(deltas, len(deltas) // 10)
                rng.shuffle(order)
                for delta in order:
                    d.apply_remote(delta)
            converged += len({snapshot(d) for d in docs}) == 1 and not any(d.pending for d in docs)
        elapsed = time.perf_counter() - start
        info.append(f"{histories} small histories over {orders} delivery orders in {exhaustive_s:.1f}s; "
                    f"{converged}/{RANDOM_SEEDS} randomized seeds converged; {elapsed:.1f}s total")
        assert converged == RANDOM_SEEDS
        assert elapsed < CRDT_BUDGET_S


# -- 5. sync liveness -----------------------------------------------------------

GROUP_A = ("p0", "p1", "p2")
GROUP_B = ("p3", "p4", "p5")


def _liveness_scenario(seed: int) -> dict:
    rng = random.Random(f"liveness/{seed}")
    users = GROUP_A + GROUP_B
    heal = PARTITION_START_MS + PARTITION_MS
    edits = [{"t": 5_000, "peer": u, "op": "create", "path": f"/{u}"} for u in users]
    t = PARTITION_START_MS
    while t < heal:
        t += rng.randrange(2_000, 8_000)
        u = rng.choice(users)
        edits.append({"t": min(t, heal - 1), "peer": u, "op": "insert", "path": f"/{u}", "pos": 0,
                      "text": rng.choice("abcxyz")})
    return {
        "seed": seed,
        "workspace": {"initiator": "p0"},
        "peers": [{"username": u, "router": "r0" if u in GROUP_A else "r1"} for u in users],
        "invitations": [{"t": 100, "inviter": "p0", "invitee": u} for u in users[1:]],
        "links": {"delayMs": 50, "lossProb": LIVENESS_LOSS},
        "partitions": [{"start": PARTITION_START_MS, "end": heal, "groups": [list(GROUP_A), list(GROUP_B)]}],
        "editScript": edits,
        "config": {"batchMs": 0, "durationMs": heal + HEAL_DEADLINE_MS},
    }


def _fully_converged(run: Run) -> bool:
    peers = list(run.peers.values())
    truth = {u: p.svs.local.get(u, 0) for u, p in run.peers.items()}
    if any(p.svs.local != truth for p in peers):
        return False
    return len({p.digest() for p in peers}) == 1


def test_sync_liveness_under_loss_and_partition():
    with criterion(5, "sync liveness with 50% loss and a 60 s partition") as info:
        heal = PARTITION_START_MS + PARTITION_MS
        times, failed = [], []
        for seed in range(LIVENESS_SEEDS):
            run = Run(parse_scenario(_liveness_scenario(seed)))
            run.net.run(heal)
            t = heal
            while not _fully_converged(run) and t < heal + HEAL_DEADLINE_MS:
                t += 1_000
                run.net.run(t)
            if _fully_converged(run):
                times.append(t - heal)
            else:
                failed.append(seed)
        info.append(f"{len(times)}/{LIVENESS_SEEDS} seeds converged; "
                    f"worst {max(times, default=0) / 1000:.0f}s after heal, "
                    f"median {statistics.median(times or [0]) / 1000:.0f}s")
        assert not failed, failed


# -- 6. repo and relay ----------------------------------------------------------


def test_repo_and_relay_scenarios():
    with criterion(6, "repo asynchrony and relay") as info:
        repo = run_scenario(SCENARIOS / "repo_async.json")
        sc = load_scenario(SCENARIOS / "repo_async.json")
        alice_off = sc.peer("alice").online[-1][1]
        late = {p.username: p.online[-1][0] for p in sc.peers if p.username != "alice"}
        assert all(t > alice_off for t in late.values())
        assert repo.ok and repo.converged, repo.failures
        assert repo.texts["bob"] == repo.texts["charlie"] == repo.texts["alice"]
        relay = run_scenario(SCENARIOS / "relay.json")
        assert relay.ok and relay.converged, relay.failures
        info.append(f"repo: bob and charlie online from {min(late.values())} ms after alice left at {alice_off} ms; "
                    "relay: charlie caught up while bob offline")


# -- 7. membership expiry -------------------------------------------------------


def test_membership_expiry_and_renewal():
    with criterion(7, "membership expiry and renewal") as info:
        sc = load_scenario(SCENARIOS / "expiry_renewal.json")
        (renewal,) = sc.renewals
        run = Run(sc)
        run.net.run(renewal.t - 1)
        for u in ("bob", "charlie"):
            assert run.peers[u].doc.text("/a.txt") == "before;"
            assert any(n.text(-3) == "alice" for n in run.peers[u].held())
        report = run.execute()
        for u in ("bob", "charlie"):
            assert report.texts[u]["a.txt"] == "after;before;"
            assert any(Name.parse(n).text(-3) == "alice" for n in report.held[u])
        assert report.ok, report.failures
        info.append("gap edit held by bob and charlie; pre-expiry and post-renewal edits applied")


# -- 8. latency -----------------------------------------------------------------


def _analytic_mean(delay: int) -> float:
    """Mean over ordered sender/receiver pairs: D on the same router, 2D otherwise."""
    router = [i % BENCH_ROUTERS for i in range(BENCH_USERS)]
    pairs = [(a, b) for a in range(BENCH_USERS) for b in range(BENCH_USERS) if a != b]
    return statistics.fmean(delay if router[a] == router[b] else 2 * delay for a, b in pairs)


def test_latency_matches_delay_model():
    with criterion(8, "latency sanity against the delay model") as info:
        rows = bench(delays=BENCH_DELAYS_MS, users=BENCH_USERS, routers=BENCH_ROUTERS)
        off = []
        for d, row in zip(BENCH_DELAYS_MS, rows):
            want = _analytic_mean(d)
            info.append(f"D={d}: {row['mean_ms']:.2f} ms vs {want:.2f} ms over {row['deliveries']} deliveries")
            if abs(row["mean_ms"] - want) > LATENCY_REL_TOL * want:
                off.append(d)
        assert not off, off


# -- 9. determinism -------------------------------------------------------------


def test_determinism(tmp_path):
    with criterion(9, "determinism") as info:
        for name in ("basic", "restart", "repo_async"):
            outputs = []
            for i in range(2):
                log = tmp_path / f"{name}-{i}.log"
                report = run_scenario(SCENARIOS / f"{name}.json", log_path=str(log))
                outputs.append((log.read_bytes(), report.dumps(with_log_path=False).encode()))
            assert outputs[0] == outputs[1], name
            info.append(f"{name}: {len(outputs[0][0])} log bytes identical")
        lossy = [Run(parse_scenario(_liveness_scenario(3))) for _ in range(2)]
        reports = [r.execute().dumps(with_log_path=False) for r in lossy]
        assert reports[0] == reports[1] and lossy[0].net.log_lines == lossy[1].net.log_lines
        info.append(f"lossy partitioned run: {len(lossy[0].net.log_lines)} log lines identical")


# -- 10. persistence ------------------------------------------------------------


def test_restart_matches_control(tmp_path):
    with criterion(10, "restart from disk matches the control run") as info:
        raw = json.loads((SCENARIOS / "restart.json").read_text())
        restarted = run_scenario(parse_scenario(raw), store_dir=str(tmp_path / "store"))
        control = run_scenario(parse_scenario({**raw, "restarts": []}))
        problems = {}
        for d in sorted((tmp_path / "store").iterdir()):
            n, bad = verify_store(d)
            assert n > 0
            if bad:
                problems[d.name] = bad
        (who,) = {r["peer"] for r in raw["restarts"]}
        assert not problems, problems
        assert restarted.ok and control.ok
        assert restarted.digests[who] == control.digests[who]
        assert restarted.digests == control.digests
        info.append(f"{who} restarted; digests equal to control; stores verified")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
