import itertools
from dataclasses import replace

import pytest

from conftest import DOMAIN, WS, YEAR, World, keypair, make_root, personal_cert, seeded_bytes
from wksp.crdt import Publisher, decode_delta, encode_delta
from wksp.crdt.doc import Document
from wksp.membership import (
    Expired,
    InvitationInvalid,
    MembershipError,
    MembershipModel,
    NotAuthorized,
    Status,
    UnknownMember,
    WrongInvitee,
    bootstrap_member,
    create_invitation,
    create_workspace,
    membership_status,
    parse_invitation,
    renew_invitation,
)
from wksp.naming import Name
from wksp.security import AuthFailure, Validator, default_schema, new_group_key, self_sign, verify_data
from wksp.tlv import decode_data, encode_data

ALICE, BOB, CHARLIE = "alice@example.com", "bob@foobar.org", "charlie@x.org"


def test_instance_cert_chains_to_root_only():
    w = World(initiator=BOB)
    assert w.instance.name == Name.parse("yourworkspaces.app/MeetRoom")
    v = Validator(default_schema(WS, DOMAIN), [w.root.cert])
    assert v.admit([w.instance.instance_cert])
    other = self_sign(keypair("other-root"), DOMAIN, 0, YEAR)
    v2 = Validator(default_schema(WS, DOMAIN), [other])
    assert v2.admit([w.instance.instance_cert]) == []


def test_two_workspaces_have_distinct_group_keys():
    root = make_root()
    a = create_workspace(WS, root, random_bytes=seeded_bytes(1))
    b = create_workspace(WS, root, random_bytes=seeded_bytes(2))
    assert a.group_key.symmetric_key != b.group_key.symmetric_key


def test_invitation_name_and_member_bootstrap():
    w = World(initiator=BOB)
    inv = w.invite(BOB, ALICE, now=5)
    assert str(inv.name) == "yourworkspaces.app/MeetRoom/bob@foobar.org/INVITE/v=1"
    alice = w.members[ALICE]
    assert alice.group_key == w.instance.group_key
    assert alice.workspace_identity.cert.key_locator == alice.personal.cert_name
    assert alice.personal.cert.key_locator == w.members[BOB].personal.cert_name
    assert alice.cert_name[: len(WS) + 1] == WS.append(ALICE)
    assert alice.status(5) is Status.ACTIVE


def test_invitation_content_roundtrip():
    w = World(initiator=BOB)
    inv = w.invite(BOB, ALICE)
    again = parse_invitation(decode_data(encode_data(inv.packet)))
    assert again == inv
    assert again.policy.initiator == BOB and again.policy.model is MembershipModel.INITIATOR_ONLY


def test_wrong_invitee_and_expired():
    w = World(initiator=BOB)
    kp_c, cert_c = personal_cert(CHARLIE)
    inv = create_invitation(w.members[BOB], cert_c, 100, 0, w.rand)
    kp_a, _ = personal_cert(ALICE)
    with pytest.raises(WrongInvitee):
        bootstrap_member(ALICE, kp_a, inv, w.root.cert, 10)
    with pytest.raises(Expired):
        bootstrap_member(CHARLIE, kp_c, inv, w.root.cert, 101)
    assert bootstrap_member(CHARLIE, kp_c, inv, w.root.cert, 100).status(100) is Status.ACTIVE


def test_forged_invitation_rejected():
    w = World(initiator=BOB)
    _, cert_a = personal_cert(ALICE)
    inv = create_invitation(w.members[BOB], cert_a, YEAR, 0, w.rand)
    tampered = replace(inv.packet, content=inv.packet.content + b"\x00\x00")
    with pytest.raises(InvitationInvalid):
        bootstrap_member(ALICE, keypair(ALICE), parse_invitation(tampered), w.root.cert, 1)
    rogue = self_sign(keypair("rogue"), DOMAIN, 0, YEAR)
    with pytest.raises(InvitationInvalid):
        bootstrap_member(ALICE, keypair(ALICE), inv, rogue, 1)


def test_invite_requires_self_signed_personal_cert():
    w = World(initiator=BOB)
    not_self = w.members[BOB].personal.cert
    with pytest.raises(MembershipError):
        create_invitation(w.members[BOB], not_self, YEAR, 0, w.rand)


def test_models():
    w = World(initiator=BOB)
    w.invite(BOB, ALICE)
    _, cert_c = personal_cert(CHARLIE)
    with pytest.raises(NotAuthorized):
        create_invitation(w.members[ALICE], cert_c, YEAR, 0, w.rand)

    p2p = World(MembershipModel.PEER_TO_PEER, initiator=BOB)
    p2p.invite(BOB, ALICE)
    inv = p2p.invite(ALICE, CHARLIE)
    assert str(inv.name).endswith(f"{ALICE}/INVITE/v=1")
    charlie = p2p.members[CHARLIE]
    assert len(charlie.endorsement_chain) == 3  # charlie-by-alice, alice-by-bob, bob-by-instance
    assert charlie.group_key == p2p.instance.group_key


def test_expired_member_cannot_invite_under_p2p():
    w = World(MembershipModel.PEER_TO_PEER, initiator=BOB)
    w.invite(BOB, ALICE, lifetime=100)
    _, cert_c = personal_cert(CHARLIE)
    with pytest.raises(NotAuthorized):
        create_invitation(w.members[ALICE], cert_c, YEAR, 101, w.rand)


def test_renewal_walk():
    w = World(initiator=BOB)
    w.invite(BOB, ALICE, now=0, lifetime=100)
    bob = w.members[BOB]
    assert membership_status(bob.records, ALICE, 100) is Status.ACTIVE
    assert membership_status(bob.records, ALICE, 101) is Status.EXPIRED
    inv2 = renew_invitation(bob, ALICE, 1000, 150, w.rand)
    assert inv2.version == 2
    assert membership_status(bob.records, ALICE, 500) is Status.ACTIVE
    assert bob.records[ALICE].intervals == [(0, 100), (150, 1150)]
    assert not bob.records[ALICE].covers(120)
    assert membership_status(bob.records, CHARLIE, 0) is Status.UNKNOWN
    with pytest.raises(UnknownMember):
        renew_invitation(bob, CHARLIE, 10, 0, w.rand)


def test_accepting_twice_is_idempotent():
    w = World(initiator=BOB)
    kp, cert = personal_cert(ALICE)
    inv = create_invitation(w.members[BOB], cert, YEAR, 0, w.rand)
    a = bootstrap_member(ALICE, kp, inv, w.root.cert, 1)
    b = bootstrap_member(ALICE, kp, inv, w.root.cert, 1)
    assert a == b


def test_members_decrypt_outsiders_fail():
    w = World(initiator=BOB)
    for u in (ALICE, CHARLIE):
        w.invite(BOB, u)
    doc = Document(ALICE)
    delta = doc.create_file("/f.txt")
    alice = w.members[ALICE]
    pub = Publisher(WS, ALICE, alice.workspace_identity.keypair, alice.cert_name, alice.group_key)
    packets = encode_delta(delta, pub, 2, 10, nonce_source=w.rand)
    for m in w.members.values():
        assert decode_delta(packets, m.group_key).ops == delta.ops
    outsider = new_group_key(WS.append("GROUPKEY", "v=1"), seeded_bytes("outsider"))
    with pytest.raises(AuthFailure):
        decode_delta(packets, outsider)


def test_member_publications_validate_under_its_own_chain():
    w = World(initiator=BOB)
    w.invite(BOB, ALICE)
    alice = w.members[ALICE]
    v = Validator(alice.schema, [w.root.cert])
    v.admit([*w.members[BOB].certificates(), *alice.certificates()])
    pub = Publisher(WS, ALICE, alice.workspace_identity.keypair, alice.cert_name, alice.group_key)
    (pkt,) = encode_delta(Document(ALICE).create_file("/x"), pub, 2, 10, nonce_source=w.rand)
    assert v.validate(pkt, 10)
    assert verify_data(pkt, v.store, 10)


LIFETIMES = {"none": None, "short": 100, "long": 10_000}


@pytest.mark.parametrize("plan", list(itertools.product(LIFETIMES, repeat=3)))
def test_initiator_only_active_set_matches_unexpired_invitations(plan):
    w = World(initiator=BOB)
    users = ["u1", "u2", "u3"]
    for user, kind in zip(users, plan):
        if LIFETIMES[kind] is not None:
            w.invite(BOB, user, now=0, lifetime=LIFETIMES[kind])
    bob = w.members[BOB]
    for t in (0, 100, 101, 10_000, 10_001):
        active = {u for u in users if membership_status(bob.records, u, t) is Status.ACTIVE}
        expected = {u for u, k in zip(users, plan) if LIFETIMES[k] is not None and t <= LIFETIMES[k]}
        assert active == expected
