"""Workspace creation, invitations, bootstrapping, renewal and expiry.

Trust flows from the configured domain root: the root signs the workspace
instance certificate, the instance key endorses the initiator's personal key,
and every invitation endorses the invitee's personal key with the inviter's.
A member then certifies its own workspace key with its personal key, and that
workspace key signs everything the member publishes.
"""

from __future__ import annotations

import enum
import hashlib
import json
import os
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping

from .naming import Name, make_invite_name, split_cert_name
from .security import (
    AuthFailure,
    Certificate,
    GroupKey,
    KeyPair,
    TrustSchema,
    Validator,
    VerifyResult,
    compile_schema,
    default_rules,
    generate_keypair,
    issue_cert,
    new_group_key,
    sign_data,
    unwrap_group_key,
    verify_packet_signature,
    wrap_group_key,
)
from .tlv import ContentType, DataPacket, SigInfo, TlvError, decode_data, encode_data, iter_tlv, tlv

DAY_MS = 24 * 3600 * 1000
DEFAULT_INVITATION_LIFETIME_MS = 30 * DAY_MS
CERT_LIFETIME_MS = 10 * 365 * DAY_MS
FOREVER = 2**63 - 1

# Invitation content tags.
INSTANCE_CERT = 0xE0
INVITEE_CERT = 0xE1
WRAPPED_KEY = 0xE2
SCHEMA = 0xE3
INVITER_CHAIN = 0xE4

RandomBytes = Callable[[int], bytes]


class MembershipError(ValueError):
    pass


class InvitationInvalid(MembershipError):
    pass


class WrongInvitee(MembershipError):
    pass


class Expired(MembershipError):
    pass


class NotAuthorized(MembershipError):
    pass


class UnknownMember(MembershipError):
    pass


class MembershipModel(enum.Enum):
    INITIATOR_ONLY = "INITIATOR_ONLY"
    PEER_TO_PEER = "PEER_TO_PEER"


class Status(enum.Enum):
    ACTIVE = "ACTIVE"
    EXPIRED = "EXPIRED"
    UNKNOWN = "UNKNOWN"


@dataclass(frozen=True)
class Identity:
    """A key pair together with the certificate others use to locate it."""

    keypair: KeyPair
    cert: Certificate

    @property
    def cert_name(self) -> Name:
        return self.cert.name


@dataclass(frozen=True)
class WorkspaceInstance:
    name: Name
    keypair: KeyPair
    instance_cert: Certificate
    domain_cert: Certificate
    group_key: GroupKey
    schema: TrustSchema
    model: MembershipModel

    @property
    def identity(self) -> Identity:
        return Identity(self.keypair, self.instance_cert)


@dataclass(frozen=True)
class WorkspacePolicy:
    """What an invitation tells the invitee about the workspace it joins."""

    schema: TrustSchema
    model: MembershipModel
    initiator: str

    def dumps(self) -> bytes:
        body = {"model": self.model.value, "initiator": self.initiator, "rules": self.schema.to_json()}
        return json.dumps(body, sort_keys=True, separators=(",", ":")).encode("utf-8")

    @classmethod
    def loads(cls, raw: bytes) -> "WorkspacePolicy":
        try:
            body = json.loads(raw)
            return cls(compile_schema(body["rules"]), MembershipModel(body["model"]), str(body["initiator"]))
        except (ValueError, KeyError, TypeError) as e:
            raise InvitationInvalid(f"bad workspace policy: {e}") from None


@dataclass(frozen=True)
class Invitation:
    packet: DataPacket
    instance_cert: Certificate
    invitee_cert: Certificate
    wrapped_key: bytes
    policy: WorkspacePolicy
    inviter_chain: tuple[Certificate, ...] = ()

    @property
    def name(self) -> Name:
        return self.packet.name

    @property
    def inviter(self) -> str:
        return self.packet.name.text(-3)

    @property
    def version(self) -> int:
        return int(self.packet.name.text(-1)[2:])

    @property
    def invitee(self) -> str:
        return self.invitee_cert.identity.text(-1)

    @property
    def not_before(self) -> int:
        return self.packet.sig_info.not_before

    @property
    def not_after(self) -> int:
        return self.packet.sig_info.not_after

    @property
    def workspace(self) -> Name:
        return self.packet.name[:-3]

    def certificates(self) -> list[Certificate]:
        return [self.instance_cert, *self.inviter_chain, self.invitee_cert]

    def encode(self) -> bytes:
        return encode_data(self.packet)


def encode_invitation_content(
    instance_cert: Certificate,
    invitee_cert: Certificate,
    wrapped_key: bytes,
    policy: WorkspacePolicy,
    inviter_chain: Iterable[Certificate],
) -> bytes:
    return (
        tlv(INSTANCE_CERT, encode_data(instance_cert.packet))
        + tlv(INVITEE_CERT, encode_data(invitee_cert.packet))
        + tlv(WRAPPED_KEY, wrapped_key)
        + tlv(SCHEMA, policy.dumps())
        + tlv(INVITER_CHAIN, b"".join(encode_data(c.packet) for c in inviter_chain))
    )


def parse_invitation(packet: DataPacket) -> Invitation:
    """Decode an INVITE packet's content; raises :class:`InvitationInvalid`."""
    if packet.content_type != ContentType.INVITE:
        raise InvitationInvalid(f"{packet.name} is not an INVITE packet")
    name = packet.name
    if len(name) < 4 or name[-2] != b"INVITE" or not name.text(-1).startswith("v="):
        raise InvitationInvalid(f"{name} is not an invitation name")
    try:
        fields: dict[int, bytes] = {}
        for el in iter_tlv(packet.content):
            if el.type in fields:
                raise InvitationInvalid(f"duplicate invitation field {el.type:#x}")
            fields[el.type] = el.value
        chain_raw = fields.get(INVITER_CHAIN, b"")
        chain = tuple(Certificate(decode_data(encode_data_raw)) for encode_data_raw in _split_packets(chain_raw))
        return Invitation(
            packet=packet,
            instance_cert=Certificate(decode_data(fields[INSTANCE_CERT])),
            invitee_cert=Certificate(decode_data(fields[INVITEE_CERT])),
            wrapped_key=fields[WRAPPED_KEY],
            policy=WorkspacePolicy.loads(fields[SCHEMA]),
            inviter_chain=chain,
        )
    except KeyError as e:
        raise InvitationInvalid(f"invitation missing field {e}") from None
    except (TlvError, ValueError) as e:
        if isinstance(e, InvitationInvalid):
            raise
        raise InvitationInvalid(f"malformed invitation: {e}") from None


def _split_packets(raw: bytes) -> list[bytes]:
    return [el.encode() for el in iter_tlv(raw)]


# -- member state -------------------------------------------------------------


@dataclass
class MemberRecord:
    username: str
    workspace_cert_name: Name | None = None
    latest_invitation_version: int = 0
    valid_until: int = 0
    intervals: list[tuple[int, int]] = field(default_factory=list)

    def covers(self, t: int) -> bool:
        return any(lo <= t <= hi for lo, hi in self.intervals)


MemberRecords = dict[str, MemberRecord]


def record_initiator(records: MemberRecords, username: str) -> MemberRecord:
    rec = records.setdefault(username, MemberRecord(username))
    if (0, FOREVER) not in rec.intervals:
        rec.intervals.append((0, FOREVER))
        rec.intervals.sort()
    rec.valid_until = FOREVER
    return rec


def record_invitation(records: MemberRecords, inv: Invitation) -> MemberRecord:
    rec = records.setdefault(inv.invitee, MemberRecord(inv.invitee))
    span = (inv.not_before, inv.not_after)
    if span not in rec.intervals:
        rec.intervals.append(span)
        rec.intervals.sort()
    rec.latest_invitation_version = max(rec.latest_invitation_version, inv.version)
    rec.valid_until = max(rec.valid_until, inv.not_after)
    return rec


def membership_status(records: Mapping[str, MemberRecord], username: str, now: int) -> Status:
    rec = records.get(username)
    if rec is None or not rec.intervals:
        return Status.UNKNOWN
    return Status.ACTIVE if rec.valid_until >= now else Status.EXPIRED


@dataclass
class MemberState:
    """Everything a member's local instance holds about one workspace."""

    username: str
    workspace: Name
    personal: Identity
    workspace_identity: Identity
    group_key: GroupKey
    policy: WorkspacePolicy
    instance_cert: Certificate
    domain_cert: Certificate
    endorsement_chain: tuple[Certificate, ...]
    instance: WorkspaceInstance | None = None
    invitation: Invitation | None = None
    last_invite_version: int = 0
    invited: dict[str, Certificate] = field(default_factory=dict)
    records: MemberRecords = field(default_factory=dict)

    @property
    def is_initiator(self) -> bool:
        return self.username == self.policy.initiator

    @property
    def model(self) -> MembershipModel:
        return self.policy.model

    @property
    def schema(self) -> TrustSchema:
        return self.policy.schema

    @property
    def cert_name(self) -> Name:
        return self.workspace_identity.cert_name

    def certificates(self) -> list[Certificate]:
        """Certificates a peer needs to validate this member's publications."""
        return [self.instance_cert, *self.endorsement_chain, self.workspace_identity.cert]

    def status(self, now: int) -> Status:
        return membership_status(self.records, self.username, now)


def _derive_seed(secret: bytes, label: bytes) -> bytes:
    return hashlib.sha256(b"wksp/derive/" + secret + b"/" + label).digest()


def _workspace_key(personal: KeyPair, workspace: Name) -> KeyPair:
    # Derived, so accepting the same invitation twice (or after a restart) yields the same key.
    return generate_keypair(_derive_seed(personal.private_key, str(workspace).encode("utf-8")))


def _workspace_cert(workspace: Name, username: str, personal: KeyPair, endorsement: Certificate, ws_key: KeyPair,
                    not_before: int) -> Certificate:
    return issue_cert(
        personal,
        endorsement.name,
        ws_key.public_key,
        workspace.append(username),
        not_before,
        not_before + CERT_LIFETIME_MS,
        issuer_label=username,
    )


def create_workspace(
    name: Name,
    root: Identity,
    model: MembershipModel = MembershipModel.INITIATOR_ONLY,
    now: int = 0,
    random_bytes: RandomBytes = os.urandom,
) -> WorkspaceInstance:
    """Fresh instance key certified by the domain root, fresh group key, default rules."""
    kp = generate_keypair(random_bytes(32))
    cert = issue_cert(
        root.keypair,
        root.cert_name,
        kp.public_key,
        name,
        now,
        now + CERT_LIFETIME_MS,
        issuer_label=root.cert.identity.text(-1),
    )
    gk = new_group_key(name.append("GROUPKEY", "v=1"), random_bytes)
    schema = compile_schema(default_rules(name, root.cert.identity))
    return WorkspaceInstance(name, kp, cert, root.cert, gk, schema, model)


def bootstrap_initiator(instance: WorkspaceInstance, email: str, personal_key: KeyPair, now: int = 0) -> MemberState:
    """The initiator's own membership: the instance key endorses its personal key."""
    endorsement = issue_cert(
        instance.keypair,
        instance.instance_cert.name,
        personal_key.public_key,
        Name([email]),
        now,
        now + CERT_LIFETIME_MS,
        issuer_label=instance.name.text(-1),
    )
    ws_key = _workspace_key(personal_key, instance.name)
    ws_cert = _workspace_cert(instance.name, email, personal_key, endorsement, ws_key, now)
    policy = WorkspacePolicy(instance.schema, instance.model, email)
    state = MemberState(
        username=email,
        workspace=instance.name,
        personal=Identity(personal_key, endorsement),
        workspace_identity=Identity(ws_key, ws_cert),
        group_key=instance.group_key,
        policy=policy,
        instance_cert=instance.instance_cert,
        domain_cert=instance.domain_cert,
        endorsement_chain=(endorsement,),
        instance=instance,
    )
    rec = record_initiator(state.records, email)
    rec.workspace_cert_name = ws_cert.name
    return state


def validate_invitation(inv: Invitation, domain_cert: Certificate, at: int) -> Validator:
    """Check an invitation's chain, signature and rule; return the validator holding its certs.

    Signatures are judged as of the invitation's issue time, so historical
    invitations stay verifiable after they lapse.
    """
    validator = Validator(inv.policy.schema, [domain_cert])
    validator.admit([inv.instance_cert, *inv.inviter_chain])
    if not validator.store.is_validated(inv.instance_cert.name):
        raise InvitationInvalid("workspace instance certificate does not chain to the trusted root")
    if inv.workspace != inv.instance_cert.identity:
        raise InvitationInvalid("invitation is not for this workspace instance")
    verdict = validator.validate(inv.packet, at)
    if not verdict:
        raise InvitationInvalid(f"invitation {inv.name}: {verdict.reason}")
    if inv.invitee_cert.key_locator != inv.packet.sig_info.key_locator:
        raise InvitationInvalid("invitee certificate not issued by the inviter")
    validator.admit([inv.invitee_cert])
    if not validator.store.is_validated(inv.invitee_cert.name):
        raise InvitationInvalid("invitee certificate does not verify under the inviter's key")
    return validator


def bootstrap_member(
    email: str,
    personal_key: KeyPair,
    invitation: Invitation,
    domain_cert: Certificate,
    now: int,
) -> MemberState:
    """Join a workspace from an invitation (validated against the configured root)."""
    validate_invitation(invitation, domain_cert, invitation.not_before)
    if invitation.invitee != email or invitation.invitee_cert.public_key != personal_key.public_key:
        raise WrongInvitee(f"invitation {invitation.name} is for {invitation.invitee}, not {email}")
    if not invitation.packet.sig_info.covers(now):
        raise Expired(f"invitation {invitation.name} is not valid at {now}")
    try:
        gk = unwrap_group_key(invitation.wrapped_key, personal_key)
    except AuthFailure:
        raise InvitationInvalid("cannot unwrap the group key") from None
    ws = invitation.workspace
    ws_key = _workspace_key(personal_key, ws)
    ws_cert = _workspace_cert(ws, email, personal_key, invitation.invitee_cert, ws_key, invitation.not_before)
    state = MemberState(
        username=email,
        workspace=ws,
        personal=Identity(personal_key, invitation.invitee_cert),
        workspace_identity=Identity(ws_key, ws_cert),
        group_key=gk,
        policy=invitation.policy,
        instance_cert=invitation.instance_cert,
        domain_cert=domain_cert,
        endorsement_chain=(invitation.invitee_cert, *invitation.inviter_chain),
        invitation=invitation,
    )
    record_initiator(state.records, invitation.policy.initiator)
    rec = record_invitation(state.records, invitation)
    rec.workspace_cert_name = ws_cert.name
    return state


def _check_self_signed(cert: Certificate) -> None:
    if not cert.is_self_issued or not verify_packet_signature(cert.packet, cert.public_key):
        raise MembershipError(f"{cert.name} is not a valid self-signed personal certificate")


def _issue_invitation(
    inviter: MemberState,
    invitee_personal_cert: Certificate,
    lifetime: int,
    now: int,
    random_bytes: RandomBytes,
) -> Invitation:
    if inviter.model is MembershipModel.INITIATOR_ONLY and not inviter.is_initiator:
        raise NotAuthorized(f"{inviter.username} may not invite under the initiator-only model")
    if not inviter.is_initiator and inviter.status(now) is not Status.ACTIVE:
        raise NotAuthorized(f"{inviter.username} is not an active member")
    if lifetime <= 0:
        raise MembershipError("invitation lifetime must be positive")
    invitee = invitee_personal_cert.identity.text(-1)
    version = inviter.last_invite_version + 1
    invitee_cert = issue_cert(
        inviter.personal.keypair,
        inviter.personal.cert_name,
        invitee_personal_cert.public_key,
        Name([invitee]),
        now,
        now + lifetime,
        issuer_label=inviter.username,
        version=version,
    )
    content = encode_invitation_content(
        inviter.instance_cert,
        invitee_cert,
        wrap_group_key(inviter.group_key, invitee_personal_cert.public_key, random_bytes),
        inviter.policy,
        inviter.endorsement_chain,
    )
    pkt = DataPacket(
        make_invite_name(inviter.workspace, inviter.username, version),
        content,
        ContentType.INVITE,
        SigInfo(inviter.personal.cert_name, now, now + lifetime),
    )
    inv = parse_invitation(sign_data(pkt, inviter.personal.keypair, inviter.personal.cert_name))
    inviter.last_invite_version = version
    inviter.invited[invitee] = invitee_personal_cert
    record_invitation(inviter.records, inv)
    return inv


def create_invitation(
    inviter: MemberState,
    invitee_personal_cert: Certificate,
    lifetime: int = DEFAULT_INVITATION_LIFETIME_MS,
    now: int = 0,
    random_bytes: RandomBytes = os.urandom,
) -> Invitation:
    _check_self_signed(invitee_personal_cert)
    return _issue_invitation(inviter, invitee_personal_cert, lifetime, now, random_bytes)


def renew_invitation(
    inviter: MemberState,
    username: str,
    lifetime: int = DEFAULT_INVITATION_LIFETIME_MS,
    now: int = 0,
    random_bytes: RandomBytes = os.urandom,
) -> Invitation:
    cert = inviter.invited.get(username)
    if cert is None:
        raise UnknownMember(f"{inviter.username} never invited {username}")
    return _issue_invitation(inviter, cert, lifetime, now, random_bytes)


def invitee_of(cert: Certificate) -> str:
    return split_cert_name(cert.name)[0].text(-1)
