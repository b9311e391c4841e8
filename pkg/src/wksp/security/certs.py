"""Certificates as Data, packet signing/verification, and the certificate store."""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass
from typing import Iterable, Iterator

from ..naming import Name, NamingError, key_id, make_cert_name, split_cert_name
from ..tlv import ContentType, DataPacket, SigInfo, SigType, signed_portion
from .keys import KeyPair, verify_signature

__all__ = [
    "CertError",
    "CertStore",
    "Certificate",
    "VerifyResult",
    "issue_cert",
    "self_sign",
    "sign_data",
    "verify_data",
    "verify_packet_signature",
]


class CertError(ValueError):
    pass


class VerifyResult(enum.Enum):
    OK = "OK"
    BAD_SIGNATURE = "BadSignature"
    UNKNOWN_CERT = "UnknownCert"
    TIME_INVALID = "TimeInvalid"

    def __bool__(self) -> bool:
        return self is VerifyResult.OK


@dataclass(frozen=True)
class Certificate:
    """A KEY Data packet named ``<identity>/KEY/<keyid>/<issuer>/v=<n>``."""

    packet: DataPacket

    def __post_init__(self) -> None:
        p = self.packet
        if p.content_type != ContentType.KEY:
            raise CertError(f"{p.name} is not a KEY packet")
        if len(p.content) != 32:
            raise CertError(f"{p.name}: certificate content must be a 32-byte public key")
        try:
            split_cert_name(p.name)
        except NamingError as e:
            raise CertError(str(e)) from None

    @property
    def name(self) -> Name:
        return self.packet.name

    @property
    def public_key(self) -> bytes:
        return self.packet.content

    @property
    def identity(self) -> Name:
        return self.name[:-4]

    @property
    def key_name(self) -> Name:
        """``<identity>/KEY/<keyid>``: shared by every certificate of one key."""
        return self.name[:-2]

    @property
    def keyid(self) -> str:
        return self.name.text(-3)

    @property
    def issuer(self) -> str:
        return self.name.text(-2)

    @property
    def key_locator(self) -> Name:
        return self.packet.sig_info.key_locator

    @property
    def not_before(self) -> int:
        return self.packet.sig_info.not_before

    @property
    def not_after(self) -> int:
        return self.packet.sig_info.not_after

    @property
    def is_self_issued(self) -> bool:
        return self.issuer == "self" and self.key_locator == self.name

    def valid_at(self, t: int) -> bool:
        return self.packet.sig_info.covers(t)


def _check_window(not_before: int, not_after: int) -> None:
    if not_before < 0 or not_after < not_before:
        raise CertError(f"invalid validity window [{not_before}, {not_after}]")


def sign_data(p: DataPacket, signer: KeyPair, cert_name: Name) -> DataPacket:
    """Sign ``p`` keeping its validity window; the KeyLocator becomes ``cert_name``."""
    si = SigInfo(
        key_locator=cert_name,
        not_before=p.sig_info.not_before,
        not_after=p.sig_info.not_after,
        sig_type=SigType.ED25519,
    )
    unsigned = p.with_signature(si, b"")
    return unsigned.with_signature(si, signer.sign(signed_portion(unsigned)))


def verify_packet_signature(p: DataPacket, public_key: bytes) -> bool:
    return verify_signature(public_key, signed_portion(p), p.sig_value)


def self_sign(
    subject: KeyPair,
    identity: Name,
    not_before: int,
    not_after: int,
    version: int = 1,
) -> Certificate:
    """Self-signed certificate ``<identity>/KEY/<keyid>/self/v=<version>``."""
    _check_window(not_before, not_after)
    name = identity.append("KEY", key_id(subject.public_key), "self", f"v={version}")
    pkt = DataPacket(name, subject.public_key, ContentType.KEY, SigInfo(name, not_before, not_after))
    return Certificate(sign_data(pkt, subject, name))


def issue_cert(
    issuer: KeyPair,
    issuer_cert_name: Name,
    subject_public_key: bytes,
    subject_identity: Name,
    not_before: int,
    not_after: int,
    issuer_label: str | None = None,
    version: int = 1,
) -> Certificate:
    """Certificate for ``subject_public_key`` carrying ``issuer``'s signature.

    ``issuer_label`` fills the ``<issuer>`` component; by default it is the
    last component of the issuer's identity (``bob@foobar.org``).
    """
    _check_window(not_before, not_after)
    if issuer_label is None:
        issuer_label = split_cert_name(issuer_cert_name)[0].text(-1)
    name = subject_identity.append("KEY", key_id(subject_public_key), issuer_label, f"v={version}")
    pkt = DataPacket(name, subject_public_key, ContentType.KEY, SigInfo(issuer_cert_name, not_before, not_after))
    return Certificate(sign_data(pkt, issuer, issuer_cert_name))


def cert_name_for(workspace: Name | None, username: str, kp: KeyPair, issuer: str, version: int = 1) -> Name:
    return make_cert_name(workspace, username, key_id(kp.public_key), issuer, version)


class CertStore:
    """Certificates by name, indexed by identity and by key.

    Only certificates verified against an already-trusted issuer (or installed
    as anchors) are marked validated.
    """

    def __init__(self, certs: Iterable[Certificate] = ()) -> None:
        self._certs: dict[Name, Certificate] = {}
        self._validated: set[Name] = set()
        self._by_identity: dict[Name, set[Name]] = {}
        self._by_key: dict[Name, set[Name]] = {}
        self._lock = threading.RLock()
        for c in certs:
            self.add(c)

    def add(self, cert: Certificate, validated: bool = False) -> bool:
        """Insert ``cert``; return True if it was not present before."""
        with self._lock:
            new = cert.name not in self._certs
            if new:
                self._certs[cert.name] = cert
                self._by_identity.setdefault(cert.identity, set()).add(cert.name)
                self._by_key.setdefault(cert.key_name, set()).add(cert.name)
            elif self._certs[cert.name].packet != cert.packet:
                # Names are immutable: first writer wins, conflicting copies are ignored.
                return False
            if validated:
                self._validated.add(cert.name)
            return new

    def mark_validated(self, name: Name) -> None:
        with self._lock:
            if name not in self._certs:
                raise KeyError(name)
            self._validated.add(name)

    def get(self, name: Name) -> Certificate | None:
        return self._certs.get(name)

    def __contains__(self, name: object) -> bool:
        return name in self._certs

    def __len__(self) -> int:
        return len(self._certs)

    def __iter__(self) -> Iterator[Certificate]:
        return iter([self._certs[n] for n in sorted(self._certs)])

    def is_validated(self, name: Name) -> bool:
        return name in self._validated

    def validated(self) -> list[Certificate]:
        return [self._certs[n] for n in sorted(self._validated)]

    def pending(self) -> list[Certificate]:
        with self._lock:
            return [self._certs[n] for n in sorted(self._certs) if n not in self._validated]

    def by_identity(self, identity: Name) -> list[Certificate]:
        return [self._certs[n] for n in sorted(self._by_identity.get(identity, ()))]

    def by_key(self, key_name: Name) -> list[Certificate]:
        return [self._certs[n] for n in sorted(self._by_key.get(key_name, ()))]


def verify_data(p: DataPacket, store: CertStore, now: int) -> VerifyResult:
    """OK iff the KeyLocator resolves to a validated cert valid at ``now`` whose key signed ``p``."""
    cert = store.get(p.sig_info.key_locator)
    if cert is None or not store.is_validated(cert.name):
        return VerifyResult.UNKNOWN_CERT
    if not cert.valid_at(now):
        return VerifyResult.TIME_INVALID
    if not verify_packet_signature(p, cert.public_key):
        return VerifyResult.BAD_SIGNATURE
    return VerifyResult.OK
