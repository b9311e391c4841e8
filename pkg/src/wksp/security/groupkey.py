"""Workspace group key: content encryption and sealed-box style key wrapping."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from ..naming import Name
from ..tlv import TlvError, decode_name, encode_name, read_tlv, tlv
from .keys import KeyPair, x25519_private, x25519_public

AES256GCM = "AES256GCM"
NONCE_LEN = 12
_WRAPPED_KEY = 0xE2
_WRAP_INFO = b"wksp/group-key-wrap/v1"

NonceSource = Callable[[int], bytes]


class AuthFailure(ValueError):
    """Ciphertext failed authentication (wrong key or tampering)."""


@dataclass(frozen=True)
class GroupKey:
    key_id: Name
    symmetric_key: bytes = field(repr=False)
    algorithm: str = AES256GCM

    def __post_init__(self) -> None:
        if len(self.symmetric_key) != 32:
            raise ValueError("group key must be 32 bytes")


def new_group_key(key_id: Name, random_bytes: NonceSource = os.urandom) -> GroupKey:
    return GroupKey(key_id, random_bytes(32))


def encrypt_content(gk: GroupKey, plaintext: bytes, nonce_source: NonceSource = os.urandom, aad: bytes = b"") -> bytes:
    """``nonce || AES-256-GCM(plaintext)``."""
    nonce = nonce_source(NONCE_LEN)
    return nonce + AESGCM(gk.symmetric_key).encrypt(nonce, plaintext, aad)


def decrypt_content(gk: GroupKey, ciphertext: bytes, aad: bytes = b"") -> bytes:
    if len(ciphertext) < NONCE_LEN + 16:
        raise AuthFailure("ciphertext too short")
    try:
        return AESGCM(gk.symmetric_key).decrypt(ciphertext[:NONCE_LEN], ciphertext[NONCE_LEN:], aad)
    except InvalidTag:
        raise AuthFailure("content authentication failed") from None


def _wrap_key(shared: bytes, eph_pub: bytes, recipient: bytes) -> bytes:
    return HKDF(hashes.SHA256(), 32, salt=eph_pub + recipient, info=_WRAP_INFO).derive(shared)


def wrap_group_key(gk: GroupKey, member_public_key: bytes, random_bytes: NonceSource = os.urandom) -> bytes:
    """Encrypt ``gk`` to an Ed25519 public key: ephemeral X25519 + AES-GCM.

    Output is ``ephemeral public key (32) || ciphertext``.
    """
    recipient = x25519_public(member_public_key)
    eph = X25519PrivateKey.from_private_bytes(random_bytes(32))
    eph_pub = eph.public_key().public_bytes_raw()
    shared = eph.exchange(X25519PublicKey.from_public_bytes(recipient))
    key = _wrap_key(shared, eph_pub, recipient)
    body = tlv(_WRAPPED_KEY, encode_name(gk.key_id) + gk.symmetric_key)
    return eph_pub + AESGCM(key).encrypt(b"\x00" * NONCE_LEN, body, eph_pub)


def unwrap_group_key(wrapped: bytes, member: KeyPair) -> GroupKey:
    if len(wrapped) < 32 + 16:
        raise AuthFailure("wrapped key too short")
    eph_pub, ct = wrapped[:32], wrapped[32:]
    recipient = x25519_public(member.public_key)
    try:
        shared = x25519_private(member).exchange(X25519PublicKey.from_public_bytes(eph_pub))
    except ValueError:
        raise AuthFailure("bad ephemeral key") from None
    try:
        body = AESGCM(_wrap_key(shared, eph_pub, recipient)).decrypt(b"\x00" * NONCE_LEN, ct, eph_pub)
    except InvalidTag:
        raise AuthFailure("group key unwrap failed") from None
    try:
        t, value, end = read_tlv(body)
        if t != _WRAPPED_KEY or end != len(body):
            raise AuthFailure("malformed wrapped key")
        name_end = read_tlv(value)[2]
        return GroupKey(decode_name(value[:name_end]), value[name_end:])
    except (TlvError, ValueError):
        raise AuthFailure("malformed wrapped key") from None
