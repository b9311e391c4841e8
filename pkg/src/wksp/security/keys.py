"""Ed25519 key pairs.

Keys are kept as raw bytes so they can be derived deterministically from a
seed (the simulator needs reproducible identities) and compared cheaply.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from functools import lru_cache

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey

ED25519 = "ED25519"

# Curve25519 field prime.
_P = 2**255 - 19


@lru_cache(maxsize=4096)
def _private(seed: bytes) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(seed)


@lru_cache(maxsize=4096)
def _public(pub: bytes) -> Ed25519PublicKey:
    return Ed25519PublicKey.from_public_bytes(pub)


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    private_key: bytes = field(repr=False)
    algorithm: str = ED25519

    def sign(self, message: bytes) -> bytes:
        return _private(self.private_key).sign(message)

    def verify(self, message: bytes, signature: bytes) -> bool:
        return verify_signature(self.public_key, message, signature)


def generate_keypair(seed: bytes | None = None) -> KeyPair:
    """New key pair; deterministic when a 32-byte ``seed`` is given."""
    if seed is None:
        seed = os.urandom(32)
    if len(seed) != 32:
        raise ValueError("seed must be 32 bytes")
    pub = _private(seed).public_key().public_bytes_raw()
    return KeyPair(public_key=pub, private_key=bytes(seed))


def verify_signature(public_key: bytes, message: bytes, signature: bytes) -> bool:
    if len(public_key) != 32 or len(signature) != 64:
        return False
    try:
        _public(public_key).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


def x25519_private(kp: KeyPair) -> X25519PrivateKey:
    """The X25519 key sharing the Ed25519 key's secret scalar."""
    return X25519PrivateKey.from_private_bytes(hashlib.sha512(kp.private_key).digest()[:32])


def x25519_public(ed_public: bytes) -> bytes:
    """Map an Ed25519 public key (Edwards y) to its Montgomery u coordinate."""
    if len(ed_public) != 32:
        raise ValueError("Ed25519 public key must be 32 bytes")
    y = int.from_bytes(ed_public, "little") & ((1 << 255) - 1)
    if y >= _P or y == 1:
        raise ValueError("not a usable Ed25519 public key")
    u = (1 + y) * pow(1 - y, _P - 2, _P) % _P
    return u.to_bytes(32, "little")
