"""Turning deltas and binary files into signed, encrypted publications and back.

A publication is one DATA packet at ``<ws>/<user>/DATA/seq=<n>``.  Its content
is a plaintext envelope so that storage nodes can find segments without the
group key:

* ``Encrypted``  -- nonce || AES-GCM ciphertext, when it fits in one packet;
* ``Segmented``  -- the name of a blob prefix, a segment count and the SHA-256
  of the concatenated segments, which live at ``<ws>/<user>/BLOB/v=<n>/seg=<i>``.

Inside the encryption is either a Delta or a raw binary file.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from typing import Callable, Mapping, Union

from ..naming import Name, make_blob_name, make_data_name
from ..security import GroupKey, KeyPair, decrypt_content, encrypt_content, sign_data
from ..tlv import (
    DEFAULT_MAX_PACKET_SIZE,
    NAME,
    SEQ_NUM,
    ContentType,
    DataPacket,
    SigInfo,
    TlvError,
    decode_name_value,
    decode_uint,
    encode_name,
    iter_tlv,
    read_tlv,
    tlv,
    tlv_uint,
)
from .codec import DELTA, DIGEST, decode_delta_tlv, encode_delta_tlv
from .doc import BlobRef, Delta

ENCRYPTED = 0xE8
SEGMENTED = 0xE9
RAW_BLOB = 0xEA


class PublicationError(ValueError):
    pass


class EmptyDelta(PublicationError):
    pass


class Incomplete(PublicationError):
    def __init__(self, missing: list[Name]):
        super().__init__(f"{len(missing)} segment(s) missing, first {missing[0]}")
        self.missing = missing


class CorruptBlob(PublicationError):
    pass


@dataclass(frozen=True)
class Publisher:
    """The signing side of a member: workspace key, its certificate, and the group key."""

    workspace: Name
    username: str
    keypair: KeyPair
    cert_name: Name
    group_key: GroupKey


@dataclass(frozen=True)
class SegmentPointer:
    prefix: Name
    count: int
    digest: bytes

    def segment_names(self) -> list[Name]:
        return [self.prefix.append(f"seg={i}") for i in range(self.count)]


Envelope = Union[bytes, SegmentPointer]


def _sign(pub: Publisher, name: Name, content: bytes, now: int, ctype=ContentType.BLOB) -> DataPacket:
    # The signature validity starts at publication time; receivers read latency and membership from it.
    pkt = DataPacket(name, content, ctype, SigInfo(pub.cert_name, now, now + 10 * 365 * 24 * 3600 * 1000))
    return sign_data(pkt, pub.keypair, pub.cert_name)


def seal(
    pub: Publisher,
    plaintext: bytes,
    seq: int,
    now: int,
    max_payload: int = DEFAULT_MAX_PACKET_SIZE,
    nonce_source: Callable[[int], bytes] = os.urandom,
    segment: bool = False,
) -> list[DataPacket]:
    """Encrypt ``plaintext`` as publication ``seq``; the DATA packet comes last."""
    data_name = make_data_name(pub.workspace, pub.username, seq)
    ct = encrypt_content(pub.group_key, plaintext, nonce_source, aad=encode_name(data_name))
    if not segment and len(tlv(ENCRYPTED, ct)) <= max_payload:
        return [_sign(pub, data_name, tlv(ENCRYPTED, ct), now)]
    prefix = make_blob_name(pub.workspace, pub.username, seq)
    chunks = [ct[i : i + max_payload] for i in range(0, len(ct), max_payload)]
    segments = [_sign(pub, prefix.append(f"seg={i}"), c, now) for i, c in enumerate(chunks)]
    pointer = encode_name(prefix) + tlv_uint(SEQ_NUM, len(chunks)) + tlv(DIGEST, hashlib.sha256(ct).digest())
    return segments + [_sign(pub, data_name, tlv(SEGMENTED, pointer), now)]


def encode_delta(
    delta: Delta,
    pub: Publisher,
    seq: int,
    now: int,
    max_payload: int = DEFAULT_MAX_PACKET_SIZE,
    nonce_source: Callable[[int], bytes] = os.urandom,
) -> list[DataPacket]:
    if not delta.ops:
        raise EmptyDelta("nothing to publish")
    body = encode_delta_tlv(Delta(delta.ops, pub.username, seq))
    return seal(pub, body, seq, now, max_payload, nonce_source)


def encode_blob(
    data: bytes,
    pub: Publisher,
    seq: int,
    now: int,
    max_payload: int = DEFAULT_MAX_PACKET_SIZE,
    nonce_source: Callable[[int], bytes] = os.urandom,
) -> tuple[list[DataPacket], BlobRef]:
    """Publish a binary file as an immutable versioned blob; returns packets and the reference to store."""
    packets = seal(pub, tlv(RAW_BLOB, data), seq, now, max_payload, nonce_source, segment=True)
    ref = BlobRef(make_blob_name(pub.workspace, pub.username, seq), len(data), hashlib.sha256(data).digest())
    return packets, ref


def parse_envelope(p: DataPacket) -> Envelope:
    """Ciphertext for a single-packet publication, or the segment pointer."""
    try:
        t, value, end = read_tlv(p.content)
        if end != len(p.content):
            raise PublicationError("trailing bytes after publication envelope")
        if t == ENCRYPTED:
            return value
        if t == SEGMENTED:
            items = list(iter_tlv(value))
            if [i.type for i in items] != [NAME, SEQ_NUM, DIGEST]:
                raise PublicationError("bad segment pointer")
            prefix = decode_name_value(items[0].value)
            if not p.name[:-2].is_prefix_of(prefix) or prefix[-2] != b"BLOB":
                raise PublicationError("segment pointer outside the publisher's namespace")
            count = decode_uint(items[1].value)
            if count < 1 or len(items[2].value) != 32:
                raise PublicationError("bad segment pointer")
            return SegmentPointer(prefix, count, items[2].value)
    except TlvError as e:
        raise PublicationError(f"malformed envelope: {e}") from None
    raise PublicationError(f"unknown envelope type {t:#x}")


def open_publication(p: DataPacket, gk: GroupKey, segments: Mapping[Name, DataPacket] | None = None) -> bytes:
    """Plaintext of a publication, reassembling and digest-checking segments if needed."""
    env = parse_envelope(p)
    if isinstance(env, SegmentPointer):
        segments = segments or {}
        names = env.segment_names()
        missing = [n for n in names if n not in segments]
        if missing:
            raise Incomplete(missing)
        ct = b"".join(segments[n].content for n in names)
        if hashlib.sha256(ct).digest() != env.digest:
            raise CorruptBlob(f"digest mismatch for {env.prefix}")
    else:
        ct = env
    return decrypt_content(gk, ct, aad=encode_name(p.name))


def decode_payload(plaintext: bytes) -> Union[Delta, bytes]:
    """A Delta, or the bytes of a raw binary file."""
    t, value, end = read_tlv(plaintext)
    if end != len(plaintext):
        raise PublicationError("trailing bytes after payload")
    if t == DELTA:
        return decode_delta_tlv(plaintext, strict=False)[0]
    if t == RAW_BLOB:
        return value
    raise PublicationError(f"unknown payload type {t:#x}")


def decode_delta(packets: list[DataPacket], gk: GroupKey) -> Delta:
    """Inverse of :func:`encode_delta` given all packets of one publication."""
    data = [p for p in packets if len(p.name) >= 2 and p.name[-2] == b"DATA"]
    if len(data) != 1:
        raise PublicationError("expected exactly one DATA packet")
    segs = {p.name: p for p in packets if p is not data[0]}
    out = decode_payload(open_publication(data[0], gk, segs))
    if not isinstance(out, Delta):
        raise PublicationError("publication carries a binary file, not a delta")
    return out


def check_blob(ref: BlobRef, data: bytes) -> None:
    if len(data) != ref.byte_length or hashlib.sha256(data).digest() != ref.digest:
        raise CorruptBlob(f"blob {ref.object_name} does not match its reference")
