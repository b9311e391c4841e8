"""Canonical TLV wire format for Interest, Data, and state vectors.

Types and lengths are NDN-style variable-size numbers.  Every integer value
(content type, timestamps, sequence numbers) is itself a minimal varnum, so a
given packet has exactly one encoding; signatures depend on that.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterator, Mapping

from .naming import Name

# Tag assignments.
INTEREST = 0x05
DATA = 0x06
NAME = 0x07
NAME_COMPONENT = 0x08
CAN_BE_PREFIX = 0x21
APP_PARAMS = 0x24
CONTENT_TYPE = 0x18
CONTENT = 0x15
SIG_INFO = 0x16
SIG_VALUE = 0x17
SIG_TYPE = 0x1B
KEY_LOCATOR = 0x1C
NOT_BEFORE = 0xF0
NOT_AFTER = 0xF1
STATE_VECTOR = 0xC9
STATE_VECTOR_ENTRY = 0xCA
SEQ_NUM = 0xCC

DEFAULT_MAX_PACKET_SIZE = 8800


class TlvError(ValueError):
    """Structured decode failure; the decoder raises nothing else."""


class Truncated(TlvError):
    pass


class NonMinimalEncoding(TlvError):
    pass


class UnknownTlvType(TlvError):
    pass


class LengthMismatch(TlvError):
    pass


class MalformedPacket(TlvError):
    pass


class ContentType(enum.IntEnum):
    BLOB = 0
    KEY = 2
    INVITE = 3
    SYNC = 4


class SigType(enum.IntEnum):
    ED25519 = 5


# -- varnum -------------------------------------------------------------------


def encode_varnum(n: int) -> bytes:
    if n < 0 or n >= 1 << 64:
        raise ValueError(f"varnum out of range: {n}")
    if n < 253:
        return bytes((n,))
    if n < 1 << 16:
        return b"\xfd" + n.to_bytes(2, "big")
    if n < 1 << 32:
        return b"\xfe" + n.to_bytes(4, "big")
    return b"\xff" + n.to_bytes(8, "big")


_WIDTH = {0xFD: (2, 253), 0xFE: (4, 1 << 16), 0xFF: (8, 1 << 32)}


def decode_varnum(buf: bytes, offset: int = 0) -> tuple[int, int]:
    """Return ``(value, bytes consumed)`` for the varnum at ``offset``."""
    if offset >= len(buf):
        raise Truncated("varnum: no input")
    first = buf[offset]
    if first < 253:
        return first, 1
    width, floor = _WIDTH[first]
    end = offset + 1 + width
    if end > len(buf):
        raise Truncated("varnum: truncated")
    value = int.from_bytes(buf[offset + 1 : end], "big")
    if value < floor:
        raise NonMinimalEncoding(f"varnum {value} encoded in {width + 1} bytes")
    return value, width + 1


# -- generic elements ---------------------------------------------------------


@dataclass(frozen=True)
class TlvElement:
    type: int
    value: bytes = b""

    def encode(self) -> bytes:
        return encode_varnum(self.type) + encode_varnum(len(self.value)) + self.value


def tlv(type_: int, value: bytes = b"") -> bytes:
    return encode_varnum(type_) + encode_varnum(len(value)) + value


def tlv_uint(type_: int, n: int) -> bytes:
    return tlv(type_, encode_varnum(n))


def read_tlv(buf: bytes, offset: int = 0) -> tuple[int, bytes, int]:
    """Read one element; return ``(type, value, next offset)``."""
    t, n1 = decode_varnum(buf, offset)
    ln, n2 = decode_varnum(buf, offset + n1)
    start = offset + n1 + n2
    end = start + ln
    if end > len(buf):
        raise Truncated(f"TLV type {t:#x} wants {ln} bytes, {len(buf) - start} available")
    return t, buf[start:end], end


def iter_tlv(buf: bytes) -> Iterator[TlvElement]:
    off = 0
    while off < len(buf):
        t, v, off = read_tlv(buf, off)
        yield TlvElement(t, v)


def decode_element(buf: bytes) -> TlvElement:
    """Decode exactly one element spanning all of ``buf``."""
    t, v, end = read_tlv(buf, 0)
    if end != len(buf):
        raise LengthMismatch(f"{len(buf) - end} trailing bytes after TLV type {t:#x}")
    return TlvElement(t, v)


def is_critical(t: int) -> bool:
    return t <= 31 or t & 1 == 1


def decode_uint(value: bytes) -> int:
    n, used = decode_varnum(value)
    if used != len(value):
        raise LengthMismatch("integer value has trailing bytes")
    return n


class _Reader:
    """Walks the children of one container, enforcing order and criticality."""

    def __init__(self, value: bytes, known: frozenset[int]) -> None:
        self._els = list(iter_tlv(value))
        self._known = known
        self._i = 0

    def _skip_unknown(self) -> None:
        while self._i < len(self._els) and self._els[self._i].type not in self._known:
            t = self._els[self._i].type
            if is_critical(t):
                raise UnknownTlvType(f"unrecognized critical TLV type {t:#x}")
            self._i += 1

    def optional(self, type_: int) -> bytes | None:
        self._skip_unknown()
        if self._i < len(self._els) and self._els[self._i].type == type_:
            self._i += 1
            return self._els[self._i - 1].value
        return None

    def required(self, type_: int) -> bytes:
        v = self.optional(type_)
        if v is None:
            raise MalformedPacket(f"missing required TLV type {type_:#x}")
        return v

    def repeated(self, type_: int) -> list[bytes]:
        out = []
        while (v := self.optional(type_)) is not None:
            out.append(v)
        return out

    def finish(self) -> None:
        self._skip_unknown()
        if self._i != len(self._els):
            raise MalformedPacket(f"unexpected or out-of-order TLV type {self._els[self._i].type:#x}")


# -- names --------------------------------------------------------------------


def encode_name(name: Name) -> bytes:
    return tlv(NAME, b"".join(tlv(NAME_COMPONENT, c) for c in name.components))


def decode_name_value(value: bytes) -> Name:
    r = _Reader(value, frozenset({NAME_COMPONENT}))
    comps = r.repeated(NAME_COMPONENT)
    r.finish()
    if any(not c for c in comps):
        raise MalformedPacket("empty name component")
    return Name(comps)


def decode_name(buf: bytes) -> Name:
    el = decode_element(buf)
    if el.type != NAME:
        raise MalformedPacket(f"expected Name, got TLV type {el.type:#x}")
    return decode_name_value(el.value)


# -- packets ------------------------------------------------------------------


@dataclass(frozen=True)
class SigInfo:
    key_locator: Name = field(default_factory=Name)
    not_before: int = 0
    not_after: int = 0
    sig_type: SigType = SigType.ED25519

    def __post_init__(self) -> None:
        if self.not_before < 0 or self.not_after < 0:
            raise ValueError("validity timestamps must be non-negative")
        if self.not_before > self.not_after:
            raise ValueError("notBefore must not exceed notAfter")

    def covers(self, t: int) -> bool:
        return self.not_before <= t <= self.not_after


@dataclass(frozen=True)
class DataPacket:
    name: Name
    content: bytes = b""
    content_type: ContentType = ContentType.BLOB
    sig_info: SigInfo = field(default_factory=SigInfo)
    sig_value: bytes = b""

    def __post_init__(self) -> None:
        if not len(self.name):
            raise ValueError("Data name must be non-empty")

    def with_signature(self, sig_info: SigInfo, sig_value: bytes) -> "DataPacket":
        return replace(self, sig_info=sig_info, sig_value=sig_value)


@dataclass(frozen=True)
class InterestPacket:
    name: Name
    can_be_prefix: bool = False
    app_params: bytes | None = None

    def __post_init__(self) -> None:
        if not len(self.name):
            raise ValueError("Interest name must be non-empty")


def _encode_sig_info(si: SigInfo) -> bytes:
    return tlv(
        SIG_INFO,
        tlv_uint(SIG_TYPE, int(si.sig_type))
        + tlv(KEY_LOCATOR, encode_name(si.key_locator))
        + tlv_uint(NOT_BEFORE, si.not_before)
        + tlv_uint(NOT_AFTER, si.not_after),
    )


def signed_portion(p: DataPacket) -> bytes:
    """Bytes covered by the signature: name, content type, content, sig info."""
    return (
        encode_name(p.name)
        + tlv_uint(CONTENT_TYPE, int(p.content_type))
        + tlv(CONTENT, p.content)
        + _encode_sig_info(p.sig_info)
    )


def encode_data(p: DataPacket) -> bytes:
    return tlv(DATA, signed_portion(p) + tlv(SIG_VALUE, p.sig_value))


_DATA_FIELDS = frozenset({NAME, CONTENT_TYPE, CONTENT, SIG_INFO, SIG_VALUE})
_SIG_FIELDS = frozenset({SIG_TYPE, KEY_LOCATOR, NOT_BEFORE, NOT_AFTER})


def _decode_sig_info(value: bytes) -> SigInfo:
    r = _Reader(value, _SIG_FIELDS)
    sig_type = decode_uint(r.required(SIG_TYPE))
    kl = _Reader(r.required(KEY_LOCATOR), frozenset({NAME}))
    locator = decode_name_value(kl.required(NAME))
    kl.finish()
    nb = decode_uint(r.required(NOT_BEFORE))
    na = decode_uint(r.required(NOT_AFTER))
    r.finish()
    try:
        st = SigType(sig_type)
    except ValueError:
        raise MalformedPacket(f"unknown signature type {sig_type}") from None
    if nb > na:
        raise MalformedPacket("notBefore exceeds notAfter")
    return SigInfo(key_locator=locator, not_before=nb, not_after=na, sig_type=st)


def decode_data_value(value: bytes) -> DataPacket:
    r = _Reader(value, _DATA_FIELDS)
    name = decode_name_value(r.required(NAME))
    ct = decode_uint(r.required(CONTENT_TYPE))
    content = r.required(CONTENT)
    sig_info = _decode_sig_info(r.required(SIG_INFO))
    sig_value = r.required(SIG_VALUE)
    r.finish()
    if not len(name):
        raise MalformedPacket("Data name must be non-empty")
    try:
        content_type = ContentType(ct)
    except ValueError:
        raise MalformedPacket(f"unknown content type {ct}") from None
    return DataPacket(name, content, content_type, sig_info, sig_value)


def decode_data(buf: bytes) -> DataPacket:
    el = decode_element(buf)
    if el.type != DATA:
        raise MalformedPacket(f"expected Data, got TLV type {el.type:#x}")
    return decode_data_value(el.value)


def encode_interest(i: InterestPacket) -> bytes:
    body = encode_name(i.name)
    if i.can_be_prefix:
        body += tlv(CAN_BE_PREFIX)
    if i.app_params is not None:
        body += tlv(APP_PARAMS, i.app_params)
    return tlv(INTEREST, body)


def decode_interest_value(value: bytes) -> InterestPacket:
    r = _Reader(value, frozenset({NAME, CAN_BE_PREFIX, APP_PARAMS}))
    name = decode_name_value(r.required(NAME))
    cbp = r.optional(CAN_BE_PREFIX)
    params = r.optional(APP_PARAMS)
    r.finish()
    if cbp is not None and cbp != b"":
        raise LengthMismatch("CanBePrefix must be empty")
    if not len(name):
        raise MalformedPacket("Interest name must be non-empty")
    return InterestPacket(name, cbp is not None, params)


def decode_interest(buf: bytes) -> InterestPacket:
    el = decode_element(buf)
    if el.type != INTEREST:
        raise MalformedPacket(f"expected Interest, got TLV type {el.type:#x}")
    return decode_interest_value(el.value)


def decode_packet(buf: bytes) -> InterestPacket | DataPacket:
    el = decode_element(buf)
    if el.type == INTEREST:
        return decode_interest_value(el.value)
    if el.type == DATA:
        return decode_data_value(el.value)
    raise UnknownTlvType(f"not a packet: TLV type {el.type:#x}")


# -- state vectors ------------------------------------------------------------


def encode_state_vector(entries: Mapping[str, int]) -> bytes:
    """Canonical StateVector TLV; entries sorted by username bytes."""
    items = sorted((u.encode("utf-8"), s) for u, s in entries.items() if s > 0)
    return tlv(
        STATE_VECTOR,
        b"".join(tlv(STATE_VECTOR_ENTRY, tlv(NAME_COMPONENT, u) + tlv_uint(SEQ_NUM, s)) for u, s in items),
    )


def decode_state_vector_value(value: bytes) -> dict[str, int]:
    out: dict[str, int] = {}
    prev: bytes | None = None
    r = _Reader(value, frozenset({STATE_VECTOR_ENTRY}))
    for entry in r.repeated(STATE_VECTOR_ENTRY):
        er = _Reader(entry, frozenset({NAME_COMPONENT, SEQ_NUM}))
        user = er.required(NAME_COMPONENT)
        seq = decode_uint(er.required(SEQ_NUM))
        er.finish()
        if not user or seq == 0:
            raise MalformedPacket("state vector entry needs a username and seq >= 1")
        if prev is not None and user <= prev:
            raise MalformedPacket("state vector entries not sorted or duplicated")
        prev = user
        try:
            out[user.decode("utf-8")] = seq
        except UnicodeDecodeError:
            raise MalformedPacket("username is not UTF-8") from None
    r.finish()
    return out


def decode_state_vector(buf: bytes, offset: int = 0) -> tuple[dict[str, int], int]:
    """Decode the StateVector element at ``offset``; return (entries, next offset)."""
    t, v, end = read_tlv(buf, offset)
    if t != STATE_VECTOR:
        raise MalformedPacket(f"expected StateVector, got TLV type {t:#x}")
    return decode_state_vector_value(v), end
