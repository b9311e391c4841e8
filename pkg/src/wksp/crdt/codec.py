"""TLV encoding of deltas and canonical document snapshots."""

from __future__ import annotations

import hashlib

from ..tlv import (
    NAME,
    SEQ_NUM,
    TlvError,
    decode_name_value,
    decode_uint,
    encode_name,
    iter_tlv,
    read_tlv,
    tlv,
    tlv_uint,
)
from .doc import (
    BlobAttach,
    BlobRef,
    DeleteText,
    Delta,
    InsertText,
    Document,
    Kind,
    MapCrdt,
    MapEntry,
    MapSet,
    NodeRef,
    Op,
)
from .text import Elem, ElemId, TextCrdt

DELTA = 0xD0
INSERT_TEXT = 0xD1
DELETE_TEXT = 0xD2
MAP_SET = 0xD3
BLOB_ATTACH = 0xD4
ELEM_ID = 0xD5
UTF8 = 0xD6
NODE_REF = 0xD7
DIGEST = 0xD8

SNAPSHOT_MAGIC = b"WKSP"
SNAPSHOT_VERSION = 1
_SNAP_NODE = 0xDA
_SNAP_ELEM = 0xDB
_SNAP_ENTRY = 0xDC
_SNAP_PENDING = 0xDD
_DELETED = 0xDE
_SNAP_BLOB = 0xDF


class DeltaDecodeError(TlvError):
    pass


def _s(value: str) -> bytes:
    return tlv(UTF8, value.encode("utf-8"))


def _eid(e: ElemId) -> bytes:
    return tlv(ELEM_ID, tlv_uint(SEQ_NUM, e.counter) + _s(e.replica))


def _blob(b: BlobRef) -> bytes:
    return encode_name(b.object_name) + tlv_uint(SEQ_NUM, b.byte_length) + tlv(DIGEST, b.digest)


def _ref(r: NodeRef) -> bytes:
    return tlv(NODE_REF, _s(r.kind.value) + _s(r.id))


def encode_op(op: Op) -> bytes:
    if isinstance(op, InsertText):
        return tlv(INSERT_TEXT, _s(op.node) + _eid(op.id) + _s(op.char) + _eid(op.origin))
    if isinstance(op, DeleteText):
        return tlv(DELETE_TEXT, _s(op.node) + _eid(op.id))
    if isinstance(op, MapSet):
        return tlv(MAP_SET, _s(op.node) + _s(op.key) + _ref(op.ref) + tlv_uint(SEQ_NUM, op.lamport) + _s(op.writer))
    if isinstance(op, BlobAttach):
        return tlv(
            BLOB_ATTACH, _s(op.node) + _s(op.key) + _blob(op.blob) + tlv_uint(SEQ_NUM, op.lamport) + _s(op.writer)
        )
    raise TypeError(f"not an op: {op!r}")


def encode_delta_tlv(delta: Delta) -> bytes:
    body = _s(delta.source) + tlv_uint(SEQ_NUM, delta.seq) + b"".join(encode_op(op) for op in delta.ops)
    return tlv(DELTA, body)


# -- decoding -----------------------------------------------------------------


class _Fields:
    """Sequential reader over a fixed field layout."""

    def __init__(self, value: bytes):
        self.items = list(iter_tlv(value))
        self.i = 0

    def take(self, type_: int) -> bytes:
        if self.i >= len(self.items) or self.items[self.i].type != type_:
            raise DeltaDecodeError(f"expected field {type_:#x}")
        self.i += 1
        return self.items[self.i - 1].value

    def str(self) -> str:
        try:
            return self.take(UTF8).decode("utf-8")
        except UnicodeDecodeError:
            raise DeltaDecodeError("invalid UTF-8") from None

    def uint(self) -> int:
        return decode_uint(self.take(SEQ_NUM))

    def eid(self) -> ElemId:
        f = _Fields(self.take(ELEM_ID))
        out = ElemId(f.uint(), f.str())
        f.done()
        return out

    def done(self) -> None:
        if self.i != len(self.items):
            raise DeltaDecodeError("trailing fields")


def _decode_ref(value: bytes) -> NodeRef:
    f = _Fields(value)
    kind, id = f.str(), f.str()
    f.done()
    try:
        return NodeRef(Kind(kind), id)
    except ValueError:
        raise DeltaDecodeError(f"unknown node kind {kind!r}") from None


def decode_op(type_: int, value: bytes) -> Op:
    f = _Fields(value)
    if type_ == INSERT_TEXT:
        op: Op = InsertText(f.str(), f.eid(), f.str(), f.eid())
    elif type_ == DELETE_TEXT:
        op = DeleteText(f.str(), f.eid())
    elif type_ == MAP_SET:
        node, key = f.str(), f.str()
        ref = _decode_ref(f.take(NODE_REF))
        op = MapSet(node, key, ref, f.uint(), f.str())
    elif type_ == BLOB_ATTACH:
        node, key = f.str(), f.str()
        blob = BlobRef(decode_name_value(f.take(NAME)), f.uint(), f.take(DIGEST))
        op = BlobAttach(node, key, blob, f.uint(), f.str())
    else:
        raise DeltaDecodeError(f"unknown op type {type_:#x}")
    f.done()
    return op


def decode_delta_tlv(buf: bytes, strict: bool = True) -> tuple[Delta, int]:
    """Decode a Delta element; with ``strict=False`` malformed ops are dropped and counted."""
    t, value, end = read_tlv(buf)
    if t != DELTA or end != len(buf):
        raise DeltaDecodeError("not a single Delta element")
    items = list(iter_tlv(value))
    if len(items) < 2 or items[0].type != UTF8 or items[1].type != SEQ_NUM:
        raise DeltaDecodeError("delta header missing")
    try:
        source = items[0].value.decode("utf-8")
    except UnicodeDecodeError:
        raise DeltaDecodeError("invalid UTF-8") from None
    seq = decode_uint(items[1].value)
    ops: list[Op] = []
    bad = 0
    for el in items[2:]:
        try:
            ops.append(decode_op(el.type, el.value))
        except TlvError:
            if strict:
                raise
            bad += 1
    return Delta(tuple(ops), source, seq), bad


# -- snapshots ----------------------------------------------------------------


def _encode_node(nid: str, node) -> bytes:
    if isinstance(node, TextCrdt):
        body = b"".join(
            tlv(_SNAP_ELEM, _eid(e.id) + _s(e.char) + _eid(e.origin) + (tlv(_DELETED) if e.deleted else b""))
            for e in node.elems
        )
    else:
        parts = []
        for key in sorted(node.entries):
            ent = node.entries[key]
            value = _ref(ent.value) if isinstance(ent.value, NodeRef) else tlv(_SNAP_BLOB, _blob(ent.value))
            parts.append(tlv(_SNAP_ENTRY, _s(key) + value + tlv_uint(SEQ_NUM, ent.lamport) + _s(ent.writer)))
        body = b"".join(parts)
    return tlv(_SNAP_NODE, _s(nid) + body)


def snapshot(doc: Document) -> bytes:
    """Canonical bytes: equal visible and internal state gives equal bytes on every replica."""
    nodes = []
    for nid in sorted(doc.nodes):
        node = doc.nodes[nid]
        empty = not node.elems if isinstance(node, TextCrdt) else not node.entries
        if not empty:
            nodes.append(_encode_node(nid, node))
    pending = sorted(encode_op(op) for op in doc.pending)
    body = b"".join(nodes) + b"".join(tlv(_SNAP_PENDING, p) for p in pending)
    return SNAPSHOT_MAGIC + bytes([SNAPSHOT_VERSION]) + body


def snapshot_digest(doc: Document) -> str:
    return hashlib.sha256(snapshot(doc)).hexdigest()


def restore(data: bytes, replica: str) -> Document:
    if data[:4] != SNAPSHOT_MAGIC or len(data) < 5:
        raise DeltaDecodeError("not a workspace snapshot")
    if data[4] != SNAPSHOT_VERSION:
        raise DeltaDecodeError(f"unsupported snapshot version {data[4]}")
    doc = Document(replica)
    for el in iter_tlv(data[5:]):
        if el.type == _SNAP_PENDING:
            t, v, _ = read_tlv(el.value)
            doc.pending.append(decode_op(t, v))
            continue
        if el.type != _SNAP_NODE:
            raise DeltaDecodeError(f"unexpected snapshot element {el.type:#x}")
        inner = list(iter_tlv(el.value))
        nid = inner[0].value.decode("utf-8")
        node = doc._node(nid)
        if isinstance(node, TextCrdt):
            elems = []
            for item in inner[1:]:
                f = _Fields(item.value)
                e = Elem(f.eid(), f.str(), f.eid())
                if f.i < len(f.items):
                    f.take(_DELETED)
                    e.deleted = True
                f.done()
                elems.append(e)
            node.load(elems)
        else:
            assert isinstance(node, MapCrdt)
            for item in inner[1:]:
                f = _Fields(item.value)
                key = f.str()
                kind = f.items[f.i].type
                if kind == NODE_REF:
                    value = _decode_ref(f.take(NODE_REF))
                else:
                    g = _Fields(f.take(_SNAP_BLOB))
                    value = BlobRef(decode_name_value(g.take(NAME)), g.uint(), g.take(DIGEST))
                    g.done()
                node.entries[key] = MapEntry(value, f.uint(), f.str())
                f.done()
    doc.clock = max((n.max_counter() for n in doc.nodes.values()), default=0)
    return doc
