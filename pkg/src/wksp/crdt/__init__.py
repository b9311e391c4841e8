"""Convergent document model and its wire encoding."""

from .codec import DeltaDecodeError, decode_delta_tlv, encode_delta_tlv, restore, snapshot, snapshot_digest
from .doc import (
    BlobAttach,
    BlobRef,
    ChangeSummary,
    DeleteText,
    Delta,
    DocError,
    Document,
    InsertText,
    Kind,
    MapSet,
    NodeRef,
    PathNotFound,
    PositionOutOfRange,
    node_id,
)
from .packets import (
    CorruptBlob,
    EmptyDelta,
    Incomplete,
    PublicationError,
    Publisher,
    SegmentPointer,
    check_blob,
    decode_delta,
    decode_payload,
    encode_blob,
    encode_delta,
    open_publication,
    parse_envelope,
)
from .text import HEAD, ElemId, TextCrdt

__all__ = [
    "BlobAttach", "BlobRef", "ChangeSummary", "CorruptBlob", "DeleteText", "Delta", "DeltaDecodeError",
    "DocError", "Document", "ElemId", "EmptyDelta", "HEAD", "Incomplete", "InsertText", "Kind", "MapSet",
    "NodeRef", "PathNotFound", "PositionOutOfRange", "PublicationError", "Publisher", "SegmentPointer",
    "TextCrdt", "check_blob", "decode_delta", "decode_delta_tlv", "decode_payload", "encode_blob",
    "encode_delta", "encode_delta_tlv", "node_id", "open_publication", "parse_envelope", "restore",
    "snapshot", "snapshot_digest",
]
