"""The workspace document: folders are LWW maps, text files are RGA sequences.

Nodes are addressed by ids derived from their path and kind (``map:/a``,
``text:/a/b.txt``), so two members creating the same file concurrently end up
with one node, and an edit can be applied before the folder entry that names
the file has arrived.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Union

from ..naming import Name
from .text import HEAD, ElemId, TextCrdt

ROOT = "map:/"


class DocError(ValueError):
    pass


class PathNotFound(DocError):
    pass


class PositionOutOfRange(DocError):
    pass


class InvalidOp(DocError):
    pass


class Kind(enum.Enum):
    MAP = "map"
    TEXT = "text"


def normalize_path(path: str) -> str:
    parts = [p for p in path.split("/") if p]
    return "/" + "/".join(parts)


def node_id(kind: Kind, path: str) -> str:
    return f"{kind.value}:{normalize_path(path)}"


def kind_of(nid: str) -> Kind:
    prefix, sep, _ = nid.partition(":")
    if not sep:
        raise InvalidOp(f"bad node id {nid!r}")
    try:
        return Kind(prefix)
    except ValueError:
        raise InvalidOp(f"bad node id {nid!r}") from None


@dataclass(frozen=True)
class NodeRef:
    kind: Kind
    id: str


@dataclass(frozen=True)
class BlobRef:
    object_name: Name
    byte_length: int
    digest: bytes


@dataclass(frozen=True)
class InsertText:
    node: str
    id: ElemId
    char: str
    origin: ElemId


@dataclass(frozen=True)
class DeleteText:
    node: str
    id: ElemId


@dataclass(frozen=True)
class MapSet:
    node: str
    key: str
    ref: NodeRef
    lamport: int
    writer: str


@dataclass(frozen=True)
class BlobAttach:
    node: str
    key: str
    blob: BlobRef
    lamport: int
    writer: str


Op = Union[InsertText, DeleteText, MapSet, BlobAttach]


@dataclass(frozen=True)
class Delta:
    ops: tuple[Op, ...]
    source: str = ""
    seq: int = 0

    def __len__(self) -> int:
        return len(self.ops)

    def merged(self, other: "Delta") -> "Delta":
        return Delta(self.ops + other.ops, self.source or other.source, self.seq)


@dataclass
class MapEntry:
    value: Union[NodeRef, BlobRef]
    lamport: int
    writer: str

    def key(self) -> tuple[int, bytes]:
        return (self.lamport, self.writer.encode("utf-8"))


class MapCrdt:
    def __init__(self) -> None:
        self.entries: dict[str, MapEntry] = {}

    def set(self, key: str, entry: MapEntry) -> bool:
        cur = self.entries.get(key)
        if cur is not None and cur.key() >= entry.key():
            return False
        self.entries[key] = entry
        return True

    def max_counter(self) -> int:
        return max((e.lamport for e in self.entries.values()), default=0)


Node = Union[MapCrdt, TextCrdt]


@dataclass
class ChangeSummary:
    applied: int = 0
    duplicate: int = 0
    buffered: int = 0
    rejected: int = 0
    released: int = 0


def _validate(op: Op) -> None:
    if isinstance(op, InsertText):
        if kind_of(op.node) is not Kind.TEXT:
            raise InvalidOp("insert into a non-text node")
        if op.id.counter < 1 or not op.id.replica or op.id == op.origin:
            raise InvalidOp(f"bad element id {op.id}")
        if len(op.char) != 1 or 0xD800 <= ord(op.char) <= 0xDFFF:
            raise InvalidOp("element must be one unicode scalar")
        if op.origin != HEAD and op.origin.counter >= op.id.counter:
            raise InvalidOp("origin must precede the element")
    elif isinstance(op, DeleteText):
        if kind_of(op.node) is not Kind.TEXT or op.id == HEAD:
            raise InvalidOp("bad delete")
    elif isinstance(op, (MapSet, BlobAttach)):
        if kind_of(op.node) is not Kind.MAP or not op.key or "/" in op.key:
            raise InvalidOp("bad map entry")
        if op.lamport < 1 or not op.writer:
            raise InvalidOp("bad map timestamp")
        if isinstance(op, MapSet) and kind_of(op.ref.id) is not op.ref.kind:
            raise InvalidOp("node reference kind mismatch")
    else:
        raise InvalidOp(f"unknown op {op!r}")


class Document:
    """One replica's document state plus its Lamport clock and causal buffer."""

    def __init__(self, replica: str):
        self.replica = replica
        self.clock = 0
        self.nodes: dict[str, Node] = {}
        self.pending: list[Op] = []
        self.rejected = 0

    # -- node access ----------------------------------------------------------

    def _node(self, nid: str) -> Node:
        node = self.nodes.get(nid)
        if node is None:
            node = MapCrdt() if kind_of(nid) is Kind.MAP else TextCrdt()
            self.nodes[nid] = node
        return node

    def _peek(self, nid: str) -> Node | None:
        return self.nodes.get(nid)

    def _lookup(self, path: str) -> NodeRef | BlobRef:
        parts = [p for p in path.split("/") if p]
        ref: NodeRef | BlobRef = NodeRef(Kind.MAP, ROOT)
        for i, part in enumerate(parts):
            if not isinstance(ref, NodeRef) or ref.kind is not Kind.MAP:
                raise PathNotFound(path)
            node = self._peek(ref.id)
            entry = node.entries.get(part) if isinstance(node, MapCrdt) else None
            if entry is None:
                raise PathNotFound(path)
            ref = entry.value
        return ref

    def resolve(self, path: str, kind: Kind | None = None) -> NodeRef:
        ref = self._lookup(path)
        if not isinstance(ref, NodeRef) or (kind is not None and ref.kind is not kind):
            raise PathNotFound(f"{path} is not a {kind.value if kind else 'node'}")
        return ref

    def exists(self, path: str) -> bool:
        try:
            self._lookup(path)
            return True
        except PathNotFound:
            return False

    def text(self, path: str) -> str:
        node = self._peek(self.resolve(path, Kind.TEXT).id)
        return node.render() if isinstance(node, TextCrdt) else ""

    def blob(self, path: str) -> BlobRef:
        ref = self._lookup(path)
        if not isinstance(ref, BlobRef):
            raise PathNotFound(f"{path} is not a binary file")
        return ref

    def listdir(self, path: str = "/") -> list[str]:
        node = self._peek(self.resolve(path, Kind.MAP).id)
        return sorted(node.entries) if isinstance(node, MapCrdt) else []

    def tree(self) -> dict:
        """Visible state as nested dicts: text files map to strings, blobs to BlobRefs."""

        def walk(nid: str) -> dict:
            node = self._peek(nid)
            out: dict = {}
            if not isinstance(node, MapCrdt):
                return out
            for key in sorted(node.entries):
                v = node.entries[key].value
                if isinstance(v, BlobRef):
                    out[key] = v
                elif v.kind is Kind.MAP:
                    out[key] = walk(v.id)
                else:
                    t = self._peek(v.id)
                    out[key] = t.render() if isinstance(t, TextCrdt) else ""
            return out

        return walk(ROOT)

    # -- local edits ----------------------------------------------------------

    def _tick(self) -> int:
        self.clock += 1
        return self.clock

    def _commit(self, ops: list[Op]) -> Delta:
        for op in ops:
            self._apply(op)
        return Delta(tuple(ops), self.replica)

    def _entry_op(self, path: str, value: NodeRef | BlobRef) -> Op:
        norm = normalize_path(path)
        parent, _, key = norm.rpartition("/")
        if not key:
            raise PathNotFound("cannot replace the root folder")
        pid = self.resolve(parent or "/", Kind.MAP).id
        if isinstance(value, BlobRef):
            return BlobAttach(pid, key, value, self._tick(), self.replica)
        return MapSet(pid, key, value, self._tick(), self.replica)

    def mkdir(self, path: str, parents: bool = False) -> Delta:
        ops: list[Op] = []
        parts = [p for p in path.split("/") if p]
        todo = [parts] if not parents else [parts[: i + 1] for i in range(len(parts))]
        for prefix in todo:
            p = "/" + "/".join(prefix)
            if parents and self.exists(p):
                continue
            op = self._entry_op(p, NodeRef(Kind.MAP, node_id(Kind.MAP, p)))
            self._apply(op)
            ops.append(op)
        return Delta(tuple(ops), self.replica)

    def create_file(self, path: str) -> Delta:
        return self._commit([self._entry_op(path, NodeRef(Kind.TEXT, node_id(Kind.TEXT, path)))])

    def attach_blob(self, path: str, blob: BlobRef) -> Delta:
        return self._commit([self._entry_op(path, blob)])

    def local_insert(self, path: str, position: int, text: str) -> Delta:
        nid = self.resolve(path, Kind.TEXT).id
        node = self._node(nid)
        assert isinstance(node, TextCrdt)
        if not 0 <= position <= len(node):
            raise PositionOutOfRange(f"{position} not in [0, {len(node)}]")
        origin = node.visible_id(position - 1)
        ops: list[Op] = []
        for ch in text:
            op = InsertText(nid, ElemId(self._tick(), self.replica), ch, origin)
            ops.append(op)
            origin = op.id
        return self._commit(ops)

    def local_delete(self, path: str, position: int, count: int) -> Delta:
        nid = self.resolve(path, Kind.TEXT).id
        node = self._node(nid)
        assert isinstance(node, TextCrdt)
        if count < 0 or position < 0 or position + count > len(node):
            raise PositionOutOfRange(f"[{position}, {position + count}) not in [0, {len(node)}]")
        return self._commit([DeleteText(nid, i) for i in node.visible_ids(position, count)])

    # -- remote application ---------------------------------------------------

    def _ready(self, op: Op) -> bool:
        if isinstance(op, InsertText):
            node = self._peek(op.node)
            return op.origin == HEAD or (isinstance(node, TextCrdt) and op.origin in node)
        if isinstance(op, DeleteText):
            node = self._peek(op.node)
            return isinstance(node, TextCrdt) and op.id in node
        return True

    def _apply(self, op: Op) -> bool:
        if isinstance(op, InsertText):
            self.clock = max(self.clock, op.id.counter)
            return self._node(op.node).insert(op.id, op.char, op.origin)  # type: ignore[union-attr]
        if isinstance(op, DeleteText):
            return self._node(op.node).delete(op.id)  # type: ignore[union-attr]
        self.clock = max(self.clock, op.lamport)
        value = op.ref if isinstance(op, MapSet) else op.blob
        return self._node(op.node).set(op.key, MapEntry(value, op.lamport, op.writer))  # type: ignore[union-attr]

    def apply_remote(self, delta: Delta) -> ChangeSummary:
        """Apply ops in any order; ops whose dependencies are missing wait in ``pending``."""
        summary = ChangeSummary()
        for op in delta.ops:
            try:
                _validate(op)
            except DocError:
                summary.rejected += 1
                self.rejected += 1
                continue
            if not self._ready(op):
                if op not in self.pending:
                    self.pending.append(op)
                    summary.buffered += 1
                else:
                    summary.duplicate += 1
                continue
            if self._apply(op):
                summary.applied += 1
            else:
                summary.duplicate += 1
        if summary.applied:
            summary.released = self._drain()
        return summary

    def _drain(self) -> int:
        released = 0
        progress = True
        while progress and self.pending:
            progress = False
            still = []
            for op in self.pending:
                if self._ready(op):
                    self._apply(op)
                    released += 1
                    progress = True
                else:
                    still.append(op)
            self.pending = still
        return released
