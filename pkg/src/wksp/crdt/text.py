"""Replicated text: an RGA sequence with tombstones.

Elements live in one flat list in document order.  A new element goes right
after its origin, skipping any run of elements with larger ids; with Lamport
counters that run is exactly the concurrent siblings that sort before it plus
their descendants, so every replica computes the same position.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import total_ordering


@total_ordering
@dataclass(frozen=True)
class ElemId:
    counter: int
    replica: str

    def _key(self) -> tuple[int, bytes]:
        return (self.counter, self.replica.encode("utf-8"))

    def __lt__(self, other: "ElemId") -> bool:
        return self._key() < other._key()

    def __str__(self) -> str:
        return f"{self.counter}@{self.replica}"


HEAD = ElemId(0, "")


@dataclass(eq=False)
class Elem:
    id: ElemId
    char: str
    origin: ElemId
    deleted: bool = False


class TextCrdt:
    def __init__(self) -> None:
        self.elems: list[Elem] = []
        self._by_id: dict[ElemId, Elem] = {}

    def __contains__(self, id: ElemId) -> bool:
        return id == HEAD or id in self._by_id

    def __len__(self) -> int:
        """Visible length."""
        return sum(1 for e in self.elems if not e.deleted)

    def render(self) -> str:
        return "".join(e.char for e in self.elems if not e.deleted)

    def max_counter(self) -> int:
        return max((e.id.counter for e in self.elems), default=0)

    def visible_id(self, pos: int) -> ElemId:
        """Id of the visible element at ``pos``; position -1 is HEAD."""
        if pos < 0:
            return HEAD
        seen = 0
        for e in self.elems:
            if not e.deleted:
                if seen == pos:
                    return e.id
                seen += 1
        raise IndexError(pos)

    def visible_ids(self, pos: int, count: int) -> list[ElemId]:
        out = []
        seen = 0
        for e in self.elems:
            if e.deleted:
                continue
            if pos <= seen < pos + count:
                out.append(e.id)
            seen += 1
        return out

    def can_insert(self, origin: ElemId) -> bool:
        return origin in self

    def insert(self, id: ElemId, char: str, origin: ElemId) -> bool:
        """Integrate one element; False if it was already present."""
        if id in self._by_id:
            return False
        if origin not in self:
            raise KeyError(origin)
        i = 0 if origin == HEAD else self.elems.index(self._by_id[origin]) + 1
        while i < len(self.elems) and self.elems[i].id > id:
            i += 1
        e = Elem(id, char, origin)
        self.elems.insert(i, e)
        self._by_id[id] = e
        return True

    def delete(self, id: ElemId) -> bool:
        """Tombstone; False if already deleted.  KeyError if unknown."""
        e = self._by_id[id]
        if e.deleted:
            return False
        e.deleted = True
        return True

    def load(self, elems: list[Elem]) -> None:
        """Install an already-ordered element list (snapshot restore)."""
        self.elems = list(elems)
        self._by_id = {e.id: e for e in self.elems}
