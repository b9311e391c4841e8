"""Hierarchical names, URI rendering, and name patterns for trust rules.

A :class:`Name` is an immutable tuple of byte components.  Convention names
(usernames, ``KEY``, ``seq=3``, ``v=1``) are plain UTF-8 components, so the URI
rendering of ``MeetRoom/alice@example.com/DATA/seq=1`` is exactly what a user
would type.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Union

__all__ = [
    "BadPercentEscape",
    "EmptyComponent",
    "Literal",
    "Name",
    "NamingError",
    "NamePattern",
    "Variable",
    "format_uri",
    "is_prefix_of",
    "key_id",
    "make_blob_name",
    "make_cert_name",
    "make_data_name",
    "make_invite_name",
    "make_sync_name",
    "match_pattern",
    "parse_uri",
    "split_cert_name",
]

_SAFE = frozenset(b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789@.=_-")
_HEX = frozenset("0123456789abcdefABCDEF")

KEY = b"KEY"
DATA = b"DATA"
INVITE = b"INVITE"
BLOB = b"BLOB"
SYNC = b"SYNC"
SELF = "self"


class NamingError(ValueError):
    """Base class for name syntax and convention errors."""


class EmptyComponent(NamingError):
    pass


class BadPercentEscape(NamingError):
    pass


ComponentLike = Union[bytes, str]


def _component(c: ComponentLike) -> bytes:
    b = c.encode("utf-8") if isinstance(c, str) else bytes(c)
    if not b:
        raise EmptyComponent("name components must be non-empty")
    return b


@dataclass(frozen=True, order=True)
class Name:
    components: tuple[bytes, ...] = ()

    def __init__(self, components: Iterable[ComponentLike] = ()) -> None:
        object.__setattr__(self, "components", tuple(_component(c) for c in components))

    @classmethod
    def parse(cls, uri: str) -> "Name":
        return parse_uri(uri)

    def __str__(self) -> str:
        return format_uri(self)

    def __repr__(self) -> str:
        return f"Name({format_uri(self)!r})"

    def __len__(self) -> int:
        return len(self.components)

    def __iter__(self) -> Iterator[bytes]:
        return iter(self.components)

    def __getitem__(self, item):
        if isinstance(item, slice):
            return Name(self.components[item])
        return self.components[item]

    def __truediv__(self, other: Union["Name", ComponentLike]) -> "Name":
        if isinstance(other, Name):
            return Name(self.components + other.components)
        return Name(self.components + (_component(other),))

    def append(self, *parts: ComponentLike) -> "Name":
        return Name(self.components + tuple(_component(p) for p in parts))

    def text(self, index: int) -> str:
        """Component ``index`` decoded as UTF-8."""
        return self.components[index].decode("utf-8", errors="replace")

    def is_prefix_of(self, other: "Name") -> bool:
        return is_prefix_of(self, other)

    def index_of(self, component: bytes) -> int:
        """Index of the last occurrence of ``component``, or -1."""
        for i in range(len(self.components) - 1, -1, -1):
            if self.components[i] == component:
                return i
        return -1


def _escape(comp: bytes) -> str:
    return "".join(chr(b) if b in _SAFE else f"%{b:02X}" for b in comp)


def _unescape(text: str) -> bytes:
    out = bytearray()
    i = 0
    raw = text.encode("utf-8")
    while i < len(raw):
        b = raw[i]
        if b == 0x25:  # '%'
            hexpart = raw[i + 1 : i + 3].decode("ascii", errors="replace")
            if len(hexpart) != 2 or not set(hexpart) <= _HEX:
                raise BadPercentEscape(f"bad percent escape in {text!r}")
            out.append(int(hexpart, 16))
            i += 3
        else:
            out.append(b)
            i += 1
    return bytes(out)


def parse_uri(s: str) -> Name:
    """Parse ``a/b/c`` (one optional leading ``/``) into a :class:`Name`."""
    body = s[1:] if s.startswith("/") else s
    parts = body.split("/")
    comps = []
    for part in parts:
        if not part:
            raise EmptyComponent(f"empty component in {s!r}")
        comps.append(_unescape(part))
    return Name(comps)


def format_uri(n: Name) -> str:
    return "/".join(_escape(c) for c in n.components)


def is_prefix_of(p: Name, n: Name) -> bool:
    return len(p.components) <= len(n.components) and n.components[: len(p.components)] == p.components


def _as_name(x: Union[Name, str]) -> Name:
    return x if isinstance(x, Name) else parse_uri(x)


def key_id(public_key: bytes) -> str:
    """``0x`` + lowercase hex of the first 8 bytes of SHA-256(public key)."""
    return "0x" + hashlib.sha256(public_key).digest()[:8].hex()


def _typed(prefix: str, value: int, what: str) -> str:
    if not isinstance(value, int) or value < 1:
        raise NamingError(f"{what} must be a positive integer, got {value!r}")
    return f"{prefix}={value}"


def _user(username: str) -> str:
    if not username:
        raise NamingError("username must be non-empty")
    return username


def make_data_name(workspace: Union[Name, str], username: str, seq: int) -> Name:
    return _as_name(workspace).append(_user(username), DATA, _typed("seq", seq, "sequence number"))


def make_cert_name(
    workspace: Union[Name, str, None], username: str, keyid: str, issuer: str, version: int
) -> Name:
    """``<workspace>/<username>/KEY/<keyid>/<issuer>/v=<version>``.

    ``workspace`` may be ``None`` for personal (workspace-independent) certificates.
    """
    base = Name() if workspace is None else _as_name(workspace)
    if not keyid or not issuer:
        raise NamingError("keyid and issuer must be non-empty")
    return base.append(_user(username), KEY, keyid, issuer, _typed("v", version, "version"))


def make_invite_name(workspace: Union[Name, str], inviter: str, version: int) -> Name:
    return _as_name(workspace).append(_user(inviter), INVITE, _typed("v", version, "version"))


def make_blob_name(workspace: Union[Name, str], username: str, version: int, segment: int | None = None) -> Name:
    name = _as_name(workspace).append(_user(username), BLOB, _typed("v", version, "version"))
    if segment is not None:
        if segment < 0:
            raise NamingError("segment index must be >= 0")
        name = name.append(f"seg={segment}")
    return name


def make_sync_name(workspace: Union[Name, str]) -> Name:
    return _as_name(workspace).append(SYNC)


def split_cert_name(cert_name: Name) -> tuple[Name, str, str, int]:
    """Split ``<identity>/KEY/<keyid>/<issuer>/v=<n>`` into its parts.

    Returns ``(identity, keyid, issuer, version)``; raises :class:`NamingError`
    when the name does not have certificate shape.
    """
    comps = cert_name.components
    if len(comps) < 5 or comps[-4] != KEY:
        raise NamingError(f"not a certificate name: {cert_name}")
    ver = comps[-1].decode("utf-8", errors="replace")
    m = re.fullmatch(r"v=([1-9][0-9]*)", ver)
    if not m:
        raise NamingError(f"bad certificate version component in {cert_name}")
    return (
        Name(comps[:-4]),
        comps[-3].decode("utf-8", errors="replace"),
        comps[-2].decode("utf-8", errors="replace"),
        int(m.group(1)),
    )


def parse_typed(component: bytes, prefix: str) -> int | None:
    """Decode a ``prefix=N`` component, or return None."""
    m = re.fullmatch(rf"{re.escape(prefix)}=(0|[1-9][0-9]*)", component.decode("utf-8", errors="replace"))
    return int(m.group(1)) if m else None


# -- patterns -----------------------------------------------------------------


@dataclass(frozen=True)
class Literal:
    value: bytes


@dataclass(frozen=True)
class Variable:
    label: str


PatternElement = Union[Literal, Variable]
_VAR = re.compile(r"<([A-Za-z_][A-Za-z0-9_]*)>")


@dataclass(frozen=True)
class NamePattern:
    elements: tuple[PatternElement, ...]

    @classmethod
    def parse(cls, text: str) -> "NamePattern":
        """Parse ``<ws>/<user>/DATA/<seq>``; ``<label>`` marks a variable."""
        body = text[1:] if text.startswith("/") else text
        if not body:
            raise EmptyComponent("empty pattern")
        elements: list[PatternElement] = []
        for part in body.split("/"):
            if not part:
                raise EmptyComponent(f"empty component in pattern {text!r}")
            m = _VAR.fullmatch(part)
            if m:
                elements.append(Variable(m.group(1)))
            elif "<" in part or ">" in part:
                raise NamingError(f"malformed variable in pattern {text!r}")
            else:
                elements.append(Literal(_unescape(part)))
        return cls(tuple(elements))

    @classmethod
    def literal(cls, name: Name) -> "NamePattern":
        return cls(tuple(Literal(c) for c in name.components))

    def __str__(self) -> str:
        return "/".join(f"<{e.label}>" if isinstance(e, Variable) else _escape(e.value) for e in self.elements)

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(e.label for e in self.elements if isinstance(e, Variable)))

    def rename(self, mapping: Mapping[str, str]) -> "NamePattern":
        return NamePattern(
            tuple(Variable(mapping.get(e.label, e.label)) if isinstance(e, Variable) else e for e in self.elements)
        )


def match_pattern(
    p: NamePattern, n: Name, binding: Mapping[str, bytes] | None = None
) -> dict[str, bytes] | None:
    """Match ``n`` against ``p``; return the variable binding or None.

    ``binding`` seeds the match with already-bound variables, which is how a
    signer pattern is checked under the binding produced by a data pattern.
    """
    if len(p.elements) != len(n.components):
        return None
    out = dict(binding) if binding else {}
    for el, comp in zip(p.elements, n.components):
        if isinstance(el, Literal):
            if el.value != comp:
                return None
        else:
            bound = out.get(el.label)
            if bound is None:
                out[el.label] = comp
            elif bound != comp:
                return None
    return out
