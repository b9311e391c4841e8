"""Trust schema: rules binding data-name patterns to permitted signer patterns."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Union

from ..naming import Literal, Name, NamePattern, NamingError, Variable, format_uri, match_pattern


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class TrustRule:
    id: int
    data: NamePattern
    signer: NamePattern

    @classmethod
    def from_strings(cls, id: int, data: str, signer: str) -> "TrustRule":
        try:
            return cls(int(id), NamePattern.parse(data), NamePattern.parse(signer))
        except NamingError as e:
            raise SchemaError(f"rule {id}: {e}") from None

    def to_json(self) -> dict:
        return {"id": self.id, "data": str(self.data), "signer": str(self.signer)}


@dataclass(frozen=True)
class TrustSchema:
    rules: tuple[TrustRule, ...] = ()

    def to_json(self) -> list[dict]:
        return [r.to_json() for r in self.rules]

    def dumps(self) -> bytes:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":")).encode("utf-8")

    @classmethod
    def loads(cls, raw: Union[bytes, str]) -> "TrustSchema":
        try:
            items = json.loads(raw)
        except (ValueError, UnicodeDecodeError) as e:
            raise SchemaError(f"schema is not valid JSON: {e}") from None
        if not isinstance(items, list):
            raise SchemaError("schema JSON must be a list of rules")
        return compile_schema(items)

    def governs(self, name: Name) -> bool:
        """True if some rule's data pattern admits ``name``."""
        return any(match_pattern(r.data, name) is not None for r in self.rules)


@dataclass(frozen=True)
class PolicyDecision:
    ok: bool
    rule_id: int | None = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.ok


RuleSpec = Union[TrustRule, Mapping]


def compile_schema(rules: Iterable[RuleSpec]) -> TrustSchema:
    """Build a schema from rules or ``{id, data, signer}`` mappings."""
    compiled: list[TrustRule] = []
    seen: set[int] = set()
    for r in rules:
        if not isinstance(r, TrustRule):
            try:
                r = TrustRule.from_strings(r["id"], r["data"], r["signer"])
            except (KeyError, TypeError, ValueError) as e:
                if isinstance(e, SchemaError):
                    raise
                raise SchemaError(f"malformed rule {r!r}") from None
        if r.id in seen:
            raise SchemaError(f"duplicate rule id {r.id}")
        seen.add(r.id)
        compiled.append(r)
    return TrustSchema(tuple(compiled))


def check_policy(schema: TrustSchema, data_name: Name, signer_cert_name: Name) -> PolicyDecision:
    """OK iff some rule matches both names under one consistent variable binding."""
    context = ""
    for rule in schema.rules:
        binding = match_pattern(rule.data, data_name)
        if binding is None:
            continue
        if match_pattern(rule.signer, signer_cert_name, binding) is not None:
            return PolicyDecision(True, rule.id)
        if not context:
            context = f"rule {rule.id}: {format_uri(signer_cert_name)} may not sign {format_uri(data_name)}"
            first = rule.id
    if context:
        return PolicyDecision(False, first, context)
    return PolicyDecision(False, None, f"no rule admits {format_uri(data_name)}")


def _lit(name: Name) -> tuple:
    return tuple(Literal(c) for c in name.components)


def _pat(*parts) -> NamePattern:
    out = []
    for p in parts:
        if isinstance(p, tuple):
            out.extend(p)
        elif isinstance(p, str) and p.startswith("<"):
            out.append(Variable(p[1:-1]))
        else:
            out.append(Literal(p.encode("utf-8") if isinstance(p, str) else p))
    return NamePattern(tuple(out))


def default_rules(workspace: Name, domain: Name) -> list[TrustRule]:
    """The four workspace rules.

    1. the instance certificate is signed by the domain's self-signed key;
    2. a member's workspace certificate is signed by that member's personal key;
    3. an invitation is signed by the inviter's personal key;
    4. application data is signed by the same member's workspace certificate.
    """
    ws, dom = _lit(workspace), _lit(domain)
    personal = ("<user>", "KEY", "<pkid>", "<pissuer>", "<pver>")
    return [
        TrustRule(1, _pat(ws, "KEY", "<kid>", "<issuer>", "<ver>"), _pat(dom, "KEY", "<rkid>", "self", "<rver>")),
        TrustRule(2, _pat(ws, "<user>", "KEY", "<kid>", "<issuer>", "<ver>"), _pat(*personal)),
        TrustRule(3, _pat(ws, "<user>", "INVITE", "<ver>"), _pat(*personal)),
        TrustRule(4, _pat(ws, "<user>", "DATA", "<seq>"), _pat(ws, "<user>", "KEY", "<kid>", "<issuer>", "<ver>")),
    ]


def default_schema(workspace: Name, domain: Name) -> TrustSchema:
    return compile_schema(default_rules(workspace, domain))
