"""Certificate-chain admission and Data validation for one peer."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from ..naming import Name
from ..tlv import DataPacket
from .certs import Certificate, CertStore, VerifyResult, verify_data, verify_packet_signature
from .schema import PolicyDecision, TrustSchema, check_policy


@dataclass(frozen=True)
class Verdict:
    verify: VerifyResult
    policy: PolicyDecision | None = None

    @property
    def ok(self) -> bool:
        return self.verify is VerifyResult.OK and bool(self.policy)

    @property
    def reason(self) -> str:
        if self.verify is not VerifyResult.OK:
            return self.verify.value
        return "PolicyViolation: " + (self.policy.reason if self.policy else "")

    def __bool__(self) -> bool:
        return self.ok


class Validator:
    """Trust anchors + schema + certificate store.

    A certificate becomes validated when its signer's certificate is
    validated, the signer was valid when the certificate was issued, the
    signature verifies, and -- for names the schema speaks about -- the
    signing relation satisfies a rule.  Certificates outside the schema's
    namespaces (personal web-of-trust certificates) need only the chain.
    """

    def __init__(self, schema: TrustSchema, anchors: Iterable[Certificate] = (), store: CertStore | None = None):
        self.schema = schema
        self.store = store if store is not None else CertStore()
        self.anchors: set[Name] = set()
        for a in anchors:
            self.add_anchor(a)

    def add_anchor(self, cert: Certificate) -> None:
        self.store.add(cert, validated=True)
        self.anchors.add(cert.name)

    def _admissible(self, cert: Certificate) -> bool:
        signer = self.store.get(cert.key_locator)
        if signer is None or signer.name == cert.name or not self.store.is_validated(signer.name):
            return False
        if not signer.valid_at(cert.not_before):
            return False
        if self.schema.governs(cert.name) and not check_policy(self.schema, cert.name, signer.name):
            return False
        return verify_packet_signature(cert.packet, signer.public_key)

    def admit(self, certs: Iterable[Certificate]) -> list[Certificate]:
        """Add certificates and validate everything now reachable; return newly validated ones."""
        for c in certs:
            self.store.add(c)
        newly: list[Certificate] = []
        progress = True
        while progress:
            progress = False
            for c in self.store.pending():
                if self._admissible(c):
                    self.store.mark_validated(c.name)
                    newly.append(c)
                    progress = True
        return newly

    def check_cert(self, cert: Certificate) -> PolicyDecision:
        """Schema decision for one certificate's signing relation."""
        if not self.schema.governs(cert.name):
            return PolicyDecision(True, None, "ungoverned")
        return check_policy(self.schema, cert.name, cert.key_locator)

    def validate(self, p: DataPacket, now: int) -> Verdict:
        v = verify_data(p, self.store, now)
        if v is not VerifyResult.OK:
            return Verdict(v)
        return Verdict(v, check_policy(self.schema, p.name, p.sig_info.key_locator))
