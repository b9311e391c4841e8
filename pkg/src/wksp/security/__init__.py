"""Keys, certificates, trust schema, web of trust, and group encryption."""

from .certs import (
    CertError,
    Certificate,
    CertStore,
    VerifyResult,
    issue_cert,
    self_sign,
    sign_data,
    verify_data,
    verify_packet_signature,
)
from .groupkey import (
    AuthFailure,
    GroupKey,
    decrypt_content,
    encrypt_content,
    new_group_key,
    unwrap_group_key,
    wrap_group_key,
)
from .keys import KeyPair, generate_keypair, verify_signature
from .schema import (
    PolicyDecision,
    SchemaError,
    TrustRule,
    TrustSchema,
    check_policy,
    compile_schema,
    default_rules,
    default_schema,
)
from .validator import Validator, Verdict
from .wot import DEFAULT_MAX_DEPTH, wot_authenticate

__all__ = [
    "AuthFailure",
    "CertError",
    "CertStore",
    "Certificate",
    "DEFAULT_MAX_DEPTH",
    "GroupKey",
    "KeyPair",
    "PolicyDecision",
    "SchemaError",
    "TrustRule",
    "TrustSchema",
    "Validator",
    "Verdict",
    "VerifyResult",
    "check_policy",
    "compile_schema",
    "decrypt_content",
    "default_rules",
    "default_schema",
    "encrypt_content",
    "generate_keypair",
    "issue_cert",
    "new_group_key",
    "self_sign",
    "sign_data",
    "unwrap_group_key",
    "verify_data",
    "verify_packet_signature",
    "verify_signature",
    "wot_authenticate",
    "wrap_group_key",
]
