"""Web-of-trust authentication by breadth-first search over the certificate graph.

An edge leads from a certificate to every stored certificate of the key that
signed it: the KeyLocator names one certificate of that key, and any other
certificate of the same key (same ``<identity>/KEY/<keyid>``) vouches for the
same signer.  Each edge is only followed if the signature actually verifies.
"""

from __future__ import annotations

from collections import deque
from typing import Collection

from ..naming import Name
from .certs import Certificate, CertStore, verify_packet_signature

DEFAULT_MAX_DEPTH = 5


def signer_certs(cert: Certificate, store: CertStore, now: int | None = None) -> list[Certificate]:
    """Stored certificates whose key verifies ``cert``'s signature."""
    kl = cert.key_locator
    if len(kl) < 5:
        return []
    out = []
    for cand in store.by_key(kl[:-2]):
        if now is not None and not cand.valid_at(now):
            continue
        if verify_packet_signature(cert.packet, cand.public_key):
            out.append(cand)
    return out


def wot_authenticate(
    target: Certificate,
    roots: Collection[Name],
    store: CertStore,
    max_depth: int = DEFAULT_MAX_DEPTH,
    now: int | None = None,
) -> list[Name] | None:
    """Shortest chain ``[target, ..., root]`` using at most ``max_depth`` edges, or None."""
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    if now is not None and not target.valid_at(now):
        return None
    roots = set(roots)
    if target.name in roots:
        return [target.name]
    parent: dict[Name, Name | None] = {target.name: None}
    frontier = deque([(target, 0)])
    while frontier:
        cert, depth = frontier.popleft()
        if depth == max_depth:
            continue
        for nxt in signer_certs(cert, store, now):
            if nxt.name in parent:
                continue
            parent[nxt.name] = cert.name
            if nxt.name in roots:
                chain = [nxt.name]
                while (prev := parent[chain[-1]]) is not None:
                    chain.append(prev)
                return chain[::-1]
            frontier.append((nxt, depth + 1))
    return None
