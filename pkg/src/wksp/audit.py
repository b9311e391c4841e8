"""Offline re-validation of a persisted packet store."""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from pathlib import Path

from .crdt import PublicationError, SegmentPointer, parse_envelope
from .membership import MembershipError, parse_invitation
from .naming import Name
from .security import Certificate, CertError, Validator, VerifyResult, default_schema, verify_data
from .sim.store import name_digest, read_store_dir
from .tlv import ContentType, DataPacket, TlvError, decode_data, iter_tlv


@dataclass(frozen=True)
class Problem:
    file: str
    name: str
    reason: str

    def __str__(self) -> str:
        return f"{self.name or self.file}: {self.reason}"


def _certs_in(p: DataPacket) -> list[Certificate]:
    out = []
    try:
        if p.content_type == ContentType.KEY:
            for el in iter_tlv(p.content):
                try:
                    out.append(Certificate(decode_data(el.encode())))
                except (CertError, TlvError):
                    pass
        elif p.content_type == ContentType.INVITE:
            inner = p if p.name[-2] == b"INVITE" else decode_data(p.content)
            out.extend(parse_invitation(inner).certificates())
    except (TlvError, MembershipError, IndexError):
        pass
    return out


def verify_store(directory: str | os.PathLike, anchor_path: str | os.PathLike | None = None) -> tuple[int, list[Problem]]:
    """Check every packet under ``directory``; returns (packets checked, problems)."""
    anchor_pkt, items = read_store_dir(directory)
    if anchor_path is not None:
        anchor_pkt = decode_data(Path(anchor_path).read_bytes())
    if anchor_pkt is None:
        return 0, [Problem(str(directory), "", "no trust anchor (trust-anchor.tlv or --anchor)")]
    anchor = Certificate(anchor_pkt)
    problems: list[Problem] = []
    packets: dict[Name, tuple[str, DataPacket]] = {}
    for path, item in items:
        if isinstance(item, TlvError):
            problems.append(Problem(path.name, "", f"undecodable: {item}"))
            continue
        if path.stem != name_digest(item.name):
            problems.append(Problem(path.name, str(item.name), "file name does not match the packet name"))
            continue
        packets[item.name] = (path.name, item)

    certs = [c for _, p in packets.values() for c in _certs_in(p)]
    instance = next((c for c in certs if c.key_locator == anchor.name), None)
    if instance is None:
        if packets:
            problems.append(Problem(str(directory), "", "no workspace certificate signed by the anchor"))
        return len(packets), problems
    workspace = instance.identity
    validator = Validator(default_schema(workspace, anchor.identity), [anchor])
    validator.admit(certs)

    pointers: dict[Name, DataPacket] = {}
    for name in sorted(packets):
        fname, p = packets[name]
        if not workspace.is_prefix_of(name):
            problems.append(Problem(fname, str(name), "outside the workspace namespace"))
            continue
        kind = name[len(workspace) + 1] if len(name) > len(workspace) + 1 else b""
        if kind == b"BLOB":
            continue
        verdict = validator.validate(p, p.sig_info.not_before)
        if not verdict:
            problems.append(Problem(fname, str(name), verdict.reason))
            continue
        if kind == b"DATA" and p.content_type == ContentType.BLOB:
            try:
                env = parse_envelope(p)
            except PublicationError as e:
                problems.append(Problem(fname, str(name), str(e)))
                continue
            if isinstance(env, SegmentPointer):
                for seg in env.segment_names():
                    pointers[seg] = p

    for name in sorted(packets):
        fname, p = packets[name]
        if len(name) <= len(workspace) + 1 or name[len(workspace) + 1] != b"BLOB":
            continue
        owner = pointers.get(name)
        locator_ok = owner is None or p.sig_info.key_locator == owner.sig_info.key_locator
        expected_owner = workspace.append(name.text(len(workspace)))
        if not locator_ok or not expected_owner.is_prefix_of(p.sig_info.key_locator):
            problems.append(Problem(fname, str(name), "segment signed by the wrong key"))
            continue
        if verify_data(p, validator.store, p.sig_info.not_before) is not VerifyResult.OK:
            problems.append(Problem(fname, str(name), "segment signature does not verify"))

    checked_prefixes = {}
    for seg, ptr in pointers.items():
        checked_prefixes.setdefault(ptr.name, []).append(seg)
    for ptr_name, segs in sorted(checked_prefixes.items()):
        env = parse_envelope(packets[ptr_name][1])
        if not all(s in packets for s in segs):
            continue  # segments not fetched yet is not corruption
        blob = b"".join(packets[s][1].content for s in env.segment_names())
        if hashlib.sha256(blob).digest() != env.digest:
            problems.append(Problem(packets[ptr_name][0], str(ptr_name), "segment digest mismatch"))
    return len(packets) + len([i for i in items if isinstance(i[1], TlvError)]), problems
