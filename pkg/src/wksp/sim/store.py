"""Insert-only per-node packet store, optionally persisted to a directory."""

from __future__ import annotations

import hashlib
import os
import tempfile
from pathlib import Path

from ..naming import Name
from ..tlv import DataPacket, TlvError, decode_data, encode_data, encode_name

ANCHOR_FILE = "trust-anchor.tlv"


def name_digest(name: Name) -> str:
    return hashlib.sha256(encode_name(name)).hexdigest()


class PacketStore:
    """Maps Data names to packets.  With a directory, each packet is one ``<digest>.tlv`` file."""

    def __init__(self, directory: str | os.PathLike | None = None):
        self.directory = Path(directory) if directory is not None else None
        self._packets: dict[Name, DataPacket] = {}
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)

    def __contains__(self, name: Name) -> bool:
        return name in self._packets

    def __len__(self) -> int:
        return len(self._packets)

    def get(self, name: Name) -> DataPacket | None:
        return self._packets.get(name)

    def names(self) -> list[Name]:
        return sorted(self._packets)

    def _write(self, filename: str, data: bytes) -> None:
        assert self.directory is not None
        fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".part")
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, self.directory / filename)

    def persist(self, packet: DataPacket) -> bool:
        """Insert; False if the name is already stored (the first copy wins)."""
        if packet.name in self._packets:
            return False
        self._packets[packet.name] = packet
        if self.directory is not None:
            filename = name_digest(packet.name) + ".tlv"
            if not (self.directory / filename).exists():
                self._write(filename, encode_data(packet))
        return True

    def set_anchor(self, cert_packet: DataPacket) -> None:
        if self.directory is not None:
            self._write(ANCHOR_FILE, encode_data(cert_packet))

    def clear_memory(self) -> None:
        """Forget the in-memory index (as a crash would); files stay."""
        self._packets.clear()

    def load_all(self) -> list[DataPacket]:
        """Read every stored packet from disk, sorted by name; the in-memory index is rebuilt."""
        if self.directory is None:
            return [self._packets[n] for n in sorted(self._packets)]
        out = []
        for path in sorted(self.directory.glob("*.tlv")):
            if path.name == ANCHOR_FILE:
                continue
            out.append(decode_data(path.read_bytes()))
        out.sort(key=lambda p: p.name)
        self._packets = {p.name: p for p in out}
        return out

    def highest_under(self, prefix: Name) -> DataPacket | None:
        """The stored packet under ``prefix`` whose next component sorts highest numerically."""
        best: tuple[int, Name] | None = None
        for name in self._packets:
            if len(name) > len(prefix) and prefix.is_prefix_of(name):
                comp = name.text(len(prefix))
                _, _, num = comp.partition("=")
                key = int(num) if num.isdigit() else -1
                if best is None or (key, name) > best:
                    best = (key, name)
        return self._packets[best[1]] if best else None


def read_store_dir(directory: str | os.PathLike) -> tuple[DataPacket | None, list[tuple[Path, DataPacket | TlvError]]]:
    """(anchor, [(file, packet-or-decode-error)]) for offline checking."""
    d = Path(directory)
    anchor_path = d / ANCHOR_FILE
    anchor = decode_data(anchor_path.read_bytes()) if anchor_path.exists() else None
    items: list[tuple[Path, DataPacket | TlvError]] = []
    for path in sorted(d.glob("*.tlv")):
        if path.name == ANCHOR_FILE:
            continue
        try:
            items.append((path, decode_data(path.read_bytes())))
        except TlvError as e:
            items.append((path, e))
    return anchor, items
