"""Simulated network, per-node packet stores, member peers and the repo."""

from .net import Face, LinkConfig, Partition, SimNet
from .peer import Peer, PeerConfig, Violation
from .repo import RepoNode
from .store import PacketStore, name_digest, read_store_dir

__all__ = [
    "Face", "LinkConfig", "PacketStore", "Partition", "Peer", "PeerConfig", "RepoNode", "SimNet",
    "Violation", "name_digest", "read_store_dir",
]
