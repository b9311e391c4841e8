"""State Vector Sync: vector algebra, the per-peer sync state machine, and fetch retries.

Everything here is pure bookkeeping over an injected clock and rng; the peer
turns the returned deadlines into timers and the returned pairs into Interests.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping

from .naming import Name, make_sync_name
from .tlv import InterestPacket, TlvError, decode_state_vector, encode_state_vector

StateVector = Mapping[str, int]


class Ordering(enum.Enum):
    EQUAL = "EQUAL"
    LOCAL_NEWER = "LOCAL_NEWER"
    REMOTE_NEWER = "REMOTE_NEWER"
    DIVERGENT = "DIVERGENT"


def sv_merge(a: StateVector, b: StateVector) -> dict[str, int]:
    out = dict(a)
    for k, v in b.items():
        if v > out.get(k, 0):
            out[k] = v
    return out


def sv_compare(local: StateVector, remote: StateVector) -> Ordering:
    local_ahead = any(v > remote.get(k, 0) for k, v in local.items())
    remote_ahead = any(v > local.get(k, 0) for k, v in remote.items())
    if local_ahead and remote_ahead:
        return Ordering.DIVERGENT
    if local_ahead:
        return Ordering.LOCAL_NEWER
    if remote_ahead:
        return Ordering.REMOTE_NEWER
    return Ordering.EQUAL


def sv_gaps(local: StateVector, remote: StateVector) -> list[tuple[str, int]]:
    """(producer, seq) pairs the remote vector knows about and ``local`` does not."""
    return [(u, s) for u in sorted(remote) for s in range(local.get(u, 0) + 1, remote[u] + 1)]


def sv_covers(a: StateVector, b: StateVector) -> bool:
    """True if ``a`` is equal to or newer than ``b`` in every entry."""
    return all(a.get(k, 0) >= v for k, v in b.items())


@dataclass(frozen=True)
class SvsConfig:
    steady_interval_ms: int = 30_000
    steady_jitter: float = 0.1
    suppression_max_ms: int = 200
    retry_base_ms: int = 1_000
    retry_factor: int = 2
    retry_max_ms: int = 32_000


@dataclass(frozen=True)
class SyncOutcome:
    ordering: Ordering
    gaps: list[tuple[str, int]]
    reply_at: int | None


class SvsState:
    """Local vector, suppression and steady-state timers for one peer."""

    def __init__(self, workspace: Name, config: SvsConfig = SvsConfig(), rng: random.Random | None = None):
        self.workspace = workspace
        self.sync_name = make_sync_name(workspace)
        self.config = config
        self.rng = rng or random.Random(0)
        self.local: dict[str, int] = {}
        self.reply_at: int | None = None
        self.steady_at: int = 0
        self.malformed = 0

    def _next_steady(self, now: int) -> int:
        span = self.config.steady_interval_ms
        jitter = int(span * self.config.steady_jitter)
        return now + span + (self.rng.randint(-jitter, jitter) if jitter else 0)

    def reset_steady(self, now: int) -> int:
        self.steady_at = self._next_steady(now)
        return self.steady_at

    def publish(self, username: str) -> int:
        seq = self.local.get(username, 0) + 1
        self.local[username] = seq
        return seq

    def restore_own(self, username: str, seq: int) -> None:
        if seq > self.local.get(username, 0):
            self.local[username] = seq

    def sync_interest(self, piggyback: bytes = b"") -> InterestPacket:
        return InterestPacket(self.sync_name, app_params=encode_state_vector(self.local) + piggyback)

    def sent_sync(self, now: int) -> None:
        """Any outgoing Sync Interest satisfies a pending reply and restarts the steady timer."""
        self.reply_at = None
        self.reset_steady(now)

    def on_sync_vector(self, remote: StateVector, now: int) -> SyncOutcome:
        order = sv_compare(self.local, remote)
        gaps: list[tuple[str, int]] = []
        if order in (Ordering.REMOTE_NEWER, Ordering.DIVERGENT):
            gaps = sv_gaps(self.local, remote)
            self.local = sv_merge(self.local, remote)
        if order in (Ordering.EQUAL, Ordering.REMOTE_NEWER):
            # somebody else already carries everything we know
            self.reply_at = None
            if order is Ordering.EQUAL:
                self.reset_steady(now)
        elif self.reply_at is None:
            self.reply_at = now + self.rng.randint(0, self.config.suppression_max_ms)
        return SyncOutcome(order, gaps, self.reply_at)

    def on_sync_interest(self, interest: InterestPacket, now: int) -> SyncOutcome | None:
        """Decode the vector from a Sync Interest; malformed vectors are counted and ignored."""
        remote = parse_sync_params(interest.app_params or b"")
        if remote is None:
            self.malformed += 1
            return None
        return self.on_sync_vector(remote[0], now)

    def reply_due(self, now: int) -> bool:
        return self.reply_at is not None and self.reply_at <= now

    def steady_due(self, now: int) -> bool:
        return self.steady_at <= now


def parse_sync_params(params: bytes) -> tuple[dict[str, int], int] | None:
    """(vector, offset just past it), or None if the vector does not decode."""
    try:
        return decode_state_vector(params, 0)
    except (TlvError, ValueError):
        return None


def _order(key) -> tuple:
    # publications by (producer, seq) first, then blob segments by name
    if isinstance(key, tuple):
        return (0, key[0], key[1])
    return (1, str(key), 0)


@dataclass
class _Pending:
    attempts: int = 0
    due: int = 0


@dataclass
class Fetcher:
    """Outstanding (producer, seq) fetches with exponential-backoff retries.

    ``delivered`` is the dedup set: a pair is handed upward at most once no
    matter how many copies of its Data arrive.
    """

    config: SvsConfig = field(default_factory=SvsConfig)
    pending: dict[tuple[str, int], _Pending] = field(default_factory=dict)
    delivered: set[tuple[str, int]] = field(default_factory=set)

    def enqueue(self, pairs: Iterable[Hashable], now: int) -> None:
        for p in pairs:
            if p not in self.delivered and p not in self.pending:
                self.pending[p] = _Pending(0, now)

    def backoff(self, attempts: int) -> int:
        c = self.config
        return min(c.retry_base_ms * c.retry_factor ** max(attempts - 1, 0), c.retry_max_ms)

    def due(self, now: int) -> list[tuple[str, int]]:
        """Pairs to (re)issue now; each is rescheduled with backoff."""
        out = []
        for pair, st in sorted(self.pending.items(), key=lambda kv: _order(kv[0])):
            if st.due <= now:
                st.attempts += 1
                st.due = now + self.backoff(st.attempts)
                out.append(pair)
        return out

    def next_deadline(self) -> int | None:
        return min((st.due for st in self.pending.values()), default=None)

    def reissue_all(self, now: int) -> None:
        for st in self.pending.values():
            st.due = now

    def complete(self, pair: tuple[str, int]) -> bool:
        """Mark a pair delivered; False if it already was (a duplicate)."""
        self.pending.pop(pair, None)
        if pair in self.delivered:
            return False
        self.delivered.add(pair)
        return True

    def is_delivered(self, pair: tuple[str, int]) -> bool:
        return pair in self.delivered

    def reset(self) -> None:
        self.pending.clear()
        self.delivered.clear()
