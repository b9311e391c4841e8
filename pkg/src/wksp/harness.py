"""Scenario files: build a workspace on the simulator, drive it, and report.

A scenario is a JSON object; see ``README.md`` for the full field list.  The
runner is deterministic: keys, nonces, jitter and loss all derive from
``seed``, so the same file and seed give the same event log and report.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import random
import statistics
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

from .crdt import DocError, Delta
from .membership import (
    DEFAULT_INVITATION_LIFETIME_MS,
    Identity,
    MembershipError,
    MembershipModel,
    Status,
    create_invitation,
    create_workspace,
    renew_invitation,
)
from .naming import Name
from .security import Certificate, CertStore, KeyPair, generate_keypair, issue_cert, self_sign, wot_authenticate
from .svs import SvsConfig
from .sim import LinkConfig, PacketStore, Partition, Peer, PeerConfig, RepoNode, SimNet
from .tlv import DataPacket

FAR_FUTURE = 2**53


class ScenarioError(ValueError):
    pass


class AssertionFailed(AssertionError):
    pass


@dataclass(frozen=True)
class PeerSpec:
    username: str
    online: tuple[tuple[int, int], ...] | None = None
    router: str = "r0"


@dataclass(frozen=True)
class InviteSpec:
    t: int
    inviter: str
    invitee: str
    lifetime_ms: int = DEFAULT_INVITATION_LIFETIME_MS


@dataclass(frozen=True)
class EditSpec:
    t: int
    peer: str
    op: str
    path: str
    pos: int = 0
    text: str = ""
    count: int = 0
    data: bytes = b""


@dataclass(frozen=True)
class Scenario:
    seed: int
    workspace: str
    domain: str
    model: MembershipModel
    initiator: str
    peers: tuple[PeerSpec, ...]
    trust_edges: tuple[tuple[str, str], ...] = ()
    invitations: tuple[InviteSpec, ...] = ()
    renewals: tuple[InviteSpec, ...] = ()
    repo: PeerSpec | None = None
    link: LinkConfig = field(default_factory=LinkConfig)
    partitions: tuple[Partition, ...] = ()
    restarts: tuple[tuple[int, str], ...] = ()
    edits: tuple[EditSpec, ...] = ()
    assertions: tuple[Any, ...] = ()
    svs: SvsConfig = field(default_factory=SvsConfig)
    batch_ms: int = 500
    max_payload: int = 8800
    duration_ms: int | None = None
    enforce_own_expiry: bool = True
    start_ms: int = 0

    def peer(self, name: str) -> PeerSpec:
        for p in self.peers:
            if p.username == name:
                return p
        raise KeyError(name)

    def last_event(self) -> int:
        times = [self.start_ms]
        times += [i.t for i in self.invitations + self.renewals]
        times += [e.t for e in self.edits] + [t for t, _ in self.restarts]
        times += [p.end for p in self.partitions]
        for p in self.peers + ((self.repo,) if self.repo else ()):
            if p.online:
                times += [a for a, _ in p.online] + [b for _, b in p.online if b < FAR_FUTURE]
        return max(times)

    def end_time(self) -> int:
        if self.duration_ms is not None:
            return self.duration_ms
        return self.last_event() + 2 * self.svs.steady_interval_ms


def _int(obj: Mapping, key: str, default: int | None = None) -> int:
    v = obj.get(key, default)
    if v is None:
        raise ScenarioError(f"missing field {key!r}")
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
        raise ScenarioError(f"field {key!r} must be an integer")
    return int(v)


def _spans(raw) -> tuple[tuple[int, int], ...] | None:
    if raw is None:
        return None
    out = []
    for span in raw:
        if not isinstance(span, (list, tuple)) or len(span) != 2:
            raise ScenarioError(f"online interval {span!r} must be [start, end]")
        a, b = span
        b = FAR_FUTURE if b is None else b
        if not (isinstance(a, int) and isinstance(b, int)) or a >= b:
            raise ScenarioError(f"bad online interval {span!r}")
        out.append((a, b))
    return tuple(out)


def _peer_spec(raw) -> PeerSpec:
    if isinstance(raw, str):
        return PeerSpec(raw)
    if not isinstance(raw, Mapping) or "username" not in raw:
        raise ScenarioError(f"peer entry {raw!r} needs a username")
    return PeerSpec(str(raw["username"]), _spans(raw.get("online")), str(raw.get("router", "r0")))


def parse_scenario(obj: Mapping) -> Scenario:
    """Validate a decoded scenario object; raises :class:`ScenarioError`."""
    if not isinstance(obj, Mapping):
        raise ScenarioError("scenario must be a JSON object")
    try:
        ws = obj.get("workspace", {})
        peers = tuple(_peer_spec(p) for p in obj.get("peers", []))
        names = [p.username for p in peers]
        if not peers:
            raise ScenarioError("scenario needs at least one peer")
        if len(set(names)) != len(names):
            raise ScenarioError("duplicate peer usernames")
        known = set(names)

        def need(name: str, where: str) -> str:
            if name not in known:
                raise ScenarioError(f"{where} references unknown peer {name!r}")
            return name

        initiator = need(str(ws.get("initiator", names[0])), "workspace.initiator")
        wsname = str(ws.get("name", "yourworkspaces.app/MeetRoom"))
        domain = str(ws.get("domain", wsname.split("/")[0] if "/" in wsname else "example.app"))
        try:
            model = MembershipModel(str(ws.get("model", "INITIATOR_ONLY")))
        except ValueError:
            raise ScenarioError(f"unknown membership model {ws.get('model')!r}") from None

        def invites(key: str) -> tuple[InviteSpec, ...]:
            out = []
            for i in obj.get(key, []):
                out.append(
                    InviteSpec(
                        _int(i, "t", 0),
                        need(str(i["inviter"]), key),
                        need(str(i["invitee"]), key),
                        _int(i, "lifetimeMs", DEFAULT_INVITATION_LIFETIME_MS),
                    )
                )
            return tuple(out)

        edits = []
        last = None
        for e in obj.get("editScript", []):
            t = _int(e, "t")
            if last is not None and t < last:
                raise ScenarioError("editScript times must be non-decreasing")
            last = t
            op = str(e.get("op", "insert"))
            if op not in {"insert", "delete", "mkdir", "create", "blob"}:
                raise ScenarioError(f"unknown edit op {op!r}")
            data = e.get("data", "")
            edits.append(
                EditSpec(
                    t,
                    need(str(e["peer"]), "editScript"),
                    op,
                    str(e["path"]),
                    _int(e, "pos", 0),
                    str(e.get("text", "")),
                    _int(e, "count", 0),
                    data.encode("utf-8") if isinstance(data, str) else bytes(data),
                )
            )

        repo_raw = obj.get("repo", False)
        repo = None
        if repo_raw:
            repo = PeerSpec("repo") if repo_raw is True else _peer_spec({"username": "repo", **repo_raw})
            if repo.username in known:
                raise ScenarioError("repo name collides with a peer")

        parts = []
        for p in obj.get("partitions", []):
            groups = []
            for g in p["groups"]:
                for u in g:
                    if str(u) not in known and not (repo and str(u) == repo.username):
                        raise ScenarioError(f"partitions references unknown peer {u!r}")
                groups.append(frozenset(str(u) for u in g))
            parts.append(Partition(_int(p, "start"), _int(p, "end"), tuple(groups)))

        links = obj.get("links", {})
        loss = float(links.get("lossProb", 0.0))
        if not 0.0 <= loss <= 1.0:
            raise ScenarioError("lossProb must be in [0, 1]")
        cfg = obj.get("config", {})
        svs = SvsConfig(
            steady_interval_ms=_int(cfg, "steadyIntervalMs", 30_000),
            suppression_max_ms=_int(cfg, "suppressionMaxMs", 200),
        )
        return Scenario(
            seed=_int(obj, "seed", 0),
            workspace=wsname,
            domain=domain,
            model=model,
            initiator=initiator,
            peers=peers,
            trust_edges=tuple((need(str(a), "trustEdges"), need(str(b), "trustEdges")) for a, b in obj.get("trustEdges", [])),
            invitations=invites("invitations"),
            renewals=invites("renewals"),
            repo=repo,
            link=LinkConfig(_int(links, "delayMs", 50), loss),
            partitions=tuple(parts),
            restarts=tuple((_int(r, "t"), need(str(r["peer"]), "restarts")) for r in obj.get("restarts", [])),
            edits=tuple(edits),
            assertions=tuple(obj.get("assertions", [])),
            svs=svs,
            batch_ms=_int(cfg, "batchMs", 500),
            max_payload=_int(cfg, "maxPayload", 8800),
            duration_ms=_int(cfg, "durationMs") if "durationMs" in cfg else None,
            enforce_own_expiry=bool(cfg.get("enforceOwnExpiry", True)),
            start_ms=_int(ws, "startMs", 0),
        )
    except (KeyError, TypeError) as e:
        raise ScenarioError(f"malformed scenario: {e!r}") from None


def load_scenario(path: str | os.PathLike, seed: int | None = None) -> Scenario:
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, ValueError) as e:
        raise ScenarioError(f"cannot read scenario {path}: {e}") from None
    if seed is not None:
        obj["seed"] = seed
    return parse_scenario(obj)


@dataclass
class LatencySample:
    publisher: str
    seq: int
    receiver: str
    ms: int


@dataclass
class RunReport:
    converged: bool
    digests: dict[str, str]
    latency_samples: list[int]
    violations: list[str]
    event_log_path: str | None
    statuses: dict[str, str] = field(default_factory=dict)
    held: dict[str, list[str]] = field(default_factory=dict)
    texts: dict[str, dict] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)
    edit_errors: list[str] = field(default_factory=list)
    refused_edits: dict[str, int] = field(default_factory=dict)
    samples: list[LatencySample] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def mean_latency(self) -> float | None:
        return statistics.fmean(self.latency_samples) if self.latency_samples else None

    def to_json(self, with_log_path: bool = True) -> dict:
        d = asdict(self)
        d.pop("samples")
        if not with_log_path:
            d.pop("event_log_path")
        return d

    def dumps(self, with_log_path: bool = True) -> str:
        return json.dumps(self.to_json(with_log_path), sort_keys=True, indent=2, default=str)


def check_convergence(report: RunReport) -> bool:
    active = [report.digests[p] for p, s in report.statuses.items() if s == Status.ACTIVE.value and p in report.digests]
    return len(set(active)) <= 1


class Run:
    """One scenario instantiated on a fresh simulator."""

    def __init__(self, sc: Scenario, log_path: str | None = None, store_dir: str | None = None):
        self.sc = sc
        self.log_path = log_path
        self.store_dir = store_dir
        self._log = io.StringIO()
        self.net = SimNet(sc.seed, sc.link, sc.partitions, log=self._log)
        rng = random.Random(f"keys/{sc.seed}")
        self._rb = rng.randbytes
        self.root_key = generate_keypair(self._rb(32))
        self.root_cert = self_sign(self.root_key, Name.parse(sc.domain), 0, FAR_FUTURE)
        self.keys: dict[str, KeyPair] = {}
        self.personal: dict[str, Certificate] = {}
        for p in sc.peers:
            self.keys[p.username] = generate_keypair(self._rb(32))
            self.personal[p.username] = self_sign(self.keys[p.username], Name([p.username]), 0, FAR_FUTURE)
        self.wot = CertStore(self.personal.values())
        for a, b in sc.trust_edges:
            self.wot.add(issue_cert(self.keys[a], self.personal[a].name, self.keys[b].public_key, Name([b]), 0, FAR_FUTURE))
        self.samples: list[LatencySample] = []
        self._seen: set[tuple[str, Name]] = set()
        self.edit_errors: list[str] = []
        cfg = PeerConfig(sc.svs, sc.batch_ms, sc.max_payload, sc.enforce_own_expiry)
        self.peers: dict[str, Peer] = {}
        for spec in sc.peers:
            store = PacketStore(Path(store_dir) / spec.username) if store_dir else PacketStore()
            peer = Peer(spec.username, self.keys[spec.username], self.root_cert, cfg, sc.seed, store, self._on_delivery)
            peer.attach(self.net.attach(peer, spec.router, spec.online))
            self.peers[spec.username] = peer
        self.repo: RepoNode | None = None
        if sc.repo is not None:
            store = PacketStore(Path(store_dir) / sc.repo.username) if store_dir else PacketStore()
            self.repo = RepoNode(sc.repo.username, Name.parse(sc.workspace), store, sc.svs)
            self.repo.attach(self.net.attach(self.repo, sc.repo.router, sc.repo.online))
        self._schedule()

    # -- hooks ----------------------------------------------------------------

    def _on_delivery(self, peer: Peer, p: DataPacket, delta: Delta) -> None:
        user = p.name.text(-3)
        if user == peer.name or (peer.name, p.name) in self._seen:
            return
        self._seen.add((peer.name, p.name))
        seq = int(p.name.text(-1)[4:])
        self.samples.append(LatencySample(user, seq, peer.name, self.net.now - p.sig_info.not_before))

    def authenticates(self, inviter: str, invitee: str) -> bool:
        """Out-of-band check: can ``inviter`` reach ``invitee``'s key through trusted certificates?"""
        if not self.sc.trust_edges or inviter == invitee:
            return True
        root = self.personal[inviter].name
        key_name = self.personal[invitee].key_name
        return any(
            wot_authenticate(c, {root}, self.wot) is not None for c in self.wot.by_key(key_name) if c.name != root
        )

    # -- scenario actions -----------------------------------------------------

    def _at(self, t: int, label: str, fn) -> None:
        self.net.schedule(t, "harness", label, fn)

    def _schedule(self) -> None:
        sc = self.sc
        self._at(sc.start_ms, f"create {sc.workspace}", self._create)
        for inv in sc.invitations:
            self._at(inv.t, f"invite {inv.inviter}->{inv.invitee}", lambda i=inv: self._invite(i, renew=False))
        for inv in sc.renewals:
            self._at(inv.t, f"renew {inv.inviter}->{inv.invitee}", lambda i=inv: self._invite(i, renew=True))
        for e in sc.edits:
            self._at(e.t, f"edit {e.peer} {e.op} {e.path}", lambda e=e: self._edit(e))
        for t, who in sc.restarts:
            self._at(t, f"restart {who}", lambda w=who: self.peers[w].restart())

    def _create(self) -> None:
        sc = self.sc
        inst = create_workspace(
            Name.parse(sc.workspace), Identity(self.root_key, self.root_cert), sc.model, self.net.now, self._rb
        )
        self.peers[sc.initiator].start_as_initiator(inst)

    def _invite(self, spec: InviteSpec, renew: bool) -> None:
        inviter, invitee = self.peers[spec.inviter], self.peers[spec.invitee]
        now = self.net.now
        if inviter.member is None:
            self.edit_errors.append(f"{now}: {spec.inviter} cannot invite before joining")
            return
        if not self.authenticates(spec.inviter, spec.invitee):
            self.edit_errors.append(f"{now}: {spec.inviter} cannot authenticate {spec.invitee}'s key")
            return
        try:
            if renew:
                inv = renew_invitation(inviter.member, spec.invitee, spec.lifetime_ms, now, self._rb)
            else:
                inv = create_invitation(inviter.member, self.personal[spec.invitee], spec.lifetime_ms, now, self._rb)
            invitee.accept_invitation(inv)
        except MembershipError as e:
            self.edit_errors.append(f"{now}: {type(e).__name__}: {e}")
            return
        inviter.publish_invitation(inv)

    def _edit(self, e: EditSpec) -> None:
        peer = self.peers[e.peer]
        try:
            if not peer.edit(e.op, e.path, e.pos, e.text, e.count, e.data):
                self.edit_errors.append(f"{self.net.now}: edit by {e.peer} refused ({peer.status().value})")
        except DocError as err:
            self.edit_errors.append(f"{self.net.now}: edit by {e.peer} failed: {type(err).__name__}: {err}")

    # -- execution ------------------------------------------------------------

    def execute(self) -> RunReport:
        end = self.sc.end_time()
        self.net.run(end)
        log_text = self._log.getvalue()
        if self.log_path:
            Path(self.log_path).write_text(log_text)
        report = self._report()
        self._check_assertions(report)
        return report

    def _report(self) -> RunReport:
        now = self.net.now
        joined = {n: p for n, p in sorted(self.peers.items()) if p.member is not None}
        report = RunReport(
            converged=False,
            digests={n: p.digest() for n, p in joined.items()},
            latency_samples=[s.ms for s in self.samples],
            violations=[f"{v.t} {n} {v.name} {v.reason}" for n, p in joined.items() for v in p.violations],
            event_log_path=self.log_path,
            statuses={n: p.member.status(now).value for n, p in joined.items()},
            held={n: [str(x) for x in p.held()] for n, p in joined.items() if p.held()},
            texts={n: _plain(p.doc.tree()) for n, p in joined.items()},
            edit_errors=list(self.edit_errors),
            refused_edits={n: p.refused_edits for n, p in joined.items() if p.refused_edits},
            samples=list(self.samples),
        )
        report.converged = check_convergence(report)
        return report

    def log_pointer(self, peer: str | None = None) -> str:
        lines = self.net.log_lines
        for i in range(len(lines) - 1, -1, -1):
            if peer is None or lines[i].split(" ", 2)[1] == peer:
                return f"event log line {i + 1}: {lines[i]}"
        return "event log line 0: (empty)"

    def _check_assertions(self, report: RunReport) -> None:
        for a in self.sc.assertions:
            msg = _evaluate(a, report, self)
            if msg:
                report.failures.append(msg)


def _plain(tree: dict) -> dict:
    out = {}
    for k, v in tree.items():
        if isinstance(v, dict):
            out[k] = _plain(v)
        elif isinstance(v, str):
            out[k] = v
        else:
            out[k] = {"blob": str(v.object_name), "bytes": v.byte_length, "sha256": v.digest.hex()}
    return out


def _lookup(tree: dict, path: str):
    node: Any = tree
    for part in [p for p in path.split("/") if p]:
        if not isinstance(node, dict) or part not in node:
            return None
        node = node[part]
    return node


def _evaluate(a, report: RunReport, run: Run) -> str | None:
    """Failure message for one assertion, or None if it holds."""
    if isinstance(a, str):
        a = {"check": a}
    if not isinstance(a, Mapping) or "check" not in a:
        return f"assertion {a!r} is malformed; {run.log_pointer()}"
    kind = a["check"]
    peers = a.get("peers") or sorted(report.digests)
    if kind == "converged":
        if report.converged:
            return None
        return f"converged: active peers disagree {report.digests}; {run.log_pointer()}"
    if kind == "noViolations":
        if not report.violations:
            return None
        return f"noViolations: {report.violations[0]}; {run.log_pointer()}"
    if kind in ("text", "contains"):
        for p in peers:
            value = _lookup(report.texts.get(p, {}), a["path"])
            if kind == "text" and value != a["equals"]:
                return f"text {p}:{a['path']} is {value!r}, expected {a['equals']!r}; {run.log_pointer(p)}"
            if kind == "contains":
                present = isinstance(value, str) and a["text"] in value
                if present != bool(a.get("present", True)):
                    want = "contain" if a.get("present", True) else "not contain"
                    return f"contains: {p}:{a['path']}={value!r} should {want} {a['text']!r}; {run.log_pointer(p)}"
        return None
    if kind == "status":
        p = a["peer"]
        got = report.statuses.get(p, Status.UNKNOWN.value)
        return None if got == a["equals"] else f"status {p} is {got}, expected {a['equals']}; {run.log_pointer(p)}"
    if kind == "held":
        p, who = a["peer"], a["publisher"]
        n = sum(1 for x in report.held.get(p, []) if Name.parse(x).text(-3) == who)
        if n >= int(a.get("min", 1)):
            return None
        return f"held: {p} holds {n} publications from {who}; {run.log_pointer(p)}"
    return f"unknown assertion {kind!r}; {run.log_pointer()}"


def run_scenario(
    scenario: Scenario | str | os.PathLike,
    seed: int | None = None,
    log_path: str | None = None,
    store_dir: str | None = None,
) -> RunReport:
    sc = scenario if isinstance(scenario, Scenario) else load_scenario(scenario, seed)
    if seed is not None and isinstance(scenario, Scenario):
        sc = Scenario(**{**sc.__dict__, "seed": seed})
    return Run(sc, log_path, store_dir).execute()


# -- latency bench ----------------------------------------------------------------


def bench_scenario(
    delay_ms: int,
    seed: int = 0,
    users: int = 16,
    routers: int = 4,
    duration_s: int = 30,
    batch_ms: int = 0,
    chars_per_edit: int = 2,
) -> dict:
    """Every user publishes a small edit once per second into its own file."""
    rng = random.Random(f"bench/{seed}")
    names = [f"user{i:02d}" for i in range(users)]
    warmup = 10_000
    edits = []
    for u in names:
        edits.append({"t": 5_000, "peer": u, "op": "create", "path": f"/{u}.txt"})
    for u in names:
        phase = rng.randrange(1000)
        for k in range(duration_s):
            text = "".join(rng.choice("abcdefghijklmnopqrstuvwxyz") for _ in range(chars_per_edit))
            edits.append({"t": warmup + k * 1000 + phase, "peer": u, "op": "insert", "path": f"/{u}.txt",
                          "pos": 0, "text": text})
    edits.sort(key=lambda e: e["t"])
    return {
        "seed": seed,
        "workspace": {"name": "yourworkspaces.app/MeetRoom", "initiator": names[0]},
        "peers": [{"username": u, "router": f"r{i % routers}"} for i, u in enumerate(names)],
        "invitations": [{"t": 100, "inviter": names[0], "invitee": u} for u in names[1:]],
        "links": {"delayMs": delay_ms, "lossProb": 0.0},
        "editScript": edits,
        "config": {"batchMs": batch_ms, "durationMs": warmup + (duration_s + 2) * 1000},
    }


def percentile(samples: list[int], q: float) -> float:
    """Linear-interpolated percentile, q in [0, 100]."""
    xs = sorted(samples)
    if not xs:
        return float("nan")
    pos = (len(xs) - 1) * q / 100
    lo = int(pos)
    hi = min(lo + 1, len(xs) - 1)
    return xs[lo] + (xs[hi] - xs[lo]) * (pos - lo)


def bench(delays: Iterable[int] = (25, 50, 95), seeds: Iterable[int] = (0,), **kw) -> list[dict]:
    rows = []
    for d in delays:
        for s in seeds:
            report = run_scenario(parse_scenario(bench_scenario(d, s, **kw)))
            xs = report.latency_samples
            rows.append(
                {
                    "scenario": f"bench-d{d}",
                    "seed": s,
                    "mean_ms": round(statistics.fmean(xs), 3) if xs else float("nan"),
                    "p50_ms": percentile(xs, 50),
                    "p95_ms": percentile(xs, 95),
                    "deliveries": len(xs),
                }
            )
    return rows


def digest_of(report: RunReport) -> str:
    return hashlib.sha256(report.dumps(with_log_path=False).encode()).hexdigest()
