"""Command-line entry points: run, verify-store, keygen, schema-check, bench."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from .audit import verify_store
from .harness import ScenarioError, bench, run_scenario
from .naming import Name, NamingError, key_id
from .security import SchemaError, TrustSchema, check_policy, generate_keypair

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def cmd_run(args: argparse.Namespace) -> int:
    try:
        report = run_scenario(args.scenario, seed=args.seed, log_path=args.log, store_dir=args.store)
    except ScenarioError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    text = report.dumps()
    if args.report:
        Path(args.report).write_text(text + "\n")
    if not args.quiet:
        print(text)
    mean = report.mean_latency()
    print(
        f"converged={report.converged} peers={len(report.digests)} deliveries={len(report.latency_samples)}"
        + (f" mean_latency_ms={mean:.2f}" if mean is not None else ""),
        file=sys.stderr,
    )
    for f in report.failures:
        print(f"ASSERTION FAILED: {f}", file=sys.stderr)
    return EXIT_OK if report.ok else EXIT_FAIL


def _store_dirs(root: Path) -> list[Path]:
    if (root / "trust-anchor.tlv").exists() or any(root.glob("*.tlv")):
        return [root]
    return sorted(d for d in root.iterdir() if d.is_dir())


def cmd_verify_store(args: argparse.Namespace) -> int:
    root = Path(args.dir)
    if not root.is_dir():
        print(f"error: {root} is not a directory", file=sys.stderr)
        return EXIT_USAGE
    failed = False
    for d in _store_dirs(root):
        if args.anchor is None and not (d / "trust-anchor.tlv").exists():
            print(f"{d}: skipped (no trust anchor; pass --anchor to check it)")
            continue
        n, problems = verify_store(d, args.anchor)
        for p in problems:
            print(f"{d}: FAIL {p}")
        failed |= bool(problems)
        print(f"{d}: {n} packets, {len(problems)} problems")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_keygen(args: argparse.Namespace) -> int:
    kp = generate_keypair(bytes.fromhex(args.seed) if args.seed else None)
    out = {
        "algorithm": kp.algorithm,
        "public": kp.public_key.hex(),
        "private": kp.private_key.hex(),
        "keyid": key_id(kp.public_key),
    }
    print(json.dumps(out, indent=2))
    return EXIT_OK


def cmd_schema_check(args: argparse.Namespace) -> int:
    try:
        schema = TrustSchema.loads(Path(args.rules).read_bytes())
        decision = check_policy(schema, Name.parse(args.name), Name.parse(args.signer))
    except (OSError, SchemaError, NamingError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    if decision:
        print(f"OK rule {decision.rule_id}")
        return EXIT_OK
    print(f"PolicyViolation: {decision.reason}")
    return EXIT_FAIL


def cmd_bench(args: argparse.Namespace) -> int:
    rows = bench(
        delays=args.delays,
        seeds=args.seeds,
        users=args.users,
        routers=args.routers,
        duration_s=args.duration,
        batch_ms=args.batch_ms,
    )
    w = csv.DictWriter(sys.stdout, fieldnames=["scenario", "seed", "mean_ms", "p50_ms", "p95_ms", "deliveries"])
    w.writeheader()
    w.writerows(rows)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wksp", description="Serverless workspace simulator and tools")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario file")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int)
    p.add_argument("--log", help="write the event log here")
    p.add_argument("--store", help="persist each node's packets under this directory")
    p.add_argument("--report", help="write the JSON report here")
    p.add_argument("-q", "--quiet", action="store_true", help="do not print the report")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify-store", help="re-validate every persisted packet")
    p.add_argument("dir")
    p.add_argument("--anchor", help="trust anchor certificate file")
    p.set_defaults(func=cmd_verify_store)

    p = sub.add_parser("keygen", help="print a fresh Ed25519 key pair")
    p.add_argument("--seed", help="32-byte seed as hex (deterministic)")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("schema-check", help="ask whether <signer> may sign <name>")
    p.add_argument("rules")
    p.add_argument("name")
    p.add_argument("signer")
    p.set_defaults(func=cmd_schema_check)

    p = sub.add_parser("bench", help="latency sweep over link delays, CSV on stdout")
    p.add_argument("--delays", type=int, nargs="+", default=[25, 50, 95])
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--users", type=int, default=16)
    p.add_argument("--routers", type=int, default=4)
    p.add_argument("--duration", type=int, default=30, help="publishing seconds per run")
    p.add_argument("--batch-ms", type=int, default=0, help="keystroke batching window")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    try:
        return args.func(args)
    except BrokenPipeError:
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
