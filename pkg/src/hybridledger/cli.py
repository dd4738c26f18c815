"""Command-line surface.

Subcommands: ``sim`` runs a named scenario or a JSON-lines script and writes
all artifacts to a directory; ``audit`` and ``verify-export`` re-run the
external verification checks on files; ``bench`` measures notary and
node-side costs with real threads and a wall clock; ``keygen`` writes a key
pair. Exit codes: 0 success / verification passed, 1 verification or audit
failure, 2 usage or IO error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import anchor as anchor_mod
from . import auditor, identity, ledgerstore, node as node_mod, protocol, simnet
from .bench import run_bench
from .errors import HybridLedgerError, MalformedError

EXIT_OK = 0
EXIT_VERIFICATION_FAILED = 1
EXIT_USAGE = 2

log = logging.getLogger("hybridledger")


def _setup_logging() -> None:
    level = os.environ.get("HYBRID_LOG_LEVEL", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), format="%(levelname)s %(message)s")


def _load_script_scenario(path: Path, seed: int | None) -> simnet.Scenario:
    config_kwargs: dict = {}
    actions = []
    with path.open() as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            if "config" in record:
                config_kwargs.update(record["config"])
                continue
            actions.append(
                simnet.ScriptAction(
                    time_ms=record["time_ms"],
                    actor=record["actor"],
                    action=record["action"],
                    params=record.get("params", {}),
                )
            )
    if seed is not None:
        config_kwargs["seed"] = seed
    if "latency_ms" in config_kwargs:
        config_kwargs["latency_ms"] = tuple(config_kwargs["latency_ms"])
    config = simnet.SimConfig(**config_kwargs)
    return simnet.Scenario(name=path.stem, config=config, script=tuple(actions))


def cmd_sim(args) -> int:
    scenario = simnet.get_scenario(args.scenario)
    if scenario is None:
        path = Path(args.scenario)
        if not path.exists():
            print(f"unknown scenario or script: {args.scenario}", file=sys.stderr)
            return EXIT_USAGE
        try:
            scenario = _load_script_scenario(path, args.seed)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            print(f"bad script: {exc}", file=sys.stderr)
            return EXIT_USAGE
    elif args.seed is not None:
        config = simnet.SimConfig(
            **{**scenario.config.__dict__, "seed": args.seed}
        )
        scenario = simnet.Scenario(scenario.name, config, scenario.script)

    result = simnet.run(scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    result.anchor_log.persist(out / "anchor.log")
    with (out / "anchor.jsonl").open("w") as fh:
        for txn in result.anchor_log.read_all(result.notary.address):
            fh.write(json.dumps(anchor_mod.txn_to_json(txn), sort_keys=True) + "\n")
    with (out / "receipts.jsonl").open("w") as fh:
        for name in result.nodes:
            node = result.nodes[name]
            for lid in sorted(node.receipt_index):
                for seq in sorted(node.receipt_index[lid]):
                    receipt = node.receipt_index[lid][seq]
                    record = {"holder": name, **protocol.to_json_dict(receipt)}
                    fh.write(json.dumps(record, sort_keys=True) + "\n")
    (out / "metrics.json").write_text(result.metrics.to_json() + "\n")
    with (out / "events.jsonl").open("w") as fh:
        for event in result.events:
            fh.write(json.dumps(event, sort_keys=True) + "\n")
    with (out / "proofs.jsonl").open("w") as fh:
        for time_ms, actor, proof in result.proofs:
            record = {"time_ms": time_ms, "node": actor, **node_mod.proof_to_json(proof)}
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    for label, archive in result.archives:
        ledgerstore.write_archive(archive, out / f"export_{label}.hyb")
        (out / f"export_{label}.jsonl").write_text(
            json.dumps(ledgerstore.archive_to_json(archive), sort_keys=True) + "\n"
        )
    (out / "notary.pub").write_text(result.notary.public_key.hex() + "\n")
    print(json.dumps({"scenario": scenario.name, "out": str(out), "events": len(result.events)}))
    return EXIT_OK


def cmd_audit(args) -> int:
    try:
        log_ = anchor_mod.AnchorLog.load(args.anchor_log)
        notary_key = identity.load_public_key(args.notary_key)
    except HybridLedgerError as exc:
        print(f"cannot read inputs: {exc}", file=sys.stderr)
        return EXIT_USAGE
    report = auditor.audit_anchor(log_, identity.actor_id(notary_key))
    for line in report.to_json_lines():
        print(line)
    return EXIT_OK if report.all_coherent else EXIT_VERIFICATION_FAILED


def cmd_verify_export(args) -> int:
    try:
        archive = ledgerstore.read_archive(args.archive)
        log_ = anchor_mod.AnchorLog.load(args.anchor_log)
        notary_key = identity.load_public_key(args.notary_key)
    except HybridLedgerError as exc:
        print(f"cannot read inputs: {exc}", file=sys.stderr)
        return EXIT_USAGE
    reason = auditor.verify_export(archive, log_, notary_key)
    verdict = {"archive": args.archive, "accepted": reason is None}
    if reason is not None:
        verdict["reason"] = reason
    print(json.dumps(verdict, sort_keys=True))
    return EXIT_OK if reason is None else EXIT_VERIFICATION_FAILED


def cmd_bench(args) -> int:
    if args.blocks <= 0 or args.block_bytes <= 0 or args.ledgers <= 0:
        print("bench parameters must be positive", file=sys.stderr)
        return EXIT_USAGE
    if args.mode == "delayed" and args.interval_ms <= 0:
        print("delayed mode needs a positive --interval-ms", file=sys.stderr)
        return EXIT_USAGE
    report = run_bench(
        blocks=args.blocks,
        block_bytes=args.block_bytes,
        ledgers=args.ledgers,
        mode=args.mode,
        interval_ms=args.interval_ms,
        threads=args.threads,
    )
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_keygen(args) -> int:
    if args.seed is not None:
        try:
            seed = bytes.fromhex(args.seed)
        except ValueError:
            print("seed must be hex", file=sys.stderr)
            return EXIT_USAGE
        if len(seed) != identity.SEED_BYTES:
            print(f"seed must be {identity.SEED_BYTES} bytes of hex", file=sys.stderr)
            return EXIT_USAGE
    else:
        seed = os.urandom(identity.SEED_BYTES)
    keypair = identity.generate_keypair(seed)
    identity.save_keypair(keypair, args.out)
    print(json.dumps({"seed_file": str(args.out), "public_key": keypair.public.hex()}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hybridledger",
        description="Notarized private ledgers with publicly auditable histories",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("sim", help="run a named scenario or a JSON-lines script")
    p_sim.add_argument("scenario", help="scenario name or script path")
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--out", default="sim-out")
    p_sim.set_defaults(fn=cmd_sim)

    p_audit = sub.add_parser("audit", help="audit an anchor log file")
    p_audit.add_argument("anchor_log")
    p_audit.add_argument("--notary-key", required=True)
    p_audit.set_defaults(fn=cmd_audit)

    p_verify = sub.add_parser("verify-export", help="verify an export archive")
    p_verify.add_argument("archive")
    p_verify.add_argument("anchor_log")
    p_verify.add_argument("--notary-key", required=True)
    p_verify.set_defaults(fn=cmd_verify_export)

    p_bench = sub.add_parser("bench", help="desk-scale notary and node benchmarks")
    p_bench.add_argument("--blocks", type=int, default=200)
    p_bench.add_argument("--block-bytes", type=int, default=1024)
    p_bench.add_argument("--ledgers", type=int, default=1)
    p_bench.add_argument("--mode", choices=["immediate", "delayed"], default="immediate")
    p_bench.add_argument("--interval-ms", type=int, default=1000)
    p_bench.add_argument("--threads", type=int, default=4)
    p_bench.set_defaults(fn=cmd_bench)

    p_keygen = sub.add_parser("keygen", help="generate a key pair")
    p_keygen.add_argument("--out", required=True)
    p_keygen.add_argument("--seed", default=None, help="32-byte hex seed for reproducible keys")
    p_keygen.set_defaults(fn=cmd_keygen)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except MalformedError as exc:
        print(f"malformed input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except HybridLedgerError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
