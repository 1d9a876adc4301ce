"""Command line entry point: ``proofgate {run,verify,replay,metrics,ablate}``.

Exit status encodes invariant health: 0 when every invariant holds, 1 when
an invariant metric falls below 100% or an audit check fails, 2 for usage
and configuration errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ABLATIONS, ConfigError, load_config
from .harness.metrics import render_latency, render_table, reports_json
from .harness.runner import ledger_run_dir, load_run_dir, metrics_from_dir, replay_all, run_ablation, run_all
from .ledger import completeness_check, read_entries, verify_chain

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _config(args):
    return load_config(
        Path(args.config) if args.config else None,
        seed=args.seed,
        scale=args.scale,
        out=args.out,
        ablation=getattr(args, "ablation", None),
    )


def cmd_run(args) -> int:
    cfg = _config(args)
    if cfg.ablation:
        return _ablate(cfg, [cfg.ablation])
    ev = run_all(cfg)
    dtf = ev.reports[0]
    print(render_table(ev.reports), end="")
    print(render_latency(dtf.latency), end="")
    bad = dtf.invariant_shortfalls() + [k for k, v in ev.invariants.items() if v]
    print(f"artifacts written to {cfg.out}")
    if bad:
        print("invariant failures: " + ", ".join(bad), file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def _ledgers(path: Path) -> list[Path]:
    if path.is_dir():
        found = sorted((path / "ledgers").glob("*.jsonl")) or sorted(path.glob("*.jsonl"))
        if not found:
            raise ConfigError(f"{path}: no ledger files found")
        return found
    if not path.is_file():
        raise ConfigError(f"{path}: no such ledger")
    return [path]


def _expected_intents(ledger: Path) -> list[str] | None:
    wl = ledger_run_dir(ledger) / "workload.json"
    if not wl.exists():
        return None
    labels = json.loads(wl.read_text())["labels"]
    run = int(ledger.stem.removeprefix("run-")) if ledger.stem.startswith("run-") else None
    return [f"intent-{sid}" for sid, lab in labels.items() if run is None or lab["run"] == run]


def cmd_verify(args) -> int:
    status = EXIT_OK
    for path in _ledgers(Path(args.path)):
        report = verify_chain(path)
        line = f"{path}: {report.summary()}"
        if not report.ok:
            print(line)
            status = EXIT_FAIL
            continue
        _, entries = read_entries(path)
        comp = completeness_check(entries, _expected_intents(path))
        if comp.ok:
            print(f"{line}; {comp.complete} complete records")
        else:
            status = EXIT_FAIL
            print(f"{line}; completeness FAILED")
            for intent, missing in sorted(comp.missing.items()):
                print(f"  orphan {intent}: missing {', '.join(missing)}")
            for intent, dup in sorted(comp.duplicates.items()):
                print(f"  duplicate {intent}: {', '.join(dup)}")
            for intent in comp.out_of_order:
                print(f"  out of order {intent}")
    return status


def cmd_replay(args) -> int:
    path = Path(args.path)
    ledgers = _ledgers(path)
    out = path if path.is_dir() else ledger_run_dir(path)
    for p in ledgers:
        if not verify_chain(p).ok:
            print(f"{p}: chain does not verify; refusing to replay", file=sys.stderr)
            return EXIT_FAIL
    run = load_run_dir(out, ledgers)
    records = run.records
    if args.record:
        wanted = {args.record, f"rec-{args.record}", f"rec-intent-{args.record}"}
        records = [r for r in records if r.record_id in wanted or r.intent_id in wanted]
        if not records:
            print(f"no record matches {args.record!r}", file=sys.stderr)
            return EXIT_FAIL
    verdicts = replay_all(records, run.store, run.receipts)
    by_id = {r.record_id: r for r in records}
    status = EXIT_OK
    answered = 0
    for v in verdicts:
        answered += sum(v.answered.values())
        lost = v.receipt_only and by_id[v.record_id].outcome.substrate_receipt in run.lost
        if args.record or v.failures:
            tag = "receipt-lost" if lost else v.status.value
            qs = ",".join(q for q, ok in v.answered.items() if ok) or "-"
            print(f"{v.record_id}: {tag} answered=[{qs}] failures={v.failures}")
        if v.failures and not lost:
            status = EXIT_FAIL
    total = 5 * len(verdicts)
    print(f"replayed {len(verdicts)} records; {answered}/{total} audit questions answered")
    return status


def cmd_metrics(args) -> int:
    out = Path(args.path or args.out or "out")
    reports = metrics_from_dir(out)
    print(render_table(reports), end="")
    (out / "metrics.recomputed.json").write_text(reports_json(reports))
    return EXIT_FAIL if reports[0].invariant_shortfalls() else EXIT_OK


def _ablate(cfg, kinds) -> int:
    status = EXIT_OK
    for kind in kinds:
        sub = cfg.with_overrides(out=Path(cfg.out) / kind if len(kinds) > 1 else cfg.out, ablation=kind)
        ev = run_ablation(sub, kind)
        full, abl = ev.reports
        print(f"== ablation {kind}")
        print(render_table(ev.reports), end="")
        if kind == "no_consensus":
            print(f"malformed cases admitted: {abl.malformed_admitted}/{abl.malformed_total} (full pipeline: {full.malformed_admitted})")
        elif kind == "no_execution_identity":
            print(f"drift attempts executed: {abl.drift_executed}/{abl.drift_total} (full pipeline: {full.drift_executed})")
        else:
            drop = 100 * ((full.replay_success or 0) - (abl.replay_success or 0))
            print(f"replay success drop: {drop:.1f} points")
        if full.invariant_shortfalls():
            status = EXIT_FAIL
    return status


def cmd_ablate(args) -> int:
    cfg = _config(args)
    return _ablate(cfg, [args.ablation] if args.ablation else list(ABLATIONS))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="proofgate", description="Proof-derived execution authority: run, audit and measure.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, ablation=True):
        sp.add_argument("--config", help="run configuration JSON (default: bundled)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--scale", type=float, help="workload scale factor (1.0 = 10,000 scenarios)")
        sp.add_argument("--out", help="output directory")
        if ablation:
            sp.add_argument("--ablation", choices=ABLATIONS)

    sp = sub.add_parser("run", help="run the pipeline and baselines over the workload")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("verify", help="verify ledger hash chains and record completeness")
    sp.add_argument("path", help="ledger file or run directory")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("replay", help="replay evidence records against pinned artifacts")
    sp.add_argument("path", help="ledger file or run directory")
    sp.add_argument("--record", help="record id, intent id or scenario id")
    sp.set_defaults(func=cmd_replay)

    sp = sub.add_parser("metrics", help="recompute metrics from a run directory")
    sp.add_argument("path", nargs="?", help="run directory (default: --out)")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_metrics)

    sp = sub.add_parser("ablate", help="run ablations against the full pipeline")
    common(sp)
    sp.set_defaults(func=cmd_ablate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
