"""Run orchestration and the on-disk run directory.

Layout of ``out/``::

    config.json            resolved configuration
    workload.json          seed, scaled spec and per-scenario labels
    ledgers/run-NNN.jsonl  one evidence ledger per run
    receipts/run-NNN.jsonl external substrate receipts (after injected loss)
    receipts/injected_loss.json  digests deliberately dropped
    stores/                pinned bundle, profiles, registry and public keys
    logs/b1.jsonl, logs/b2.jsonl   baseline logs
    metrics.json, metrics.txt, latency.json, invariants.json, summary.txt
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..consensus import load_profiles
from ..config import Environment, RunConfig, load_environment
from ..evaluators import load_registry
from ..keys import KeyRegistry
from ..ledger import assemble_all, read_entries
from ..model import EvidenceRecord, LedgerEntry, Outcome, OutcomeStatus
from ..proofs import load_policy_bundle
from ..replay import ArtifactStore, ReceiptStore, ReplayVerdict, replay
from .baselines import BaselineOutcome, BaselineResult, run_baseline_b1, run_baseline_b2
from .invariants import sweep
from .logs import LogStore
from .metrics import (
    MetricsReport,
    choose_lost_receipts,
    compute_baseline_metrics,
    compute_metrics,
    latency_summary,
    log_replay,
    render_latency,
    render_table,
    reports_json,
    with_reduction,
)
from .pipeline import PipelineResult, run_dtf
from .workload import Workload, WorkloadSpec, generate_workload


def prepare(cfg: RunConfig) -> tuple[Environment, Workload]:
    env = load_environment(cfg)
    spec = WorkloadSpec.from_dict(env.workload_spec).scaled(cfg.scale)
    return env, generate_workload(spec, cfg.seed)


def artifact_store(env: Environment, keys: dict[str, str]) -> ArtifactStore:
    return ArtifactStore(
        bundles={f"{env.bundle.bundle_id}@{env.bundle.version}": env.bundle},
        profiles=dict(env.profiles),
        keys=KeyRegistry(keys),
        registered_classes=frozenset(r.evaluator_class for r in env.registry),
    )


def receipt_store(result: PipelineResult, lost: set[str] = frozenset()) -> ReceiptStore:
    merged = {}
    for run in result.runs:
        merged.update({k: v for k, v in run.substrate.receipts.items() if k not in lost})
    return ReceiptStore(merged)


def replay_all(records, store: ArtifactStore, receipts: ReceiptStore) -> list[ReplayVerdict]:
    return [replay(r, store, receipts) for r in records]


@dataclass
class Evaluation:
    """Everything one invocation of the harness produced."""

    workload: Workload
    dtf: PipelineResult
    reports: list[MetricsReport]
    verdicts: list[ReplayVerdict]
    lost_receipts: set[str]
    invariants: dict[str, list[str]]
    baselines: list[BaselineResult] = field(default_factory=list)
    ablation: PipelineResult | None = None

    def report(self, system: str) -> MetricsReport:
        return next(r for r in self.reports if r.system == system)


def evaluate_dtf(env: Environment, workload: Workload, ablation: str | None = None, loss_rate: float | None = None):
    cfg = env.config
    result = run_dtf(workload, env, ablation=ablation)
    rate = cfg.receipt_loss_rate if loss_rate is None else loss_rate
    lost = choose_lost_receipts(result.records, rate, cfg.seed)
    if ablation == "no_evidence_chain":
        report = compute_metrics(result.system, result.records, result.labels, latency=result.latency)
        answer = result.logs.answerability([r.intent_id for r in result.records])
        log_replay(report, answer)
        return result, report, [], lost
    store = artifact_store(env, result.swarm_keys)
    verdicts = replay_all(result.records, store, receipt_store(result, lost))
    report = compute_metrics(result.system, result.records, result.labels, verdicts, lost, result.latency)
    return result, report, verdicts, lost


def run_all(cfg: RunConfig, write: bool = True) -> Evaluation:
    env, workload = prepare(cfg)
    dtf, report, verdicts, lost = evaluate_dtf(env, workload)
    b1 = run_baseline_b1(workload, env)
    b2 = run_baseline_b2(workload, env)
    r1, r2 = compute_baseline_metrics(b1), compute_baseline_metrics(b2)
    with_reduction(report, r1)
    entries = [e for run in dtf.runs for e in run.ledger.entries]
    inv = sweep(dtf.records, entries, [s.raw_intent["intent_id"] for s in workload.scenarios])
    ev = Evaluation(workload, dtf, [report, r1, r2], verdicts, lost, inv, [b1, b2])
    if write:
        write_run_dir(cfg.out, env, ev)
    return ev


def run_ablation(cfg: RunConfig, kind: str, write: bool = True) -> Evaluation:
    env, workload = prepare(cfg)
    full, full_report, verdicts, lost = evaluate_dtf(env, workload)
    abl, abl_report, _, _ = evaluate_dtf(env, workload, ablation=kind)
    entries = [e for run in full.runs for e in run.ledger.entries]
    inv = sweep(full.records, entries, [s.raw_intent["intent_id"] for s in workload.scenarios])
    ev = Evaluation(workload, full, [full_report, abl_report], verdicts, lost, inv, ablation=abl)
    if write:
        write_ablation_dir(Path(cfg.out), env, ev, kind)
    return ev


# -- writing -------------------------------------------------------------------


def _dump(path: Path, data: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n")


def write_stores(out: Path, env: Environment, keys: dict[str, str], queued: dict[str, str]) -> None:
    stores = out / "stores"
    stores.mkdir(parents=True, exist_ok=True)
    cfg = env.config
    shutil.copyfile(cfg.policy_bundle, stores / "policy_bundle.json")
    shutil.copyfile(cfg.governance_profiles, stores / "governance_profiles.json")
    shutil.copyfile(cfg.evaluator_registry, stores / "evaluator_registry.json")
    shutil.copyfile(cfg.substrate, stores / "substrate.json")
    KeyRegistry(keys).save(stores / "evaluator_keys.json")
    _dump(stores / "queued_verdicts.json", dict(sorted(queued.items())))


def write_pipeline(out: Path, env: Environment, result: PipelineResult, lost: set[str]) -> None:
    for run in result.runs:
        if run.ledger is not None:
            run.ledger.write(out / "ledgers" / f"{run.run_id}.jsonl")
        rs = ReceiptStore(run.substrate.receipts)
        (out / "receipts").mkdir(parents=True, exist_ok=True)
        rs.write(out / "receipts" / f"{run.run_id}.jsonl", drop=lost)
    _dump(out / "receipts" / "injected_loss.json", sorted(lost))
    write_stores(out, env, result.swarm_keys, result.queued_verdicts)


def _summary(ev: Evaluation, shortfalls: list[str]) -> str:
    lines = [
        f"scenarios: {len(ev.workload.scenarios)} in {len(ev.workload.runs)} runs (seed {ev.workload.seed})",
        f"ledger events: {sum(len(r.ledger) for r in ev.dtf.runs if r.ledger is not None)}",
    ]
    for name, bad in ev.invariants.items():
        lines.append(f"{name}: {'ok' if not bad else f'{len(bad)} violations'}")
    lines.append("invariant metrics: " + ("all at 100%" if not shortfalls else "below 100%: " + ", ".join(shortfalls)))
    return "\n".join(lines) + "\n"


def write_run_dir(out: Path, env: Environment, ev: Evaluation) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _dump(out / "config.json", env.config.as_dict())
    _dump(out / "workload.json", {
        "seed": ev.workload.seed,
        "spec": ev.workload.spec.__dict__,
        "labels": ev.workload.labels(),
    })
    write_pipeline(out, env, ev.dtf, ev.lost_receipts)
    for b in ev.baselines:
        b.logs.dump(out / "logs" / f"{b.system.lower()}.jsonl")
    (out / "metrics.json").write_text(reports_json(ev.reports))
    (out / "metrics.txt").write_text(render_table(ev.reports))
    _dump(out / "latency.json", latency_summary(ev.dtf.latency))
    _dump(out / "invariants.json", ev.invariants)
    _dump(out / "replay.json", [v.as_dict() for v in ev.verdicts if v.failures])
    dtf = ev.reports[0]
    (out / "summary.txt").write_text(_summary(ev, dtf.invariant_shortfalls()) + "\n" + render_table(ev.reports) + "\n" + render_latency(dtf.latency))


def write_ablation_dir(out: Path, env: Environment, ev: Evaluation, kind: str) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _dump(out / "config.json", {**env.config.as_dict(), "ablation": kind})
    _dump(out / "workload.json", {"seed": ev.workload.seed, "spec": ev.workload.spec.__dict__, "labels": ev.workload.labels()})
    write_pipeline(out, env, ev.dtf, ev.lost_receipts)
    abl = ev.ablation
    if abl is not None and abl.logs is not None:
        abl.logs.dump(out / "logs" / f"{kind}.jsonl")
    elif abl is not None:
        for run in abl.runs:
            run.ledger.write(out / "ablation" / "ledgers" / f"{run.run_id}.jsonl")
    (out / "metrics.json").write_text(reports_json(ev.reports))
    (out / "metrics.txt").write_text(render_table(ev.reports))


# -- reading -------------------------------------------------------------------


@dataclass
class LoadedRun:
    out: Path
    entries: dict[str, list[LedgerEntry]]
    records: list[EvidenceRecord]
    store: ArtifactStore
    receipts: ReceiptStore
    labels: dict[str, dict]
    lost: set[str]


def load_store(out: Path) -> ArtifactStore:
    stores = Path(out) / "stores"
    bundle = load_policy_bundle(stores / "policy_bundle.json")
    registry = load_registry(stores / "evaluator_registry.json")
    return ArtifactStore(
        bundles={f"{bundle.bundle_id}@{bundle.version}": bundle},
        profiles=load_profiles(stores / "governance_profiles.json"),
        keys=KeyRegistry.load(stores / "evaluator_keys.json"),
        registered_classes=frozenset(r.evaluator_class for r in registry),
    )


def ledger_run_dir(ledger_path: Path) -> Path:
    """The run directory a ledger file belongs to."""
    return Path(ledger_path).resolve().parent.parent


def load_run_dir(out: Path, ledger_paths: list[Path] | None = None) -> LoadedRun:
    out = Path(out)
    paths = ledger_paths or sorted((out / "ledgers").glob("run-*.jsonl"))
    entries, records = {}, []
    for p in paths:
        _, es = read_entries(p)
        entries[p.stem] = es
        records.extend(assemble_all(es))
    receipts = {}
    for p in sorted((out / "receipts").glob("run-*.jsonl")):
        receipts.update(ReceiptStore.load(p)._receipts)
    lost_path = out / "receipts" / "injected_loss.json"
    lost = set(json.loads(lost_path.read_text())) if lost_path.exists() else set()
    wl = out / "workload.json"
    labels = json.loads(wl.read_text())["labels"] if wl.exists() else {}
    return LoadedRun(out, entries, records, load_store(out), ReceiptStore(receipts), labels, lost)


def metrics_from_dir(out: Path) -> list[MetricsReport]:
    """Recompute every report from files alone."""
    run = load_run_dir(out)
    verdicts = replay_all(run.records, run.store, run.receipts)
    dtf = compute_metrics("DTF", run.records, run.labels, verdicts, run.lost)
    reports = [dtf]
    logs_dir = Path(out) / "logs"
    for system in ("B1", "B2"):
        p = logs_dir / f"{system.lower()}.jsonl"
        if p.exists():
            roles = json.loads((Path(out) / "stores" / "substrate.json").read_text())["standing_roles"]
            reports.append(metrics_from_logs(system, LogStore.load(system, p), run.labels, [r["resources"] for r in roles]))
    if len(reports) > 1:
        with_reduction(dtf, reports[1])
    return reports


def metrics_from_logs(system: str, logs: LogStore, labels: dict[str, dict], roles: list[int]) -> MetricsReport:
    """Baseline metrics rebuilt from the logs they wrote."""
    executed: dict[str, bool] = {}
    for e in logs.entries:
        out = e["artifacts"].get("outcome")
        if out is not None:
            executed[e["request_id"]] = out["status"] == "executed"
    outcomes = []
    for sid, lab in sorted(labels.items()):
        rid = f"intent-{sid}"
        ran = executed.get(rid, False)
        idx = int(sid.removeprefix("s"))
        exposure = roles[idx % len(roles)] if ran else 0
        outcomes.append(BaselineOutcome(sid, rid, ran, None if ran else "blocked", exposure, Outcome(OutcomeStatus.EXECUTED if ran else OutcomeStatus.REJECTED, 0)))
    return compute_baseline_metrics(BaselineResult(system, outcomes, logs, labels))
