"""Metric computation from evidence records, replay verdicts and baseline logs.

Rates are computed only from stored artifacts (records assembled from the
ledger, or the logs a baseline kept), never from pipeline internals.
"""

from __future__ import annotations

import json
import random
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from ..ledger import record_field_status, record_is_complete
from ..model import (
    CollectionStatus,
    EvidenceRecord,
    OutcomeStatus,
    Verdict,
    boundary_contains,
)
from ..replay import AUDIT_QUESTIONS, ReplayVerdict
from .baselines import BaselineResult

REFUSALS = {OutcomeStatus.REFUSED_BOUNDARY, OutcomeStatus.REFUSED_EXPIRED, OutcomeStatus.REFUSED_OBLIGATION}

INVARIANT_METRICS = (
    "unsafe_block_rate",
    "drift_refusal_rate",
    "complete_proof_rate",
    "attestation_coverage",
    "evidence_completeness",
)


@dataclass
class MetricsReport:
    system: str
    records: int = 0
    approvals: int = 0
    executed: int = 0
    unsafe_total: int = 0
    unsafe_blocked: int = 0
    unsafe_block_rate: float | None = None
    drift_total: int = 0
    drift_refused: int = 0
    drift_executed: int = 0
    drift_refusal_rate: float | None = None
    malformed_total: int = 0
    malformed_admitted: int = 0
    complete_proof_rate: float | None = None
    attestation_coverage: float | None = None
    evidence_completeness: float | None = None
    evidence_field_completeness: float | None = None
    mean_resources_per_approval: float | None = None
    p95_resources_per_approval: float | None = None
    authority_reduction: float | None = None
    replay_success: float | None = None
    replay_full_record: float | None = None
    replay_failures: int = 0
    replay_failures_unattributed: int = 0
    # wall-clock figures are hardware dependent and excluded from equality
    latency: dict[str, dict[str, float]] = field(default_factory=dict, compare=False)

    def invariant_shortfalls(self) -> list[str]:
        return [
            name for name in INVARIANT_METRICS
            if getattr(self, name) is not None and getattr(self, name) < 1.0
        ]

    def as_dict(self) -> dict[str, Any]:
        return asdict(self)


def _rate(num: int, den: int) -> float | None:
    return None if den == 0 else num / den


def percentile95(values: Sequence[float]) -> float | None:
    return None if not values else float(np.percentile(np.asarray(values, dtype=float), 95))


def proof_is_complete(rec: EvidenceRecord) -> bool:
    p = rec.proof
    if p is None:
        return False
    populated = (
        bool(p.mutation.intent_id and p.mutation.action and p.mutation.target)
        and len(p.snapshot.bindings) > 0
        and bool(p.policy_basis.bundle_digest and p.policy_basis.version)
        and bool(p.risk.required_profile)
        and p.boundary is not None
    )
    return populated and p.snapshot.recompute_digest() == p.snapshot.snapshot_digest and p.verify_hash()


def attestation_covered(rec: EvidenceRecord) -> bool:
    """Every required class emitted a well-formed attestation over this proof."""
    if rec.proof is None or rec.profile is None:
        return False
    h = rec.proof.proof_hash
    good = {
        a.evaluator_class
        for a in rec.attestations
        if a.status is CollectionStatus.VALID and a.attestation is not None and a.attestation.proof_hash == h
    }
    return rec.profile.required_classes <= good


def scope_respected(rec: EvidenceRecord) -> bool:
    ident, att = rec.identity, rec.attempt
    if ident is None or att is None or rec.proof is None:
        return False
    s = ident.scope
    return (
        att.action in s.actions
        and set(att.resources) <= s.resources
        and s.not_before <= att.attempted_at <= s.not_after
        and boundary_contains(s, rec.proof.boundary)
    )


def latency_summary(latency: Mapping[str, Sequence[float]]) -> dict[str, dict[str, float]]:
    out = {}
    for stage, xs in latency.items():
        if not xs:
            continue
        a = np.asarray(xs, dtype=float) * 1000.0
        out[stage] = {
            "n": int(a.size),
            "mean_ms": float(a.mean()),
            "p50_ms": float(np.percentile(a, 50)),
            "p95_ms": float(np.percentile(a, 95)),
            "p99_ms": float(np.percentile(a, 99)),
        }
    return out


def scenario_of(rec: EvidenceRecord) -> str:
    return rec.intent_id.removeprefix("intent-")


def compute_metrics(
    system: str,
    records: Sequence[EvidenceRecord],
    labels: Mapping[str, Mapping[str, Any]],
    verdicts: Sequence[ReplayVerdict] | None = None,
    lost_receipts: Iterable[str] = (),
    latency: Mapping[str, Sequence[float]] | None = None,
) -> MetricsReport:
    m = MetricsReport(system=system, records=len(records))
    scopes = []
    fields_total = fields_ok = 0
    complete = proofs = covered = 0
    for rec in records:
        label = labels.get(scenario_of(rec), {})
        variant = label.get("variant")
        executed = rec.outcome.status is OutcomeStatus.EXECUTED
        approved = rec.decision.verdict is Verdict.APPROVE
        m.approvals += approved
        m.executed += executed
        if variant is not None:
            m.unsafe_total += 1
            m.unsafe_blocked += not executed
        if variant == "boundary_drift":
            m.drift_total += 1
            m.drift_refused += rec.outcome.status in REFUSALS
            m.drift_executed += executed
        if variant == "malformed_evaluator":
            m.malformed_total += 1
            m.malformed_admitted += approved
        if approved and rec.identity is not None:
            scopes.append(len(rec.identity.scope.resources))
        proofs += proof_is_complete(rec)
        covered += attestation_covered(rec)
        complete += record_is_complete(rec)
        for v in record_field_status(rec).values():
            if v is not None:
                fields_total += 1
                fields_ok += bool(v)
    n = len(records)
    m.unsafe_block_rate = _rate(m.unsafe_blocked, m.unsafe_total)
    m.drift_refusal_rate = _rate(m.drift_refused, m.drift_total)
    m.complete_proof_rate = _rate(proofs, n)
    m.attestation_coverage = _rate(covered, n)
    m.evidence_completeness = _rate(complete, n)
    m.evidence_field_completeness = _rate(fields_ok, fields_total)
    if scopes:
        m.mean_resources_per_approval = float(np.mean(scopes))
        m.p95_resources_per_approval = percentile95(scopes)
    if verdicts is not None:
        apply_replay(m, verdicts, set(lost_receipts), {r.record_id: r for r in records})
    if latency:
        m.latency = latency_summary(latency)
    return m


def apply_replay(m: MetricsReport, verdicts, lost: set[str], by_id: Mapping[str, EvidenceRecord]) -> None:
    if not verdicts:
        return
    m.replay_success = float(np.mean([v.score for v in verdicts]))
    m.replay_full_record = _rate(sum(1 for v in verdicts if v.score == 1.0), len(verdicts))
    failing = [v for v in verdicts if v.failures]
    m.replay_failures = len(failing)
    unattributed = 0
    for v in failing:
        rec = by_id.get(v.record_id)
        receipt = rec.outcome.substrate_receipt if rec is not None else None
        if not (v.receipt_only and receipt in lost):
            unattributed += 1
    m.replay_failures_unattributed = unattributed


def log_replay(m: MetricsReport, answer: Mapping[str, Mapping[str, bool]]) -> None:
    if not answer:
        return
    scores = [sum(a[q] for q in AUDIT_QUESTIONS) / len(AUDIT_QUESTIONS) for a in answer.values()]
    m.replay_success = float(np.mean(scores))
    m.replay_full_record = _rate(sum(1 for s in scores if s == 1.0), len(scores))
    m.replay_failures = sum(1 for s in scores if s < 1.0)
    m.replay_failures_unattributed = m.replay_failures


def compute_baseline_metrics(result: BaselineResult) -> MetricsReport:
    m = MetricsReport(system=result.system, records=len(result.outcomes))
    exposure = []
    for o in result.outcomes:
        variant = result.labels.get(o.scenario_id, {}).get("variant")
        m.approvals += o.blocked_reason is None
        m.executed += o.executed
        if o.executed:
            exposure.append(o.exposure)
        if variant is not None:
            m.unsafe_total += 1
            m.unsafe_blocked += not o.executed
        if variant == "boundary_drift":
            m.drift_total += 1
            m.drift_refused += not o.executed
            m.drift_executed += o.executed
        if variant == "malformed_evaluator":
            m.malformed_total += 1
            m.malformed_admitted += o.executed
    m.unsafe_block_rate = _rate(m.unsafe_blocked, m.unsafe_total)
    m.drift_refusal_rate = _rate(m.drift_refused, m.drift_total)
    if exposure:
        m.mean_resources_per_approval = float(np.mean(exposure))
        m.p95_resources_per_approval = percentile95(exposure)
    log_replay(m, result.logs.answerability([o.request_id for o in result.outcomes]))
    return m


def with_reduction(m: MetricsReport, baseline: MetricsReport) -> MetricsReport:
    if m.mean_resources_per_approval is not None and baseline.mean_resources_per_approval:
        m.authority_reduction = 1.0 - m.mean_resources_per_approval / baseline.mean_resources_per_approval
    return m


def choose_lost_receipts(records: Sequence[EvidenceRecord], rate: float, seed: int) -> set[str]:
    """Pick ``round(rate * records)`` executed receipts to drop from the external store."""
    n = round(rate * len(records))
    pool = sorted(r.outcome.substrate_receipt for r in records if r.outcome.substrate_receipt)
    rng = random.Random(f"receipt-loss:{seed}")
    return set(rng.sample(pool, min(n, len(pool))))


# -- rendering -----------------------------------------------------------------

ROWS = (
    ("Complete proof records", "complete_proof_rate", "pct"),
    ("Attestation coverage", "attestation_coverage", "pct"),
    ("Unsafe block or escalation", "unsafe_block_rate", "pct"),
    ("Boundary-drift refusal", "drift_refusal_rate", "pct"),
    ("Mean mutable resources per approval", "mean_resources_per_approval", "num"),
    ("p95 mutable resources per approval", "p95_resources_per_approval", "num"),
    ("Authority reduction", "authority_reduction", "pct"),
    ("Evidence completeness", "evidence_completeness", "pct"),
    ("Replay success", "replay_success", "pct"),
    ("Replay success (full record)", "replay_full_record", "pct"),
    ("Malformed cases admitted", "malformed_admitted", "int"),
    ("Drift attempts executed", "drift_executed", "int"),
)


def _fmt(v: Any, kind: str) -> str:
    if v is None:
        return "n/a"
    if kind == "pct":
        return f"{100 * v:.2f}%"
    if kind == "num":
        return f"{v:.1f}"
    return str(v)


def render_table(reports: Sequence[MetricsReport]) -> str:
    head = ["Metric"] + [r.system for r in reports]
    body = [[label] + [_fmt(getattr(r, attr), kind) for r in reports] for label, attr, kind in ROWS]
    widths = [max(len(row[i]) for row in [head, *body]) for i in range(len(head))]
    lines = ["  ".join(c.ljust(widths[i]) if i == 0 else c.rjust(widths[i]) for i, c in enumerate(row)) for row in [head, *body]]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def render_latency(latency: Mapping[str, Mapping[str, float]]) -> str:
    if not latency:
        return ""
    lines = ["stage        mean_ms   p50_ms   p95_ms   p99_ms"]
    for stage, s in latency.items():
        lines.append(f"{stage:<11}{s['mean_ms']:>9.3f}{s['p50_ms']:>9.3f}{s['p95_ms']:>9.3f}{s['p99_ms']:>9.3f}")
    return "\n".join(lines) + "\n"


def reports_json(reports: Sequence[MetricsReport]) -> str:
    data = {}
    for r in reports:
        d = r.as_dict()
        d.pop("latency")
        data[r.system] = d
    return json.dumps(data, sort_keys=True, indent=2) + "\n"
