"""Ledger sweeps for the four structural constraints.

Each sweep returns the intent ids that violate it; an empty list means the
constraint held for every record.
"""

from __future__ import annotations

from collections import Counter
from collections.abc import Iterable, Sequence

from ..canonical import canonical_digest
from ..ledger import completeness_check, record_is_complete
from ..model import EvidenceRecord, LedgerEntry, OutcomeStatus, Verdict
from .metrics import scope_respected


def proof_bound_execution(records: Iterable[EvidenceRecord]) -> list[str]:
    """Every executed mutation links to a stored proof whose hash recomputes."""
    bad = []
    for r in records:
        if r.outcome.status is not OutcomeStatus.EXECUTED:
            continue
        p, ident = r.proof, r.identity
        if p is None or not p.verify_hash() or ident is None or ident.lineage.proof_hash != p.proof_hash:
            bad.append(r.intent_id)
    return bad


def approval_bound_issuance(records: Iterable[EvidenceRecord]) -> list[str]:
    """Every issued identity links to an approve decision."""
    bad = []
    for r in records:
        if r.identity is None:
            continue
        if r.decision.verdict is not Verdict.APPROVE or r.identity.lineage.decision_digest != canonical_digest(r.decision):
            bad.append(r.intent_id)
    return bad


def scope_bounded_execution(records: Iterable[EvidenceRecord]) -> list[str]:
    """Every executed attempt lies in its scope, and the scope in the proof boundary."""
    return [
        r.intent_id for r in records
        if r.outcome.status is OutcomeStatus.EXECUTED and not scope_respected(r)
    ]


def one_complete_record(
    records: Sequence[EvidenceRecord], entries: Sequence[LedgerEntry], expected: Iterable[str]
) -> list[str]:
    """Exactly one structurally complete record per intent."""
    expected = list(expected)
    report = completeness_check(entries, expected)
    bad = set(report.missing) | set(report.duplicates) | set(report.out_of_order)
    counts = Counter(r.intent_id for r in records)
    bad |= {i for i in expected if counts.get(i, 0) != 1}
    bad |= {r.intent_id for r in records if not record_is_complete(r)}
    return sorted(bad)


def sweep(records: Sequence[EvidenceRecord], entries: Sequence[LedgerEntry], expected: Iterable[str]) -> dict[str, list[str]]:
    return {
        "proof_bound_execution": proof_bound_execution(records),
        "approval_bound_issuance": approval_bound_issuance(records),
        "scope_bounded_execution": scope_bounded_execution(records),
        "one_complete_record": one_complete_record(records, entries, expected),
    }
