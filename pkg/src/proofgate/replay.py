"""Replay of evidence records against pinned bundles, profiles and keys.

A record is replayed by recomputing everything that can be recomputed and
comparing it with what was stored. The verdict answers the five audit
questions individually so that partial reconstructions can be scored.
"""

from __future__ import annotations

import enum
import json
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path

from .canonical import canonical_digest, canonical_serialize
from .consensus import ConsensusInput, decide
from .keys import KeyRegistry
from .model import (
    CollectionStatus,
    EvaluatorClass,
    EvidenceRecord,
    GovernanceMetadata,
    OutcomeStatus,
    PolicyBundle,
    Verdict,
    attestation_set_digest,
    boundary_contains,
)
from .proofs import derive_boundary, evaluate_policy

AUDIT_QUESTIONS = (
    "mutation_proposed",
    "context_and_policy",
    "evaluator_votes",
    "boundary_issued",
    "execution_outcome",
)


class ReplayStatus(str, enum.Enum):
    MATCH = "match"
    MISMATCH = "mismatch"
    BLOCKED = "blocked"


@dataclass
class ReplayVerdict:
    record_id: str
    status: ReplayStatus
    answered: dict[str, bool]
    failures: list[str] = field(default_factory=list)

    @property
    def score(self) -> float:
        return sum(self.answered.values()) / len(AUDIT_QUESTIONS)

    @property
    def receipt_only(self) -> bool:
        """True when every failure is a missing external receipt."""
        return bool(self.failures) and all(f == "RECEIPT_MISSING" for f in self.failures)

    def as_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "status": self.status.value,
            "answered": dict(self.answered),
            "failures": list(self.failures),
        }


@dataclass
class ArtifactStore:
    """Pinned policy bundles, governance profiles and evaluator keys."""

    bundles: dict[str, PolicyBundle]
    profiles: dict[str, GovernanceMetadata]
    keys: KeyRegistry
    registered_classes: frozenset[EvaluatorClass]


class ReceiptStore:
    """External substrate receipts keyed by digest."""

    def __init__(self, receipts: Mapping[str, dict] | None = None):
        self._receipts = dict(receipts or {})

    def __contains__(self, receipt: str) -> bool:
        return receipt in self._receipts

    def get(self, receipt: str) -> dict | None:
        return self._receipts.get(receipt)

    def __len__(self) -> int:
        return len(self._receipts)

    @classmethod
    def load(cls, path: Path) -> ReceiptStore:
        out = {}
        for line in Path(path).read_text().splitlines():
            if line.strip():
                entry = json.loads(line)
                out[entry["receipt"]] = entry
        return cls(out)

    def write(self, path: Path, drop: set[str] = frozenset()) -> None:
        lines = [
            canonical_serialize(v).decode() + "\n"
            for k, v in sorted(self._receipts.items(), key=lambda kv: kv[1].get("attempt_id", ""))
            if k not in drop
        ]
        Path(path).write_text("".join(lines))


def _receipt_matches(entry: dict, rec: EvidenceRecord) -> bool:
    body = {k: v for k, v in entry.items() if k != "receipt"}
    if canonical_digest(body) != entry["receipt"]:
        return False
    att = rec.attempt
    return (
        att is not None
        and entry.get("attempt_id") == att.attempt_id
        and entry.get("action") == att.action
        and tuple(entry.get("resources", ())) == att.resources
    )


def replay(record: EvidenceRecord, store: ArtifactStore, receipts: ReceiptStore | None = None) -> ReplayVerdict:
    failures: list[str] = []
    answered = dict.fromkeys(AUDIT_QUESTIONS, False)
    proof = record.proof

    # Q1: the proposed mutation, bound to the proof hash
    if proof is not None and proof.verify_hash() and record.intent.get("intent_id") == proof.mutation.intent_id:
        answered["mutation_proposed"] = True
    else:
        failures.append("PROOF_HASH_MISMATCH" if proof is not None else "PROOF_ABSENT")

    if proof is None:
        return ReplayVerdict(record.record_id, ReplayStatus.MISMATCH, answered, failures)

    # Q2: context and policy, re-evaluated under the pinned bundle
    basis = proof.policy_basis
    bundle = store.bundles.get(f"{basis.bundle_id}@{basis.version}")
    if bundle is None or bundle.digest != basis.bundle_digest:
        failures.append("BUNDLE_NOT_IN_STORE")
        return ReplayVerdict(record.record_id, ReplayStatus.BLOCKED, answered, failures)
    snap_ok = (
        proof.snapshot.recompute_digest() == proof.snapshot.snapshot_digest
        and record.context_digest == proof.snapshot.snapshot_digest
    )
    re_basis, re_risk = evaluate_policy(proof.snapshot, bundle, proof.mutation, at=basis.evaluated_at)
    policy_ok = re_basis == basis and re_risk == proof.risk and derive_boundary(re_basis, re_risk) == proof.boundary
    if snap_ok and policy_ok:
        answered["context_and_policy"] = True
    else:
        failures.append("CONTEXT_DIGEST_MISMATCH" if not snap_ok else "POLICY_REEVALUATION_MISMATCH")

    # Q3: evaluator votes, signatures and the consensus decision
    profile = store.profiles.get(proof.risk.required_profile)
    if profile is None:
        failures.append("PROFILE_NOT_IN_STORE")
        return ReplayVerdict(record.record_id, ReplayStatus.BLOCKED, answered, failures)
    sig_ok = True
    for ca in record.attestations:
        att = ca.attestation
        if ca.status is CollectionStatus.VALID:
            if att is None or att.proof_hash != proof.proof_hash or not store.keys.verify(
                ca.evaluator_id, canonical_serialize(att.signing_payload()), att.signature
            ):
                sig_ok = False
        elif ca.status is CollectionStatus.MALFORMED and att is not None and att.proof_hash == proof.proof_hash:
            # a stored "malformed" marker must actually fail verification
            if store.keys.verify(ca.evaluator_id, canonical_serialize(att.signing_payload()), att.signature) and att.decision is not None:
                sig_ok = False
    redecided = decide(ConsensusInput(record.attestations, profile, record.proof_freshness, store.registered_classes))
    profile_ok = record.profile == profile
    if not sig_ok:
        failures.append("ATTESTATION_SIGNATURE_INVALID")
    if not profile_ok:
        failures.append("PROFILE_MISMATCH")
    if redecided != record.decision:
        failures.append("DECISION_MISMATCH")
    if sig_ok and profile_ok and redecided == record.decision:
        answered["evaluator_votes"] = True

    # Q4: the issued boundary, or a justified refusal
    ident = record.identity
    if ident is None:
        ok4 = bool(record.refusal)
    else:
        lin = ident.lineage
        ok4 = (
            record.decision.verdict is Verdict.APPROVE
            and lin.proof_hash == proof.proof_hash
            and lin.attestation_digest == attestation_set_digest(record.attestations)
            and lin.decision_digest == canonical_digest(record.decision)
            and lin.profile_id == profile.profile_id
            and boundary_contains(ident.scope, proof.boundary)
        )
    if ok4:
        answered["boundary_issued"] = True
    else:
        failures.append("IDENTITY_LINEAGE_MISMATCH")

    # Q5: attempt and outcome consistency, corroborated by the substrate receipt
    out = record.outcome
    att = record.attempt
    problem = None
    if out.status is OutcomeStatus.EXECUTED:
        s = ident.scope if ident else None
        if (
            att is None or s is None or att.identity_id != ident.identity_id
            or att.action not in s.actions or not set(att.resources) <= s.resources
            or not s.not_before <= att.attempted_at <= s.not_after
        ):
            problem = "EXECUTION_OUTSIDE_SCOPE"
        elif receipts is None or out.substrate_receipt not in receipts:
            problem = "RECEIPT_MISSING"
        elif not _receipt_matches(receipts.get(out.substrate_receipt), record):
            problem = "RECEIPT_MISMATCH"
    elif out.status is OutcomeStatus.REJECTED:
        if record.decision.verdict is not Verdict.REJECT or att is not None:
            problem = "OUTCOME_INCONSISTENT"
    elif out.status is OutcomeStatus.ESCALATED:
        if record.decision.verdict is not Verdict.ESCALATE or att is not None:
            problem = "OUTCOME_INCONSISTENT"
    elif att is None:
        if ident is not None or not record.refusal:
            problem = "OUTCOME_INCONSISTENT"
    elif ident is None or out.substrate_receipt is not None:
        problem = "OUTCOME_INCONSISTENT"
    if problem:
        failures.append(problem)
    ok5 = problem is None
    answered["execution_outcome"] = ok5

    status = ReplayStatus.MATCH if not failures else ReplayStatus.MISMATCH
    return ReplayVerdict(record.record_id, status, answered, failures)
