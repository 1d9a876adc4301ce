"""The consensus rule over a collection round.

Branches are evaluated in a fixed order so that the most conservative
outcome wins: reject, then the escalation triggers, then approve, and
escalate for everything else. Malformed and timed-out entries never count
as approvals or rejections.
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from pathlib import Path

from .canonical import decode, encode
from .model import (
    CollectedAttestation,
    CollectionStatus,
    Decision,
    DecisionBasis,
    EvaluatorClass,
    GovernanceMetadata,
    JustificationProof,
    Verdict,
    Vote,
)


@dataclass(frozen=True)
class ConsensusInput:
    attestations: tuple[CollectedAttestation, ...]
    profile: GovernanceMetadata
    proof_freshness: int
    registered_classes: frozenset[EvaluatorClass]

    def approvers(self) -> list[CollectedAttestation]:
        return [a for a in self.attestations if a.vote is Vote.APPROVE]

    def rejecters(self) -> list[CollectedAttestation]:
        return [a for a in self.attestations if a.vote is Vote.REJECT]


def _escalation_basis(inp: ConsensusInput) -> DecisionBasis | None:
    prof = inp.profile
    answered = {a.evaluator_class for a in inp.attestations if a.status is not CollectionStatus.TIMEOUT}
    for cls in prof.required_classes:
        if cls not in inp.registered_classes or cls not in answered:
            return DecisionBasis.MISSING_CLASS
    if any(
        a.status is CollectionStatus.MALFORMED and a.evaluator_class in prof.required_classes
        for a in inp.attestations
    ):
        return DecisionBasis.MALFORMED_ATTESTATION
    valid = sum(1 for a in inp.attestations if a.status is CollectionStatus.VALID)
    if valid < prof.signature_threshold:
        return DecisionBasis.SIGNATURE_THRESHOLD
    if inp.proof_freshness > prof.freshness_window:
        return DecisionBasis.FRESHNESS_FAILURE
    return None


def decide(inp: ConsensusInput) -> Decision:
    prof = inp.profile
    rejecters = inp.rejecters()
    if any(a.evaluator_id in prof.veto_evaluators for a in rejecters):
        return Decision(Verdict.REJECT, DecisionBasis.VETO)
    if len(rejecters) >= prof.rejection_threshold:
        return Decision(Verdict.REJECT, DecisionBasis.REJECTION_THRESHOLD)
    basis = _escalation_basis(inp)
    if basis is not None:
        return Decision(Verdict.ESCALATE, basis)
    approvers = inp.approvers()
    if len(approvers) >= prof.quorum:
        if len({a.evaluator_class for a in approvers}) >= prof.min_distinct_approving_classes:
            return Decision(Verdict.APPROVE, DecisionBasis.QUORUM)
        return Decision(Verdict.ESCALATE, DecisionBasis.DIVERSITY_FAILURE)
    return Decision(Verdict.ESCALATE, DecisionBasis.DEFAULT_ESCALATE)


def ready(
    proof: JustificationProof,
    attestations: Iterable[CollectedAttestation],
    profile: GovernanceMetadata,
    decided_at: int | None = None,
    registered_classes: Iterable[EvaluatorClass] | None = None,
) -> bool:
    """True iff the round for ``proof`` reaches approval."""
    attestations = tuple(attestations)
    at = proof.constructed_at if decided_at is None else decided_at
    classes = (
        frozenset(registered_classes)
        if registered_classes is not None
        else frozenset(a.evaluator_class for a in attestations)
    )
    inp = ConsensusInput(attestations, profile, at - proof.snapshot.freshness, classes)
    return decide(inp).verdict is Verdict.APPROVE


def load_profiles(path: Path, n_evaluators: int | None = None) -> dict[str, GovernanceMetadata]:
    data = json.loads(Path(path).read_text())
    out = {}
    for pid, raw in data["profiles"].items():
        prof = decode(GovernanceMetadata, {"profile_id": pid, **raw})
        if n_evaluators is not None:
            prof.validate(n_evaluators)
        out[pid] = prof
    return out


def profiles_as_json(profiles: Mapping[str, GovernanceMetadata]) -> dict:
    return {"profiles": {pid: {k: v for k, v in encode(p).items() if k != "profile_id"} for pid, p in profiles.items()}}
