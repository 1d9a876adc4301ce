"""Domain types shared by every stage of the authorization pipeline.

All types are frozen dataclasses. Collections that carry set semantics are
``frozenset``; ordered ones are tuples. Timestamps are logical integers
handed out by :class:`LogicalClock`.
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass, field, replace
from typing import Any

from .canonical import canonical_digest, encode


class RiskClass(str, enum.Enum):
    LOW = "low"
    HIGH = "high"
    PROTECTED = "protected"
    BREAK_GLASS = "break_glass"


class EvaluatorClass(str, enum.Enum):
    POLICY = "policy"
    STATE = "state"
    RISK = "risk"
    SIMULATION = "simulation"
    HUMAN_ESCALATION = "human_escalation"


class Vote(str, enum.Enum):
    """An individual evaluator's judgement."""

    APPROVE = "approve"
    REJECT = "reject"
    ABSTAIN = "abstain"


class Verdict(str, enum.Enum):
    """The consensus outcome; only these three values exist."""

    APPROVE = "approve"
    REJECT = "reject"
    ESCALATE = "escalate"


class DecisionBasis(str, enum.Enum):
    VETO = "veto"
    REJECTION_THRESHOLD = "rejection-threshold"
    QUORUM = "quorum"
    DIVERSITY_FAILURE = "diversity-failure"
    FRESHNESS_FAILURE = "freshness-failure"
    MISSING_CLASS = "missing-class"
    MALFORMED_ATTESTATION = "malformed-attestation"
    SIGNATURE_THRESHOLD = "signature-threshold"
    DEFAULT_ESCALATE = "default-escalate"
    INVALID_INTENT = "invalid-intent"
    # only produced by the no-consensus ablation
    SINGLE_EVALUATOR = "single-evaluator"


class CollectionStatus(str, enum.Enum):
    VALID = "valid"
    MALFORMED = "malformed"
    TIMEOUT = "timeout"


class OutcomeStatus(str, enum.Enum):
    EXECUTED = "executed"
    REFUSED_BOUNDARY = "refused_boundary"
    REFUSED_EXPIRED = "refused_expired"
    REFUSED_OBLIGATION = "refused_obligation"
    REJECTED = "rejected"
    ESCALATED = "escalated"
    SUBSTRATE_ERROR = "substrate_error"


class EventKind(str, enum.Enum):
    PROOF_CREATED = "proof_created"
    ATTESTATIONS_CLOSED = "attestations_closed"
    IDENTITY = "identity_issued_or_refused"
    OUTCOME = "outcome_recorded"


EVENT_ORDER = (
    EventKind.PROOF_CREATED,
    EventKind.ATTESTATIONS_CLOSED,
    EventKind.IDENTITY,
    EventKind.OUTCOME,
)

CONTEXT_DOMAINS = ("dependencies", "traffic", "ownership", "protection", "incident")


class LogicalClock:
    """Monotone integer clock injected into the pipeline."""

    def __init__(self, start: int = 0):
        self._now = start

    def now(self) -> int:
        return self._now

    def advance(self, ticks: int = 1) -> int:
        if ticks < 0:
            raise ValueError("logical time never runs backwards")
        self._now += ticks
        return self._now

    def set(self, t: int) -> None:
        if t < self._now:
            raise ValueError("logical time never runs backwards")
        self._now = t


# -- intents and context -------------------------------------------------------


@dataclass(frozen=True)
class Intent:
    intent_id: str
    action: str
    target: tuple[str, ...]
    parameters: dict[str, Any]
    proposer: str
    submitted_at: int

    def __post_init__(self):
        if not self.action or not self.target or any(not r for r in self.target):
            raise ValueError("intent action and target must be non-empty")


@dataclass(frozen=True)
class Binding:
    """One context fact set for one resource, or an explicit absence marker."""

    domain: str
    resource: str
    source_id: str
    captured_at: int
    present: bool
    facts: dict[str, Any] | None = None


@dataclass(frozen=True)
class ContextSnapshot:
    bindings: tuple[Binding, ...]
    snapshot_digest: str

    @classmethod
    def from_bindings(cls, bindings) -> ContextSnapshot:
        ordered = tuple(sorted(bindings, key=lambda b: (b.domain, b.resource, b.source_id)))
        return cls(bindings=ordered, snapshot_digest=canonical_digest(ordered))

    def recompute_digest(self) -> str:
        return canonical_digest(self.bindings)

    @property
    def freshness(self) -> int:
        """Capture time of the oldest binding."""
        if not self.bindings:
            return 0
        return min(b.captured_at for b in self.bindings)

    def lookup(self, domain: str, resource: str) -> Binding | None:
        for b in self.bindings:
            if b.domain == domain and b.resource == resource:
                return b
        return None

    def absent(self) -> list[Binding]:
        return [b for b in self.bindings if not b.present]


# -- policy --------------------------------------------------------------------


@dataclass(frozen=True)
class BoundaryTemplate:
    validity_seconds: int
    obligations: frozenset[str] = frozenset()
    max_resources: int = 1


@dataclass(frozen=True)
class Rule:
    rule_id: str
    actions: frozenset[str]
    risk_class: RiskClass
    profile: str
    template: BoundaryTemplate
    # predicate terms over the bound context; absent key means "don't care"
    when: dict[str, bool] = field(default_factory=dict)
    allows_protected: bool = False

    def matches(self, action: str, traits: dict[str, bool]) -> bool:
        if "*" not in self.actions and action not in self.actions:
            return False
        return all(traits.get(k, False) == v for k, v in self.when.items())


@dataclass(frozen=True)
class PolicyBundle:
    bundle_id: str
    version: str
    rules: tuple[Rule, ...]
    protected_resource_markers: frozenset[str] = frozenset()

    @functools.cached_property
    def digest(self) -> str:
        return canonical_digest(self)

    def rule(self, rule_id: str) -> Rule:
        for r in self.rules:
            if r.rule_id == rule_id:
                return r
        raise KeyError(rule_id)


# -- proofs --------------------------------------------------------------------


@dataclass(frozen=True)
class Boundary:
    actions: frozenset[str]
    resources: frozenset[str]
    not_before: int
    not_after: int
    obligations: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.not_before > self.not_after:
            raise ValueError("boundary validity must satisfy not_before <= not_after")

    @property
    def is_empty(self) -> bool:
        return not self.actions or not self.resources

    @classmethod
    def empty(cls, at: int) -> Boundary:
        return cls(frozenset(), frozenset(), at, at, frozenset())


def boundary_contains(inner: Boundary, outer: Boundary) -> bool:
    """``inner`` grants no more authority than ``outer``.

    Narrower authority means fewer actions, fewer resources, a shorter window
    and *more* obligations, since every obligation removes discretion.
    """
    return (
        inner.actions <= outer.actions
        and inner.resources <= outer.resources
        and outer.not_before <= inner.not_before
        and inner.not_after <= outer.not_after
        and inner.obligations >= outer.obligations
    )


@dataclass(frozen=True)
class RiskAssessment:
    risk_class: RiskClass
    rationale_codes: tuple[str, ...]
    required_profile: str


@dataclass(frozen=True)
class PolicyBasis:
    bundle_id: str
    version: str
    bundle_digest: str
    matched_rules: tuple[str, ...]
    selected_rule: str | None
    action: str
    resources: tuple[str, ...]
    evaluated_at: int
    template: BoundaryTemplate | None


@dataclass(frozen=True)
class JustificationProof:
    proof_id: str
    mutation: Intent
    snapshot: ContextSnapshot
    policy_basis: PolicyBasis
    risk: RiskAssessment
    boundary: Boundary
    constructed_at: int
    proof_hash: str

    def hashed_fields(self) -> dict[str, Any]:
        return {
            "mutation": self.mutation,
            "snapshot": self.snapshot,
            "policy_basis": self.policy_basis,
            "risk": self.risk,
            "boundary": self.boundary,
        }

    def compute_hash(self) -> str:
        return canonical_digest(self.hashed_fields())

    def verify_hash(self) -> bool:
        return self.compute_hash() == self.proof_hash

    @classmethod
    def assemble(cls, proof_id, mutation, snapshot, policy_basis, risk, boundary, constructed_at):
        draft = cls(proof_id, mutation, snapshot, policy_basis, risk, boundary, constructed_at, "")
        return replace(draft, proof_hash=draft.compute_hash())


# -- attestations and consensus ------------------------------------------------


@dataclass(frozen=True)
class Attestation:
    evaluator_id: str
    evaluator_class: EvaluatorClass
    proof_hash: str
    decision: Vote | None
    annotations: dict[str, Any]
    issued_at: int
    signature: str = ""

    def signing_payload(self) -> dict[str, Any]:
        return {
            "evaluator_id": self.evaluator_id,
            "proof_hash": self.proof_hash,
            "decision": self.decision,
            "annotations": self.annotations,
            "issued_at": self.issued_at,
        }


@dataclass(frozen=True)
class CollectedAttestation:
    """What the coordinator holds for one evaluator after a collection round."""

    evaluator_id: str
    evaluator_class: EvaluatorClass
    status: CollectionStatus
    attestation: Attestation | None = None
    reason: str | None = None

    @property
    def vote(self) -> Vote | None:
        if self.status is not CollectionStatus.VALID or self.attestation is None:
            return None
        return self.attestation.decision


@dataclass(frozen=True)
class GovernanceMetadata:
    profile_id: str
    quorum: int
    rejection_threshold: int
    veto_evaluators: frozenset[str]
    required_classes: frozenset[EvaluatorClass]
    min_distinct_approving_classes: int
    freshness_window: int
    signature_threshold: int
    identity_lifetime: int = 300
    blast_radius_cap: int = 1
    permits_irreversible: bool = False

    def validate(self, n_evaluators: int) -> None:
        if not 1 <= self.quorum <= n_evaluators:
            raise ValueError(f"{self.profile_id}: quorum must lie in [1, {n_evaluators}]")
        if self.rejection_threshold < 1:
            raise ValueError(f"{self.profile_id}: rejection threshold must be >= 1")
        if self.min_distinct_approving_classes > self.quorum:
            raise ValueError(f"{self.profile_id}: diversity floor exceeds quorum")
        if self.signature_threshold > n_evaluators:
            raise ValueError(f"{self.profile_id}: signature threshold exceeds evaluator count")


@dataclass(frozen=True)
class Decision:
    verdict: Verdict
    basis: DecisionBasis


# -- authority and execution ---------------------------------------------------


@dataclass(frozen=True)
class Lineage:
    proof_hash: str
    attestation_digest: str
    profile_id: str
    decision_digest: str


@dataclass(frozen=True)
class ExecutionIdentity:
    identity_id: str
    scope: Boundary
    lineage: Lineage
    issued_at: int
    issuer: str
    binding: str


@dataclass(frozen=True)
class MutationAttempt:
    attempt_id: str
    identity_id: str | None
    action: str
    resources: tuple[str, ...]
    attempted_at: int
    obligation_evidence: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class Outcome:
    status: OutcomeStatus
    observed_at: int
    substrate_receipt: str | None = None
    reason: str | None = None


# -- evidence ------------------------------------------------------------------


@dataclass(frozen=True)
class LedgerEntry:
    seq: int
    kind: EventKind
    intent_id: str
    payload: dict[str, Any]
    payload_digest: str
    prev_hash: str
    entry_hash: str

    def body(self) -> dict[str, Any]:
        return {
            "seq": self.seq,
            "kind": self.kind,
            "intent_id": self.intent_id,
            "payload_digest": self.payload_digest,
            "payload": self.payload,
        }


@dataclass(frozen=True)
class EvidenceRecord:
    record_id: str
    intent: dict[str, Any]
    context_digest: str | None
    policy_version: str | None
    proof: JustificationProof | None
    attestations: tuple[CollectedAttestation, ...]
    profile: GovernanceMetadata | None
    decision: Decision
    identity: ExecutionIdentity | None
    attempt: MutationAttempt | None
    outcome: Outcome
    append_events: tuple[LedgerEntry, ...]
    proof_freshness: int = 0
    refusal: str | None = None

    @property
    def intent_id(self) -> str:
        return self.intent.get("intent_id", "")


def attestation_set_digest(attestations) -> str:
    return canonical_digest([encode(a) for a in attestations])
