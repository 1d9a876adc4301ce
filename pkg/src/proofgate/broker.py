"""Execution Identity issuance and attempt mediation.

The broker owns the validity check. The substrate stub refuses any mutation
that is not accompanied by a ticket the broker minted after validating the
attempt, so enforcement cannot be skipped by calling the stub directly.
Standing-credential execution (used by baselines and one ablation) goes
through an explicit, separately named entry point.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import threading
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .canonical import canonical_digest, canonical_serialize
from .model import (
    Boundary,
    CollectedAttestation,
    Decision,
    ExecutionIdentity,
    GovernanceMetadata,
    JustificationProof,
    Lineage,
    MutationAttempt,
    Outcome,
    OutcomeStatus,
    Verdict,
    attestation_set_digest,
    boundary_contains,
)


class IssuanceRefused(RuntimeError):
    """Identity requested for a proof whose decision is not approve."""


class BoundaryViolation(RuntimeError):
    """A derived scope would exceed the proof boundary."""


class SubstrateFault(RuntimeError):
    pass


# -- obligation signals --------------------------------------------------------


@dataclass
class ObligationSignals:
    """Per-resource traffic timeline: ``{resource: [[from_t, active], ...]}``."""

    traffic: dict[str, list[tuple[int, bool]]] = field(default_factory=dict)

    def active_traffic(self, resource: str, at: int) -> bool:
        state = False
        for start, active in self.traffic.get(resource, ()):
            if start <= at:
                state = active
            else:
                break
        return state

    def set_traffic(self, resource: str, start: int, active: bool) -> None:
        timeline = self.traffic.setdefault(resource, [])
        timeline.append((start, active))
        timeline.sort(key=lambda p: p[0])


# -- substrate -----------------------------------------------------------------


@dataclass(frozen=True)
class Ticket:
    attempt_digest: str
    mac: str


class SubstrateStub:
    """Resource inventory, obligation signals and a single-writer execution log."""

    def __init__(
        self,
        inventory: Mapping[str, Mapping[str, Any]],
        signals: ObligationSignals | None = None,
        effects: Mapping[str, str] | None = None,
    ):
        self.inventory = {r: dict(v) for r, v in inventory.items()}
        self._initial = {r: dict(v) for r, v in self.inventory.items()}
        self.signals = signals or ObligationSignals()
        self.effects = dict(effects or {})
        self.log: list[dict[str, Any]] = []
        self.receipts: dict[str, dict[str, Any]] = {}
        self._lock = threading.Lock()
        self._ticket_key: bytes | None = None

    def trust_broker(self, key: bytes) -> None:
        self._ticket_key = key

    def _mutate(self, attempt: MutationAttempt, mode: str) -> str:
        with self._lock:
            for r in attempt.resources:
                state = self.inventory.get(r)
                if state is None:
                    raise SubstrateFault(f"unknown resource {r}")
                if state.get("state") in ("terminated", "deleted"):
                    raise SubstrateFault(f"resource {r} no longer exists")
            effect = self.effects.get(attempt.action, "modified")
            before = {r: dict(self.inventory[r]) for r in attempt.resources}
            for r in attempt.resources:
                self.inventory[r]["state"] = effect
            entry = {
                "attempt_id": attempt.attempt_id,
                "action": attempt.action,
                "resources": list(attempt.resources),
                "at": attempt.attempted_at,
                "mode": mode,
                "before": before,
                "effect": effect,
            }
            receipt = canonical_digest(entry)
            entry["receipt"] = receipt
            self.log.append(entry)
            self.receipts[receipt] = entry
            return receipt

    def apply(self, attempt: MutationAttempt, ticket: Ticket) -> str:
        """Apply a broker-validated attempt and return its receipt digest."""
        if self._ticket_key is None:
            raise SubstrateFault("no broker is trusted by this substrate")
        digest_ = canonical_digest(attempt)
        expected = hmac.new(self._ticket_key, digest_.encode(), hashlib.sha256).hexdigest()
        if ticket.attempt_digest != digest_ or not hmac.compare_digest(ticket.mac, expected):
            raise SubstrateFault("attempt not validated by the broker")
        return self._mutate(attempt, "identity")

    def apply_standing(self, attempt: MutationAttempt) -> str:
        """Execute under a broad standing credential; no scope checks at all."""
        return self._mutate(attempt, "standing")

    def changed_resources(self) -> set[str]:
        return {r for r, v in self.inventory.items() if v != self._initial.get(r)}

    @classmethod
    def from_fixture(cls, path: Path) -> SubstrateStub:
        data = json.loads(Path(path).read_text())
        signals = ObligationSignals(
            {r: [(int(a), bool(b)) for a, b in tl] for r, tl in data.get("traffic", {}).items()}
        )
        return cls(data.get("inventory", {}), signals, data.get("effects"))


# -- obligations ---------------------------------------------------------------

ObligationCheck = Callable[[SubstrateStub, MutationAttempt, int], bool]


def _no_active_traffic(stub: SubstrateStub, attempt: MutationAttempt, now: int) -> bool:
    return not any(stub.signals.active_traffic(r, now) for r in attempt.resources)


def _resource_available(stub: SubstrateStub, attempt: MutationAttempt, now: int) -> bool:
    for r in attempt.resources:
        state = stub.inventory.get(r)
        if state is None or state.get("state") in ("terminated", "deleted"):
            return False
    return True


OBLIGATIONS: dict[str, ObligationCheck] = {
    "no-active-traffic": _no_active_traffic,
    "resource-available": _resource_available,
}


# -- broker --------------------------------------------------------------------


@dataclass(frozen=True)
class AttemptCheck:
    ok: bool
    status: OutcomeStatus | None = None
    reason: str | None = None


class Broker:
    def __init__(self, issuer: str, run_id: str, secret: bytes, substrate: SubstrateStub):
        self.issuer = issuer
        self.run_id = run_id
        self._secret = secret
        self.substrate = substrate
        self.identities: dict[str, ExecutionIdentity] = {}
        self._issued_for: set[str] = set()
        substrate.trust_broker(secret)

    def _binding(self, identity_id: str) -> str:
        msg = f"{self.run_id}:{identity_id}".encode()
        return hmac.new(self._secret, msg, hashlib.sha256).hexdigest()

    def derive_identity(
        self,
        proof: JustificationProof,
        attestations: Iterable[CollectedAttestation],
        profile: GovernanceMetadata,
        decision: Decision,
        now: int,
        narrow: Callable[[Boundary], Boundary] | None = None,
    ) -> ExecutionIdentity:
        if decision.verdict is not Verdict.APPROVE:
            raise IssuanceRefused(f"decision is {decision.verdict.value} ({decision.basis.value})")
        if proof.proof_hash in self._issued_for:
            raise IssuanceRefused("an identity was already issued for this proof")
        b = proof.boundary
        if b.is_empty:
            raise BoundaryViolation("proof boundary is empty")
        start = max(b.not_before, now)
        scope = Boundary(
            actions=b.actions,
            resources=b.resources,
            not_before=start,
            not_after=max(start, min(b.not_after, now + profile.identity_lifetime)),
            obligations=b.obligations,
        )
        if narrow is not None:
            scope = narrow(scope)
        if not boundary_contains(scope, b):
            raise BoundaryViolation("derived scope exceeds the proof boundary")
        identity_id = "ei-" + canonical_digest([self.run_id, proof.proof_hash])[:24]
        lineage = Lineage(
            proof_hash=proof.proof_hash,
            attestation_digest=attestation_set_digest(attestations),
            profile_id=profile.profile_id,
            decision_digest=canonical_digest(decision),
        )
        identity = ExecutionIdentity(
            identity_id=identity_id,
            scope=scope,
            lineage=lineage,
            issued_at=now,
            issuer=self.issuer,
            binding=self._binding(identity_id),
        )
        self.identities[identity_id] = identity
        self._issued_for.add(proof.proof_hash)
        return identity

    @staticmethod
    def scope(identity: ExecutionIdentity) -> Boundary:
        return identity.scope

    def check_attempt(
        self, identity: ExecutionIdentity | None, attempt: MutationAttempt, now: int,
        signals: SubstrateStub | None = None,
    ) -> AttemptCheck:
        stub = signals or self.substrate
        known = self.identities.get(attempt.identity_id or "")
        if identity is None or known is None or known != identity:
            return AttemptCheck(False, OutcomeStatus.REFUSED_BOUNDARY, "UNKNOWN_IDENTITY")
        if not hmac.compare_digest(identity.binding, self._binding(identity.identity_id)):
            return AttemptCheck(False, OutcomeStatus.REFUSED_BOUNDARY, "BINDING_MISMATCH")
        s = identity.scope
        if attempt.action not in s.actions:
            return AttemptCheck(False, OutcomeStatus.REFUSED_BOUNDARY, "ACTION_OUTSIDE_SCOPE")
        if not attempt.resources or not set(attempt.resources) <= s.resources:
            return AttemptCheck(False, OutcomeStatus.REFUSED_BOUNDARY, "RESOURCE_OUTSIDE_SCOPE")
        if not s.not_before <= now <= s.not_after:
            return AttemptCheck(False, OutcomeStatus.REFUSED_EXPIRED, "OUTSIDE_VALIDITY_WINDOW")
        for name in sorted(s.obligations):
            check = OBLIGATIONS.get(name)
            if check is None or not check(stub, attempt, now):
                return AttemptCheck(False, OutcomeStatus.REFUSED_OBLIGATION, f"OBLIGATION_UNMET:{name}")
        return AttemptCheck(True)

    def validate_attempt(self, identity, attempt: MutationAttempt, now: int, signals=None) -> bool:
        return self.check_attempt(identity, attempt, now, signals).ok

    def execute(self, identity: ExecutionIdentity | None, attempt: MutationAttempt, now: int) -> Outcome:
        """Validate immediately before the substrate call, then apply."""
        check = self.check_attempt(identity, attempt, now)
        if not check.ok:
            return Outcome(check.status, now, None, check.reason)
        digest_ = canonical_digest(attempt)
        ticket = Ticket(digest_, hmac.new(self._secret, digest_.encode(), hashlib.sha256).hexdigest())
        try:
            receipt = self.substrate.apply(attempt, ticket)
        except SubstrateFault as exc:
            return Outcome(OutcomeStatus.SUBSTRATE_ERROR, now, None, str(exc))
        return Outcome(OutcomeStatus.EXECUTED, now, receipt, None)


def execute_standing(substrate: SubstrateStub, attempt: MutationAttempt, now: int) -> Outcome:
    try:
        receipt = substrate.apply_standing(attempt)
    except SubstrateFault as exc:
        return Outcome(OutcomeStatus.SUBSTRATE_ERROR, now, None, str(exc))
    return Outcome(OutcomeStatus.EXECUTED, now, receipt, None)


def run_secret(seed: int | str, run_id: str) -> bytes:
    return hashlib.sha256(canonical_serialize(["broker-secret", str(seed), run_id])).digest()
