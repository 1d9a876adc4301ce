"""Heterogeneous evaluators and the attestation collector.

Each evaluator class has a small, documented rule set so that outcomes on
the synthetic workload are deterministic:

* policy      re-derives the policy basis from the stored snapshot and the
              pinned bundle; rejects empty boundaries and protected targets
              the selected rule does not admit; abstains on unknown bundles.
* state       rejects absent context, stale snapshots and targets that sit on
              a recorded dependency path.
* risk        enforces the profile's blast-radius cap and reversibility rule.
* simulation  replays the mutation on a fixture world model.
* human       relays a queued verdict for the proof hash, else abstains.
"""

from __future__ import annotations

import enum
import json
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor, wait
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from .canonical import canonical_digest, canonical_serialize, digest
from .keys import KeyRegistry, SigningKey
from .model import (
    Attestation,
    CollectedAttestation,
    CollectionStatus,
    EvaluatorClass,
    GovernanceMetadata,
    JustificationProof,
    PolicyBundle,
    RiskClass,
    Vote,
)
from .proofs import derive_boundary, evaluate_policy


class FaultMode(str, enum.Enum):
    HONEST = "honest"
    MALFORMED_OUTPUT = "malformed_output"
    ALWAYS_APPROVE = "always_approve"
    UNRESPONSIVE = "unresponsive"


@dataclass(frozen=True)
class EvaluatorRegistration:
    evaluator_id: str
    evaluator_class: EvaluatorClass
    public_key: str = ""
    fault_mode: FaultMode = FaultMode.HONEST


@dataclass(frozen=True)
class ActionSpec:
    reversible: bool
    effect: str


@dataclass
class WorldModel:
    """Resource facts the simulation evaluator predicts against."""

    resources: dict[str, dict[str, Any]] = field(default_factory=dict)

    def predict(self, action: str, resources: Sequence[str], catalog: Mapping[str, ActionSpec]):
        spec = catalog.get(action)
        effect = spec.effect if spec else "unknown"
        effects = {}
        violations = []
        for r in sorted(resources):
            facts = self.resources.get(r)
            if facts is None:
                return None, ["UNMODELLED_RESOURCE"]
            effects[r] = effect
            if facts.get("routes_traffic") and effect in ("terminated", "restarted", "deleted"):
                violations.append(f"ROUTED_TRAFFIC_DISRUPTED:{r}")
            if facts.get("protected") and effect != "none":
                violations.append(f"PROTECTED_INVARIANT:{r}")
        return effects, violations

    @classmethod
    def load(cls, path: Path) -> WorldModel:
        return cls(json.loads(Path(path).read_text())["resources"])


def load_action_catalog(path: Path) -> dict[str, ActionSpec]:
    data = json.loads(Path(path).read_text())
    return {name: ActionSpec(bool(v["reversible"]), v["effect"]) for name, v in data.items()}


def load_queued_verdicts(path: Path) -> dict[str, Vote]:
    data = json.loads(Path(path).read_text())
    return {h: Vote(v) for h, v in data.items()}


@dataclass
class EvaluatorFixtures:
    """Read-only state shared by evaluators during a collection round."""

    bundles: dict[str, PolicyBundle]
    profiles: dict[str, GovernanceMetadata]
    catalog: dict[str, ActionSpec]
    world: WorldModel = field(default_factory=WorldModel)
    queued_verdicts: dict[str, Vote] = field(default_factory=dict)

    def bundle_for(self, bundle_id: str, version: str) -> PolicyBundle | None:
        return self.bundles.get(f"{bundle_id}@{version}")


Judgement = tuple[Vote, dict[str, Any]]


def evaluate_policy_class(proof: JustificationProof, fx: EvaluatorFixtures) -> Judgement:
    basis = proof.policy_basis
    bundle = fx.bundle_for(basis.bundle_id, basis.version)
    if bundle is None or bundle.digest != basis.bundle_digest:
        return Vote.ABSTAIN, {"reason": "UNKNOWN_BUNDLE_VERSION"}
    if proof.boundary.is_empty:
        return Vote.REJECT, {"objections": ["EMPTY_BOUNDARY"]}
    re_basis, re_risk = evaluate_policy(proof.snapshot, bundle, proof.mutation, at=basis.evaluated_at)
    if re_basis != basis or re_risk != proof.risk or derive_boundary(re_basis, re_risk) != proof.boundary:
        return Vote.REJECT, {"objections": ["POLICY_BASIS_MISMATCH"]}
    rule = bundle.rule(basis.selected_rule)
    if proof.risk.risk_class is RiskClass.PROTECTED and not rule.allows_protected:
        return Vote.REJECT, {"objections": ["PROTECTED_RESOURCE"], "rule": rule.rule_id}
    return Vote.APPROVE, {"matched_rules": list(basis.matched_rules)}


_DOMAIN_CODES = {
    "dependencies": "MISSING_DEPENDENCY_CONTEXT",
    "traffic": "MISSING_TRAFFIC_CONTEXT",
    "ownership": "MISSING_OWNERSHIP_CONTEXT",
    "protection": "MISSING_PROTECTION_CONTEXT",
    "incident": "MISSING_INCIDENT_CONTEXT",
}


def evaluate_state_class(proof: JustificationProof, fx: EvaluatorFixtures) -> Judgement:
    objections = []
    for b in proof.snapshot.absent():
        code = _DOMAIN_CODES.get(b.domain, "MISSING_CONTEXT")
        if code not in objections:
            objections.append(code)
    profile = fx.profiles.get(proof.risk.required_profile)
    age = proof.constructed_at - proof.snapshot.freshness
    if profile is None:
        objections.append("UNKNOWN_PROFILE")
    elif age > profile.freshness_window:
        objections.append("STALE_STATE")
    for b in proof.snapshot.bindings:
        if b.domain == "dependencies" and b.present and b.facts and b.facts.get("dependents"):
            objections.append(f"DEPENDENCY_PATH:{b.resource}")
    if objections:
        return Vote.REJECT, {"objections": objections, "snapshot_age": age}
    return Vote.APPROVE, {"snapshot_age": age}


def evaluate_risk_class(proof: JustificationProof, fx: EvaluatorFixtures) -> Judgement:
    if proof.boundary.is_empty:
        return Vote.REJECT, {"objections": ["EMPTY_BOUNDARY"]}
    profile = fx.profiles.get(proof.risk.required_profile)
    if profile is None:
        return Vote.ABSTAIN, {"reason": "UNKNOWN_PROFILE"}
    blast = len(proof.boundary.resources)
    objections = []
    if blast > profile.blast_radius_cap:
        objections.append("BLAST_RADIUS")
    irreversible = [
        a for a in sorted(proof.boundary.actions)
        if not (fx.catalog.get(a) and fx.catalog[a].reversible)
    ]
    if irreversible and not profile.permits_irreversible:
        objections.extend(["BLAST_RADIUS", "IRREVERSIBLE_NOT_PERMITTED"])
    notes = {"blast_radius": blast, "cap": profile.blast_radius_cap}
    if objections:
        return Vote.REJECT, {"objections": sorted(set(objections)), **notes}
    return Vote.APPROVE, notes


def evaluate_simulation_class(proof: JustificationProof, fx: EvaluatorFixtures) -> Judgement:
    if proof.boundary.is_empty:
        return Vote.REJECT, {"objections": ["EMPTY_BOUNDARY"]}
    effects, violations = fx.world.predict(
        proof.mutation.action, sorted(proof.boundary.resources), fx.catalog
    )
    if effects is None:
        return Vote.ABSTAIN, {"reason": violations[0]}
    notes = {"predicted_effect_digest": canonical_digest(effects)}
    if violations:
        return Vote.REJECT, {"objections": violations, **notes}
    return Vote.APPROVE, notes


def evaluate_human_escalation_adapter(proof: JustificationProof, fx: EvaluatorFixtures) -> Judgement:
    queued = fx.queued_verdicts.get(proof.proof_hash)
    if queued is None:
        return Vote.ABSTAIN, {"reason": "NO_QUEUED_VERDICT"}
    return queued, {"source": "queued-verdicts"}


CLASS_LOGIC = {
    EvaluatorClass.POLICY: evaluate_policy_class,
    EvaluatorClass.STATE: evaluate_state_class,
    EvaluatorClass.RISK: evaluate_risk_class,
    EvaluatorClass.SIMULATION: evaluate_simulation_class,
    EvaluatorClass.HUMAN_ESCALATION: evaluate_human_escalation_adapter,
}


class Evaluator:
    def __init__(self, registration: EvaluatorRegistration, key: SigningKey, fixtures: EvaluatorFixtures):
        self.registration = registration
        self.key = key
        self.fixtures = fixtures

    def sign(self, att: Attestation) -> Attestation:
        return replace(att, signature=self.key.sign(canonical_serialize(att.signing_payload())))

    def attest(self, proof: JustificationProof, issued_at: int, fault: FaultMode | None = None):
        """Return a signed attestation, or ``None`` when unresponsive."""
        reg = self.registration
        fault = fault or reg.fault_mode
        if fault is FaultMode.UNRESPONSIVE:
            return None
        if fault is FaultMode.MALFORMED_OUTPUT:
            # garbled output: claims approval, bound to no real proof, unsigned noise
            return Attestation(
                evaluator_id=reg.evaluator_id,
                evaluator_class=reg.evaluator_class,
                proof_hash=digest(f"garbled:{proof.proof_hash}".encode()),
                decision=Vote.APPROVE,
                annotations={"garbled": True},
                issued_at=issued_at,
                signature=digest(f"noise:{reg.evaluator_id}:{proof.proof_hash}".encode()) * 2,
            )
        if not proof.verify_hash():
            return self.sign(Attestation(
                reg.evaluator_id, reg.evaluator_class, proof.proof_hash, None,
                {"objections": ["UNVERIFIABLE_PROOF_HASH"]}, issued_at,
            ))
        if fault is FaultMode.ALWAYS_APPROVE:
            vote, notes = Vote.APPROVE, {}
        else:
            vote, notes = CLASS_LOGIC[reg.evaluator_class](proof, self.fixtures)
        return self.sign(Attestation(
            reg.evaluator_id, reg.evaluator_class, proof.proof_hash, vote, notes, issued_at
        ))


def check_attestation(
    att: Attestation | None,
    reg: EvaluatorRegistration,
    proof_hash: str,
    keys: KeyRegistry,
) -> CollectedAttestation:
    """Classify one evaluator's response as valid, malformed or timed out."""
    if att is None:
        return CollectedAttestation(reg.evaluator_id, reg.evaluator_class, CollectionStatus.TIMEOUT)
    reason = None
    if att.evaluator_id != reg.evaluator_id or att.evaluator_class != reg.evaluator_class:
        reason = "IDENTITY_MISMATCH"
    elif att.proof_hash != proof_hash:
        reason = "PROOF_HASH_MISMATCH"
    elif not keys.verify(reg.evaluator_id, canonical_serialize(att.signing_payload()), att.signature):
        reason = "BAD_SIGNATURE"
    elif att.decision is None:
        reason = "NO_DECISION"
    status = CollectionStatus.VALID if reason is None else CollectionStatus.MALFORMED
    return CollectedAttestation(reg.evaluator_id, reg.evaluator_class, status, att, reason)


class Swarm:
    """The registered evaluator set plus a concurrent collector."""

    def __init__(self, registrations: Sequence[EvaluatorRegistration], key_seed: str, fixtures: EvaluatorFixtures):
        if not registrations:
            raise ValueError("evaluator registry is empty")
        ids = [r.evaluator_id for r in registrations]
        if len(set(ids)) != len(ids):
            raise ValueError("evaluator ids must be unique")
        self.fixtures = fixtures
        self.keys = KeyRegistry()
        self.evaluators: list[Evaluator] = []
        regs = []
        for reg in registrations:
            key = SigningKey.derive(key_seed, reg.evaluator_id)
            reg = replace(reg, public_key=key.public_hex)
            self.keys.register(reg.evaluator_id, key.public_hex)
            self.evaluators.append(Evaluator(reg, key, fixtures))
            regs.append(reg)
        self.registrations = tuple(regs)
        self._pool: ThreadPoolExecutor | None = None

    @property
    def classes(self) -> frozenset[EvaluatorClass]:
        return frozenset(r.evaluator_class for r in self.registrations)

    def _executor(self) -> ThreadPoolExecutor:
        if self._pool is None:
            self._pool = ThreadPoolExecutor(max_workers=len(self.evaluators), thread_name_prefix="evaluator")
        return self._pool

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=False, cancel_futures=True)
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def collect(
        self,
        proof: JustificationProof,
        issued_at: int,
        deadline: float = 5.0,
        faults: Mapping[str, FaultMode] | None = None,
    ) -> list[CollectedAttestation]:
        """Fan the same proof out to every evaluator; results keep registry order."""
        faults = faults or {}
        pool = self._executor()
        futures = []
        for ev in self.evaluators:
            fault = faults.get(ev.registration.evaluator_id)
            if fault is FaultMode.UNRESPONSIVE or (
                fault is None and ev.registration.fault_mode is FaultMode.UNRESPONSIVE
            ):
                futures.append(None)
                continue
            futures.append(pool.submit(ev.attest, proof, issued_at, fault))
        pending = [f for f in futures if f is not None]
        wait(pending, timeout=deadline)
        out = []
        for ev, fut in zip(self.evaluators, futures):
            att = None
            if fut is not None and fut.done() and fut.exception() is None:
                att = fut.result()
            elif fut is not None:
                fut.cancel()
            out.append(check_attestation(att, ev.registration, proof.proof_hash, self.keys))
        return out


def attest_sequential(swarm: Swarm, proof: JustificationProof, issued_at: int, faults=None):
    """Single-threaded collection; identical output to :meth:`Swarm.collect`."""
    faults = faults or {}
    out = []
    for ev in swarm.evaluators:
        att = ev.attest(proof, issued_at, faults.get(ev.registration.evaluator_id))
        out.append(check_attestation(att, ev.registration, proof.proof_hash, swarm.keys))
    return out


def collect_attestations(
    proof: JustificationProof,
    swarm: Swarm,
    profile: GovernanceMetadata,
    deadline: float,
    issued_at: int,
    faults: Mapping[str, FaultMode] | None = None,
) -> list[CollectedAttestation]:
    """Collect one round for ``proof``. ``profile`` is carried for symmetry with
    the consensus call; evaluators read their own profile copy from fixtures."""
    del profile
    return swarm.collect(proof, issued_at, deadline=deadline, faults=faults)


def load_registry(path: Path) -> list[EvaluatorRegistration]:
    data = json.loads(Path(path).read_text())
    return [
        EvaluatorRegistration(
            evaluator_id=e["evaluator_id"],
            evaluator_class=EvaluatorClass(e["evaluator_class"]),
            public_key=e.get("public_key", ""),
            fault_mode=FaultMode(e.get("fault_mode", "honest")),
        )
        for e in data["evaluators"]
    ]
