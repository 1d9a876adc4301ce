"""End-to-end authorization pipeline over a workload.

For each scenario: construct the proof, collect attestations, decide,
derive an identity, attempt the mutation through the broker, and append
the four lifecycle events. Runs of ``run_size`` scenarios get their own
ledger, substrate and broker, mirroring independent repetitions.
"""

from __future__ import annotations

import random
import time
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any

from ..broker import Broker, BoundaryViolation, IssuanceRefused, SubstrateStub, execute_standing, run_secret
from ..canonical import encode
from ..consensus import ConsensusInput, decide
from ..config import Environment
from ..evaluators import EvaluatorFixtures, FaultMode, Swarm, WorldModel
from ..ledger import EvidenceLedger
from ..model import (
    EventKind,
    CollectedAttestation,
    Decision,
    DecisionBasis,
    EvidenceRecord,
    ExecutionIdentity,
    GovernanceMetadata,
    JustificationProof,
    LogicalClock,
    MutationAttempt,
    Outcome,
    OutcomeStatus,
    Verdict,
    Vote,
)
from ..proofs import ContextSource, NormalizationError, SourceFault, construct_proof
from .logs import LogStore
from .workload import Scenario, Workload, drift_action

STAGES = ("proof", "evaluators", "consensus", "issuance", "execution")
ISSUER = "broker-1"


@dataclass
class RunOutput:
    run_id: str
    ledger: EvidenceLedger | None
    substrate: SubstrateStub
    records: list[EvidenceRecord]


@dataclass
class PipelineResult:
    system: str
    runs: list[RunOutput]
    labels: dict[str, dict[str, Any]]
    latency: dict[str, list[float]] = field(default_factory=dict)
    logs: LogStore | None = None
    queued_verdicts: dict[str, str] = field(default_factory=dict)
    swarm_keys: dict[str, str] = field(default_factory=dict)

    @property
    def records(self) -> list[EvidenceRecord]:
        return [r for run in self.runs for r in run.records]


def domain_facts(workload: Workload) -> dict[str, dict[str, dict]]:
    """Index world facts by context domain, as each source would hold them."""
    out: dict[str, dict[str, dict]] = defaultdict(dict)
    for r, facts in workload.world.items():
        for domain, value in facts.items():
            if isinstance(value, dict):
                out[domain][r] = value
    return out


def make_sources(env: Environment, facts: dict[str, dict[str, dict]], scenario: Scenario) -> list[ContextSource]:
    out = []
    for spec in env.sources:
        fault = scenario.source_faults.get(spec.source_id) or scenario.source_faults.get("*") or "healthy"
        out.append(
            ContextSource(
                source_id=spec.source_id,
                domain=spec.domain,
                facts=facts.get(spec.domain, {}),
                fault=SourceFault(fault),
                lag=spec.lag,
                stale_age=env.stale_age,
            )
        )
    return out


def build_swarm(env: Environment, workload: Workload) -> Swarm:
    fixtures = EvaluatorFixtures(
        bundles={f"{env.bundle.bundle_id}@{env.bundle.version}": env.bundle},
        profiles=env.profiles,
        catalog=env.catalog,
        world=WorldModel({r: {"routes_traffic": f["routes_traffic"], "protected": f["protected"]} for r, f in workload.world.items()}),
    )
    return Swarm(env.registry, key_seed=str(env.config.seed), fixtures=fixtures)


def plan_attempt(scenario: Scenario, proof: JustificationProof, identity_id: str | None, profile: GovernanceMetadata) -> MutationAttempt:
    action = proof.mutation.action
    resources = proof.mutation.target
    at = scenario.at + 1
    if scenario.drift == "action":
        action = drift_action(action)
    elif scenario.drift == "resource":
        resources = (scenario.peer,)
    elif scenario.drift == "time":
        at = scenario.at + profile.identity_lifetime + 1
    return MutationAttempt(
        attempt_id=f"attempt-{scenario.scenario_id}",
        identity_id=identity_id,
        action=action,
        resources=tuple(resources),
        attempted_at=at,
    )


def inventory_for(workload: Workload, scenarios: list[Scenario]) -> dict[str, dict[str, Any]]:
    inv = {}
    for s in scenarios:
        for r in (s.target, s.peer):
            inv[r] = {"state": "running", "owner": workload.world[r]["ownership"]["owner"]}
    return inv


def _single_evaluator_decision(collected: list[CollectedAttestation], rng: random.Random) -> Decision:
    """Take one evaluator's raw output at face value, without verification."""
    pick = collected[rng.randrange(len(collected))]
    raw = pick.attestation.decision if pick.attestation is not None else None
    if raw is Vote.APPROVE:
        return Decision(Verdict.APPROVE, DecisionBasis.SINGLE_EVALUATOR)
    if raw is Vote.REJECT:
        return Decision(Verdict.REJECT, DecisionBasis.SINGLE_EVALUATOR)
    return Decision(Verdict.ESCALATE, DecisionBasis.SINGLE_EVALUATOR)


def run_dtf(
    workload: Workload,
    env: Environment,
    ablation: str | None = None,
    concurrent_evaluators: bool = True,
) -> PipelineResult:
    """Run the full pipeline, or one of its ablations, over every scenario."""
    cfg = env.config
    system = "DTF" if ablation is None else f"DTF/{ablation}"
    latency: dict[str, list[float]] = {s: [] for s in STAGES}
    logs = LogStore(system) if ablation == "no_evidence_chain" else None
    queued: dict[str, str] = {}
    pick_rng = random.Random(f"single-evaluator:{cfg.seed}")
    runs: list[RunOutput] = []
    facts = domain_facts(workload)
    with build_swarm(env, workload) as swarm:
        for scenarios in workload.runs:
            run_id = f"run-{scenarios[0].run:03d}"
            stub = SubstrateStub(inventory_for(workload, scenarios), effects={k: v.effect for k, v in env.catalog.items()})
            broker = Broker(ISSUER, run_id, run_secret(cfg.seed, run_id), stub)
            ledger = None if ablation == "no_evidence_chain" else EvidenceLedger(run_id)
            clock = LogicalClock(scenarios[0].at)
            records = []
            for s in scenarios:
                clock.set(s.at)
                rec = _run_scenario(
                    s, facts, env, swarm, broker, stub, ledger, logs, clock,
                    ablation, pick_rng, latency, queued, concurrent_evaluators,
                )
                records.append(rec)
            runs.append(RunOutput(run_id, ledger, stub, records))
        keys = swarm.keys.as_dict()
    return PipelineResult(system, runs, workload.labels(), latency, logs, queued, keys)


def _run_scenario(s, facts, env, swarm, broker, stub, ledger, logs, clock, ablation, pick_rng, latency, queued, concurrent):
    cfg = env.config
    now = clock.now()
    intent_id = s.raw_intent["intent_id"]
    events: list[tuple[EventKind, dict]] = []

    t0 = time.perf_counter()
    try:
        proof = construct_proof(s.raw_intent, make_sources(env, facts, s), env.bundle, clock, env.aliases)
    except NormalizationError as exc:
        return _invalid_intent(s, ledger, now, str(exc))
    latency["proof"].append(time.perf_counter() - t0)
    policy_ref = {"bundle_id": env.bundle.bundle_id, "version": env.bundle.version, "digest": env.bundle.digest}
    events.append((EventKind.PROOF_CREATED, {
        "intent": dict(s.raw_intent),
        "context_digest": proof.snapshot.snapshot_digest,
        "policy": policy_ref,
        "proof": proof,
    }))

    profile = env.profiles[proof.risk.required_profile]
    if s.human_verdict is not None:
        queued[proof.proof_hash] = s.human_verdict
        swarm.fixtures.queued_verdicts[proof.proof_hash] = Vote(s.human_verdict)
    faults = {k: FaultMode(v) for k, v in s.evaluator_faults.items()}
    t0 = time.perf_counter()
    if concurrent:
        collected = swarm.collect(proof, now, deadline=cfg.evaluator_deadline_seconds, faults=faults)
    else:
        from ..evaluators import attest_sequential

        collected = attest_sequential(swarm, proof, now, faults)
    latency["evaluators"].append(time.perf_counter() - t0)

    t0 = time.perf_counter()
    freshness = now - proof.snapshot.freshness
    if ablation == "no_consensus":
        decision = _single_evaluator_decision(collected, pick_rng)
    else:
        decision = decide(ConsensusInput(tuple(collected), profile, freshness, swarm.classes))
    latency["consensus"].append(time.perf_counter() - t0)
    events.append((EventKind.ATTESTATIONS_CLOSED, {
        "attestations": collected,
        "profile": profile,
        "decision": decision,
        "proof_freshness": freshness,
    }))

    t0 = time.perf_counter()
    identity: ExecutionIdentity | None = None
    refusal = None
    if decision.verdict is not Verdict.APPROVE:
        refusal = f"NOT_APPROVED:{decision.verdict.value}:{decision.basis.value}"
    elif ablation == "no_execution_identity":
        refusal = "IDENTITY_DISABLED:standing-authority"
    else:
        try:
            identity = broker.derive_identity(proof, collected, profile, decision, now)
        except (IssuanceRefused, BoundaryViolation) as exc:
            refusal = f"ISSUANCE_REFUSED:{exc}"
    latency["issuance"].append(time.perf_counter() - t0)
    events.append((EventKind.IDENTITY, {"identity": identity, "refusal": refusal}))

    t0 = time.perf_counter()
    attempt = None
    if identity is not None:
        attempt = plan_attempt(s, proof, identity.identity_id, profile)
        outcome = broker.execute(identity, attempt, attempt.attempted_at)
    elif decision.verdict is Verdict.APPROVE and ablation == "no_execution_identity":
        attempt = plan_attempt(s, proof, None, profile)
        outcome = execute_standing(stub, attempt, attempt.attempted_at)
    elif decision.verdict is Verdict.REJECT:
        outcome = Outcome(OutcomeStatus.REJECTED, now, None, decision.basis.value)
    elif decision.verdict is Verdict.ESCALATE:
        outcome = Outcome(OutcomeStatus.ESCALATED, now, None, decision.basis.value)
    else:
        outcome = Outcome(OutcomeStatus.REFUSED_BOUNDARY, now, None, refusal)
    latency["execution"].append(time.perf_counter() - t0)
    events.append((EventKind.OUTCOME, {"attempt": attempt, "outcome": outcome}))

    appended = ()
    if ledger is not None:
        appended = tuple(ledger.append(kind, intent_id, payload) for kind, payload in events)
    if logs is not None:
        _write_component_logs(logs, intent_id, proof, collected, decision, identity, attempt, outcome)

    return EvidenceRecord(
        record_id=f"rec-{intent_id}",
        intent=dict(s.raw_intent),
        context_digest=proof.snapshot.snapshot_digest,
        policy_version=f"{env.bundle.bundle_id}@{env.bundle.version}",
        proof=proof,
        attestations=tuple(collected),
        profile=profile,
        decision=decision,
        identity=identity,
        attempt=attempt,
        outcome=outcome,
        append_events=appended,
        proof_freshness=freshness,
        refusal=refusal,
    )


def _invalid_intent(s: Scenario, ledger, now: int, reason: str) -> EvidenceRecord:
    intent_id = s.raw_intent.get("intent_id") or f"invalid-{s.scenario_id}"
    decision = Decision(Verdict.REJECT, DecisionBasis.INVALID_INTENT)
    refusal = f"NOT_APPROVED:reject:{DecisionBasis.INVALID_INTENT.value}"
    outcome = Outcome(OutcomeStatus.REJECTED, now, None, reason)
    events = [
        (EventKind.PROOF_CREATED, {"intent": dict(s.raw_intent), "context_digest": None, "policy": None, "proof": None, "error": reason}),
        (EventKind.ATTESTATIONS_CLOSED, {"attestations": [], "profile": None, "decision": decision, "proof_freshness": 0}),
        (EventKind.IDENTITY, {"identity": None, "refusal": refusal}),
        (EventKind.OUTCOME, {"attempt": None, "outcome": outcome}),
    ]
    appended = tuple(ledger.append(k, intent_id, p) for k, p in events) if ledger is not None else ()
    return EvidenceRecord(
        f"rec-{intent_id}", dict(s.raw_intent), None, None, None, (), None, decision,
        None, None, outcome, appended, 0, refusal,
    )


def _write_component_logs(logs, intent_id, proof, collected, decision, identity, attempt, outcome):
    """Each component keeps its own log; none records what another saw."""
    logs.write("proof-service", intent_id, {
        "request": {"action": proof.mutation.action, "target": list(proof.mutation.target)},
        "context_digest": proof.snapshot.snapshot_digest,
        "policy_version": proof.policy_basis.version,
    })
    logs.write("evaluators", intent_id, {
        "vote_tally": {v.value: sum(1 for c in collected if c.vote is v) for v in Vote},
    })
    logs.write("consensus", intent_id, {"decision": encode(decision)})
    if identity is not None:
        logs.write("broker", intent_id, {"scoped_authority": encode(identity.scope)})
    logs.write("substrate", intent_id, {
        "outcome": {"status": outcome.status.value, "receipt": outcome.substrate_receipt},
        **({"attempt": encode(attempt)} if attempt is not None else {}),
    })
