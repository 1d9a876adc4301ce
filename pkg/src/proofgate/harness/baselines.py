"""Baseline systems the pipeline is compared against.

B1 executes every request under a standing role and logs executions only.

B2 runs a policy precheck before executing under the same standing role.
The precheck reads a local context cache instead of binding fresh context.
On a cache miss it falls back to the live sources and refuses requests whose
context is missing or stale; on a hit it sees the cached, healthy-looking
facts and lets the request through. Which stale or missing cases hit the
cache is a seeded draw sized by ``b2_unsafe_pass_through``: the number of
leaked unsafe requests is ``round(rate * unsafe_total)``, of which boundary
drift (never caught by a precheck) accounts for its full share.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace

from ..broker import SubstrateStub, execute_standing
from ..canonical import encode
from ..config import Environment
from ..model import MutationAttempt, Outcome, OutcomeStatus, RiskClass
from ..proofs import bind_context, evaluate_policy, normalize
from .logs import LogStore
from .pipeline import domain_facts, inventory_for, make_sources
from .workload import Scenario, Workload, drift_action

CACHE_AGE = 1


@dataclass
class BaselineOutcome:
    scenario_id: str
    request_id: str
    executed: bool
    blocked_reason: str | None
    exposure: int
    outcome: Outcome


@dataclass
class BaselineResult:
    system: str
    outcomes: list[BaselineOutcome]
    logs: LogStore
    labels: dict[str, dict]
    substrates: list[SubstrateStub] = field(default_factory=list)


def role_exposure(env: Environment, scenario: Scenario) -> int:
    return env.standing_roles[scenario.role % len(env.standing_roles)][1]


def baseline_attempt(s: Scenario, lifetime: int = 300) -> MutationAttempt:
    """The attempt the agent actually makes, drifted or not."""
    action, resources, at = s.action, (s.target,), s.at + 1
    if s.drift == "action":
        action = drift_action(s.action)
    elif s.drift == "resource":
        resources = (s.peer,)
    elif s.drift == "time":
        at = s.at + lifetime + 1
    return MutationAttempt(f"attempt-{s.scenario_id}", None, action, resources, at)


def _stub(env: Environment, workload: Workload, scenarios) -> SubstrateStub:
    return SubstrateStub(inventory_for(workload, scenarios), effects={k: v.effect for k, v in env.catalog.items()})


def run_baseline_b1(workload: Workload, env: Environment) -> BaselineResult:
    logs = LogStore("B1")
    outcomes, stubs = [], []
    for scenarios in workload.runs:
        stub = _stub(env, workload, scenarios)
        stubs.append(stub)
        for s in scenarios:
            rid = s.raw_intent["intent_id"]
            attempt = baseline_attempt(s)
            out = execute_standing(stub, attempt, attempt.attempted_at)
            logs.write("cloud-audit", rid, {
                "request": {"action": attempt.action, "target": list(attempt.resources)},
                "outcome": {"status": out.status.value, "receipt": out.substrate_receipt},
            })
            outcomes.append(BaselineOutcome(s.scenario_id, rid, out.status is OutcomeStatus.EXECUTED, None, role_exposure(env, s), out))
    return BaselineResult("B1", outcomes, logs, workload.labels(), stubs)


def b2_cache_hits(workload: Workload, rate: float, seed: int) -> set[str]:
    """Stale or missing-context scenarios whose precheck reads a cached entry."""
    unsafe = [s for s in workload.scenarios if s.unsafe]
    drift = sum(1 for s in unsafe if s.variant == "boundary_drift")
    leak = max(0, round(rate * len(unsafe)) - drift)
    pool = sorted(s.scenario_id for s in unsafe if s.variant in ("stale_state", "missing_dependency_context"))
    rng = random.Random(f"b2-cache:{seed}")
    return set(rng.sample(pool, min(leak, len(pool))))


def _precheck(env: Environment, s: Scenario, facts, cached: bool):
    """Return ``(block_reason or None, snapshot the precheck read)``."""
    intent = normalize(s.raw_intent, env.aliases)
    if cached:
        healthy = replace(s, source_faults={})
        snapshot = bind_context(intent, make_sources(env, facts, healthy), s.at - CACHE_AGE)
    else:
        snapshot = bind_context(intent, make_sources(env, facts, s), s.at)
    if s.evaluator_faults:
        # the single precheck evaluator produced garbage; fail closed
        return "PRECHECK_OUTPUT_MALFORMED", snapshot
    basis, risk = evaluate_policy(snapshot, env.bundle, intent, at=s.at)
    if basis.selected_rule is None:
        return "NO_MATCHING_RULE", snapshot
    if risk.risk_class is RiskClass.PROTECTED and not env.bundle.rule(basis.selected_rule).allows_protected:
        return "PROTECTED_RESOURCE", snapshot
    if snapshot.absent():
        return "CONTEXT_MISSING", snapshot
    window = env.profiles[risk.required_profile].freshness_window
    if s.at - snapshot.freshness > window:
        return "CONTEXT_STALE", snapshot
    for b in snapshot.bindings:
        if b.domain == "dependencies" and b.facts and b.facts.get("dependents"):
            return "DEPENDENCY_PATH", snapshot
    return None, snapshot


def run_baseline_b2(workload: Workload, env: Environment) -> BaselineResult:
    cfg = env.config
    hits = b2_cache_hits(workload, cfg.b2_unsafe_pass_through, cfg.seed)
    facts = domain_facts(workload)
    logs = LogStore("B2")
    outcomes, stubs = [], []
    for scenarios in workload.runs:
        stub = _stub(env, workload, scenarios)
        stubs.append(stub)
        for s in scenarios:
            rid = s.raw_intent["intent_id"]
            reason, snapshot = _precheck(env, s, facts, cached=s.scenario_id in hits)
            logs.write("precheck", rid, {
                "request": {"action": s.action, "target": [s.target]},
                "context_contents": encode(snapshot.bindings),
                "policy_version": env.bundle.version,
                "verdict": "block" if reason else "allow",
            })
            if reason:
                out = Outcome(OutcomeStatus.REJECTED, s.at, None, reason)
                logs.write("precheck", rid, {"outcome": {"status": out.status.value, "reason": reason}})
                outcomes.append(BaselineOutcome(s.scenario_id, rid, False, reason, 0, out))
                continue
            attempt = baseline_attempt(s)
            out = execute_standing(stub, attempt, attempt.attempted_at)
            logs.write("cloud-audit", rid, {
                "request": {"action": attempt.action, "target": list(attempt.resources)},
                "outcome": {"status": out.status.value, "receipt": out.substrate_receipt},
            })
            outcomes.append(BaselineOutcome(s.scenario_id, rid, out.status is OutcomeStatus.EXECUTED, None, role_exposure(env, s), out))
    return BaselineResult("B2", outcomes, logs, workload.labels(), stubs)
