from dataclasses import replace

import pytest

from proofgate.broker import (
    Broker,
    BoundaryViolation,
    IssuanceRefused,
    SubstrateFault,
    SubstrateStub,
    Ticket,
    run_secret,
)
from proofgate.consensus import ConsensusInput, decide
from proofgate.model import (
    Boundary,
    Decision,
    DecisionBasis,
    MutationAttempt,
    OutcomeStatus,
    Verdict,
    Vote,
    boundary_contains,
)

from .conftest import make_proof, make_swarm, world_facts


def approved(env, action="TerminateInstance", target="i-1", params=None, now=1000):
    world = world_facts([target])
    p = make_proof(env, action, (target,), params, world=world, now=now)
    swarm = make_swarm(env, world, queued={p.proof_hash: Vote.APPROVE})
    with swarm:
        atts = swarm.collect(p, now)
    prof = env.profiles[p.risk.required_profile]
    d = decide(ConsensusInput(tuple(atts), prof, now - p.snapshot.freshness, swarm.classes))
    assert d.verdict is Verdict.APPROVE, d
    return p, atts, prof, d


def new_broker(resources=("i-1", "i-2", "svc-1")):
    stub = SubstrateStub({r: {"state": "running"} for r in resources}, effects={"TerminateInstance": "terminated", "RestartService": "restarted"})
    return Broker("broker-1", "run-000", run_secret(1, "run-000"), stub), stub


def attempt(identity, action="TerminateInstance", resources=("i-1",), at=1001):
    return MutationAttempt("att-1", identity.identity_id if identity else None, action, tuple(resources), at)


def test_termination_identity(env):
    p, atts, prof, d = approved(env)
    broker, _ = new_broker()
    ei = broker.derive_identity(p, atts, prof, d, 1000)
    assert ei.scope.actions == {"TerminateInstance"} and ei.scope.resources == {"i-1"}
    assert ei.scope.not_after - ei.scope.not_before == 300
    assert broker.scope(ei) == ei.scope and boundary_contains(ei.scope, p.boundary)
    assert ei.lineage.proof_hash == p.proof_hash


def test_break_glass_lifetime(env):
    p, atts, prof, d = approved(env, "RestartService", "svc-1", {"break_glass": True})
    assert prof.profile_id == "break_glass"
    broker, _ = new_broker()
    ei = broker.derive_identity(p, atts, prof, d, 1000)
    assert ei.scope.not_after - ei.scope.not_before == 120
    assert ei.scope.not_after < p.boundary.not_after and boundary_contains(ei.scope, p.boundary)


def test_non_approve_refused(env):
    p, atts, prof, _ = approved(env)
    broker, _ = new_broker()
    with pytest.raises(IssuanceRefused):
        broker.derive_identity(p, atts, prof, Decision(Verdict.ESCALATE, DecisionBasis.DEFAULT_ESCALATE), 1000)
    assert not broker.identities


def test_one_identity_per_proof(env):
    p, atts, prof, d = approved(env)
    broker, _ = new_broker()
    broker.derive_identity(p, atts, prof, d, 1000)
    with pytest.raises(IssuanceRefused):
        broker.derive_identity(p, atts, prof, d, 1000)


def test_widening_narrowing_rejected(env):
    p, atts, prof, d = approved(env)
    broker, _ = new_broker()
    with pytest.raises(BoundaryViolation):
        broker.derive_identity(p, atts, prof, d, 1000, narrow=lambda b: replace(b, resources=b.resources | {"i-2"}))
    with pytest.raises(BoundaryViolation):
        broker.derive_identity(p, atts, prof, d, 1000, narrow=lambda b: replace(b, obligations=frozenset()))


def test_validate_paths(env):
    p, atts, prof, d = approved(env)
    broker, _ = new_broker()
    ei = broker.derive_identity(p, atts, prof, d, 1000)
    assert broker.validate_attempt(ei, attempt(ei), 1001)
    late = broker.check_attempt(ei, attempt(ei, at=1301), 1301)
    assert (late.ok, late.status) == (False, OutcomeStatus.REFUSED_EXPIRED)
    other = broker.check_attempt(ei, attempt(ei, resources=("i-2",)), 1001)
    assert (other.status, other.reason) == (OutcomeStatus.REFUSED_BOUNDARY, "RESOURCE_OUTSIDE_SCOPE")
    assert broker.check_attempt(ei, attempt(ei, action="DeleteVolume"), 1001).reason == "ACTION_OUTSIDE_SCOPE"
    assert broker.check_attempt(None, attempt(None), 1001).reason == "UNKNOWN_IDENTITY"


def test_identity_not_transferable(env):
    p, atts, prof, d = approved(env)
    broker, _ = new_broker()
    ei = broker.derive_identity(p, atts, prof, d, 1000)
    other = Broker("broker-1", "run-001", run_secret(1, "run-001"), SubstrateStub({"i-1": {"state": "running"}}))
    other.identities[ei.identity_id] = ei
    assert other.check_attempt(ei, attempt(ei), 1001).reason == "BINDING_MISMATCH"


def test_execute_and_expired_replay(env):
    p, atts, prof, d = approved(env)
    broker, stub = new_broker()
    ei = broker.derive_identity(p, atts, prof, d, 1000)
    out = broker.execute(ei, attempt(ei), 1001)
    assert out.status is OutcomeStatus.EXECUTED and out.substrate_receipt in stub.receipts
    assert stub.inventory["i-1"]["state"] == "terminated"
    before = {k: dict(v) for k, v in stub.inventory.items()}
    again = broker.execute(ei, replace(attempt(ei, at=1400), attempt_id="att-2"), 1400)
    assert again.status is OutcomeStatus.REFUSED_EXPIRED and stub.inventory == before


def test_obligation_rechecked_at_execution(env):
    p, atts, prof, d = approved(env)
    broker, stub = new_broker()
    ei = broker.derive_identity(p, atts, prof, d, 1000)
    stub.signals.set_traffic("i-1", 1001, True)
    out = broker.execute(ei, attempt(ei), 1001)
    assert out.status is OutcomeStatus.REFUSED_OBLIGATION
    assert stub.inventory["i-1"]["state"] == "running" and not stub.log


def test_stub_refuses_unvalidated(env):
    _, stub = new_broker()
    a = MutationAttempt("x", None, "TerminateInstance", ("i-1",), 5)
    with pytest.raises(SubstrateFault):
        stub.apply(a, Ticket("0" * 64, "0" * 64))
    bare = SubstrateStub({"i-1": {"state": "running"}})
    with pytest.raises(SubstrateFault):
        bare.apply(a, Ticket("0" * 64, "0" * 64))
    assert not stub.log and not bare.log


def test_inventory_diff_equals_executed(default_run):
    _, ev = default_run
    for run in ev.dtf.runs:
        executed = {r for rec in run.records if rec.outcome.status is OutcomeStatus.EXECUTED for r in rec.attempt.resources}
        assert run.substrate.changed_resources() == executed


def test_every_identity_within_lineage_proof(default_run):
    _, ev = default_run
    issued = [r for r in ev.dtf.records if r.identity is not None]
    assert issued
    for r in issued:
        assert r.identity.lineage.proof_hash == r.proof.proof_hash
        assert boundary_contains(r.identity.scope, r.proof.boundary)
