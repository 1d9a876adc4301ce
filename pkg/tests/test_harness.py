import filecmp
from dataclasses import replace

import pytest

from proofgate.config import load_config
from proofgate.harness.invariants import (
    approval_bound_issuance,
    one_complete_record,
    proof_bound_execution,
    scope_bounded_execution,
)
from proofgate.harness.metrics import compute_metrics
from proofgate.harness.runner import metrics_from_dir, run_all
from proofgate.harness.workload import WorkloadSpec, WorkloadSpecError, generate_workload
from proofgate.ledger import record_is_complete
from proofgate.model import OutcomeStatus, Verdict


@pytest.fixture(scope="module")
def spec(env):
    return WorkloadSpec.from_dict(env.workload_spec)


def test_default_proportions(spec):
    assert spec.total == 10_000 and spec.unsafe_total == 2400
    assert spec.scenarios == {"termination": 3500, "config": 4500, "break_glass": 2000}


def test_scale_tenth(spec):
    s = spec.scaled(0.1)
    assert s.total == 1000
    assert list(s.unsafe.values()) == [90, 65, 35, 30, 20]
    wl = generate_workload(s, 1)
    assert len(wl.runs) == 5 and all(len(r) == 200 for r in wl.runs)
    assert sum(x.unsafe for x in wl.scenarios) == 240


def test_full_scale_runs(spec):
    s = spec.scaled(1.0)
    assert s == spec
    assert len(generate_workload(s, 1).runs) == 50


def test_seeded(spec):
    s = spec.scaled(0.1)
    assert generate_workload(s, 5).scenarios == generate_workload(s, 5).scenarios
    assert generate_workload(s, 5).scenarios != generate_workload(s, 6).scenarios


def test_bad_spec():
    with pytest.raises(WorkloadSpecError):
        WorkloadSpec.from_dict({"total": 10, "scenarios": {"termination": 3, "config": 3, "break_glass": 3},
                                "unsafe": dict.fromkeys(["missing_dependency_context", "stale_state", "protected_resource", "boundary_drift", "malformed_evaluator"], 0)})


def test_lever_isolation(spec):
    wl = generate_workload(spec.scaled(0.1), 11)
    unsafe = [s for s in wl.scenarios if s.unsafe]
    samples = [s for v in ("missing_dependency_context", "stale_state", "protected_resource", "boundary_drift", "malformed_evaluator")
               for s in [x for x in unsafe if x.variant == v][:4]]
    assert len(samples) == 20
    for s in samples:
        levers = {
            "missing_dependency_context": s.source_faults == {"dependency-graph": "missing"},
            "stale_state": s.source_faults == {"*": "stale"},
            "protected_resource": wl.world[s.target]["protected"],
            "boundary_drift": s.drift is not None,
            "malformed_evaluator": bool(s.evaluator_faults),
        }
        assert [k for k, on in levers.items() if on] == [s.variant]
    for s in wl.scenarios:
        f = wl.world[s.target]
        assert not f["routes_traffic"] and not f["dependencies"]["dependents"]


def test_baselines(default_run):
    _, ev = default_run
    dtf, b1, b2 = ev.reports
    assert b1.unsafe_block_rate == 0.0 and b1.drift_refusal_rate == 0.0
    assert (b1.mean_resources_per_approval, b1.p95_resources_per_approval) == (450.0, 1120.0)
    assert abs(b2.unsafe_block_rate - 0.86) < 0.01
    assert b2.drift_refusal_rate == 0.0
    b2_out = {o.scenario_id: o for o in ev.baselines[1].outcomes}
    prot = [s for s in ev.workload.scenarios if s.variant == "protected_resource"]
    assert prot and all(not b2_out[s.scenario_id].executed for s in prot)


def test_dual_path_metrics(default_run):
    cfg, ev = default_run
    from_disk = metrics_from_dir(cfg.out)
    assert [r.system for r in from_disk] == ["DTF", "B1", "B2"]
    assert from_disk == ev.reports


def test_blanked_field_detected(default_run):
    _, ev = default_run
    recs = list(ev.dtf.records)
    i = next(k for k, r in enumerate(recs) if r.identity is not None)
    recs[i] = replace(recs[i], identity=None, refusal=None)
    m = compute_metrics("DTF", recs, ev.dtf.labels)
    assert m.evidence_completeness < 1.0
    assert [r.intent_id for r in recs if not record_is_complete(r)] == [recs[i].intent_id]


def test_sweeps_catch_constructed_violations(default_run):
    _, ev = default_run
    recs = ev.dtf.records
    ex = next(r for r in recs if r.outcome.status is OutcomeStatus.EXECUTED)
    esc = next(r for r in recs if r.decision.verdict is Verdict.ESCALATE)
    assert proof_bound_execution([replace(ex, proof=replace(ex.proof, proof_hash="0" * 64))]) == [ex.intent_id]
    assert approval_bound_issuance([replace(esc, identity=ex.identity)]) == [esc.intent_id]
    wide = replace(ex.identity, scope=replace(ex.identity.scope, resources=ex.identity.scope.resources | {"x"}))
    assert scope_bounded_execution([replace(ex, identity=wide)]) == [ex.intent_id]
    entries = [e for e in ex.append_events]
    assert one_complete_record([ex, ex], entries, [ex.intent_id]) == [ex.intent_id]


def test_byte_identical_reruns(tmp_path):
    a = run_all(load_config(out=tmp_path / "a", scale=0.02), write=True)
    b = run_all(load_config(out=tmp_path / "b", scale=0.02), write=True)
    assert a.reports == b.reports
    for name in ("ledgers/run-000.jsonl", "receipts/run-000.jsonl", "metrics.json", "workload.json", "logs/b1.jsonl", "logs/b2.jsonl", "stores/evaluator_keys.json"):
        assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name, shallow=False), name
