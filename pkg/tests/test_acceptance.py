"""One check per acceptance criterion; each prints a single PASS/FAIL line.

Tolerances are pinned below and are never loosened to make a run pass.
"""

import random
import time
from collections import defaultdict

import numpy as np
import pytest

from proofgate.config import load_config
from proofgate.harness.runner import evaluate_dtf, prepare, run_all
from proofgate.ledger import verify_chain
from proofgate.model import boundary_contains

from .conftest import ACCEPTANCE_LINES
from .test_boundary_order import LATTICE, direct
from .test_consensus import enumerate_inputs, oracle, run

INVARIANT_RUNTIME_LIMIT_S = 120.0
EXACT = 1.0
AUTHORITY_REDUCTION_FLOOR = 0.99
REPLAY_FLOOR_WITH_LOSS = 0.999
TAMPER_TRIALS = 100
ABLATION_REPLAY_DROP_POINTS = 40.0
ORACLE_RUNTIME_LIMIT_S = 10.0
BASELINE_MEAN, BASELINE_P95 = 450.0, 1120.0


def report(n, what, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {what} ({detail})"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


@pytest.fixture(scope="module")
def timed_run(tmp_path_factory):
    cfg = load_config(out=tmp_path_factory.mktemp("acceptance"))
    t0 = time.perf_counter()
    ev = run_all(cfg, write=True)
    return cfg, ev, time.perf_counter() - t0


@pytest.fixture(scope="module")
def shared(timed_run):
    cfg, _, _ = timed_run
    return prepare(cfg)


def test_criterion_1_invariants(timed_run):
    _, ev, elapsed = timed_run
    violations = {k: len(v) for k, v in ev.invariants.items()}
    shape = (len(ev.workload.scenarios), len(ev.workload.runs))
    ok = sum(violations.values()) == 0 and elapsed < INVARIANT_RUNTIME_LIMIT_S and shape == (1000, 5)
    report(1, "constraint sweeps, zero violations", ok, f"{shape[0]} scenarios x {shape[1]} runs, violations={violations}, {elapsed:.1f}s")


def test_criterion_2_safety_metrics(timed_run):
    dtf = timed_run[1].reports[0]
    vals = {k: getattr(dtf, k) for k in ("unsafe_block_rate", "drift_refusal_rate", "complete_proof_rate", "attestation_coverage", "evidence_completeness")}
    ok = all(v == EXACT for v in vals.values())
    report(2, "safety metrics exactly 100%", ok, ", ".join(f"{k}={v:.4f}" for k, v in vals.items()))


def test_criterion_3_authority(timed_run):
    dtf, b1, _ = timed_run[1].reports
    ok = (
        dtf.mean_resources_per_approval == EXACT
        and (b1.mean_resources_per_approval, b1.p95_resources_per_approval) == (BASELINE_MEAN, BASELINE_P95)
        and dtf.authority_reduction >= AUTHORITY_REDUCTION_FLOOR
    )
    report(3, "authority containment", ok,
           f"DTF mean={dtf.mean_resources_per_approval}, baseline {b1.mean_resources_per_approval}/{b1.p95_resources_per_approval}, reduction={dtf.authority_reduction:.4f}")


def test_criterion_4_replay(timed_run, shared):
    _, ev, _ = timed_run
    env, wl = shared
    lossy = ev.reports[0]
    _, clean, _, _ = evaluate_dtf(env, wl, loss_rate=0.0)
    ledger = ev.dtf.runs[0].ledger.to_bytes()
    rng = random.Random(20260415)
    detected = 0
    for _ in range(TAMPER_TRIALS):
        data = bytearray(ledger)
        pos = rng.randrange(len(data))
        data[pos] ^= rng.randrange(1, 256)
        detected += not verify_chain(bytes(data)).ok
    ok = (
        lossy.replay_success >= REPLAY_FLOOR_WITH_LOSS
        and lossy.replay_failures_unattributed == 0
        and lossy.replay_failures == len(ev.lost_receipts)
        and clean.replay_success == EXACT
        and detected == TAMPER_TRIALS
    )
    report(4, "replay and tamper evidence", ok,
           f"0.1% loss: {lossy.replay_success:.5f} with {lossy.replay_failures} failures, {lossy.replay_failures_unattributed} unattributed; "
           f"0% loss: {clean.replay_success:.5f}; tamper {detected}/{TAMPER_TRIALS}")


def test_criterion_5_ablations(timed_run, shared):
    env, wl = shared
    full = timed_run[1].reports[0]
    nc = evaluate_dtf(env, wl, ablation="no_consensus")[1]
    ni = evaluate_dtf(env, wl, ablation="no_execution_identity")[1]
    ne = evaluate_dtf(env, wl, ablation="no_evidence_chain")[1]
    drop = 100 * (full.replay_success - ne.replay_success)
    ok = (
        nc.malformed_admitted > 0 and full.malformed_admitted == 0
        and ni.drift_total > 0 and ni.drift_executed == ni.drift_total
        and drop >= ABLATION_REPLAY_DROP_POINTS
    )
    report(5, "ablations", ok,
           f"no_consensus admits {nc.malformed_admitted}/{nc.malformed_total} (full {full.malformed_admitted}); "
           f"no_execution_identity executes {ni.drift_executed}/{ni.drift_total} drift; no_evidence_chain drop {drop:.1f} points")


def test_criterion_6_consensus_oracle(env):
    t0 = time.perf_counter()
    cases = mismatches = 0
    for pid in ("low", "high", "protected"):
        prof = env.profiles[pid]
        for states in enumerate_inputs():
            d = run(states, prof)
            cases += 1
            mismatches += (d.verdict, d.basis) != oracle(states, prof)
    elapsed = time.perf_counter() - t0
    ok = cases == 49_152 and mismatches == 0 and elapsed < ORACLE_RUNTIME_LIMIT_S
    report(6, "decide() vs brute-force oracle", ok, f"{cases} cases, {mismatches} mismatches, {elapsed:.2f}s")


def test_criterion_7_boundary_order():
    n = len(LATTICE)
    rel = np.array([[boundary_contains(a, b) for b in LATTICE] for a in LATTICE])
    agree = all(rel[i, j] == direct(LATTICE[i], LATTICE[j]) for i in range(n) for j in range(n))
    reflexive = bool(rel.diagonal().all())
    antisym = all(LATTICE[i] == LATTICE[j] for i, j in zip(*np.nonzero(rel & rel.T)))
    r = rel.astype(np.int64)
    transitive = not (((r @ r) > 0) & ~rel).any()
    ok = agree and reflexive and antisym and transitive
    report(7, "boundary order is a partial order", ok,
           f"{n} boundaries, agree={agree}, reflexive={reflexive}, antisymmetric={antisym}, transitive={transitive}")


def test_criterion_8_reported_not_asserted(timed_run):
    _, ev, _ = timed_run
    dtf, b1, b2 = ev.reports
    stages = sorted(k for k, v in dtf.latency.items() if v["n"] > 0)
    per_run = defaultdict(list)
    run_of = {f"rec-intent-{sid}": lab["run"] for sid, lab in ev.workload.labels().items()}
    for v in ev.verdicts:
        per_run[run_of[v.record_id]].append(v.score)
    run_scores = [float(np.mean(s)) for _, s in sorted(per_run.items())]
    ordered = all(s > b2.replay_success > b1.replay_success for s in run_scores)
    ok = ordered and {"proof", "evaluators", "consensus", "issuance"} <= set(stages)
    report(8, "replay ordering DTF > B2 > B1; latency reported only", ok,
           f"DTF per run min {min(run_scores):.4f} > B2 {b2.replay_success:.3f} > B1 {b1.replay_success:.3f}; latency stages {stages}")
