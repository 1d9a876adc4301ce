import itertools
import random
import time

import pytest

from proofgate.consensus import ConsensusInput, decide, ready
from proofgate.model import (
    Attestation,
    CollectedAttestation,
    CollectionStatus,
    DecisionBasis,
    EvaluatorClass,
    Verdict,
    Vote,
)

from .conftest import make_proof

EVALUATORS = (
    ("policy-1", EvaluatorClass.POLICY),
    ("policy-2", EvaluatorClass.POLICY),
    ("state-1", EvaluatorClass.STATE),
    ("state-2", EvaluatorClass.STATE),
    ("risk-1", EvaluatorClass.RISK),
    ("simulation-1", EvaluatorClass.SIMULATION),
    ("human-1", EvaluatorClass.HUMAN_ESCALATION),
)
ALL_CLASSES = frozenset(c for _, c in EVALUATORS)
STATES = ("approve", "reject", "abstain", "malformed")


def collected(eid, cls, state, h="h"):
    if state == "timeout":
        return CollectedAttestation(eid, cls, CollectionStatus.TIMEOUT)
    if state == "malformed":
        att = Attestation(eid, cls, "garbled", Vote.APPROVE, {}, 0, "00")
        return CollectedAttestation(eid, cls, CollectionStatus.MALFORMED, att, "PROOF_HASH_MISMATCH")
    att = Attestation(eid, cls, h, Vote(state), {}, 0, "sig")
    return CollectedAttestation(eid, cls, CollectionStatus.VALID, att)


CELLS = {(eid, s): collected(eid, cls, s) for eid, cls in EVALUATORS for s in (*STATES, "timeout")}


def oracle(states, prof, freshness=0):
    """Direct restatement: reject, then escalation triggers, then quorum with diversity."""
    cls_of = dict(EVALUATORS)
    rejecting = [e for e, s in states.items() if s == "reject"]
    approving = [e for e, s in states.items() if s == "approve"]
    if set(rejecting) & set(prof.veto_evaluators):
        return Verdict.REJECT, DecisionBasis.VETO
    if len(rejecting) >= prof.rejection_threshold:
        return Verdict.REJECT, DecisionBasis.REJECTION_THRESHOLD
    answered = {cls_of[e] for e, s in states.items() if s != "timeout"}
    if not prof.required_classes <= answered:
        return Verdict.ESCALATE, DecisionBasis.MISSING_CLASS
    if any(s == "malformed" and cls_of[e] in prof.required_classes for e, s in states.items()):
        return Verdict.ESCALATE, DecisionBasis.MALFORMED_ATTESTATION
    if sum(s in ("approve", "reject", "abstain") for s in states.values()) < prof.signature_threshold:
        return Verdict.ESCALATE, DecisionBasis.SIGNATURE_THRESHOLD
    if freshness > prof.freshness_window:
        return Verdict.ESCALATE, DecisionBasis.FRESHNESS_FAILURE
    if len(approving) >= prof.quorum:
        if len({cls_of[e] for e in approving}) >= prof.min_distinct_approving_classes:
            return Verdict.APPROVE, DecisionBasis.QUORUM
        return Verdict.ESCALATE, DecisionBasis.DIVERSITY_FAILURE
    return Verdict.ESCALATE, DecisionBasis.DEFAULT_ESCALATE


def run(states, prof, freshness=0, classes=ALL_CLASSES):
    atts = tuple(CELLS[(e, states[e])] for e, _ in EVALUATORS)
    return decide(ConsensusInput(atts, prof, freshness, classes))


def enumerate_inputs():
    ids = [e for e, _ in EVALUATORS]
    for combo in itertools.product(STATES, repeat=len(ids)):
        yield dict(zip(ids, combo))


@pytest.fixture(scope="module")
def profiles(env):
    return [env.profiles[p] for p in ("low", "high", "protected")]


def test_exhaustive_oracle(profiles):
    t0 = time.perf_counter()
    cases = mismatches = 0
    for prof in profiles:
        for states in enumerate_inputs():
            d = run(states, prof)
            cases += 1
            if (d.verdict, d.basis) != oracle(states, prof):
                mismatches += 1
    assert cases == 4 ** 7 * 3
    assert mismatches == 0
    assert time.perf_counter() - t0 < 10


def test_veto_dominance(profiles):
    prot = profiles[2]
    for states in enumerate_inputs():
        if run(states, prot).verdict is not Verdict.APPROVE:
            continue
        for v in prot.veto_evaluators:
            flipped = {**states, v: "reject"}
            assert run(flipped, prot).verdict is Verdict.REJECT


def test_rejection_monotone(profiles):
    rng = random.Random(5)
    ids = [e for e, _ in EVALUATORS]
    for prof in profiles:
        for _ in range(3000):
            states = {e: rng.choice(STATES) for e in ids}
            if run(states, prof).verdict is not Verdict.REJECT:
                continue
            for e in ids:
                assert run({**states, e: "reject"}, prof).verdict is Verdict.REJECT


def test_single_approver_never_approves(profiles):
    ids = [e for e, _ in EVALUATORS]
    for prof in profiles:
        assert prof.quorum >= 2
        for sole in ids:
            for rest in itertools.product(("abstain", "malformed", "timeout"), repeat=6):
                states = dict(zip([e for e in ids if e != sole], rest)) | {sole: "approve"}
                assert run(states, prof).verdict is not Verdict.APPROVE


def test_low_three_from_two_classes(env):
    low = env.profiles["low"]
    states = {e: "abstain" for e, _ in EVALUATORS} | {"policy-1": "approve", "policy-2": "approve", "state-1": "approve"}
    assert run(states, low).verdict is Verdict.APPROVE
    one_class = {e: "abstain" for e, _ in EVALUATORS} | {"policy-1": "approve", "policy-2": "approve"}
    assert run(one_class, low).verdict is Verdict.ESCALATE


def test_high_diversity_failure(env):
    high = env.profiles["high"]
    states = {e: "abstain" for e, _ in EVALUATORS} | {"policy-1": "approve", "policy-2": "approve", "state-1": "approve", "state-2": "approve"}
    d = run(states, high)
    assert (d.verdict, d.basis) == (Verdict.ESCALATE, DecisionBasis.DIVERSITY_FAILURE)


def test_human_veto_on_protected(env):
    prot = env.profiles["protected"]
    states = {e: "approve" for e, _ in EVALUATORS} | {"human-1": "reject"}
    assert run(states, prot).basis is DecisionBasis.VETO


def test_zero_attestations_escalate(env):
    d = decide(ConsensusInput((), env.profiles["low"], 0, ALL_CLASSES))
    assert d.verdict is Verdict.ESCALATE


def test_staleness_and_timeouts(env):
    low = env.profiles["low"]
    all_ok = {e: "approve" for e, _ in EVALUATORS}
    assert run(all_ok, low, freshness=low.freshness_window).verdict is Verdict.APPROVE
    assert run(all_ok, low, freshness=low.freshness_window + 1).basis is DecisionBasis.FRESHNESS_FAILURE
    rng = random.Random(6)
    for prof in env.profiles.values():
        for _ in range(2000):
            states = {e: rng.choice((*STATES, "timeout")) for e, _ in EVALUATORS}
            fr = rng.choice((0, prof.freshness_window, prof.freshness_window + 1))
            d = run(states, prof, fr)
            assert (d.verdict, d.basis) == oracle(states, prof, fr)


def test_unregistered_required_class_escalates(env):
    low = env.profiles["low"]
    all_ok = {e: "approve" for e, _ in EVALUATORS}
    assert run(all_ok, low, classes=ALL_CLASSES - {EvaluatorClass.RISK}).basis is DecisionBasis.MISSING_CLASS


def test_ready_matches_decide_10k(env):
    rng = random.Random(7)
    p = make_proof(env, now=1000)
    ids = [e for e, _ in EVALUATORS]
    for _ in range(10_000):
        prof = rng.choice(list(env.profiles.values()))
        states = {e: rng.choice((*STATES, "timeout")) for e in ids}
        atts = tuple(collected(e, c, states[e], p.proof_hash) for e, c in EVALUATORS)
        at = 1000 + rng.choice((0, 30, 200))
        d = decide(ConsensusInput(atts, prof, at - p.snapshot.freshness, ALL_CLASSES))
        assert ready(p, atts, prof, decided_at=at, registered_classes=ALL_CLASSES) == (d.verdict is Verdict.APPROVE)
