import random
from dataclasses import replace

import pytest

from proofgate.canonical import canonical_digest
from proofgate.harness.runner import artifact_store, receipt_store
from proofgate.ledger import (
    EvidenceLedger,
    IncompleteRecordError,
    LedgerOrderError,
    assemble_all,
    assemble_record,
    completeness_check,
    header_for,
    seal,
    verify_chain,
)
from proofgate.model import EVENT_ORDER, Decision, DecisionBasis, EventKind, OutcomeStatus, Verdict
from proofgate.replay import ArtifactStore, ReplayStatus, replay


def toy_ledger(n_intents=3):
    led = EvidenceLedger("run-x")
    for i in range(n_intents):
        for k in EVENT_ORDER:
            led.append(k, f"intent-{i}", {"i": i, "k": k.value})
    return led


@pytest.fixture(scope="module")
def run0(default_run):
    _, ev = default_run
    return ev.dtf.runs[0]


@pytest.fixture(scope="module")
def store(env, default_run):
    return artifact_store(env, default_run[1].dtf.swarm_keys)


def test_genesis():
    led = toy_ledger(1)
    core = {"format": "proofgate-ledger/1", "hash": "sha256", "run_id": "run-x"}
    assert led.entries[0].prev_hash == led.genesis == canonical_digest(core) == header_for("run-x")["genesis"]


def test_four_events_gapless():
    led = toy_ledger(1)
    assert [e.seq for e in led.entries] == [0, 1, 2, 3]
    assert all(b.prev_hash == a.entry_hash for a, b in zip(led.entries, led.entries[1:]))


def test_out_of_order_append():
    led = EvidenceLedger("r")
    with pytest.raises(LedgerOrderError):
        led.append(EventKind.OUTCOME, "i", {})
    for k in EVENT_ORDER:
        led.append(k, "i", {})
    with pytest.raises(LedgerOrderError):
        led.append(EventKind.PROOF_CREATED, "i", {})
    assert len(led) == 4


def test_entries_are_immutable():
    led = toy_ledger(1)
    with pytest.raises(AttributeError):
        led.entries[0].payload_digest = "x"
    assert not hasattr(led, "delete")


def test_clean_chain(run0):
    rep = verify_chain(run0.ledger)
    assert rep.ok and rep.entries == 800 and rep.run_id == "run-000"


def test_one_byte_tamper_names_entry(run0):
    data = bytearray(run0.ledger.to_bytes())
    lines = bytes(data).split(b"\n")
    target = 10  # file line 11, entry seq 9
    start = sum(len(x) + 1 for x in lines[:target])
    pos = start + lines[target].index(b'"payload":{') + 15
    data[pos] = ord("Z") if data[pos] != ord("Z") else ord("Y")
    rep = verify_chain(bytes(data))
    assert not rep.ok and rep.divergence.line == target + 1


def test_100_random_single_byte_tamperings(run0):
    clean = run0.ledger.to_bytes()
    rng = random.Random(8)
    detected = 0
    for _ in range(100):
        data = bytearray(clean)
        pos = rng.randrange(len(data))
        data[pos] = rng.choice([b for b in range(256) if b != data[pos]])
        detected += not verify_chain(bytes(data)).ok
    assert detected == 100


def test_mid_line_truncation(run0):
    data = run0.ledger.to_bytes()
    assert not verify_chain(data[: len(data) // 2]).ok


def test_rehashed_forgery_still_detected_against_original_head(run0):
    # rewriting one payload and every hash after it yields a self-consistent file,
    # but its head no longer matches the original ledger head
    entries = list(run0.ledger.entries)
    prev = entries[4].prev_hash
    forged = []
    for e in entries[4:]:
        payload = dict(e.payload)
        if e is entries[4]:
            payload["intent"] = {**payload["intent"], "proposer": "mallory"}
        s = seal(e.seq, e.kind, e.intent_id, payload, prev)
        forged.append(s)
        prev = s.entry_hash
    assert forged[-1].entry_hash != run0.ledger.head


def test_assemble_executed_and_rejected(run0):
    recs = {r.intent_id: r for r in assemble_all(run0.ledger.entries)}
    executed = next(r for r in recs.values() if r.outcome.status is OutcomeStatus.EXECUTED)
    assert all(v is not None for v in (executed.proof, executed.profile, executed.identity, executed.attempt, executed.context_digest, executed.policy_version))
    rejected = next(r for r in recs.values() if r.decision.verdict is Verdict.REJECT)
    assert rejected.identity is None and rejected.attempt is None and rejected.outcome.status is OutcomeStatus.REJECTED
    assert len(recs) == 200


def test_missing_stage_named(run0):
    entries = [e for e in run0.ledger.entries if not (e.intent_id == "intent-s000003" and e.kind is EventKind.OUTCOME)]
    with pytest.raises(IncompleteRecordError) as info:
        assemble_record(entries, "intent-s000003")
    assert info.value.missing == (EventKind.OUTCOME,)
    rep = completeness_check(entries)
    assert rep.orphans == ["intent-s000003"] and rep.missing["intent-s000003"] == ["outcome_recorded"]


def test_drop_injection_fuzz():
    led = toy_ledger(25)
    entries = list(led.entries)
    expected = [f"intent-{i}" for i in range(25)]
    rng = random.Random(9)
    for _ in range(1000):
        dropped = {i for i in range(len(entries)) if rng.random() < 0.1}
        kept = [e for i, e in enumerate(entries) if i not in dropped]
        want = {}
        for i in sorted(dropped):
            want.setdefault(entries[i].intent_id, []).append(entries[i].kind.value)
        rep = completeness_check(kept, expected)
        assert rep.missing == {k: sorted(v, key=[x.value for x in EVENT_ORDER].index) for k, v in want.items()}
        assert not rep.duplicates and not rep.out_of_order


def test_causal_order_and_event_count(default_run):
    _, ev = default_run
    for run in ev.dtf.runs:
        by = {}
        for e in run.ledger.entries:
            by.setdefault(e.intent_id, []).append(e)
        for evs in by.values():
            assert [e.kind for e in evs] == list(EVENT_ORDER)
            assert [e.seq for e in evs] == sorted(e.seq for e in evs)


def test_replay_clean_record(run0, store, default_run):
    receipts = receipt_store(default_run[1].dtf)
    rec = next(r for r in run0.records if r.outcome.status is OutcomeStatus.EXECUTED)
    v = replay(rec, store, receipts)
    assert v.status is ReplayStatus.MATCH and all(v.answered.values())
    assert replay(rec, store, receipts) == v


def test_decision_forgery_flagged(run0, store):
    rec = next(r for r in run0.records if r.decision.verdict is Verdict.REJECT)
    forged = replace(rec, decision=Decision(Verdict.APPROVE, DecisionBasis.QUORUM))
    v = replay(forged, store)
    assert v.status is ReplayStatus.MISMATCH and "DECISION_MISMATCH" in v.failures
    assert not v.answered["evaluator_votes"]


def test_missing_bundle_blocks(run0, store):
    empty = ArtifactStore({}, store.profiles, store.keys, store.registered_classes)
    v = replay(run0.records[0], empty)
    assert v.status is ReplayStatus.BLOCKED
