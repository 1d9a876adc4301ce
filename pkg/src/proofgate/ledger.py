"""Append-only, hash-linked evidence ledger.

File format (JSON lines, UTF-8, each line canonical JSON followed by ``\\n``)::

    {"format":"proofgate-ledger/1","genesis":G,"hash":"sha256","run_id":R}
    {"entry_hash":...,"intent_id":...,"kind":...,"payload":...,"payload_digest":...,"prev_hash":...,"seq":0}
    ...

``G = sha256(canonical({"format", "hash", "run_id"}))`` and is the
``prev_hash`` of entry 0. For every entry::

    payload_digest = sha256(canonical(payload))
    entry_hash     = sha256(prev_hash_ascii || canonical(body))

where ``body`` is the object of ``seq, kind, intent_id, payload_digest,
payload``. A verifier needs only a JSON parser and SHA-256.
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .canonical import CanonicalError, canonical_digest, canonical_serialize, decode, digest, encode
from .model import (
    EVENT_ORDER,
    CollectedAttestation,
    Decision,
    DecisionBasis,
    EventKind,
    EvidenceRecord,
    ExecutionIdentity,
    GovernanceMetadata,
    JustificationProof,
    LedgerEntry,
    MutationAttempt,
    Outcome,
    Verdict,
)

LEDGER_FORMAT = "proofgate-ledger/1"


class LedgerOrderError(RuntimeError):
    """Events for an intent were appended out of causal order."""


class IncompleteRecordError(LookupError):
    def __init__(self, intent_id: str, missing: Sequence[EventKind]):
        self.intent_id = intent_id
        self.missing = tuple(missing)
        names = ", ".join(k.value for k in self.missing)
        super().__init__(f"{intent_id}: missing lifecycle stage(s): {names}")


def header_for(run_id: str) -> dict[str, str]:
    core = {"format": LEDGER_FORMAT, "hash": "sha256", "run_id": run_id}
    return {**core, "genesis": canonical_digest(core)}


def seal(seq: int, kind: EventKind, intent_id: str, payload: dict[str, Any], prev_hash: str) -> LedgerEntry:
    payload = encode(payload)
    payload_digest = canonical_digest(payload)
    body = {"seq": seq, "kind": kind, "intent_id": intent_id, "payload_digest": payload_digest, "payload": payload}
    entry_hash = digest(prev_hash.encode("ascii") + canonical_serialize(body))
    return LedgerEntry(seq, kind, intent_id, payload, payload_digest, prev_hash, entry_hash)


class EvidenceLedger:
    """Single-appender ledger. Sealed entries are never exposed for mutation."""

    def __init__(self, run_id: str):
        self.run_id = run_id
        self.header = header_for(run_id)
        self._entries: list[LedgerEntry] = []
        self._stage: dict[str, int] = {}

    @property
    def genesis(self) -> str:
        return self.header["genesis"]

    @property
    def head(self) -> str:
        return self._entries[-1].entry_hash if self._entries else self.genesis

    @property
    def entries(self) -> tuple[LedgerEntry, ...]:
        return tuple(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def append(self, kind: EventKind, intent_id: str, payload: dict[str, Any]) -> LedgerEntry:
        stage = self._stage.get(intent_id, 0)
        if stage >= len(EVENT_ORDER):
            raise LedgerOrderError(f"{intent_id}: lifecycle already closed")
        expected = EVENT_ORDER[stage]
        if kind is not expected:
            raise LedgerOrderError(f"{intent_id}: expected {expected.value}, got {kind.value}")
        entry = seal(len(self._entries), kind, intent_id, payload, self.head)
        self._entries.append(entry)
        self._stage[intent_id] = stage + 1
        return entry

    def lines(self) -> list[bytes]:
        out = [canonical_serialize(self.header)]
        out.extend(canonical_serialize(e) for e in self._entries)
        return out

    def to_bytes(self) -> bytes:
        return b"".join(line + b"\n" for line in self.lines())

    def write(self, path: Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_bytes(self.to_bytes())
        tmp.replace(path)


def read_entries(path: Path) -> tuple[dict[str, Any], list[LedgerEntry]]:
    """Parse a ledger file without verifying it."""
    raw = Path(path).read_bytes().split(b"\n")
    if raw and raw[-1] == b"":
        raw.pop()
    if not raw:
        raise ValueError(f"{path}: empty ledger")
    header = json.loads(raw[0])
    entries = [decode(LedgerEntry, json.loads(line)) for line in raw[1:]]
    return header, entries


# -- integrity -----------------------------------------------------------------


@dataclass(frozen=True)
class Divergence:
    line: int
    seq: int | None
    reason: str


@dataclass
class IntegrityReport:
    entries: int = 0
    divergence: Divergence | None = None
    run_id: str | None = None

    @property
    def ok(self) -> bool:
        return self.divergence is None

    def summary(self) -> str:
        if self.ok:
            return f"chain intact: {self.entries} entries"
        d = self.divergence
        where = f"line {d.line}" + (f" (seq {d.seq})" if d.seq is not None else "")
        return f"chain diverges at {where}: {d.reason}"


def verify_chain(source: Path | bytes | EvidenceLedger) -> IntegrityReport:
    """Recompute every link and hash; stop at the first divergence.

    Each line must also be byte-identical to the canonical encoding of what
    it parses to, so no edit can hide in whitespace or key order.
    """
    if isinstance(source, EvidenceLedger):
        data = source.to_bytes()
    elif isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    else:
        data = Path(source).read_bytes()
    report = IntegrityReport()
    lines = data.split(b"\n")
    if lines[-1] != b"":
        report.divergence = Divergence(len(lines), None, "file does not end with a newline")
        return report
    lines.pop()
    if not lines:
        report.divergence = Divergence(1, None, "missing header")
        return report

    def parse(n: int, line: bytes):
        try:
            obj = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, ValueError) as exc:
            return None, f"unparseable line: {exc.__class__.__name__}"
        try:
            if canonical_serialize(obj) != line:
                return None, "line is not in canonical form"
        except (CanonicalError, ValueError):
            return None, "line holds non-canonical values"
        return obj, None

    header, err = parse(1, lines[0])
    if err:
        report.divergence = Divergence(1, None, f"header: {err}")
        return report
    if not isinstance(header, dict) or set(header) != {"format", "genesis", "hash", "run_id"}:
        report.divergence = Divergence(1, None, "header fields")
        return report
    if header.get("format") != LEDGER_FORMAT or header.get("hash") != "sha256":
        report.divergence = Divergence(1, None, "unsupported format or hash")
        return report
    if header_for(str(header["run_id"])) != header:
        report.divergence = Divergence(1, None, "genesis does not match header")
        return report
    report.run_id = header["run_id"]
    prev = header["genesis"]
    fields = {"seq", "kind", "intent_id", "payload", "payload_digest", "prev_hash", "entry_hash"}
    for n, line in enumerate(lines[1:], start=2):
        obj, err = parse(n, line)
        if err:
            report.divergence = Divergence(n, None, err)
            return report
        if not isinstance(obj, dict) or set(obj) != fields:
            report.divergence = Divergence(n, None, "entry fields")
            return report
        seq = obj["seq"]
        if seq != n - 2:
            report.divergence = Divergence(n, seq if isinstance(seq, int) else None, "sequence gap")
            return report
        if obj["kind"] not in {k.value for k in EventKind}:
            report.divergence = Divergence(n, seq, "unknown event kind")
            return report
        if obj["prev_hash"] != prev:
            report.divergence = Divergence(n, seq, "prev_hash does not link to prior entry")
            return report
        if canonical_digest(obj["payload"]) != obj["payload_digest"]:
            report.divergence = Divergence(n, seq, "payload digest mismatch")
            return report
        body = {k: obj[k] for k in ("seq", "kind", "intent_id", "payload_digest", "payload")}
        if digest(prev.encode("ascii") + canonical_serialize(body)) != obj["entry_hash"]:
            report.divergence = Divergence(n, seq, "entry hash mismatch")
            return report
        prev = obj["entry_hash"]
        report.entries += 1
    return report


# -- completeness --------------------------------------------------------------


@dataclass
class CompletenessReport:
    records: int = 0
    complete: int = 0
    missing: dict[str, list[str]] = field(default_factory=dict)
    duplicates: dict[str, list[str]] = field(default_factory=dict)
    out_of_order: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.missing or self.duplicates or self.out_of_order)

    @property
    def orphans(self) -> list[str]:
        return sorted(self.missing)


def completeness_check(
    entries: Iterable[LedgerEntry], expected_intents: Iterable[str] | None = None
) -> CompletenessReport:
    """Every intent must carry exactly the four lifecycle events, in order."""
    by_intent: dict[str, list[LedgerEntry]] = {}
    for e in entries:
        by_intent.setdefault(e.intent_id, []).append(e)
    for intent_id in expected_intents or ():
        by_intent.setdefault(intent_id, [])
    report = CompletenessReport(records=len(by_intent))
    for intent_id, evs in sorted(by_intent.items()):
        kinds = [e.kind for e in evs]
        missing = [k.value for k in EVENT_ORDER if k not in kinds]
        dup = sorted({k.value for k in kinds if kinds.count(k) > 1})
        if missing:
            report.missing[intent_id] = missing
        if dup:
            report.duplicates[intent_id] = dup
        present = [k for k in EVENT_ORDER if k in kinds]
        seqs = [min(e.seq for e in evs if e.kind is k) for k in present]
        if seqs != sorted(seqs):
            report.out_of_order.append(intent_id)
        if not missing and not dup and seqs == sorted(seqs):
            report.complete += 1
    return report


# -- record assembly -----------------------------------------------------------


def _opt(tp, value):
    return None if value is None else decode(tp, value)


def assemble_record(entries: Iterable[LedgerEntry], intent_id: str) -> EvidenceRecord:
    events = {}
    for e in entries:
        if e.intent_id == intent_id:
            if e.kind in events:
                raise LedgerOrderError(f"{intent_id}: duplicate {e.kind.value} event")
            events[e.kind] = e
    missing = [k for k in EVENT_ORDER if k not in events]
    if missing:
        raise IncompleteRecordError(intent_id, missing)
    ordered = tuple(events[k] for k in EVENT_ORDER)
    if [e.seq for e in ordered] != sorted(e.seq for e in ordered):
        raise LedgerOrderError(f"{intent_id}: lifecycle events out of causal order")
    created, closed, issued, outcome = (e.payload for e in ordered)
    policy = created.get("policy") or {}
    version = f"{policy['bundle_id']}@{policy['version']}" if policy else None
    return EvidenceRecord(
        record_id=f"rec-{intent_id}",
        intent=created.get("intent") or {},
        context_digest=created.get("context_digest"),
        policy_version=version,
        proof=_opt(JustificationProof, created.get("proof")),
        attestations=tuple(decode(CollectedAttestation, a) for a in closed.get("attestations", ())),
        profile=_opt(GovernanceMetadata, closed.get("profile")),
        decision=decode(Decision, closed["decision"]),
        identity=_opt(ExecutionIdentity, issued.get("identity")),
        attempt=_opt(MutationAttempt, outcome.get("attempt")),
        outcome=decode(Outcome, outcome["outcome"]),
        append_events=ordered,
        proof_freshness=closed.get("proof_freshness", 0),
        refusal=issued.get("refusal"),
    )


def assemble_all(entries: Sequence[LedgerEntry]) -> list[EvidenceRecord]:
    by_intent: dict[str, list[LedgerEntry]] = {}
    for e in entries:
        by_intent.setdefault(e.intent_id, []).append(e)
    return [assemble_record(evs, iid) for iid, evs in by_intent.items()]


# -- record-level completeness ---------------------------------------------------

FIELDS = ("intent", "context", "policy", "proof", "attestations", "profile", "decision", "identity", "attempt", "outcome")


def record_field_status(rec: EvidenceRecord) -> dict[str, bool | None]:
    """Presence of each lifecycle field; ``None`` where the field does not apply.

    The identity field applies to every record: approvals must carry an
    identity and everything else must carry a refusal. The attempt field
    applies only where an identity was issued.
    """
    invalid = rec.decision.basis is DecisionBasis.INVALID_INTENT
    status: dict[str, bool | None] = {
        "intent": bool(rec.intent),
        "context": None if invalid else bool(rec.context_digest),
        "policy": None if invalid else bool(rec.policy_version),
        "proof": None if invalid else rec.proof is not None,
        "attestations": None if invalid else len(rec.attestations) > 0,
        "profile": None if invalid else rec.profile is not None,
        "decision": rec.decision is not None,
        "outcome": rec.outcome is not None,
    }
    if rec.decision.verdict is Verdict.APPROVE:
        status["identity"] = rec.identity is not None or bool(rec.refusal)
    else:
        status["identity"] = rec.identity is None and bool(rec.refusal)
    status["attempt"] = (rec.attempt is not None) if rec.identity is not None else None
    return status


def record_is_complete(rec: EvidenceRecord) -> bool:
    return all(v is not False for v in record_field_status(rec).values())
