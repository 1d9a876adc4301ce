"""Plain operational logs for systems that keep no evidence chain.

An auditor working from these logs can answer an audit question for a
request only if the artifact that question needs was written somewhere:

======================  ===========================================
question                artifact(s) required
======================  ===========================================
mutation_proposed       ``request``
context_and_policy      ``context_contents`` and ``policy_version``
evaluator_votes         ``signed_attestations``
boundary_issued         ``scoped_authority``
execution_outcome       ``outcome``
======================  ===========================================

A context digest or an unsigned vote tally is not enough: neither lets the
auditor re-check the decision.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..replay import AUDIT_QUESTIONS

REQUIREMENTS: dict[str, frozenset[str]] = {
    "mutation_proposed": frozenset({"request"}),
    "context_and_policy": frozenset({"context_contents", "policy_version"}),
    "evaluator_votes": frozenset({"signed_attestations"}),
    "boundary_issued": frozenset({"scoped_authority"}),
    "execution_outcome": frozenset({"outcome"}),
}


@dataclass
class LogStore:
    system: str
    entries: list[dict[str, Any]] = field(default_factory=list)

    def write(self, log: str, request_id: str, artifacts: dict[str, Any]) -> None:
        self.entries.append({"log": log, "request_id": request_id, "artifacts": artifacts})

    def artifacts_by_request(self) -> dict[str, set[str]]:
        out: dict[str, set[str]] = defaultdict(set)
        for e in self.entries:
            out[e["request_id"]].update(e["artifacts"])
        return out

    def answerability(self, request_ids) -> dict[str, dict[str, bool]]:
        have = self.artifacts_by_request()
        return {
            rid: {q: REQUIREMENTS[q] <= have.get(rid, set()) for q in AUDIT_QUESTIONS}
            for rid in request_ids
        }

    def dump(self, path: Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fh:
            for e in self.entries:
                fh.write(json.dumps(e, sort_keys=True, separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, system: str, path: Path) -> LogStore:
        entries = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
        return cls(system, entries)
