"""Justification Proof construction.

``construct_proof`` is the composition normalize -> bind_context ->
evaluate_policy -> derive_boundary; each step is exposed on its own so that
evaluators and auditors can re-run any of them against stored inputs.
"""

from __future__ import annotations

import enum
import json
from collections.abc import Iterable, Mapping
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from .canonical import CanonicalError, decode, encode
from .model import (
    CONTEXT_DOMAINS,
    Binding,
    Boundary,
    ContextSnapshot,
    Intent,
    JustificationProof,
    LogicalClock,
    PolicyBasis,
    PolicyBundle,
    RiskAssessment,
    RiskClass,
)

PROTECTED_PROFILE = "protected"
DEFAULT_DENY_PROFILE = "high"


class NormalizationError(ValueError):
    """The raw intent does not satisfy the intent schema."""


class SourceFault(str, enum.Enum):
    HEALTHY = "healthy"
    STALE = "stale"
    MISSING = "missing"


@dataclass
class ContextSource:
    """A fixture-backed fact source for one context domain."""

    source_id: str
    domain: str
    facts: Mapping[str, dict[str, Any]] = field(default_factory=dict)
    fault: SourceFault = SourceFault.HEALTHY
    lag: int = 1
    stale_age: int = 3600

    def query(self, resource: str, now: int) -> tuple[dict[str, Any] | None, int]:
        if self.fault is SourceFault.MISSING:
            return None, now
        found = self.facts.get(resource)
        if found is None:
            return None, now
        age = self.stale_age if self.fault is SourceFault.STALE else self.lag
        return dict(found), now - age


@dataclass(frozen=True)
class AliasTable:
    actions: dict[str, str] = field(default_factory=dict)
    resources: dict[str, str] = field(default_factory=dict)

    def action(self, name: str) -> str:
        name = name.strip()
        return self.actions.get(name, self.actions.get(name.lower(), name))

    def resource(self, name: str) -> str:
        name = name.strip()
        return self.resources.get(name, name)

    @classmethod
    def load(cls, path: Path) -> AliasTable:
        data = json.loads(Path(path).read_text())
        return cls(actions=dict(data.get("actions", {})), resources=dict(data.get("resources", {})))


def load_policy_bundle(path: Path) -> PolicyBundle:
    data = json.loads(Path(path).read_text())
    try:
        return decode(PolicyBundle, data)
    except (CanonicalError, KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"{path}: invalid policy bundle: {exc}") from exc


# -- Normalize -----------------------------------------------------------------


def _raw_fields(raw: Mapping[str, Any] | Intent) -> Mapping[str, Any]:
    if isinstance(raw, Intent):
        return asdict(raw)
    if not isinstance(raw, Mapping):
        raise NormalizationError("intent must be an object")
    return raw


def normalize(raw: Mapping[str, Any] | Intent, aliases: AliasTable | None = None) -> Intent:
    aliases = aliases or AliasTable()
    fields = _raw_fields(raw)
    intent_id = fields.get("intent_id")
    if not isinstance(intent_id, str) or not intent_id:
        raise NormalizationError("intent_id must be a non-empty string")
    action = fields.get("action")
    if not isinstance(action, str) or not action.strip():
        raise NormalizationError(f"{intent_id}: action must be a non-empty string")
    target = fields.get("target")
    if isinstance(target, str):
        target = [target]
    if not isinstance(target, (list, tuple)) or not target:
        raise NormalizationError(f"{intent_id}: target must be a resource id or list of ids")
    if not all(isinstance(r, str) and r.strip() for r in target):
        raise NormalizationError(f"{intent_id}: target ids must be non-empty strings")
    parameters = fields.get("parameters", {})
    if not isinstance(parameters, Mapping):
        raise NormalizationError(f"{intent_id}: parameters must be a map")
    proposer = fields.get("proposer", "unknown")
    if not isinstance(proposer, str):
        raise NormalizationError(f"{intent_id}: proposer must be a string")
    submitted_at = fields.get("submitted_at", 0)
    if isinstance(submitted_at, bool) or not isinstance(submitted_at, int) or submitted_at < 0:
        raise NormalizationError(f"{intent_id}: submitted_at must be a non-negative integer")
    try:
        params = json.loads(json.dumps(encode(dict(parameters)), sort_keys=True))
    except (CanonicalError, TypeError) as exc:
        raise NormalizationError(f"{intent_id}: parameters not canonical: {exc}") from exc
    return Intent(
        intent_id=intent_id,
        action=aliases.action(action),
        target=tuple(sorted({aliases.resource(r) for r in target})),
        parameters=params,
        proposer=proposer,
        submitted_at=submitted_at,
    )


# -- BindContext ---------------------------------------------------------------


def bind_context(
    intent: Intent,
    sources: Iterable[ContextSource],
    now: int,
    domains: Iterable[str] = CONTEXT_DOMAINS,
) -> ContextSnapshot:
    """Query every source for every target; absences become explicit markers."""
    by_domain: dict[str, list[ContextSource]] = {}
    for src in sources:
        by_domain.setdefault(src.domain, []).append(src)
    bindings = []
    for domain in domains:
        domain_sources = by_domain.get(domain) or []
        for resource in intent.target:
            if not domain_sources:
                bindings.append(Binding(domain, resource, "unregistered", now, False, None))
                continue
            for src in domain_sources:
                facts, captured_at = src.query(resource, now)
                bindings.append(
                    Binding(domain, resource, src.source_id, captured_at, facts is not None, facts)
                )
    return ContextSnapshot.from_bindings(bindings)


# -- EvaluatePolicy ------------------------------------------------------------


def context_traits(snapshot: ContextSnapshot, bundle: PolicyBundle, intent: Intent) -> dict:
    """Boolean traits that rule predicates are written against."""
    protected_tags = set()
    incident = False
    for b in snapshot.bindings:
        if not b.present or b.facts is None:
            continue
        if b.domain == "protection":
            protected_tags |= set(b.facts.get("tags", ())) & bundle.protected_resource_markers
        elif b.domain == "incident" and b.facts.get("active_incident"):
            incident = True
    return {
        "protected": bool(protected_tags),
        "break_glass": intent.parameters.get("break_glass") is True,
        "incident_active": incident,
        "_protected_tags": sorted(protected_tags),
    }


class _RuleIndex:
    def __init__(self, bundle: PolicyBundle):
        self.by_action: dict[str, list[int]] = {}
        self.wildcard: list[int] = []
        for pos, rule in enumerate(bundle.rules):
            if "*" in rule.actions:
                self.wildcard.append(pos)
            for a in rule.actions:
                if a != "*":
                    self.by_action.setdefault(a, []).append(pos)

    def candidates(self, action: str) -> list[int]:
        return sorted(set(self.by_action.get(action, ())) | set(self.wildcard))


_index_cache: dict[str, _RuleIndex] = {}


def _index(bundle: PolicyBundle) -> _RuleIndex:
    key = bundle.digest
    idx = _index_cache.get(key)
    if idx is None:
        idx = _index_cache[key] = _RuleIndex(bundle)
    return idx


def evaluate_policy(
    snapshot: ContextSnapshot, bundle: PolicyBundle, intent: Intent, at: int | None = None
) -> tuple[PolicyBasis, RiskAssessment]:
    at = intent.submitted_at if at is None else at
    traits = context_traits(snapshot, bundle, intent)
    matched = [
        bundle.rules[pos]
        for pos in _index(bundle).candidates(intent.action)
        if bundle.rules[pos].matches(intent.action, traits)
    ]
    selected = matched[0] if matched else None
    basis = PolicyBasis(
        bundle_id=bundle.bundle_id,
        version=bundle.version,
        bundle_digest=bundle.digest,
        matched_rules=tuple(r.rule_id for r in matched),
        selected_rule=selected.rule_id if selected else None,
        action=intent.action,
        resources=intent.target,
        evaluated_at=at,
        template=selected.template if selected else None,
    )
    codes = []
    if selected is None:
        codes.append("NO_MATCHING_RULE")
        risk_class, profile = RiskClass.HIGH, DEFAULT_DENY_PROFILE
    else:
        codes.append(f"RULE:{selected.rule_id}")
        risk_class, profile = selected.risk_class, selected.profile
    if traits["break_glass"]:
        codes.append("BREAK_GLASS_REQUESTED")
    if traits["incident_active"]:
        codes.append("INCIDENT_ACTIVE")
    if traits["protected"]:
        codes.extend(f"PROTECTED_MARKER:{t}" for t in traits["_protected_tags"])
        risk_class, profile = RiskClass.PROTECTED, PROTECTED_PROFILE
    return basis, RiskAssessment(risk_class, tuple(codes), profile)


# -- DeriveBoundary ------------------------------------------------------------


def derive_boundary(basis: PolicyBasis, risk: RiskAssessment) -> Boundary:
    if basis.selected_rule is None or basis.template is None:
        return Boundary.empty(basis.evaluated_at)
    t = basis.template
    return Boundary(
        actions=frozenset({basis.action}),
        resources=frozenset(basis.resources),
        not_before=basis.evaluated_at,
        not_after=basis.evaluated_at + t.validity_seconds,
        obligations=t.obligations,
    )


def construct_proof(
    raw_intent: Mapping[str, Any] | Intent,
    sources: Iterable[ContextSource],
    bundle: PolicyBundle,
    clock: LogicalClock,
    aliases: AliasTable | None = None,
) -> JustificationProof:
    now = clock.now()
    mutation = normalize(raw_intent, aliases)
    snapshot = bind_context(mutation, sources, now)
    basis, risk = evaluate_policy(snapshot, bundle, mutation, at=now)
    boundary = derive_boundary(basis, risk)
    return JustificationProof.assemble(
        proof_id=f"jp-{mutation.intent_id}",
        mutation=mutation,
        snapshot=snapshot,
        policy_basis=basis,
        risk=risk,
        boundary=boundary,
        constructed_at=now,
    )
