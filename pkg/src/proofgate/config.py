"""Run configuration and the fixture environment it points at.

Every referenced file is opened and parsed by :func:`load_environment`
before any pipeline work starts, so a bad path or a syntax error fails the
run with a diagnostic and leaves no partial output behind.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any

from .consensus import load_profiles
from .evaluators import ActionSpec, EvaluatorRegistration, load_action_catalog, load_registry
from .model import GovernanceMetadata, PolicyBundle
from .proofs import AliasTable, load_policy_bundle

ABLATIONS = ("no_consensus", "no_execution_identity", "no_evidence_chain")

_FILE_FIELDS = (
    "policy_bundle",
    "governance_profiles",
    "evaluator_registry",
    "aliases",
    "action_catalog",
    "context_sources",
    "substrate",
    "workload_spec",
)


class ConfigError(ValueError):
    pass


def data_dir() -> Path:
    return Path(str(resources.files("proofgate") / "data"))


def default_config_path() -> Path:
    return data_dir() / "default_config.json"


@dataclass(frozen=True)
class RunConfig:
    policy_bundle: Path
    governance_profiles: Path
    evaluator_registry: Path
    aliases: Path
    action_catalog: Path
    context_sources: Path
    substrate: Path
    workload_spec: Path
    out: Path = Path("out")
    seed: int = 20260415
    scale: float = 0.1
    ablation: str | None = None
    receipt_loss_rate: float = 0.001
    b2_unsafe_pass_through: float = 0.14
    evaluator_deadline_seconds: float = 5.0

    def validate(self) -> None:
        if not 0 < self.scale <= 10:
            raise ConfigError(f"scale must lie in (0, 10], got {self.scale}")
        if self.ablation is not None and self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}; choose from {', '.join(ABLATIONS)}")
        for name in ("receipt_loss_rate", "b2_unsafe_pass_through"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.evaluator_deadline_seconds <= 0:
            raise ConfigError("evaluator_deadline_seconds must be positive")
        for name in _FILE_FIELDS:
            p = getattr(self, name)
            if not Path(p).is_file():
                raise ConfigError(f"{name}: file not found: {p}")

    def with_overrides(self, **kw: Any) -> RunConfig:
        kw = {k: v for k, v in kw.items() if v is not None}
        if "out" in kw:
            kw["out"] = Path(kw["out"])
        return replace(self, **kw)

    def as_dict(self) -> dict[str, Any]:
        return {f.name: (str(v) if isinstance(v := getattr(self, f.name), Path) else v) for f in fields(self)}


def _read_json(path: Path) -> Any:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def load_config(path: Path | None = None, **overrides: Any) -> RunConfig:
    """Read a JSON config; relative file paths resolve against its directory."""
    path = Path(path) if path is not None else default_config_path()
    raw = _read_json(path)
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown keys: {', '.join(unknown)}")
    base = path.parent
    kw: dict[str, Any] = {}
    for name in _FILE_FIELDS:
        if name not in raw:
            raise ConfigError(f"{path}: missing key {name!r}")
        p = Path(raw[name])
        kw[name] = p if p.is_absolute() else base / p
    for name in ("seed", "scale", "ablation", "receipt_loss_rate", "b2_unsafe_pass_through", "evaluator_deadline_seconds"):
        if name in raw:
            kw[name] = raw[name]
    if "out" in raw:
        kw["out"] = Path(raw["out"])
    cfg = RunConfig(**kw).with_overrides(**overrides)
    cfg.validate()
    return cfg


@dataclass(frozen=True)
class SourceSpec:
    source_id: str
    domain: str
    lag: int = 1


@dataclass
class Environment:
    """Parsed fixtures shared by the pipeline, baselines and auditors."""

    config: RunConfig
    bundle: PolicyBundle
    profiles: dict[str, GovernanceMetadata]
    registry: list[EvaluatorRegistration]
    aliases: AliasTable
    catalog: dict[str, ActionSpec]
    sources: list[SourceSpec]
    stale_age: int
    standing_roles: list[tuple[str, int]]
    workload_spec: dict[str, Any] = field(default_factory=dict)


def load_environment(cfg: RunConfig) -> Environment:
    cfg.validate()
    for name in _FILE_FIELDS:
        _read_json(getattr(cfg, name))
    try:
        bundle = load_policy_bundle(cfg.policy_bundle)
        registry = load_registry(cfg.evaluator_registry)
        profiles = load_profiles(cfg.governance_profiles, n_evaluators=len(registry))
        aliases = AliasTable.load(cfg.aliases)
        catalog = load_action_catalog(cfg.action_catalog)
        src = _read_json(cfg.context_sources)
        sources = [SourceSpec(s["source_id"], s["domain"], int(s.get("lag", 1))) for s in src["sources"]]
        sub = _read_json(cfg.substrate)
        roles = [(r["role"], int(r["resources"])) for r in sub["standing_roles"]]
        spec = _read_json(cfg.workload_spec)
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid fixture: {exc}") from exc
    for rule in bundle.rules:
        if rule.profile not in profiles:
            raise ConfigError(f"{cfg.policy_bundle}: rule {rule.rule_id} names unknown profile {rule.profile!r}")
    for pid in ("protected", "high"):
        # protected targets and unmatched intents are routed to these by name
        if pid not in profiles:
            raise ConfigError(f"{cfg.governance_profiles}: profile {pid!r} is required")
    if not roles:
        raise ConfigError(f"{cfg.substrate}: no standing roles configured")
    return Environment(
        config=cfg,
        bundle=bundle,
        profiles=profiles,
        registry=registry,
        aliases=aliases,
        catalog=catalog,
        sources=sources,
        stale_age=int(src.get("stale_age", 3600)),
        standing_roles=roles,
        workload_spec=spec,
    )
