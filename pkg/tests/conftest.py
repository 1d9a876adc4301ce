from __future__ import annotations

import pytest

from proofgate.config import load_config, load_environment
from proofgate.evaluators import EvaluatorFixtures, Swarm, WorldModel
from proofgate.harness.runner import run_all
from proofgate.harness.workload import _facts
from proofgate.model import LogicalClock
from proofgate.proofs import ContextSource, SourceFault, construct_proof

SEED = 20260415


@pytest.fixture(scope="session")
def env(tmp_path_factory):
    return load_environment(load_config(out=tmp_path_factory.mktemp("env")))


def world_facts(resources, protected=(), routes_traffic=(), dependents=None):
    dependents = dependents or {}
    world = {}
    for r in resources:
        f = _facts(r, "team-00", protected=r in protected)
        if r in routes_traffic:
            f["routes_traffic"] = True
            f["traffic"] = {"active_connections": 12, "routes_traffic": True}
        if r in dependents:
            f["dependencies"] = {"dependents": list(dependents[r]), "depends_on": []}
        world[r] = f
    return world


def sources_for(env, world, faults=None):
    faults = faults or {}
    by_domain = {}
    for r, facts in world.items():
        for domain, v in facts.items():
            if isinstance(v, dict):
                by_domain.setdefault(domain, {})[r] = v
    return [
        ContextSource(
            s.source_id, s.domain, by_domain.get(s.domain, {}),
            SourceFault(faults.get(s.source_id, faults.get("*", "healthy"))), s.lag, env.stale_age,
        )
        for s in env.sources
    ]


def make_proof(env, action="TerminateInstance", target=("i-1",), params=None, faults=None, world=None, now=1000, intent_id="intent-t1"):
    world = world or world_facts(target)
    raw = {
        "intent_id": intent_id,
        "action": action,
        "target": list(target),
        "parameters": params or {},
        "proposer": "agent-0",
        "submitted_at": now,
    }
    return construct_proof(raw, sources_for(env, world, faults), env.bundle, LogicalClock(now), env.aliases)


def make_swarm(env, world=None, queued=None, seed=SEED):
    fx = EvaluatorFixtures(
        bundles={f"{env.bundle.bundle_id}@{env.bundle.version}": env.bundle},
        profiles=env.profiles,
        catalog=env.catalog,
        world=WorldModel({r: {"routes_traffic": f["routes_traffic"], "protected": f["protected"]} for r, f in (world or {}).items()}),
        queued_verdicts=dict(queued or {}),
    )
    return Swarm(env.registry, key_seed=str(seed), fixtures=fx)


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    """One default desk-scale run written to disk, shared across modules."""
    out = tmp_path_factory.mktemp("default-run")
    cfg = load_config(out=out)
    return cfg, run_all(cfg, write=True)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
