"""Proof-derived execution authority for high-stakes infrastructure mutations."""

from .consensus import ConsensusInput, decide, ready
from .model import (
    Boundary,
    Decision,
    DecisionBasis,
    ExecutionIdentity,
    JustificationProof,
    Verdict,
    boundary_contains,
)
from .proofs import construct_proof

__version__ = "0.1.0"

__all__ = [
    "Boundary",
    "ConsensusInput",
    "Decision",
    "DecisionBasis",
    "ExecutionIdentity",
    "JustificationProof",
    "Verdict",
    "boundary_contains",
    "construct_proof",
    "decide",
    "ready",
]
