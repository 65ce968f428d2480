"""Shared schemas and metrics for castleforge."""

from py_common.metrics import ATOMS_SWEPT, CLAIMS_TOTAL, CONSTRUCTION_SECONDS, timed
from py_common.schemas import SCHEMA_VERSION, Artifact, Certificate, ClaimRecord

__all__ = [
    "Artifact",
    "Certificate",
    "ClaimRecord",
    "SCHEMA_VERSION",
    "ATOMS_SWEPT",
    "CLAIMS_TOTAL",
    "CONSTRUCTION_SECONDS",
    "timed",
]
