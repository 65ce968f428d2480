"""Pydantic schemas for castleforge artifacts.

Every artifact carries `schema_version` and a `kind` discriminator. Exact
rationals travel as "p/q" strings, intervals as {lo, hi}.
"""

from typing import Annotated, Any, Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

SCHEMA_VERSION = "1"

Rational = Annotated[str, Field(pattern=r"^-?\d+/\d+$", description="Exact rational p/q")]
Coords = list[int]


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class Interval(StrictModel):
    lo: Rational
    hi: Rational


class SystemConfig(StrictModel):
    """A computable free system: a Z^d odometer or a substitution subshift."""

    kind: Literal["odometer", "substitution"]
    bases: list[list[int]] | None = Field(
        default=None, description="Repeating base pattern per coordinate (odometer)"
    )
    rules: str | None = Field(default=None, description='Rules such as "a->ab; b->a"')

    @model_validator(mode="after")
    def _fields_match_kind(self) -> "SystemConfig":
        if self.kind == "odometer" and (self.bases is None or self.rules is not None):
            raise ValueError("odometer systems take `bases` only")
        if self.kind == "substitution" and (self.rules is None or self.bases is not None):
            raise ValueError("substitution systems take `rules` only")
        return self


class ClaimRecord(StrictModel):
    name: str
    value: str
    relation: Literal["<", "<=", ">", ">=", "=="]
    bound: str
    passed: bool
    hard: bool = True
    detail: str = ""


class Certificate(StrictModel):
    schema_version: str = SCHEMA_VERSION
    operation: str
    inputs_digest: str = Field(..., description="sha256 of the canonical input JSON")
    claims: list[ClaimRecord] = Field(default_factory=list)
    passed: bool


class ClopenRecord(StrictModel):
    level: int = Field(..., ge=0)
    atoms: list[int] = Field(default_factory=list, description="Sorted atom indices")


class TowerRecord(StrictModel):
    base: ClopenRecord
    shape: list[Coords]


class CastleArtifact(StrictModel):
    schema_version: str = SCHEMA_VERSION
    kind: Literal["castle"] = "castle"
    system: SystemConfig
    group: str
    towers: list[TowerRecord]
    provenance: dict[str, Any] = Field(default_factory=dict)
    certificate: Certificate


class PlacementRecord(StrictModel):
    tile: int = Field(..., ge=0)
    center: Coords


class TilingArtifact(StrictModel):
    schema_version: str = SCHEMA_VERSION
    kind: Literal["tiling"] = "tiling"
    group: str
    K: list[Coords]
    delta: Rational
    eps: Rational
    region: list[Coords]
    tiles: list[list[Coords]]
    defects: list[Rational]
    placements: list[PlacementRecord]
    certificate: Certificate


class PieceRecord(StrictModel):
    part: ClopenRecord
    mover: Coords
    color: int = Field(default=0, ge=0)


class WitnessArtifact(StrictModel):
    schema_version: str = SCHEMA_VERSION
    kind: Literal["witness"] = "witness"
    system: SystemConfig
    group: str
    colors: int = Field(default=1, ge=1)
    source: ClopenRecord
    target: ClopenRecord
    pieces: list[PieceRecord]
    transcript: list[str] = Field(default_factory=list)
    certificate: Certificate


class PartitionArtifact(StrictModel):
    """Clopen sets of one system, e.g. the partition P handed to `gamma`."""

    schema_version: str = SCHEMA_VERSION
    kind: Literal["partition"] = "partition"
    system: SystemConfig
    members: list[ClopenRecord]
    certificate: Certificate | None = None


class SimpleFunctionRecord(StrictModel):
    level: int = Field(..., ge=0)
    denominator: int = Field(..., ge=1)
    numerators: list[int]


class GammaArtifact(StrictModel):
    schema_version: str = SCHEMA_VERSION
    kind: Literal["gamma"] = "gamma"
    system: SystemConfig
    group: str
    L: list[Coords]
    eps: Rational
    Q: int = Field(..., ge=1)
    partition: list[ClopenRecord]
    f1: SimpleFunctionRecord
    f2: SimpleFunctionRecord
    info: dict[str, Any] = Field(default_factory=dict)
    certificate: Certificate


class RotationArtifact(StrictModel):
    schema_version: str = SCHEMA_VERSION
    kind: Literal["rotation"] = "rotation"
    alpha: str
    depth: int = Field(..., ge=1)
    folner: list[list[int]]
    partition: str = Field(
        default="two-arc", description="\"two-arc\", \"uniform:N\" or \"uniform-schedule\""
    )
    cuts_per_level: list[int]
    members_per_level: list[int]
    census: dict[str, Any]
    sampling: dict[str, Any]
    composition_checked: int
    certificate: Certificate


class DensityRow(StrictModel):
    index: int = Field(..., ge=1)
    window_size: int = Field(..., ge=1)
    lo: Rational
    hi: Rational


class DensityArtifact(StrictModel):
    schema_version: str = SCHEMA_VERSION
    kind: Literal["density"] = "density"
    system: SystemConfig
    clopen: ClopenRecord
    exact: Rational | Interval
    curve: list[DensityRow]
    certificate: Certificate


class VerifiedFile(StrictModel):
    path: str
    kind: str
    certificate: Certificate


class VerificationArtifact(StrictModel):
    schema_version: str = SCHEMA_VERSION
    kind: Literal["verification"] = "verification"
    results: list[VerifiedFile]
    certificate: Certificate


Artifact = Annotated[
    CastleArtifact
    | TilingArtifact
    | WitnessArtifact
    | PartitionArtifact
    | GammaArtifact
    | RotationArtifact
    | DensityArtifact
    | VerificationArtifact,
    Field(discriminator="kind"),
]
