"""Conversion between domain objects and the py_common artifact schemas."""

import hashlib
import itertools
import json
import tomllib
from collections.abc import Iterable, Sequence
from fractions import Fraction
from pathlib import Path
from typing import Any

import numpy as np
import structlog
from py_common.metrics import record_claims
from py_common.schemas import (
    Artifact,
    Certificate,
    ClaimRecord,
    ClopenRecord,
    PieceRecord,
    PlacementRecord,
    SimpleFunctionRecord,
    StrictModel,
    SystemConfig,
    TowerRecord,
)
from pydantic import BaseModel, TypeAdapter

from castleforge.core.certificates import Claim, all_pass
from castleforge.core.comparison import ColoredWitness, Piece, SubequivalenceWitness
from castleforge.core.dynsys import (
    ClopenSet,
    SymbolicSystem,
    make_clopen,
    odometer,
    substitution,
)
from castleforge.core.errors import ConfigError, DescriptorMismatchError, InputError
from castleforge.core.gamma import SimpleFunction
from castleforge.core.group import Coords, FiniteSubset, GroupDescriptor
from castleforge.core.tiling import Castle, Placement, Tower

logger = structlog.get_logger()

_ARTIFACT = TypeAdapter(Artifact)


class SystemFile(StrictModel):
    """Top level of a system config file; unknown sections are rejected."""

    system: SystemConfig


# --- systems -------------------------------------------------------------------


def load_system_config(path: str | Path) -> SystemConfig:
    """Read a TOML system config.

    Raises:
        ConfigError: unreadable or malformed TOML
        pydantic.ValidationError: unknown keys or a kind/field mismatch
    """
    try:
        raw = tomllib.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"Cannot read system config {path}: {exc}") from exc
    return SystemFile.model_validate(raw).system


def build_system(cfg: SystemConfig) -> SymbolicSystem:
    if cfg.kind == "odometer":
        assert cfg.bases is not None
        return odometer(*cfg.bases)
    assert cfg.rules is not None
    return substitution(cfg.rules)


def system_config(sys: SymbolicSystem) -> SystemConfig:
    return SystemConfig.model_validate(sys.describe())


# --- group elements ------------------------------------------------------------------


def _coordinate(tok: str) -> range:
    lo, sep, hi = tok.partition("..")
    try:
        return range(int(lo), int(hi) + 1) if sep else range(int(lo), int(lo) + 1)
    except ValueError as exc:
        raise InputError(f"Bad coordinate {tok!r}") from exc


def parse_elements(descriptor: GroupDescriptor, text: str) -> FiniteSubset:
    """Parse element lists such as "-1,1", "0..99" or "1 0; 0 1; 0..3 0..3".

    Rank one: commas or semicolons separate elements. Higher rank: semicolons
    separate elements, commas or spaces separate coordinates. Any coordinate
    may be an inclusive range a..b; ranges expand to the full box.
    """
    items: list[Coords] = []
    if descriptor.dim == 1:
        tokens = [t.strip() for t in text.replace(";", ",").split(",")]
        for tok in filter(None, tokens):
            items.extend((v,) for v in _coordinate(tok))
    else:
        for tok in filter(None, (t.strip() for t in text.split(";"))):
            axes = [_coordinate(c) for c in tok.replace(",", " ").split()]
            items.extend(itertools.product(*axes))
    return FiniteSubset.of(descriptor, items)


def subset_rows(F: FiniteSubset) -> list[list[int]]:
    return [list(c) for c in F.elements]


def subset_from_rows(descriptor: GroupDescriptor, rows: Iterable[Sequence[int]]) -> FiniteSubset:
    return FiniteSubset.of(descriptor, [tuple(r) for r in rows])


# --- clopen sets and claims ------------------------------------------------------------


def clopen_record(A: ClopenSet) -> ClopenRecord:
    return ClopenRecord(level=A.level, atoms=[int(a) for a in A.indices])


def clopen_from_record(sys: SymbolicSystem, rec: ClopenRecord) -> ClopenSet:
    """Rebuild (and renormalize) a clopen set.

    Raises:
        InputError: an atom index outside the level
    """
    n = sys.atom_count(rec.level)
    bad = [a for a in rec.atoms if not 0 <= a < n]
    if bad:
        raise InputError(f"Atoms {bad[:5]} out of range for level {rec.level} ({n} atoms)")
    return make_clopen(sys, rec.level, rec.atoms)


def claim_records(claims: Iterable[Claim]) -> list[ClaimRecord]:
    return [
        ClaimRecord(
            name=c.name,
            value=c.value,
            relation=c.relation,  # type: ignore[arg-type]
            bound=c.bound,
            passed=c.passed,
            hard=c.hard,
            detail=c.detail,
        )
        for c in claims
    ]


def claims_from_records(records: Iterable[ClaimRecord]) -> list[Claim]:
    return [
        Claim(r.name, r.value, r.relation, r.bound, r.passed, r.hard, r.detail) for r in records
    ]


def inputs_digest(payload: dict[str, Any]) -> str:
    """sha256 of the canonical JSON of the run inputs."""
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def certificate(operation: str, digest: str, claims: Sequence[Claim]) -> Certificate:
    passed = sum(1 for c in claims if c.passed)
    record_claims(operation, passed, len(claims) - passed)
    return Certificate(
        operation=operation,
        inputs_digest=digest,
        claims=claim_records(claims),
        passed=all_pass(claims),
    )


# --- castles ---------------------------------------------------------------------------


def tower_records(castle: Castle) -> list[TowerRecord]:
    return [
        TowerRecord(base=clopen_record(t.base), shape=subset_rows(t.shape))
        for t in castle.towers
    ]


def castle_from_records(
    sys: SymbolicSystem, group: str, towers: Sequence[TowerRecord]
) -> Castle:
    desc = sys.descriptor
    if group != str(desc):
        raise DescriptorMismatchError(group, str(desc))
    return Castle(
        tuple(
            Tower(clopen_from_record(sys, t.base), subset_from_rows(desc, t.shape))
            for t in towers
        )
    )


# --- witnesses -------------------------------------------------------------------------


def piece_records(w: SubequivalenceWitness) -> list[PieceRecord]:
    return [
        PieceRecord(part=clopen_record(p.part), mover=list(p.mover), color=p.color)
        for p in w.pieces
    ]


def witness_from_records(
    sys: SymbolicSystem,
    source: ClopenRecord,
    target: ClopenRecord,
    pieces: Sequence[PieceRecord],
    transcript: Sequence[str] = (),
    colors: int = 1,
) -> SubequivalenceWitness:
    dim = sys.descriptor.dim
    parts = []
    for p in pieces:
        if len(p.mover) != dim:
            raise InputError(f"Mover {p.mover} has wrong arity for {sys.descriptor}")
        parts.append(Piece(clopen_from_record(sys, p.part), tuple(p.mover), p.color))
    A = clopen_from_record(sys, source)
    B = clopen_from_record(sys, target)
    if colors > 1:
        return ColoredWitness(A, B, tuple(parts), tuple(transcript), m=colors - 1)
    return SubequivalenceWitness(A, B, tuple(parts), tuple(transcript))


# --- tilings and simple functions ---------------------------------------------------------


def placement_records(placements: Iterable[Placement]) -> list[PlacementRecord]:
    return [PlacementRecord(tile=p.tile, center=list(p.center)) for p in placements]


def placements_from_records(records: Iterable[PlacementRecord]) -> list[Placement]:
    return sorted(Placement(r.tile, tuple(r.center)) for r in records)


def function_record(f: SimpleFunction) -> SimpleFunctionRecord:
    return SimpleFunctionRecord(
        level=f.level, denominator=f.denominator, numerators=[int(v) for v in f.numerators]
    )


def function_from_record(sys: SymbolicSystem, rec: SimpleFunctionRecord) -> SimpleFunction:
    if len(rec.numerators) != sys.atom_count(rec.level):
        raise InputError(
            f"{len(rec.numerators)} values for level {rec.level} "
            f"({sys.atom_count(rec.level)} atoms)"
        )
    return SimpleFunction(rec.level, np.asarray(rec.numerators, dtype=np.int64), rec.denominator)


# --- files -----------------------------------------------------------------------------


def dump(model: BaseModel) -> str:
    return model.model_dump_json(indent=2) + "\n"


def write_artifact(model: BaseModel, out: str | Path | None) -> str:
    """Write to `out` (or return the text for stdout)."""
    text = dump(model)
    if out is not None:
        Path(out).write_text(text, encoding="utf-8")
        logger.info("artifact_written", path=str(out), kind=getattr(model, "kind", None))
    return text


def load_artifact(path: str | Path) -> BaseModel:
    """Parse any artifact by its `kind`.

    Raises:
        ConfigError: the file cannot be read
        pydantic.ValidationError: schema violations
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"Cannot read artifact {path}: {exc}") from exc
    model: BaseModel = _ARTIFACT.validate_json(text)
    return model


def rational(text: str) -> Fraction:
    try:
        return Fraction(text.strip())
    except (ValueError, ZeroDivisionError) as exc:
        raise InputError(f"Bad rational {text!r}") from exc

