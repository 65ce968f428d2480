"""Subcommand handlers behind the `castleforge` CLI.

Subcommands:
- castle   - Ornstein-Weiss clopen castle (or the exact odometer tower)
- tile     - quasitiling of a finite region
- subequiv - greedy subequivalence witness A ≺ B
- match    - absorb a castle remainder into reserve levels
- divide   - almost divisibility of a clopen set
- gamma    - property-Γ witness functions
- rotate   - coding tree of an irrational rotation and its fibre census
- verify   - re-derive the claims of stored artifacts
- density  - exact density with a Følner-window convergence curve

Every handler returns an artifact carrying a Certificate; `run` writes it and
maps the outcome to the process exit status.
"""

import dataclasses
import sys as _sys
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

import structlog
from py_common.metrics import timed, write_metrics
from py_common.schemas import (
    CastleArtifact,
    Certificate,
    ClopenRecord,
    DensityArtifact,
    DensityRow,
    GammaArtifact,
    Interval,
    PartitionArtifact,
    RotationArtifact,
    SystemConfig,
    TilingArtifact,
    VerificationArtifact,
    VerifiedFile,
    WitnessArtifact,
)
from pydantic import BaseModel, ValidationError

from castleforge.config import settings
from castleforge.core.certificates import Claim, check, fmt, holds, reevaluate
from castleforge.core.comparison import (
    almost_divisible,
    choose_mover_window,
    match_to_partition,
    subequiv_greedy,
    verify_witness,
)
from castleforge.core.density import banach_density, window_density_bounds
from castleforge.core.dynsys import (
    ClopenSet,
    OdometerSystem,
    RationalInterval,
    SubstitutionSystem,
    SymbolicSystem,
    combine,
    congruence,
    cylinder,
    empty,
    make_clopen,
    whole,
)
from castleforge.core.errors import CastleforgeError, InputError
from castleforge.core.gamma import build_gamma_witness, gamma_claims, gamma_q
from castleforge.core.group import (
    folner_set,
    invariance_defect,
    parse_descriptor,
    symmetrize,
)
from castleforge.core.rotation import (
    RegularClosedPartition,
    build_refinement_sequence,
    coding_sample_check,
    disjoint_open_cover,
    fibre_census,
    member_diameter_claims,
    mesh_schedule,
    parse_quadratic,
    two_arc_partition,
    uniform_partition,
    verify_composition_rule,
)
from castleforge.core.tiling import (
    Castle,
    TileSet,
    castle_density,
    ow_castle,
    quasitile,
    rokhlin_castle,
    verify_castle,
    verify_tiling,
)
from castleforge.models.artifacts import (
    build_system,
    castle_from_records,
    certificate,
    claims_from_records,
    clopen_from_record,
    clopen_record,
    function_from_record,
    function_record,
    inputs_digest,
    load_artifact,
    load_system_config,
    parse_elements,
    piece_records,
    placement_records,
    placements_from_records,
    rational,
    subset_from_rows,
    subset_rows,
    tower_records,
    witness_from_records,
    write_artifact,
)

logger = structlog.get_logger()


@dataclass
class RunConfig:
    """One CLI invocation: the subcommand, shared flags and its own options."""

    command: str
    system: str | None = None
    out: str | None = None
    jobs: int = field(default_factory=lambda: settings.JOBS)
    metrics_file: str | None = None
    options: dict[str, Any] = field(default_factory=dict)


# --- shared parsing ------------------------------------------------------------


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.replace(";", ",").split(",") if t.strip()]
    except ValueError as exc:
        raise InputError(f"Bad integer list {text!r}") from exc


def _int(text: str) -> int:
    try:
        return int(text.strip())
    except ValueError as exc:
        raise InputError(f"Bad integer {text!r}") from exc


def parse_clopen(sys: SymbolicSystem, text: str) -> ClopenSet:
    """Parse a clopen set.

    Forms: "all", "empty", "LEVEL:a,b,..." (atom indices), "mod M:r,..."
    (residue classes on Z-odometers), "word:w@anchor" (substitution cylinders).
    """
    t = text.strip()
    if t in ("all", "X"):
        return whole(sys)
    if t == "empty":
        return empty()
    head, sep, rest = t.partition(":")
    if not sep:
        raise InputError(f"Bad clopen set {text!r}")
    head = head.strip()
    if head.startswith("mod"):
        if not isinstance(sys, OdometerSystem):
            raise InputError("residue classes need an odometer")
        return congruence(sys, _int(head[3:]), _ints(rest))
    if head == "word":
        if not isinstance(sys, SubstitutionSystem):
            raise InputError("cylinders need a substitution system")
        word, _, anchor = rest.partition("@")
        return cylinder(sys, word.strip(), _int(anchor) if anchor.strip() else 0)
    return clopen_from_record(sys, ClopenRecord(level=_int(head), atoms=_ints(rest)))


def _load_system(config: RunConfig) -> tuple[SystemConfig, SymbolicSystem]:
    if not config.system:
        raise InputError(f"`{config.command}` needs --system")
    cfg = load_system_config(config.system)
    return cfg, build_system(cfg)


def _digest(config: RunConfig, system: SystemConfig | None) -> str:
    payload = {
        "command": config.command,
        "system": system.model_dump() if system is not None else None,
        "options": config.options,
    }
    return inputs_digest(payload)


def _opt(config: RunConfig, name: str) -> Any:
    value = config.options.get(name)
    if value is None:
        raise InputError(f"`{config.command}` needs --{name.replace('_', '-')}")
    return value


def _measure_text(m: Fraction | RationalInterval) -> str | Interval:
    if isinstance(m, RationalInterval):
        return Interval(lo=fmt(m.lo), hi=fmt(m.hi))
    return fmt(m)


def _recorded(claims: list[Claim]) -> Claim:
    stale = [c.name for c in claims if reevaluate(c) != c.passed]
    return holds("recorded_claims_reproduce", not stale, f"stale: {stale[:5]}" if stale else "")


# --- castle ------------------------------------------------------------------


def castle_command(config: RunConfig) -> CastleArtifact:
    system, sys = _load_system(config)
    opts = config.options
    if opts.get("rokhlin") is not None:
        if not isinstance(sys, OdometerSystem):
            raise InputError("--rokhlin needs an odometer")
        castle = rokhlin_castle(sys, int(opts["rokhlin"]))
    else:
        K = parse_elements(sys.descriptor, _opt(config, "K"))
        castle = ow_castle(
            sys,
            K,
            rational(_opt(config, "delta")),
            rational(_opt(config, "eps")),
            stages=opts.get("stages"),
            index_bound=opts.get("index_bound"),
        )
    return CastleArtifact(
        system=system,
        group=str(sys.descriptor),
        towers=tower_records(castle),
        provenance=castle.provenance,
        certificate=certificate("castle", _digest(config, system), castle.claims),
    )


def _castle_claims(sys: SymbolicSystem, castle: Castle) -> list[Claim]:
    prov = castle.provenance
    K = delta = None
    if "K" in prov and "delta" in prov:
        K = subset_from_rows(sys.descriptor, prov["K"])
        delta = rational(prov["delta"])
    if "matched" in prov:
        claims = verify_castle(sys, castle)
        if K is not None and delta is not None and castle.towers:
            slack = delta + 2 * rational(prov.get("reserve_fraction", "0"))
            realized = max(
                (invariance_defect(t.shape, K) for t in castle.towers if len(t.shape)),
                default=Fraction(0),
            )
            claims.append(check("matched_shape_defect", realized, "<=", slack, hard=False))
    else:
        claims = verify_castle(sys, castle, K, delta)
    if "matched" in prov or prov.get("operation") == "rokhlin_castle":
        claims.append(check("footprint_is_x", castle_density(sys, castle), "==", 1))
    elif "eps" in prov:
        target = 1 - rational(prov["eps"])
        claims.append(
            check("footprint_density", castle_density(sys, castle), ">=", target, hard=False)
        )
    return claims


# --- tile ----------------------------------------------------------------------


def tile_command(config: RunConfig) -> TilingArtifact:
    desc = parse_descriptor(config.options.get("group") or "Z")
    K = parse_elements(desc, _opt(config, "K"))
    E = parse_elements(desc, _opt(config, "region"))
    delta, eps = rational(_opt(config, "delta")), rational(_opt(config, "eps"))
    base = [parse_elements(desc, t) for t in config.options.get("tiles") or []] or None
    tileset, placements = quasitile(K, delta, eps, E, base)
    claims = verify_tiling(tileset, placements, E, eps)
    return TilingArtifact(
        group=str(desc),
        K=subset_rows(K),
        delta=fmt(delta),
        eps=fmt(eps),
        region=subset_rows(E),
        tiles=[subset_rows(T) for T in tileset.tiles],
        defects=[fmt(d) for d in tileset.defects],
        placements=placement_records(placements),
        certificate=certificate("tile", _digest(config, None), claims),
    )


def _tiling_claims(art: TilingArtifact) -> list[Claim]:
    desc = parse_descriptor(art.group)
    K = subset_from_rows(desc, art.K)
    tiles = tuple(subset_from_rows(desc, t) for t in art.tiles)
    delta = rational(art.delta)
    tileset = TileSet(tiles, K, delta, tuple(invariance_defect(T, K) for T in tiles))
    placements = placements_from_records(art.placements)
    if any(p.tile >= len(tiles) for p in placements):
        raise InputError("placement refers to a missing tile")
    return verify_tiling(
        tileset, placements, subset_from_rows(desc, art.region), rational(art.eps)
    )


# --- subequivalence, matching, division ---------------------------------------------


def subequiv_command(config: RunConfig) -> WitnessArtifact:
    system, sys = _load_system(config)
    A = parse_clopen(sys, _opt(config, "source"))
    B = parse_clopen(sys, _opt(config, "target"))
    window = config.options.get("window")
    if window:
        F = parse_elements(sys.descriptor, window)
    else:
        F = choose_mover_window(sys, A, B, index_bound=config.options.get("index_bound"))
    witness = subequiv_greedy(sys, A, B, F)
    return WitnessArtifact(
        system=system,
        group=str(sys.descriptor),
        source=clopen_record(A),
        target=clopen_record(B),
        pieces=piece_records(witness),
        transcript=list(witness.transcript),
        certificate=certificate(
            "subequiv", _digest(config, system), verify_witness(sys, witness)
        ),
    )


def match_command(config: RunConfig) -> CastleArtifact:
    art = load_artifact(_opt(config, "castle"))
    if not isinstance(art, CastleArtifact):
        raise InputError(f"--castle expects a castle artifact, got {getattr(art, 'kind', '?')}")
    sys = build_system(art.system)
    castle = dataclasses.replace(
        castle_from_records(sys, art.group, art.towers), provenance=dict(art.provenance)
    )
    F = parse_elements(sys.descriptor, _opt(config, "window"))
    K = delta = None
    if "K" in art.provenance and "delta" in art.provenance:
        K = subset_from_rows(sys.descriptor, art.provenance["K"])
        delta = rational(art.provenance["delta"])
    reserve = config.options.get("reserve")
    out = match_to_partition(sys, castle, F, rational(reserve) if reserve else None, K, delta)
    provenance = dict(out.provenance)
    provenance.setdefault("matched", 0)
    out = dataclasses.replace(out, provenance=provenance)
    claims = list(out.claims) or _castle_claims(sys, out)
    return CastleArtifact(
        system=art.system,
        group=art.group,
        towers=tower_records(out),
        provenance=provenance,
        certificate=certificate("match", _digest(config, art.system), claims),
    )


def divide_command(config: RunConfig) -> PartitionArtifact:
    system, sys = _load_system(config)
    U = parse_clopen(sys, _opt(config, "set"))
    division = almost_divisible(sys, U, int(_opt(config, "m")), rational(_opt(config, "eta")))
    return PartitionArtifact(
        system=system,
        members=[clopen_record(P) for P in division.parts],
        certificate=certificate("divide", _digest(config, system), division.claims),
    )


def _partition_claims(sys: SymbolicSystem, members: list[ClopenSet]) -> list[Claim]:
    clash = [
        (i, j)
        for i in range(len(members))
        for j in range(i + 1, len(members))
        if not combine(sys, "intersect", members[i], members[j]).empty
    ]
    return [holds("members_disjoint", not clash, f"overlapping pairs: {clash[:5]}")]


# --- gamma -----------------------------------------------------------------------


def _partition_members(config: RunConfig, sys: SymbolicSystem) -> list[ClopenSet]:
    path = config.options.get("partition")
    if path:
        art = load_artifact(path)
        if not isinstance(art, PartitionArtifact):
            raise InputError("--partition expects a partition artifact")
        return [clopen_from_record(sys, m) for m in art.members]
    level = int(config.options.get("partition_level") or 0)
    return [make_clopen(sys, level, [a]) for a in range(sys.atom_count(level))]


def gamma_command(config: RunConfig) -> GammaArtifact:
    system, sys = _load_system(config)
    L = parse_elements(sys.descriptor, _opt(config, "L"))
    eps = rational(_opt(config, "eps"))
    P = _partition_members(config, sys)
    witness = build_gamma_witness(sys, L, eps, P)
    return GammaArtifact(
        system=system,
        group=str(sys.descriptor),
        L=subset_rows(L),
        eps=fmt(eps),
        Q=witness.Q,
        partition=[clopen_record(A) for A in P],
        f1=function_record(witness.f1),
        f2=function_record(witness.f2),
        info=witness.info,
        certificate=certificate("gamma", _digest(config, system), witness.claims),
    )


def _gamma_claims(art: GammaArtifact) -> list[Claim]:
    sys = build_system(art.system)
    L = subset_from_rows(sys.descriptor, art.L)
    eps = rational(art.eps)
    f1 = function_from_record(sys, art.f1)
    f2 = function_from_record(sys, art.f2)
    P = [clopen_from_record(sys, m) for m in art.partition]
    claims, _ = gamma_claims(sys, f1, f2, symmetrize(L), eps, P)
    claims.append(
        holds(
            "granularity_matches_eps",
            art.Q == gamma_q(eps) == f1.denominator == f2.denominator,
            f"Q={art.Q}",
        )
    )
    return claims


# --- rotation ------------------------------------------------------------------------


def _rotation_partitions(name: str, alpha: Any, depth: int) -> list[RegularClosedPartition]:
    if name == "two-arc":
        return [two_arc_partition(alpha)]
    if name == "uniform-schedule":
        return mesh_schedule(depth)
    head, _, n = name.partition(":")
    if head == "uniform" and n:
        return [uniform_partition(_int(n))]
    raise InputError(f"Unknown rotation partition {name!r}")


def rotation_report(
    alpha_text: str,
    depth: int,
    folner: list[int],
    partition: str = "two-arc",
    samples: int = 10_000,
    cover_eps: Fraction | None = None,
) -> tuple[dict[str, Any], list[Claim]]:
    """Coding tree, fibre census, sampled codings and the composition rule."""
    alpha = parse_quadratic(alpha_text)
    tree = build_refinement_sequence(
        alpha, _rotation_partitions(partition, alpha, depth), [folner], depth
    )
    census, claims = fibre_census(tree)
    claims += member_diameter_claims(tree)
    if partition == "uniform-schedule":
        claims += [
            holds(f"mesh_schedule_{k}", P.mesh() <= Fraction(1, k), f"mesh {P.mesh()}")
            for k, P in enumerate(tree.partitions, start=1)
        ]
    sampling, sample_claims = coding_sample_check(tree, samples)
    checked, bad = verify_composition_rule(tree)
    claims += sample_claims
    claims.append(holds("composition_rule", not bad, "; ".join(bad[:3])))
    if cover_eps is not None:
        cover = disjoint_open_cover(cover_eps, tree=tree)
        claims += cover.claims
        census["cover_arcs"] = len(cover.arcs)
    report = {
        "alpha": str(alpha),
        "depth": depth,
        "folner": [list(F) for F in tree.folner],
        "partition": partition,
        "cuts_per_level": [len(Q) for Q in tree.levels],
        "members_per_level": [len(Q.members()) for Q in tree.levels],
        "census": census,
        "sampling": sampling,
        "composition_checked": checked,
    }
    return report, claims


def rotate_command(config: RunConfig) -> RotationArtifact:
    opts = config.options
    cover = opts.get("cover_eps")
    report, claims = rotation_report(
        _opt(config, "alpha"),
        int(_opt(config, "depth")),
        _ints(opts.get("folner") or "-1,0,1"),
        opts.get("partition") or "two-arc",
        int(opts.get("samples") or 10_000),
        rational(cover) if cover else None,
    )
    return RotationArtifact(
        **report, certificate=certificate("rotate", _digest(config, None), claims)
    )


def _rotation_claims(art: RotationArtifact) -> list[Claim]:
    folner = art.folner[0] if art.folner else [0]
    report, claims = rotation_report(
        art.alpha, art.depth, folner, art.partition, int(art.sampling.get("samples", 10_000))
    )
    claims.append(
        holds(
            "census_reproduces",
            report["census"]["locus"] == art.census.get("locus")
            and report["cuts_per_level"] == art.cuts_per_level,
        )
    )
    return claims


# --- density ------------------------------------------------------------------------


def density_curve(
    sys: SymbolicSystem, A: ClopenSet, max_index: int, jobs: int = 1
) -> list[DensityRow]:
    """Window brackets [min_x, max_x] of |A ∩ F_n x|/|F_n| for n = 1, 2, 4, ..., max_index."""
    indices = sorted({min(1 << k, max_index) for k in range(max_index.bit_length() + 1)})

    def row(index: int) -> DensityRow:
        F = folner_set(sys.descriptor, index)
        lo, hi = window_density_bounds(sys, A, F)
        return DensityRow(index=index, window_size=len(F), lo=fmt(lo), hi=fmt(hi))

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        return list(pool.map(row, indices))


def _curve_claims(exact: Fraction | RationalInterval, rows: list[DensityRow]) -> list[Claim]:
    lo_exact = exact.lo if isinstance(exact, RationalInterval) else exact
    hi_exact = exact.hi if isinstance(exact, RationalInterval) else exact
    return [
        holds(
            f"window_{r.index}_brackets_density",
            rational(r.lo) <= hi_exact and lo_exact <= rational(r.hi),
            f"[{r.lo}, {r.hi}]",
        )
        for r in rows
    ]


def density_command(config: RunConfig) -> DensityArtifact:
    system, sys = _load_system(config)
    A = parse_clopen(sys, _opt(config, "set"))
    exact = banach_density(sys, A)
    rows = density_curve(sys, A, int(config.options.get("max_index") or 64), config.jobs)
    return DensityArtifact(
        system=system,
        clopen=clopen_record(A),
        exact=_measure_text(exact),
        curve=rows,
        certificate=certificate("density", _digest(config, system), _curve_claims(exact, rows)),
    )


def _density_claims(art: DensityArtifact) -> list[Claim]:
    sys = build_system(art.system)
    A = clopen_from_record(sys, art.clopen)
    exact = banach_density(sys, A)
    claims = _curve_claims(exact, art.curve)
    claims.append(holds("exact_reproduces", _measure_text(exact) == art.exact))
    for r in art.curve:
        F = folner_set(sys.descriptor, r.index)
        lo, hi = window_density_bounds(sys, A, F)
        claims.append(
            holds(f"window_{r.index}_reproduces", (fmt(lo), fmt(hi)) == (r.lo, r.hi))
        )
    return claims


# --- verify -------------------------------------------------------------------------


def artifact_claims(art: BaseModel) -> list[Claim]:
    """Recompute the claims of any stored artifact from its payload alone."""
    if isinstance(art, CastleArtifact):
        sys = build_system(art.system)
        castle = dataclasses.replace(
            castle_from_records(sys, art.group, art.towers), provenance=dict(art.provenance)
        )
        claims = _castle_claims(sys, castle)
    elif isinstance(art, TilingArtifact):
        claims = _tiling_claims(art)
    elif isinstance(art, WitnessArtifact):
        sys = build_system(art.system)
        w = witness_from_records(
            sys, art.source, art.target, art.pieces, art.transcript, art.colors
        )
        claims = verify_witness(sys, w)
    elif isinstance(art, PartitionArtifact):
        sys = build_system(art.system)
        claims = _partition_claims(sys, [clopen_from_record(sys, m) for m in art.members])
    elif isinstance(art, GammaArtifact):
        claims = _gamma_claims(art)
    elif isinstance(art, RotationArtifact):
        claims = _rotation_claims(art)
    elif isinstance(art, DensityArtifact):
        claims = _density_claims(art)
    elif isinstance(art, VerificationArtifact):
        claims = [holds(f"file[{r.path}]", r.certificate.passed) for r in art.results]
    else:
        raise InputError(f"Cannot verify {type(art).__name__}")
    recorded = getattr(art, "certificate", None)
    if recorded is not None:
        claims.append(_recorded(claims_from_records(recorded.claims)))
    return claims


def verify_file(path: str) -> VerifiedFile:
    art = load_artifact(path)
    kind = str(getattr(art, "kind", "?"))
    with timed("verify"):
        claims = artifact_claims(art)
    digest = art.certificate.inputs_digest if getattr(art, "certificate", None) else ""
    return VerifiedFile(path=path, kind=kind, certificate=certificate("verify", digest, claims))


def verify_command(config: RunConfig) -> VerificationArtifact:
    paths = list(_opt(config, "artifacts"))
    with ThreadPoolExecutor(max_workers=max(1, config.jobs)) as pool:
        results = list(pool.map(verify_file, paths))
    claims = [holds(f"file[{r.path}]", r.certificate.passed) for r in results]
    for r in results:
        if not r.certificate.passed:
            logger.warning(
                "artifact_rejected",
                path=r.path,
                kind=r.kind,
                failed=[c.name for c in r.certificate.claims if c.hard and not c.passed],
                details=[c.detail for c in r.certificate.claims if c.hard and not c.passed],
            )
    return VerificationArtifact(
        results=results,
        certificate=certificate("verify", _digest(config, None), claims),
    )


# --- dispatch -----------------------------------------------------------------------


HANDLERS: dict[str, Callable[[RunConfig], BaseModel]] = {
    "castle": castle_command,
    "tile": tile_command,
    "subequiv": subequiv_command,
    "match": match_command,
    "divide": divide_command,
    "gamma": gamma_command,
    "rotate": rotate_command,
    "verify": verify_command,
    "density": density_command,
}


def _error_context(exc: CastleforgeError) -> dict[str, Any]:
    context = {
        k: v if isinstance(v, (int, str, bool)) else str(v)
        for k, v in vars(exc).items()
        if not k.startswith("_")
    }
    failed = getattr(exc, "failed", None)
    if failed:
        context["failed"] = [f"{c.name}: {c.value} {c.relation} {c.bound}" for c in failed]
    return context


def run(config: RunConfig) -> int:
    """Run one subcommand; returns the exit status.

    0 when every hard claim passes, 1 on a failed claim or construction,
    2 on malformed input, 3 on a violated precondition.
    """
    handler = HANDLERS.get(config.command)
    if handler is None:
        logger.error("unknown_command", command=config.command)
        return 2
    logger.info("command_started", command=config.command, jobs=config.jobs)
    try:
        with timed(config.command):
            artifact = handler(config)
    except ValidationError as exc:
        logger.error("input_invalid", command=config.command, errors=exc.errors(), exit_code=2)
        return 2
    except CastleforgeError as exc:
        logger.error(
            "command_failed",
            command=config.command,
            error_type=type(exc).__name__,
            error=str(exc),
            exit_code=exc.exit_code,
            **_error_context(exc),
        )
        return exc.exit_code
    finally:
        if config.metrics_file:
            write_metrics(config.metrics_file)

    text = write_artifact(artifact, config.out)
    if config.out is None:
        _sys.stdout.write(text)
    cert: Certificate = artifact.certificate  # type: ignore[attr-defined]
    if not cert.passed:
        logger.warning(
            "claims_failed",
            command=config.command,
            failed=[c.name for c in cert.claims if c.hard and not c.passed],
        )
        return 1
    logger.info("command_finished", command=config.command, claims=len(cert.claims))
    return 0
