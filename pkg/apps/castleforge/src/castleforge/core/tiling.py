"""Towers, castles and the Ornstein–Weiss constructions over symbolic systems.

- `clopen_castle_step`: one greedy stage, atom by atom in canonical order
- `ow_castle`: stacks stages over a Følner schedule until the footprint has
  density at least 1 − ε
- `quasitile`: group-level almost tiling of a finite region
- `castle_refine_by_partition`: split tower bases by their itineraries
"""

import math
from collections import deque
from collections.abc import Callable, Iterator, Sequence
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

import numpy as np
import structlog
from py_common.metrics import ATOMS_SWEPT, timed

from castleforge.config import settings
from castleforge.core.certificates import Claim, check, failures, fmt, holds
from castleforge.core.density import density_growth_check, union_star_check
from castleforge.core.dynsys import (
    ClopenSet,
    Measure,
    OdometerSystem,
    SymbolicSystem,
    combine,
    diameter_level,
    disjoint,
    empty,
    freeness_certificate,
    from_mask,
    indicator,
    lower,
    make_clopen,
    measure,
    translate,
    translate_mask,
    union_all,
    window_counts,
)
from castleforge.core.errors import (
    FolnerExhaustedError,
    InputError,
    InsufficientInvarianceError,
    LevelTooCoarseError,
    PartitionError,
    VerificationError,
)
from castleforge.core.group import (
    Coords,
    FiniteSubset,
    FolnerFamily,
    almost_invariant_margin,
    inv_coords,
    invariance_defect,
    inverse_set,
    mul_coords,
    product_set,
)

logger = structlog.get_logger()


@dataclass(frozen=True)
class Tower:
    """Base V and shape S; the levels sV (s ∈ S) are pairwise disjoint."""

    base: ClopenSet
    shape: FiniteSubset


@dataclass(frozen=True)
class Castle:
    towers: tuple[Tower, ...]
    provenance: dict[str, Any] = field(default_factory=dict, compare=False, hash=False)
    claims: tuple[Claim, ...] = field(default=(), compare=False)

    def __len__(self) -> int:
        return len(self.towers)


def difference_set(S: FiniteSubset) -> FiniteSubset:
    """S⁻¹S ∪ SS⁻¹."""
    inv = inverse_set(S)
    return product_set(inv, S).union(product_set(S, inv))


def castle_level(sys: SymbolicSystem, castle: Castle) -> int:
    """A level at which every castle level sV is a union of atoms."""
    return max((t.base.level + sys.loss_set(t.shape) for t in castle.towers), default=0)


def level_masks(
    sys: SymbolicSystem, castle: Castle, level: int
) -> Iterator[tuple[int, Coords, np.ndarray]]:
    for i, t in enumerate(castle.towers):
        for s in t.shape.elements:
            yield i, s, translate_mask(sys, t.base, s, level)


def occupancy(sys: SymbolicSystem, castle: Castle, level: int) -> np.ndarray:
    counts = np.zeros(sys.atom_count(level), dtype=np.int64)
    for _, _, mask in level_masks(sys, castle, level):
        counts += mask
    return counts


def footprint(sys: SymbolicSystem, castle: Castle) -> ClopenSet:
    """⋃ S_i V_i."""
    if not castle.towers:
        return empty()
    level = castle_level(sys, castle)
    return from_mask(sys, level, occupancy(sys, castle, level) > 0)


def remainder(sys: SymbolicSystem, castle: Castle) -> ClopenSet:
    return combine(sys, "complement", footprint(sys, castle))


def castle_density(sys: SymbolicSystem, castle: Castle) -> Measure:
    return measure(sys, footprint(sys, castle))


def _collisions(sys: SymbolicSystem, castle: Castle, level: int, atoms: np.ndarray) -> str:
    where: dict[int, list[str]] = {int(a): [] for a in atoms}
    for i, s, mask in level_masks(sys, castle, level):
        for a in where:
            if mask[a]:
                where[a].append(f"tower {i} level {s[0] if len(s) == 1 else s}")
    return "; ".join(
        f"atom {sys.atom_label(level, a)} (level {level}) in {', '.join(hits)}"
        for a, hits in where.items()
    )


def verify_castle(
    sys: SymbolicSystem,
    castle: Castle,
    K: FiniteSubset | None = None,
    delta: Fraction | None = None,
) -> list[Claim]:
    """Independent checks: pairwise disjoint levels, shape invariance, density."""
    level = castle_level(sys, castle)
    counts = occupancy(sys, castle, level)
    clash = np.nonzero(counts > 1)[0]
    detail = _collisions(sys, castle, level, clash[:5]) if len(clash) else ""
    claims = [holds("levels_disjoint", not len(clash), detail)]
    if K is not None and delta is not None and castle.towers:
        worst = max(
            (invariance_defect(t.shape, K) for t in castle.towers if len(t.shape)),
            default=Fraction(0),
        )
        claims.append(check("shape_invariance", worst, "<", delta))
    if castle.towers and not len(clash):
        claims.append(
            check("footprint_density", castle_density(sys, castle), ">=", 0, hard=False)
        )
    return claims


# --- the clopen castle step ---------------------------------------------------


def _sweep_exact(
    sys: SymbolicSystem, Y: ClopenSet, S: FiniteSubset, threshold: Fraction, level: int
) -> tuple[list[tuple[int, int, tuple[int, ...]]], int]:
    assert isinstance(sys, OdometerSystem)
    acc = indicator(sys, Y, level).copy()
    rows = S.array
    joined = []
    for v in range(sys.atom_count(level)):
        img = sys.orbit_indices(level, v, rows)
        free = ~acc[img]
        if int(free.sum()) >= threshold:
            acc[img[free]] = True
            joined.append((level, v, tuple(int(i) for i in np.nonzero(free)[0])))
    return joined, 0


def _sweep_refining(
    sys: SymbolicSystem, Y: ClopenSet, S: FiniteSubset, threshold: Fraction, level: int
) -> tuple[list[tuple[int, int, tuple[int, ...]]], int]:
    """Greedy sweep for systems whose translates straddle atoms.

    An atom v whose translate s·v is partly inside the accumulated set is
    replaced by its children; atoms past MAX_REFINE_DEPTH treat partial
    overlap as occupied.
    """
    r = sys.loss_set(S)
    res = max(Y.level, level + r)
    acc = indicator(sys, Y, res).copy()
    inverses = [inv_coords(S.descriptor, s) for s in S.elements]
    cap = level + settings.MAX_REFINE_DEPTH
    work = deque((level, v) for v in range(sys.atom_count(level)))
    joined = []
    capped = 0
    while work:
        lv, v = work.popleft()
        need = max(res, lv + r)
        if need > res:
            acc = acc[sys.coarsen_index(need, res)]
            res = need
        images = [sys.shift_index(res, g, lv) == v for g in inverses]
        hit_any = np.array([bool(acc[m].any()) for m in images])
        hit_all = np.array([bool(acc[m].all()) for m in images])
        partial = hit_any & ~hit_all
        if partial.any():
            if lv < cap:
                children = np.nonzero(sys.coarsen_index(lv + 1, lv) == v)[0]
                work.extendleft((lv + 1, int(c)) for c in children[::-1])
                continue
            capped += 1
        free = ~hit_any
        if int(free.sum()) >= threshold:
            for i in np.nonzero(free)[0]:
                acc[images[i]] = True
            joined.append((lv, v, tuple(int(i) for i in np.nonzero(free)[0])))
    return joined, capped


def clopen_step_claims(
    sys: SymbolicSystem, Y: ClopenSet, S: FiniteSubset, eps: Fraction, castle: Castle
) -> list[Claim]:
    A = footprint(sys, castle)
    claims = verify_castle(sys, castle)
    claims.append(
        holds(
            "shapes_large",
            all(t.shape.issubset(S) and len(t.shape) >= (1 - eps) * len(S) for t in castle.towers),
        )
    )
    claims.append(holds("footprint_avoids_y", disjoint(sys, Y, A)))
    spread = union_all(
        sys, (translate(sys, t.base, s) for t in castle.towers for s in S.elements)
    )
    YA = combine(sys, "union", Y, A)
    claims.append(holds("footprint_closes_y", YA == combine(sys, "union", Y, spread)))
    _, counts = window_counts(sys, YA, S)
    claims.append(check("window_hits", Fraction(int(counts.min()), len(S)), ">=", eps))
    return claims


def clopen_castle_step(
    sys: SymbolicSystem, Y: ClopenSet, S: FiniteSubset, eps: Fraction, level: int
) -> Castle:
    """One greedy stage: towers with shapes S_i ⊆ S, |S_i| ≥ (1−ε)|S|, avoiding Y.

    Every level atom v receives T(v) = {s ∈ S : s·v misses the accumulated set}
    and joins a tower with shape T(v) iff |T(v)| ≥ (1−ε)|S|. Afterwards
    |(Y ∪ A) ∩ Sx| ≥ ε|S| holds at every point.

    Raises:
        InputError: ε outside (0, 1/2) or empty S
        LevelTooCoarseError: level below the freeness level of S⁻¹S ∪ SS⁻¹,
            or translates still straddle atoms after MAX_REFINE_DEPTH splits
        VerificationError: a postcondition failed on re-check
    """
    eps = Fraction(eps)
    if not 0 < eps < Fraction(1, 2):
        raise InputError(f"ε must lie in (0, 1/2), got {eps}")
    if not len(S):
        raise InputError("shape S must be nonempty")
    need = freeness_certificate(sys, difference_set(S))
    if level < need:
        raise LevelTooCoarseError(level, need, "shape translates overlap at this level")
    threshold = (1 - eps) * len(S)
    if sys.exact_translation:
        work_level = max(level, Y.level)
        joined, capped = _sweep_exact(sys, Y, S, threshold, work_level)
    else:
        joined, capped = _sweep_refining(sys, Y, S, threshold, level)

    grouped: dict[tuple[int, ...], dict[int, list[int]]] = {}
    for lv, v, free in joined:
        grouped.setdefault(free, {}).setdefault(lv, []).append(v)
    towers = []
    for free, by_level in grouped.items():
        base = union_all(sys, (make_clopen(sys, lv, atoms) for lv, atoms in by_level.items()))
        shape = FiniteSubset(S.descriptor, tuple(S.elements[i] for i in free))
        towers.append(Tower(base, shape))
    towers.sort(key=lambda t: (-len(t.shape), t.shape.elements, t.base.level, sorted(t.base.atoms)))
    castle = Castle(tuple(towers))
    ATOMS_SWEPT.labels(operation="clopen_castle_step").inc(sys.atom_count(level))

    claims = clopen_step_claims(sys, Y, S, eps, castle)
    failed = failures(claims)
    if failed:
        if capped:
            raise LevelTooCoarseError(
                level, level + 1, f"{capped} atoms still straddle the footprint after refinement"
            )
        raise VerificationError("clopen castle step failed its postconditions", failed)
    logger.debug(
        "clopen_step_swept",
        level=level,
        shape_size=len(S),
        joined=len(joined),
        towers=len(towers),
        refined=any(lv > level for lv, _, _ in joined),
    )
    return Castle(castle.towers, {"level": level, "eps": fmt(eps)}, tuple(claims))


# --- the Ornstein–Weiss castle ------------------------------------------------


def _geometric_first(
    family: FolnerFamily, ok: Callable[[FiniteSubset], bool], start: int, bound: int
) -> tuple[int, FiniteSubset] | None:
    """Smallest index ≥ start passing `ok`, found by doubling then bisection."""
    prev, n = start - 1, start
    while not ok(family[n]):
        if n >= bound:
            return None
        prev, n = n, min(2 * n, bound)
    lo, hi = prev + 1, n
    while lo < hi:
        mid = (lo + hi) // 2
        if ok(family[mid]):
            hi = mid
        else:
            lo = mid + 1
    return hi, family[hi]


def stage_count(eps1: Fraction) -> int:
    """Smallest n with (1 − ε′)^n < ε′."""
    n, p = 1, 1 - eps1
    while p >= eps1:
        p *= 1 - eps1
        n += 1
    return n


def choose_beta(eps: Fraction, eps1: Fraction, n: int) -> Fraction:
    """First β = 2^-j with (1+β)⁻¹(1 − (1 − (1+β)ε′)^n) > 1 − ε."""
    for j in range(0, 256):
        beta = Fraction(1, 2**j)
        if (1 - (1 - (1 + beta) * eps1) ** n) / (1 + beta) > 1 - eps:
            return beta
    raise InputError(f"No dyadic β found for ε={eps}, ε′={eps1}, n={n}")


def stage_sets(
    K: FiniteSubset,
    eps1: Fraction,
    beta: Fraction,
    t: int,
    index_bound: int | None = None,
) -> list[tuple[int, FiniteSubset]]:
    """F_1, …, F_t: each (K, ε′)-invariant, F_i (F_j⁻¹, β(1−ε′))-invariant for j < i.

    Raises:
        FolnerExhaustedError: carrying the (i, j) pair that could not be met
    """
    family = FolnerFamily(K.descriptor)
    bound = index_bound if index_bound is not None else settings.MAX_FOLNER_INDEX
    cross = beta * (1 - eps1)
    chosen: list[tuple[int, FiniteSubset]] = []
    for i in range(1, t + 1):
        start = 2 * chosen[-1][0] if chosen else 1
        inverses = [inverse_set(F) for _, F in chosen]

        def ok(F: FiniteSubset, inverses: list[FiniteSubset] = inverses) -> bool:
            return invariance_defect(F, K) < eps1 and all(
                invariance_defect(F, J) < cross for J in inverses
            )

        found = _geometric_first(family, ok, start, bound) if start <= bound else None
        if found is None:
            F = family[min(start, bound)]
            j = next(
                (j + 1 for j, J in enumerate(inverses) if invariance_defect(F, J) >= cross), 0
            )
            raise FolnerExhaustedError(
                f"No Følner member up to index {bound} is stage set {i}"
                + (f" (cross-invariance against F_{j} fails)" if j else ""),
                pair=(i, j),
                index_bound=bound,
            )
        chosen.append(found)
    return chosen


def recursion_bound(beta: Fraction, eps1: Fraction, depth: int) -> Fraction:
    """(1+β)⁻¹(1 − (1 − ε′(1+β))^depth)."""
    return (1 - (1 - eps1 * (1 + beta)) ** depth) / (1 + beta)


def _build_stages(
    sys: SymbolicSystem,
    K: FiniteSubset,
    delta: Fraction,
    eps: Fraction,
    eps1: Fraction,
    beta: Fraction,
    sets: list[tuple[int, FiniteSubset]],
) -> tuple[list[Tower], list[Claim], dict[str, Any]]:
    t = len(sets)
    largest = sets[-1][1]
    level = max(
        max(freeness_certificate(sys, difference_set(F)) for _, F in sets),
        diameter_level(delta),
        sys.level_for_atoms(len(largest) * math.ceil(1 / eps)),
    )
    Y = empty()
    towers: list[Tower] = []
    claims: list[Claim] = []
    densities = []
    for i in range(t, 0, -1):
        F = sets[i - 1][1]
        stage = clopen_castle_step(sys, Y, F, eps1, level)
        A = footprint(sys, stage)
        grown = combine(sys, "union", Y, A)
        claims += density_growth_check(sys, grown, Y, F, eps1, beta, largest)
        bound = recursion_bound(beta, eps1, t + 1 - i)
        stage_density = measure(sys, grown)
        claims.append(check(f"stage_{i}_recursion_bound", stage_density, ">=", bound))
        claims += [c for c in stage.claims if c.name in ("shapes_large", "window_hits")]
        logger.info(
            "castle_stage_built",
            stage=i,
            towers=len(stage),
            shape_size=len(F),
            density=str(stage_density),
        )
        densities.append(fmt(stage_density))
        towers += stage.towers
        Y = grown
    return towers, claims, {"level": level, "stage_densities": densities}


def ow_castle(
    sys: SymbolicSystem,
    K: FiniteSubset,
    delta: Fraction,
    eps: Fraction,
    stages: int | None = None,
    index_bound: int | None = None,
) -> Castle:
    """Castle with (K,δ)-invariant shapes and footprint density ≥ 1 − ε.

    Stages are stacked from the largest Følner set down; the number of stages
    grows until the exact density clears 1 − ε. With `stages` given exactly
    that many are built and the density claim is reported only.

    Raises:
        FolnerExhaustedError: stage sets cannot be found within index_bound
        VerificationError: a hard claim failed
    """
    delta, eps = Fraction(delta), Fraction(eps)
    if delta <= 0 or eps <= 0:
        raise InputError(f"δ and ε must be positive, got δ={delta}, ε={eps}")
    if not len(K):
        raise InputError("K must be nonempty")
    eps1 = min(eps, almost_invariant_margin(K, delta))
    n = stage_count(eps1)
    beta = choose_beta(min(eps, Fraction(1)), eps1, n)
    logger.info(
        "ow_castle_parameters", eps_prime=str(eps1), stage_bound=n, beta=str(beta), delta=str(delta)
    )
    target = 1 - eps
    with timed("ow_castle"):
        t = stages if stages is not None else 1
        while True:
            sets = stage_sets(K, eps1, beta, t, index_bound)
            towers, claims, info = _build_stages(sys, K, delta, eps, eps1, beta, sets)
            castle = Castle(tuple(towers))
            density = castle_density(sys, castle)
            if stages is not None or lower(density) >= target or t >= n:
                break
            t += 1
    claims += verify_castle(sys, castle, K, delta)
    claims.append(check("footprint_density", density, ">=", target, hard=stages is None))
    claims += union_star_check(
        sys, [tw.shape for tw in castle.towers], footprint(sys, castle), K, eps1, delta, sets[0][1]
    )
    provenance = {
        "operation": "ow_castle",
        "K": [list(c) for c in K.elements],
        "delta": fmt(delta),
        "eps": fmt(eps),
        "eps_prime": fmt(eps1),
        "stage_bound": n,
        "beta": fmt(beta),
        "stages": t,
        "stage_indices": [idx for idx, _ in sets],
        **info,
    }
    failed = failures(claims)
    if failed:
        raise VerificationError("ow_castle claims failed", failed)
    return Castle(castle.towers, provenance, tuple(claims))


def rokhlin_castle(sys: OdometerSystem, level: int) -> Castle:
    """The single tower over the zero atom of `level` with the full box shape.

    Its levels are exactly the atoms of `level`, so the footprint is X.
    """
    grids = sys.grid(level)
    axes = [np.arange(m, dtype=np.int64) for m in grids]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(grids))
    shape = FiniteSubset.from_rows(sys.descriptor, mesh)
    castle = Castle((Tower(make_clopen(sys, level, [0]), shape),))
    claims = verify_castle(sys, castle)
    claims.append(check("footprint_density", castle_density(sys, castle), "==", 1))
    return Castle(castle.towers, {"operation": "rokhlin_castle", "level": level}, tuple(claims))


# --- quasitiling ----------------------------------------------------------------


@dataclass(frozen=True)
class TileSet:
    tiles: tuple[FiniteSubset, ...]
    K: FiniteSubset
    delta: Fraction
    defects: tuple[Fraction, ...]


@dataclass(frozen=True, order=True)
class Placement:
    """The translate tiles[tile]·center."""

    tile: int
    center: Coords


def placed(tiles: Sequence[FiniteSubset], p: Placement) -> list[Coords]:
    T = tiles[p.tile]
    return [mul_coords(T.descriptor, t, p.center) for t in T.elements]


def _place(
    T: FiniteSubset, region: frozenset[Coords], covered: set[Coords], min_fresh: Fraction | None
) -> list[tuple[Coords, tuple[Coords, ...]]]:
    """Sweep centers c in canonical order; keep Tc ⊆ region.

    With min_fresh None only fully uncovered translates are taken; otherwise the
    uncovered part is kept when it has at least min_fresh cells. Returns
    (center, kept tile elements).
    """
    desc = T.descriptor
    t0 = inv_coords(desc, T.elements[0])
    out = []
    for c in sorted({mul_coords(desc, t0, e) for e in region}):
        cells = [(t, mul_coords(desc, t, c)) for t in T.elements]
        if not all(x in region for _, x in cells):
            continue
        fresh = [(t, x) for t, x in cells if x not in covered]
        if min_fresh is None:
            if len(fresh) < len(cells):
                continue
        elif not fresh or len(fresh) < min_fresh:
            continue
        covered.update(x for _, x in fresh)
        out.append((c, tuple(t for t, _ in fresh)))
    return out


def tile_region(
    tiles: Sequence[FiniteSubset], E: FiniteSubset
) -> tuple[list[Placement], set[Coords]]:
    """Disjoint translates of the given tiles inside E, larger tiles first."""
    region = frozenset(E.elements)
    covered: set[Coords] = set()
    placements = []
    order = sorted(range(len(tiles)), key=lambda i: (-len(tiles[i]), tiles[i].elements))
    for i in order:
        for c, _ in _place(tiles[i], region, covered, None):
            placements.append(Placement(i, c))
    return sorted(placements), covered


def verify_tiling(
    tileset: TileSet, placements: Sequence[Placement], E: FiniteSubset, eps: Fraction
) -> list[Claim]:
    region = frozenset(E.elements)
    seen: set[Coords] = set()
    overlap = False
    inside = True
    for p in placements:
        for x in placed(tileset.tiles, p):
            overlap |= x in seen
            inside &= x in region
            seen.add(x)
    worst = max(tileset.defects, default=Fraction(0))
    return [
        holds("tiles_disjoint", not overlap),
        holds("tiles_inside_region", inside),
        check("tile_invariance", worst, "<", tileset.delta),
        check("coverage", Fraction(len(seen & region), max(len(E), 1)), ">=", 1 - eps),
    ]


def quasitile(
    K: FiniteSubset,
    delta: Fraction,
    eps: Fraction,
    E: FiniteSubset,
    base_tiles: Sequence[FiniteSubset] | None = None,
) -> tuple[TileSet, list[Placement]]:
    """Tile at least (1−ε)|E| by disjoint translates of (K,δ)-invariant tiles.

    A first pass places whole base tiles; a second pass keeps translates whose
    uncovered part is at least (1−η)|T|, η = almost_invariant_margin(K, δ), so
    every shrunk tile stays (K,δ)-invariant.

    Raises:
        InsufficientInvarianceError: E or a base tile is not (K,η)-invariant,
            or the coverage falls short of (1−ε)|E|
    """
    delta, eps = Fraction(delta), Fraction(eps)
    if not 0 < eps < Fraction(1, 2):
        raise InputError(f"ε must lie in (0, 1/2), got {eps}")
    eta = almost_invariant_margin(K, delta)
    if base_tiles is None:
        found = FolnerFamily(K.descriptor).first(lambda F: invariance_defect(F, K) < eta)
        if found is None:
            raise FolnerExhaustedError(f"No (K,{eta})-invariant Følner member for base tile")
        base_tiles = [found[1]]
    for T in base_tiles:
        d = invariance_defect(T, K)
        if d >= eta:
            raise InsufficientInvarianceError(
                f"Base tile of size {len(T)} has defect {d} >= η={eta}", d, eta
            )
    e_def = invariance_defect(E, K)
    if e_def >= eta:
        raise InsufficientInvarianceError(f"Region defect {e_def} >= η={eta}", e_def, eta)

    with timed("quasitile"):
        region = frozenset(E.elements)
        covered: set[Coords] = set()
        tiles: list[FiniteSubset] = []
        index: dict[tuple[Coords, ...], int] = {}

        def tile_id(elements: tuple[Coords, ...]) -> int:
            if elements not in index:
                index[elements] = len(tiles)
                tiles.append(FiniteSubset(K.descriptor, elements))
            return index[elements]

        base = sorted(base_tiles, key=lambda T: (-len(T), T.elements))
        for T in base:
            tile_id(T.elements)
        placements = []
        for min_fresh in (None, "shrink"):
            for T in base:
                bar = None if min_fresh is None else (1 - eta) * len(T)
                for c, kept in _place(T, region, covered, bar):
                    placements.append(Placement(tile_id(tuple(sorted(kept))), c))

    tileset = TileSet(
        tuple(tiles), K, delta, tuple(invariance_defect(T, K) for T in tiles)
    )
    placements.sort()
    claims = verify_tiling(tileset, placements, E, eps)
    coverage = Fraction(len(covered), len(E))
    logger.info(
        "quasitile_built", tiles=len(tiles), placements=len(placements), coverage=str(coverage)
    )
    failed = failures(claims)
    if failed:
        if all(c.name == "coverage" for c in failed):
            raise InsufficientInvarianceError(
                f"Coverage {coverage} < {1 - eps}: region not invariant enough", coverage, 1 - eps
            )
        raise VerificationError("quasitiling failed its checks", failed)
    return tileset, placements


# --- refinement by a partition -------------------------------------------------


def partition_labels(sys: SymbolicSystem, P: Sequence[ClopenSet]) -> tuple[int, np.ndarray]:
    """(level, label array): the index of the member containing each atom.

    Raises:
        PartitionError: members overlap or miss part of X
    """
    if not P:
        raise PartitionError("empty partition")
    level = max(A.level for A in P)
    labels = np.full(sys.atom_count(level), -1, dtype=np.int64)
    for k, A in enumerate(P):
        mask = indicator(sys, A, level)
        if (labels[mask] >= 0).any():
            raise PartitionError(f"partition members overlap (member {k})")
        labels[mask] = k
    if (labels < 0).any():
        missing = int(np.nonzero(labels < 0)[0][0])
        raise PartitionError(
            f"partition does not cover X: atom {sys.atom_label(level, missing)} at level {level}"
        )
    return level, labels


def castle_refine_by_partition(
    sys: SymbolicSystem, castle: Castle, P: Sequence[ClopenSet]
) -> Castle:
    """Split each base by the itinerary x ↦ (member of P containing sx)_{s∈S}.

    Every output level lies inside one member of P; the footprint is unchanged.
    """
    p_level, labels = partition_labels(sys, P)
    towers = []
    for tower in castle.towers:
        if not len(tower.shape):
            continue
        level = max(tower.base.level, p_level) + sys.loss_set(tower.shape)
        atoms = np.nonzero(indicator(sys, tower.base, level))[0]
        if not len(atoms):
            continue
        itin = np.stack(
            [labels[sys.shift_index(level, s, p_level)][atoms] for s in tower.shape.elements],
            axis=1,
        )
        codes, inverse_idx = np.unique(itin, axis=0, return_inverse=True)
        inverse_idx = inverse_idx.reshape(-1)
        for k in range(len(codes)):
            towers.append(Tower(make_clopen(sys, level, atoms[inverse_idx == k]), tower.shape))
    provenance = dict(castle.provenance)
    provenance["refined_by"] = len(P)
    provenance["boundary_loss"] = "none: partition members are clopen"
    out = Castle(tuple(towers), provenance, castle.claims)
    logger.info("castle_refined", towers_in=len(castle), towers_out=len(towers), members=len(P))
    return out


def monochromatic_levels(
    sys: SymbolicSystem, castle: Castle, P: Sequence[ClopenSet]
) -> bool:
    """True iff every level sV lies inside a single member of P."""
    p_level, labels = partition_labels(sys, P)
    for tower in castle.towers:
        level = max(tower.base.level, p_level) + sys.loss_set(tower.shape)
        atoms = np.nonzero(indicator(sys, tower.base, level))[0]
        for s in tower.shape.elements:
            seen = labels[sys.shift_index(level, s, p_level)][atoms]
            if len(seen) and (seen != seen[0]).any():
                return False
    return True
