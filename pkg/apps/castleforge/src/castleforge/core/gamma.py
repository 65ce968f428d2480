"""Witness functions for uniform property Γ on castles of clopen towers.

Every tile copy Tc inside a tower shape carries the layer profile of T: the
value on the level (tc)V is q/Q for t in layer q. Tile copies are paired inside
classes of equal partition pattern; one member of each pair feeds f1, the
other f2.

Levels are clopen, so the Urysohn collars of the continuous construction are
empty and the boundary slack is not consumed.
"""

import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

import numpy as np
import structlog
from py_common.metrics import timed

from castleforge.config import settings
from castleforge.core.certificates import Claim, check, failures, fmt, holds
from castleforge.core.dynsys import (
    ClopenSet,
    Measure,
    OdometerSystem,
    RationalInterval,
    SymbolicSystem,
    from_mask,
    indicator,
    lower,
    measure,
    translate_mask,
)
from castleforge.core.errors import (
    CastleTooSparseError,
    EmptyCoreError,
    FolnerExhaustedError,
    InputError,
    InsufficientInvarianceError,
    PartitionError,
    VerificationError,
)
from castleforge.core.group import (
    Coords,
    FiniteSubset,
    FolnerFamily,
    identity,
    inv_coords,
    mul_coords,
    power_set,
    product_set,
    symmetrize,
)
from castleforge.core.tiling import (
    Castle,
    Placement,
    castle_density,
    castle_level,
    castle_refine_by_partition,
    monochromatic_levels,
    ow_castle,
    partition_labels,
    placed,
    rokhlin_castle,
    tile_region,
)

logger = structlog.get_logger()


@dataclass(frozen=True, eq=False)
class SimpleFunction:
    """f(x) = numerators[atom of x] / denominator, constant on the atoms of `level`."""

    level: int
    numerators: np.ndarray
    denominator: int

    def __post_init__(self) -> None:
        if self.denominator < 1:
            raise InputError(f"denominator must be positive, got {self.denominator}")
        if len(self.numerators) and (
            self.numerators.min() < 0 or self.numerators.max() > self.denominator
        ):
            raise InputError("simple function values must lie in [0, 1]")

    def value(self, atom: int) -> Fraction:
        return Fraction(int(self.numerators[atom]), self.denominator)

    def at(self, sys: SymbolicSystem, level: int) -> np.ndarray:
        """Numerators on the atoms of a finer level."""
        if level == self.level:
            return self.numerators
        return self.numerators[sys.coarsen_index(level, self.level)]

    def support(self, sys: SymbolicSystem) -> ClopenSet:
        return from_mask(sys, self.level, self.numerators > 0)

    def translate(self, sys: SymbolicSystem, g: Coords) -> "SimpleFunction":
        """α_g f = f(g⁻¹ ·)."""
        level = self.level + sys.loss(g)
        back = inv_coords(sys.descriptor, g)
        return SimpleFunction(
            level, self.numerators[sys.shift_index(level, back, self.level)], self.denominator
        )

    def sup_distance(self, sys: SymbolicSystem, other: "SimpleFunction") -> Fraction:
        level = max(self.level, other.level)
        a = self.at(sys, level) * other.denominator
        b = other.at(sys, level) * self.denominator
        diff = int(np.abs(a - b).max()) if len(a) else 0
        return Fraction(diff, self.denominator * other.denominator)

    def integral(self, sys: SymbolicSystem, A: ClopenSet | None = None) -> Measure:
        """μ(f·1_A), summed value class by value class at a common level."""
        level = self.level if A is None else max(self.level, A.level)
        vals = self.at(sys, level)
        mask = np.ones(len(vals), dtype=bool) if A is None else indicator(sys, A, level)
        total: Measure = Fraction(0)
        for q in np.unique(vals[mask]):
            if q == 0:
                continue
            atoms = np.nonzero(mask & (vals == q))[0]
            weight = Fraction(int(q), self.denominator)
            total = _add(total, _scale(sys.measure_atoms(level, atoms), weight))
        return total


def _as_interval(m: Measure) -> RationalInterval:
    return m if isinstance(m, RationalInterval) else RationalInterval(m, m)


def _add(a: Measure, b: Measure) -> Measure:
    if isinstance(a, Fraction) and isinstance(b, Fraction):
        return a + b
    return _as_interval(a) + _as_interval(b)


def _scale(m: Measure, c: Fraction) -> Measure:
    return m.scale(c) if isinstance(m, RationalInterval) else m * c


def _abs_gap(a: Measure, b: Measure) -> Measure:
    """|a − b| (an enclosure when either side is an interval)."""
    if isinstance(a, Fraction) and isinstance(b, Fraction):
        return abs(a - b)
    x, y = _as_interval(a), _as_interval(b)
    lo, hi = x.lo - y.hi, x.hi - y.lo
    top = max(abs(lo), abs(hi))
    bottom = Fraction(0) if lo <= 0 <= hi else min(abs(lo), abs(hi))
    return RationalInterval(bottom, top)


# --- layered tiles ---------------------------------------------------------------


@dataclass(frozen=True)
class LayeredTile:
    """Layers T_0..T_Q of a tile; layers[Q] is the core {g : L^Q g ⊆ T}."""

    tile: FiniteSubset
    L: FiniteSubset
    layers: tuple[FiniteSubset, ...]

    @property
    def Q(self) -> int:
        return len(self.layers) - 1

    @property
    def core(self) -> FiniteSubset:
        return self.layers[-1]

    def depth(self) -> dict[Coords, int]:
        """Layer index of every tile element; elements outside L^Q·core get 0."""
        out = {t: 0 for t in self.tile.elements}
        for q, layer in enumerate(self.layers):
            for t in layer.elements:
                out[t] = q
        return out

    def one_step_ok(self) -> bool:
        """s·T_q ⊆ T_{q−1} ∪ T_q ∪ T_{q+1} for every s ∈ L and 1 ≤ q ≤ Q."""
        desc = self.tile.descriptor
        where = {t: q for q, layer in enumerate(self.layers) for t in layer.elements}
        for q in range(1, self.Q + 1):
            for t in self.layers[q].elements:
                for s in self.L.elements:
                    moved = where.get(mul_coords(desc, s, t))
                    if moved is None or abs(moved - q) > 1:
                        return False
        return True


def _core(T: FiniteSubset, LQ: FiniteSubset) -> FiniteSubset:
    desc = T.descriptor
    inside = set(T.elements)
    return FiniteSubset(
        desc,
        tuple(
            g
            for g in T.elements
            if all(mul_coords(desc, s, g) in inside for s in LQ.elements)
        ),
    )


def layer_tile(T: FiniteSubset, L: FiniteSubset, Q: int) -> LayeredTile:
    """T_Q = {g : L^Q g ⊆ T}; T_q = L^{Q−q}T_Q ∖ L^{Q−q−1}T_Q for q < Q.

    L is replaced by L ∪ L⁻¹ ∪ {e}.

    Raises:
        EmptyCoreError: L^Q g ⊄ T for every g
    """
    if Q < 1:
        raise InputError(f"Q must be >= 1, got {Q}")
    if not len(T):
        raise InputError("tile must be nonempty")
    L = symmetrize(L)
    core = _core(T, power_set(L, Q))
    if not len(core):
        raise EmptyCoreError(len(T), Q)
    grown = [core]
    for _ in range(Q):
        grown.append(product_set(L, grown[-1]))
    layers = [core]
    for q in range(Q - 1, -1, -1):
        outer, inner = grown[Q - q], grown[Q - q - 1]
        layers.append(outer.difference(inner))
    layered = LayeredTile(T, L, tuple(reversed(layers)))
    if not layered.one_step_ok():
        raise VerificationError(
            "layer containment failed", [holds("layer_one_step", False, f"|T|={len(T)}, Q={Q}")]
        )
    return layered


# --- the witness ---------------------------------------------------------------


@dataclass(frozen=True)
class TiledCastle:
    """A castle with, per tower, disjoint tile copies inside its shape."""

    castle: Castle
    tiles: tuple[FiniteSubset, ...]
    placements: tuple[tuple[Placement, ...], ...]

    def coverage(self, i: int) -> Fraction:
        shape = self.castle.towers[i].shape
        cells = sum(len(self.tiles[p.tile]) for p in self.placements[i])
        return Fraction(cells, len(shape))


def tile_castle(castle: Castle, tiles: Sequence[FiniteSubset]) -> TiledCastle:
    return TiledCastle(
        castle,
        tuple(tiles),
        tuple(tuple(tile_region(tiles, t.shape)[0]) for t in castle.towers),
    )


@dataclass(frozen=True)
class GammaWitness:
    f1: SimpleFunction
    f2: SimpleFunction
    Q: int
    claims: tuple[Claim, ...]
    info: dict[str, Any] = field(default_factory=dict, compare=False, hash=False)


def gamma_q(eps: Fraction) -> int:
    """Smallest integer Q > 1/ε."""
    return math.floor(1 / Fraction(eps)) + 1


def _pattern(
    sys: SymbolicSystem,
    base_atom: int,
    level: int,
    cells: Sequence[Coords],
    p_level: int,
    labels: np.ndarray,
) -> tuple[int, ...]:
    """Partition member containing each level cV, read off one base atom."""
    return tuple(int(labels[sys.shift_index(level, c, p_level)[base_atom]]) for c in cells)


def gamma_witness(
    sys: SymbolicSystem,
    tiled: TiledCastle,
    L: FiniteSubset,
    eps: Fraction,
    P: Sequence[ClopenSet],
) -> GammaWitness:
    """Orthogonal f1, f2 with ‖α_s f_k − f_k‖ ≤ 1/Q and |μ(f_k 1_A) − μ(A)/2| < ε.

    Raises:
        PartitionError: a castle level meets two members of P
        CastleTooSparseError: castle density below 1 − ε/6
        InsufficientInvarianceError: a shape's tile coverage below 1 − ε/6
        EmptyCoreError: a tile has no core for (L, Q)
        VerificationError: an exact check failed
    """
    eps = Fraction(eps)
    if eps <= 0:
        raise InputError(f"ε must be positive, got {eps}")
    Q = gamma_q(eps)
    castle = tiled.castle
    slack = 1 - eps / 6
    density = castle_density(sys, castle)
    if lower(density) < slack:
        raise CastleTooSparseError(
            f"castle density {density} < 1 − ε/6 = {slack}", realized=density, required=slack
        )
    for i in range(len(castle)):
        cov = tiled.coverage(i)
        if cov < slack:
            raise InsufficientInvarianceError(
                f"tile coverage {cov} of tower {i} < 1 − ε/6 = {slack}", cov, slack
            )
    if not monochromatic_levels(sys, castle, P):
        raise PartitionError("castle levels are not monochromatic; refine by P first")

    Lsym = symmetrize(L)
    layered = [layer_tile(T, Lsym, Q) for T in tiled.tiles]
    depths = [lt.depth() for lt in layered]
    p_level, labels = partition_labels(sys, P)
    level = max(castle_level(sys, castle), p_level)
    n = sys.atom_count(level)
    f = [np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64)]
    pairs = leftovers = classes = 0

    with timed("gamma_witness"):
        for i, tower in enumerate(castle.towers):
            t_level = max(tower.base.level, p_level) + sys.loss_set(tower.shape)
            b0 = int(np.nonzero(indicator(sys, tower.base, t_level))[0][0])
            by_class: dict[tuple[int, tuple[int, ...]], list[Placement]] = {}
            for p in tiled.placements[i]:
                cells = placed(tiled.tiles, p)
                sigma = _pattern(sys, b0, t_level, cells, p_level, labels)
                by_class.setdefault((p.tile, sigma), []).append(p)
            classes += len(by_class)
            for members in by_class.values():
                members.sort()
                half = len(members) // 2
                pairs += half
                leftovers += len(members) % 2
                for k in range(2 * half):
                    p = members[k]
                    T = tiled.tiles[p.tile]
                    for t in T.elements:
                        q = depths[p.tile][t]
                        if q:
                            c = mul_coords(T.descriptor, t, p.center)
                            mask = translate_mask(sys, tower.base, c, level)
                            f[k % 2][mask] = q

    f1 = SimpleFunction(level, f[0], Q)
    f2 = SimpleFunction(level, f[1], Q)
    claims, info = gamma_claims(sys, f1, f2, Lsym, eps, P)
    info.update(pairs=pairs, leftovers=leftovers, classes=classes, tiles=len(tiled.tiles))
    info["constants"] = "clopen levels: collar terms vanish, ε/4 boundary slack unused"
    failed = failures(claims)
    if failed:
        raise VerificationError("Γ witness failed its checks", failed)
    return GammaWitness(f1, f2, Q, tuple(claims), info)


def gamma_claims(
    sys: SymbolicSystem,
    f1: SimpleFunction,
    f2: SimpleFunction,
    L: FiniteSubset,
    eps: Fraction,
    P: Sequence[ClopenSet],
) -> tuple[list[Claim], dict[str, Any]]:
    """Orthogonality, commutator and trace checks, all exact on odometers."""
    Q = f1.denominator
    level = max(f1.level, f2.level)
    overlap = (f1.at(sys, level) > 0) & (f2.at(sys, level) > 0)
    claims = [holds("orthogonality", not overlap.any())]
    worst_comm = Fraction(0)
    e = identity(sys.descriptor).coords
    for s in L.elements:
        if s == e:
            continue
        for k, fk in ((1, f1), (2, f2)):
            d = fk.translate(sys, s).sup_distance(sys, fk)
            worst_comm = max(worst_comm, d)
            claims.append(check(f"commutator[f{k},s={list(s)}]", d, "<=", Fraction(1, Q)))
    worst_trace = Fraction(0)
    for a, A in enumerate(P):
        half = _scale(measure(sys, A), Fraction(1, 2))
        t1, t2 = f1.integral(sys, A), f2.integral(sys, A)
        for k, tk in ((1, t1), (2, t2)):
            gap = _abs_gap(tk, half)
            worst_trace = max(worst_trace, gap.hi if isinstance(gap, RationalInterval) else gap)
            claims.append(check(f"trace_deviation[f{k},P{a}]", gap, "<", eps))
        exact = isinstance(t1, Fraction) and isinstance(t2, Fraction)
        claims.append(check(f"trace_symmetry[P{a}]", _abs_gap(t1, t2), "==", 0, hard=exact))
    info = {
        "Q": Q,
        "max_commutator": fmt(worst_comm),
        "max_trace_deviation": fmt(worst_trace),
    }
    logger.info(
        "gamma_claims_checked",
        claims=len(claims),
        max_commutator=info["max_commutator"],
        max_trace_deviation=info["max_trace_deviation"],
    )
    return claims, info


# --- pipeline ---------------------------------------------------------------


def choose_gamma_tile(
    L: FiniteSubset, eps: Fraction, index_bound: int | None = None
) -> FiniteSubset:
    """First Følner member T whose (L, Q)-core holds at least (1 − ε/4)|T|."""
    eps = Fraction(eps)
    LQ = power_set(symmetrize(L), gamma_q(eps))
    found = FolnerFamily(L.descriptor).first(
        lambda T: len(_core(T, LQ)) >= (1 - eps / 4) * len(T), 1, index_bound
    )
    if found is None:
        raise FolnerExhaustedError("No Følner member has a large enough core")
    return found[1]


def _odometer_castle(sys: OdometerSystem, tile: FiniteSubset, eps: Fraction) -> Castle:
    slack = 1 - eps / 6
    level = sys.level_for_atoms(2 * len(tile))
    while True:
        castle = rokhlin_castle(sys, level)
        placements, covered = tile_region([tile], castle.towers[0].shape)
        if len(placements) >= 2 and Fraction(len(covered), sys.atom_count(level)) >= slack:
            return castle
        if sys.atom_count(level + 1) > settings.MAX_ATOMS:
            raise CastleTooSparseError(
                f"no level up to the atom cap lets the tile cover 1 − ε/6 = {slack}",
                realized=Fraction(len(covered), sys.atom_count(level)),
                required=slack,
            )
        level += 1


def _ow_gamma_castle(
    sys: SymbolicSystem, L: FiniteSubset, tile: FiniteSubset, eps: Fraction
) -> Castle:
    delta = Fraction(1, 2)
    Lsym = symmetrize(L)
    while True:
        castle = ow_castle(sys, Lsym, delta, eps / 6)
        tiled = tile_castle(castle, [tile])
        if all(
            len(t.shape) >= 2 * len(tile) and tiled.coverage(i) >= 1 - eps / 6
            for i, t in enumerate(castle.towers)
        ):
            return castle
        delta /= 2
        logger.debug("gamma_castle_retry", delta=str(delta))


def build_gamma_witness(
    sys: SymbolicSystem,
    L: FiniteSubset,
    eps: Fraction,
    P: Sequence[ClopenSet],
    castle: Castle | None = None,
) -> GammaWitness:
    """Tile choice, castle, refinement by P and the witness in one call.

    Odometers use the exact single-tower castle at the first level whose box
    the tile covers to within ε/6; other systems halve δ in ow_castle until
    every shape holds two tiles at that coverage.
    """
    eps = Fraction(eps)
    tile = choose_gamma_tile(L, eps)
    if castle is None:
        if isinstance(sys, OdometerSystem):
            castle = _odometer_castle(sys, tile, eps)
        else:
            castle = _ow_gamma_castle(sys, L, tile, eps)
    refined = castle_refine_by_partition(sys, castle, P)
    witness = gamma_witness(sys, tile_castle(refined, [tile]), L, eps, P)
    witness.info.update(tile_size=len(tile), castle_towers=len(refined))
    return witness
