"""Irrational circle rotations: regular closed partitions and their codings.

Points of the circle R/Z are quadratic irrationals a + b√D reduced mod 1, so
every comparison against a partition endpoint is decided exactly. A partition
is a sorted list of cut points; the closed arc between consecutive cuts is a
cell and cells sharing a label form one member.
"""

import bisect
import math
import re
from collections.abc import Sequence
from dataclasses import dataclass, field
from fractions import Fraction
from functools import total_ordering
from typing import Any

import numpy as np
import structlog
from py_common.metrics import timed

from castleforge.config import settings
from castleforge.core.certificates import Claim, check, fmt, holds
from castleforge.core.errors import InputError, RationalAngleError, VerificationError

logger = structlog.get_logger()


def _square_free(D: int) -> tuple[int, int]:
    """(k, D′) with D = k²·D′ and D′ square-free."""
    k, rest, p = 1, D, 2
    while p * p <= rest:
        while rest % (p * p) == 0:
            rest //= p * p
            k *= p
        p += 1
    return k, rest


@total_ordering
@dataclass(frozen=True, eq=False)
class QuadraticIrrational:
    """a + b√D with rational a, b; D is 0 exactly when b is 0."""

    a: Fraction
    b: Fraction = Fraction(0)
    D: int = 0

    def __post_init__(self) -> None:
        a, b, D = Fraction(self.a), Fraction(self.b), int(self.D)
        if b and D < 2:
            raise InputError(f"√{D} needs a square-free radicand >= 2")
        if b:
            k, D2 = _square_free(D)
            if D2 == 1:
                a, b, D = a + b * k, Fraction(0), 0
            else:
                b, D = b * k, D2
        else:
            D = 0
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "D", D)

    @classmethod
    def of(cls, x: "Scalar") -> "QuadraticIrrational":
        return x if isinstance(x, QuadraticIrrational) else cls(Fraction(x))

    def __eq__(self, other: object) -> bool:
        if isinstance(other, int | Fraction):
            other = QuadraticIrrational(Fraction(other))
        if not isinstance(other, QuadraticIrrational):
            return NotImplemented
        return (self.a, self.b, self.D) == (other.a, other.b, other.D)

    def __hash__(self) -> int:
        return hash((self.a, self.b, self.D))

    @property
    def rational(self) -> bool:
        return self.b == 0

    def _radicand(self, other: "QuadraticIrrational") -> int:
        if self.D and other.D and self.D != other.D:
            raise InputError(f"cannot mix √{self.D} and √{other.D}")
        return self.D or other.D

    def __add__(self, other: "Scalar") -> "QuadraticIrrational":
        o = QuadraticIrrational.of(other)
        return QuadraticIrrational(self.a + o.a, self.b + o.b, self._radicand(o))

    __radd__ = __add__

    def __neg__(self) -> "QuadraticIrrational":
        return QuadraticIrrational(-self.a, -self.b, self.D)

    def __sub__(self, other: "Scalar") -> "QuadraticIrrational":
        return self + (-QuadraticIrrational.of(other))

    def __rsub__(self, other: "Scalar") -> "QuadraticIrrational":
        return QuadraticIrrational.of(other) - self

    def __mul__(self, c: int | Fraction) -> "QuadraticIrrational":
        c = Fraction(c)
        return QuadraticIrrational(self.a * c, self.b * c, self.D)

    __rmul__ = __mul__

    def __truediv__(self, c: int | Fraction) -> "QuadraticIrrational":
        return self * (1 / Fraction(c))

    def sign(self) -> int:
        sa = (self.a > 0) - (self.a < 0)
        sb = (self.b > 0) - (self.b < 0)
        if sb == 0 or sa == sb:
            return sa or sb
        if sa == 0:
            return sb
        return sa if self.a * self.a > self.b * self.b * self.D else sb

    def __lt__(self, other: "Scalar") -> bool:
        return (self - other).sign() < 0

    def __float__(self) -> float:
        return float(self.a) + float(self.b) * math.sqrt(self.D)

    def floor(self) -> int:
        n = math.floor(float(self))
        while self < n:
            n -= 1
        while not self < n + 1:
            n += 1
        return n

    def mod1(self) -> "QuadraticIrrational":
        return self - self.floor()

    def __str__(self) -> str:
        if not self.b:
            return fmt(self.a)
        return f"{fmt(self.a)}+{fmt(self.b)}*sqrt({self.D})"


Scalar = int | Fraction | QuadraticIrrational
QI = QuadraticIrrational
ZERO = QI(Fraction(0))


_TERM = re.compile(r"[+-]?[^+-]+")


def parse_quadratic(text: str) -> QuadraticIrrational:
    """Parse forms like "(-1+sqrt5)/2", "1/2*sqrt(5)-1/2", "sqrt(2)-1", "0.25".

    Raises:
        InputError: the text is not a rational plus a rational multiple of √D
    """
    src = text.replace(" ", "")
    m = re.fullmatch(r"\((.+)\)/(\d+)", src)
    if m:
        return parse_quadratic(m.group(1)) / int(m.group(2))
    if not src:
        raise InputError("empty number")
    total = ZERO
    try:
        for term in _TERM.findall(src):
            sign = -1 if term.startswith("-") else 1
            body = term.lstrip("+-")
            if "sqrt" in body:
                coef, _, rad = body.partition("sqrt")
                c = Fraction(coef.rstrip("*")) if coef.rstrip("*") else Fraction(1)
                total = total + QI(Fraction(0), sign * c, int(rad.strip("()")))
            else:
                total = total + sign * Fraction(body)
    except (ValueError, ZeroDivisionError) as exc:
        raise InputError(f"cannot parse quadratic irrational {text!r}") from exc
    return total


# --- arcs --------------------------------------------------------------------------


@dataclass(frozen=True)
class Arc:
    """Closed arc from `start` going counterclockwise for `length` (0 is a point)."""

    start: QuadraticIrrational
    length: QuadraticIrrational

    def __post_init__(self) -> None:
        if self.length < 0 or self.length > 1:
            raise InputError(f"arc length {self.length} outside [0, 1]")
        object.__setattr__(self, "start", self.start.mod1())

    @property
    def end(self) -> QuadraticIrrational:
        return (self.start + self.length).mod1()

    @property
    def full(self) -> bool:
        return self.length == QI.of(1)

    def contains(self, x: QuadraticIrrational) -> bool:
        return (x - self.start).mod1() <= self.length or self.full


def point(x: QuadraticIrrational) -> Arc:
    return Arc(x, ZERO)


def merge_arcs(arcs: Sequence[Arc]) -> list[Arc]:
    """Union of closed arcs as disjoint closed arcs in canonical order."""
    if any(a.full for a in arcs):
        return [Arc(ZERO, QI.of(1))]
    spans = sorted((a.start, a.start + a.length) for a in arcs)
    merged: list[list[QuadraticIrrational]] = []
    for lo, hi in spans:
        if merged and lo <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    while len(merged) > 1 and merged[-1][1] >= merged[0][0] + 1:
        first = merged.pop(0)
        merged[-1][1] = max(merged[-1][1], first[1] + 1)
    if merged and merged[-1][1] - merged[0][0] >= 1 and len(merged) == 1:
        return [Arc(ZERO, QI.of(1))]
    return [Arc(lo, min(hi - lo, QI.of(1))) for lo, hi in merged]


def arcs_measure(arcs: Sequence[Arc]) -> QuadraticIrrational:
    return sum((a.length for a in merge_arcs(arcs)), ZERO)


# --- partitions -----------------------------------------------------------------------


@dataclass(frozen=True)
class RegularClosedPartition:
    """Cells [cuts[i], cuts[i+1]] (the last wraps); labels[i] names the member of cell i."""

    cuts: tuple[QuadraticIrrational, ...]
    labels: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.cuts or len(self.cuts) != len(self.labels):
            raise InputError("partition needs one label per cut and at least one cut")
        if any(not (ZERO <= c < 1) for c in self.cuts):
            raise InputError("cuts must lie in [0, 1)")
        if any(not (x < y) for x, y in zip(self.cuts, self.cuts[1:], strict=False)):
            raise InputError("cuts must be strictly increasing")

    def __len__(self) -> int:
        return len(self.cuts)

    def _next(self, i: int) -> QuadraticIrrational:
        return self.cuts[i + 1] if i + 1 < len(self.cuts) else self.cuts[0] + 1

    def cell(self, i: int) -> Arc:
        return Arc(self.cuts[i], self._next(i) - self.cuts[i])

    def cells(self) -> list[Arc]:
        return [self.cell(i) for i in range(len(self))]

    def midpoint(self, i: int) -> QuadraticIrrational:
        return ((self.cuts[i] + self._next(i)) / 2).mod1()

    def mesh(self) -> QuadraticIrrational:
        return max(self.cell(i).length for i in range(len(self)))

    def extent(self, label: int) -> QuadraticIrrational:
        """Length of the shortest closed arc holding every cell of a member."""
        ix = self.members()[label]
        if len(ix) == 1:
            return self.cell(ix[0]).length
        gaps = [
            (self.cuts[ix[(n + 1) % len(ix)]] - self._next(ix[n])).mod1()
            for n in range(len(ix))
        ]
        return 1 - max(gaps)

    def members(self) -> dict[int, tuple[int, ...]]:
        out: dict[int, list[int]] = {}
        for i, lab in enumerate(self.labels):
            out.setdefault(lab, []).append(i)
        return {lab: tuple(ix) for lab, ix in out.items()}

    def boundary(self) -> tuple[QuadraticIrrational, ...]:
        """Cuts separating cells of different members."""
        n = len(self)
        return tuple(self.cuts[i] for i in range(n) if self.labels[i - 1] != self.labels[i])

    def locate(self, x: QuadraticIrrational) -> int:
        """Index of the cell whose half-open arc [cut, next cut) holds x."""
        return (bisect.bisect_right(self.cuts, x.mod1()) - 1) % len(self)

    def on_cut(self, x: QuadraticIrrational) -> bool:
        y = x.mod1()
        i = bisect.bisect_left(self.cuts, y)
        return i < len(self) and self.cuts[i] == y

    def labels_at(self, x: QuadraticIrrational) -> frozenset[int]:
        """Members whose closure holds x (two on a boundary point)."""
        i = self.locate(x)
        if self.on_cut(x):
            return frozenset({self.labels[i], self.labels[i - 1]})
        return frozenset({self.labels[i]})

    def rotate(self, t: QuadraticIrrational) -> "RegularClosedPartition":
        moved = sorted(((c + t).mod1(), lab) for c, lab in zip(self.cuts, self.labels, strict=True))
        return RegularClosedPartition(tuple(c for c, _ in moved), tuple(lab for _, lab in moved))

    def same_as(self, other: "RegularClosedPartition") -> bool:
        """Equal as partitions: same cuts and the same grouping of cells."""
        if self.cuts != other.cuts:
            return False
        fwd: dict[int, int] = {}
        back: dict[int, int] = {}
        for x, y in zip(self.labels, other.labels, strict=True):
            if fwd.setdefault(x, y) != y or back.setdefault(y, x) != x:
                return False
        return True


def _relabel(pairs: Sequence[Any]) -> tuple[int, ...]:
    index = {p: i for i, p in enumerate(sorted(set(pairs)))}
    return tuple(index[p] for p in pairs)


def common_refinement(
    P1: RegularClosedPartition, P2: RegularClosedPartition
) -> RegularClosedPartition:
    """P1 ∨ P2: closures of the interiors of C1 ∩ C2."""
    cuts = tuple(sorted(set(P1.cuts) | set(P2.cuts)))
    skeleton = RegularClosedPartition(cuts, tuple(range(len(cuts))))
    pairs = []
    for i in range(len(cuts)):
        m = skeleton.midpoint(i)
        pairs.append((P1.labels[P1.locate(m)], P2.labels[P2.locate(m)]))
    return RegularClosedPartition(cuts, _relabel(pairs))


def uniform_partition(n: int, offset: Scalar = 0) -> RegularClosedPartition:
    """n arcs of length 1/n starting at `offset`, each its own member."""
    if n < 1:
        raise InputError(f"need n >= 1 arcs, got {n}")
    start = QI.of(offset)
    cuts = sorted((start + Fraction(j, n)).mod1() for j in range(n))
    return RegularClosedPartition(tuple(cuts), tuple(range(n)))


def two_arc_partition(p: Scalar) -> RegularClosedPartition:
    """{[0, p], [p, 1]}."""
    q = QI.of(p).mod1()
    if q == ZERO:
        raise InputError("two-arc cut point must not be 0 mod 1")
    return RegularClosedPartition((ZERO, q), (0, 1))


def mesh_schedule(depth: int, offset: Scalar = 0) -> list[RegularClosedPartition]:
    """P_k = k+1 equal arcs for k = 1..depth, so mesh(P_k) ≤ 1/k."""
    return [uniform_partition(k + 1, offset) for k in range(1, depth + 1)]


# --- the coding tree -------------------------------------------------------------------


@dataclass(frozen=True)
class CodingTree:
    """Q_1, …, Q_depth with r_k: Q_{k+1} → Q_k and r_k^s for s ∈ F_k.

    levels[k−1] is Q_k and partitions[k−1] the P_k it refines; refine[k−1]
    and shifted[k−1] map members of Q_{k+1} to members of Q_k, r_k^s(D) being
    the member holding R_{−s}D.
    """

    alpha: QuadraticIrrational
    levels: tuple[RegularClosedPartition, ...]
    folner: tuple[tuple[int, ...], ...]
    refine: tuple[dict[int, int], ...]
    shifted: tuple[dict[int, dict[int, int]], ...]
    partitions: tuple[RegularClosedPartition, ...] = ()
    info: dict[str, Any] = field(default_factory=dict, compare=False, hash=False)

    @property
    def depth(self) -> int:
        return len(self.levels)

    def rotation(self, s: int) -> QuadraticIrrational:
        return (self.alpha * s).mod1()


def _member_map(
    fine: RegularClosedPartition,
    coarse: RegularClosedPartition,
    shift: QuadraticIrrational,
    what: str,
) -> dict[int, int]:
    """Member of `coarse` holding R_{−shift}D for each member D of `fine`.

    Raises:
        VerificationError: two cells of one member land in different members
    """
    out: dict[int, int] = {}
    for i, lab in enumerate(fine.labels):
        target = coarse.labels[coarse.locate(fine.midpoint(i) - shift)]
        if out.setdefault(lab, target) != target:
            raise VerificationError(
                f"{what} is not well defined",
                [holds(what, False, f"member {lab} meets members {out[lab]} and {target}")],
            )
    return out


def build_refinement_sequence(
    alpha: QuadraticIrrational,
    partitions: Sequence[RegularClosedPartition],
    folner: Sequence[Sequence[int]],
    depth: int,
) -> CodingTree:
    """Q_1 = P_1 and Q_{k+1} = P_{k+1} ∨ ⋁_{s ∈ F_k} α_s(Q_k).

    Short `partitions`/`folner` lists repeat their last entry; 0 is added to
    every F_k so that each Q_{k+1} refines Q_k.

    Raises:
        RationalAngleError: α is rational
    """
    if depth < 1:
        raise InputError(f"depth must be >= 1, got {depth}")
    if alpha.rational:
        raise RationalAngleError(f"rotation angle {alpha} is rational; the action is not free")
    if not partitions or not folner:
        raise InputError("need at least one partition and one Følner set")

    def pick(seq: Sequence[Any], k: int) -> Any:
        return seq[min(k, len(seq) - 1)]

    bases = [pick(partitions, k) for k in range(depth)]
    levels = [bases[0]]
    used: list[tuple[int, ...]] = []
    refine: list[dict[int, int]] = []
    shifted: list[dict[int, dict[int, int]]] = []
    with timed("build_refinement_sequence"):
        for k in range(1, depth):
            F = tuple(sorted(set(pick(folner, k - 1)) | {0}))
            Q = levels[-1]
            nxt = bases[k]
            for s in F:
                nxt = common_refinement(nxt, Q.rotate((alpha * s).mod1()))
            refine.append(_member_map(nxt, Q, ZERO, f"r_{k}"))
            shifted.append(
                {s: _member_map(nxt, Q, (alpha * s).mod1(), f"r_{k}^{s}") for s in F}
            )
            used.append(F)
            levels.append(nxt)
            logger.debug(
                "refinement_level_built",
                level=k + 1,
                cuts=len(nxt),
                members=len(nxt.members()),
                mesh=float(nxt.mesh()),
            )
    logger.info("coding_tree_built", depth=depth, cuts=len(levels[-1]), alpha=str(alpha))
    return CodingTree(
        alpha, tuple(levels), tuple(used), tuple(refine), tuple(shifted), tuple(bases)
    )


def itinerary(tree: CodingTree, x: Scalar) -> list[frozenset[int]]:
    """Members of Q_1, …, Q_depth whose closures hold x."""
    y = QI.of(x).mod1()
    return [Q.labels_at(y) for Q in tree.levels]


def endpoint_orbit(tree: CodingTree) -> list[QuadraticIrrational]:
    """Boundary points predicted from the P_k and the rotations alone.

    B_1 = ∂P_1 and B_{k+1} = ∂P_{k+1} ∪ (B_k + F_k·α); the union of the B_k.
    """
    bases = tree.partitions or tree.levels[:1]
    current = set(bases[0].boundary())
    seen = set(current)
    for k in range(1, tree.depth):
        P = bases[min(k, len(bases) - 1)]
        current = set(P.boundary()) | {
            (b + tree.rotation(s)).mod1() for b in current for s in tree.folner[k - 1]
        }
        seen |= current
    return sorted(seen)


def fibre_census(tree: CodingTree) -> tuple[dict[str, Any], list[Claim]]:
    """Points with more than one coding, against the predicted endpoint orbit.

    The observed locus holds every cut at which some level puts the point in
    the closure of two members. Every point off the cuts has one member per level.
    """
    predicted = endpoint_orbit(tree)
    candidates = sorted({c for Q in tree.levels for c in Q.cuts})
    locus = [x for x in candidates if any(len(ls) > 1 for ls in itinerary(tree, x))]
    deepest = tree.levels[-1]
    off_cut_ok = all(
        len(ls) == 1
        for i in range(len(deepest))
        for ls in itinerary(tree, deepest.midpoint(i))
    )
    stray = [str(x) for x in sorted(set(locus) ^ set(predicted))]
    detail = f"{len(locus)} observed, {len(predicted)} predicted; differ at {stray[:3]}"
    report = {
        "depth": tree.depth,
        "locus_size": len(locus),
        "locus": [str(x) for x in locus],
        "lebesgue_measure": "0/1",
        "cells": len(tree.levels[-1]),
        "members": len(tree.levels[-1].members()),
    }
    claims = [
        holds("locus_is_endpoint_orbit", not stray, detail if stray else ""),
        holds("off_cut_points_single_coded", off_cut_ok),
        check("locus_measure", Fraction(0), "==", 0),
    ]
    return report, claims


def member_diameter_claims(tree: CodingTree) -> list[Claim]:
    """Each member of Q_k spans an arc no longer than the longest member of P_k."""
    bases = tree.partitions or tree.levels[:1]
    claims = []
    for k, Q in enumerate(tree.levels, start=1):
        P = bases[min(k, len(bases)) - 1]
        bound = max(P.extent(lab) for lab in P.members())
        widest = max(Q.extent(lab) for lab in Q.members())
        claims.append(
            holds(
                f"member_diameter_le_mesh_{k}",
                widest <= bound,
                f"{float(widest):.6g} <= {float(bound):.6g}",
            )
        )
    return claims


def verify_composition_rule(tree: CodingTree) -> tuple[int, list[str]]:
    """r_k^{s+t}(r_{k+1}(E)) = r_k^s(r_{k+1}^t(E)) wherever s, t, s+t are defined.

    Returns (instances checked, descriptions of failures).
    """
    checked, bad = 0, []
    for k in range(tree.depth - 2):
        Fk, Fk1 = tree.folner[k], tree.folner[k + 1]
        for E in tree.levels[k + 2].members():
            up = tree.refine[k + 1][E]
            for t in Fk1:
                via_t = tree.shifted[k + 1][t][E]
                for s in Fk:
                    if s + t not in tree.shifted[k]:
                        continue
                    checked += 1
                    lhs = tree.shifted[k][s + t][up]
                    rhs = tree.shifted[k][s][via_t]
                    if lhs != rhs:
                        bad.append(f"level {k + 1}, member {E}, s={s}, t={t}: {lhs} != {rhs}")
    return checked, bad


def coding_sample_check(
    tree: CodingTree, samples: int = 10_000, seed: int | None = None
) -> tuple[dict[str, Any], list[Claim]]:
    """Random dyadic points off the cuts: single deepest cell, coherent itinerary.

    Consecutive sampled points farther apart than the realized mesh must sit
    in different deepest cells.
    """
    rng = np.random.default_rng(settings.SAMPLE_SEED if seed is None else seed)
    denom = 1 << 48
    raw = sorted({int(v) for v in rng.integers(0, denom, size=samples)})
    deepest = tree.levels[-1]
    mesh = deepest.mesh()
    skipped = 0
    incoherent = 0
    misplaced = 0
    cells: list[tuple[Fraction, int]] = []
    for v in raw:
        x = QI(Fraction(v, denom))
        if deepest.on_cut(x):
            skipped += 1
            continue
        codes = [Q.labels[Q.locate(x)] for Q in tree.levels]
        for k in range(tree.depth - 1):
            if tree.refine[k][codes[k + 1]] != codes[k]:
                incoherent += 1
                break
        j = deepest.locate(x)
        if not deepest.cell(j).contains(x):
            misplaced += 1
        cells.append((x.a, j))
    unseparated = sum(
        1
        for (x, i), (y, j) in zip(cells, cells[1:], strict=False)
        if i == j and QI(y - x) > mesh
    )
    report = {
        "samples": samples,
        "distinct": len(raw),
        "checked": len(cells),
        "on_cuts": skipped,
        "mesh": str(mesh),
        "seed": settings.SAMPLE_SEED if seed is None else seed,
    }
    claims = [
        holds("itineraries_coherent", incoherent == 0, f"{incoherent} incoherent"),
        holds("cells_hold_points", misplaced == 0, f"{misplaced} misplaced"),
        holds("far_points_separated", unseparated == 0, f"{unseparated} pairs"),
    ]
    return report, claims


# --- fattening and open covers --------------------------------------------------------------


def portmanteau_fatten(arcs: Sequence[Arc], eps: Fraction) -> tuple[Fraction, list[Arc]]:
    """δ = ε/(2·#components) and A₊ = {x : d(x, A) ≤ δ}, so |A₊| ≤ |A| + ε."""
    eps = Fraction(eps)
    if eps <= 0:
        raise InputError(f"ε must be positive, got {eps}")
    parts = merge_arcs(arcs)
    if not parts:
        return eps, []
    delta = eps / (2 * len(parts))
    if len(parts) == 1 and parts[0].full:
        return delta, parts
    grown = [
        Arc(a.start - delta, QI.of(1) if a.length + 2 * delta >= 1 else a.length + 2 * delta)
        for a in parts
    ]
    return delta, merge_arcs(grown)


@dataclass(frozen=True)
class OpenCover:
    """Open interiors of closed cells; the complement is the finite cut set."""

    arcs: tuple[Arc, ...]
    complement: tuple[QuadraticIrrational, ...]
    claims: tuple[Claim, ...] = ()


def disjoint_open_cover(
    eps: Fraction, offset: Scalar = 0, tree: CodingTree | None = None
) -> OpenCover:
    """Pairwise disjoint open arcs of length ≤ ε whose union has density 1.

    With a coding tree the cells of its first level of mesh ≤ ε are used,
    otherwise ⌈1/ε⌉ equal arcs starting at `offset`.
    """
    eps = Fraction(eps)
    if eps <= 0:
        raise InputError(f"ε must be positive, got {eps}")
    partition = None
    if tree is not None:
        partition = next((Q for Q in tree.levels if Q.mesh() <= eps), None)
        if partition is None:
            raise InputError(f"coding tree never reaches mesh <= {eps}")
    if partition is None:
        partition = uniform_partition(math.ceil(1 / eps), offset)
    arcs = tuple(partition.cells())
    claims = (
        holds("arcs_short", all(a.length <= eps for a in arcs), f"mesh {partition.mesh()}"),
        holds(
            "union_has_full_measure",
            sum((a.length for a in arcs), ZERO) == 1,
            f"complement: {len(partition.cuts)} points",
        ),
    )
    return OpenCover(arcs, partition.cuts, claims)
