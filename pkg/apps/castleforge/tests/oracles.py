"""Brute-force references the constructions are checked against.

Everything here works on plain Python sets and integers, one point at a time.
"""

from collections.abc import Iterable, Mapping, Sequence
from fractions import Fraction

from castleforge.core.dynsys import ClopenSet, OdometerSystem, indicator
from castleforge.core.group import Coords, FiniteSubset, mul_coords
from castleforge.core.tiling import Castle


def invariance_defect(F: FiniteSubset, K: FiniteSubset) -> Fraction:
    desc = F.descriptor
    base = set(F.elements)
    KF = {mul_coords(desc, k, f) for k in K.elements for f in F.elements}
    return Fraction(len(KF ^ base), len(base))


def kuhn_matching(left: Sequence[int], adj: Mapping[int, Iterable[int]]) -> dict[int, int]:
    """Maximum bipartite matching by one augmenting path per left vertex."""
    owner: dict[int, int] = {}

    def augment(u: int, seen: set[int]) -> bool:
        for v in adj.get(u, ()):
            if v in seen:
                continue
            seen.add(v)
            if v not in owner or augment(owner[v], seen):
                owner[v] = u
                return True
        return False

    for u in left:
        augment(u, set())
    return {u: v for v, u in owner.items()}


def atoms(sys: OdometerSystem, A: ClopenSet, level: int) -> list[int]:
    return [int(a) for a in indicator(sys, A, level).nonzero()[0]]


def subequivalence_feasible(
    sys: OdometerSystem, A: ClopenSet, B: ClopenSet, F: FiniteSubset, level: int
) -> bool:
    """Whether A's atoms can be injected into B's atoms by movers in F at `level`.

    On a Z-odometer a witness at any finer level averages down to a fractional
    matching here, so a negative answer rules out every witness with movers in F.
    """
    n = sys.atom_count(level)
    source = atoms(sys, A, level)
    target = set(atoms(sys, B, level))
    adj = {u: [(u + f[0]) % n for f in F.elements if (u + f[0]) % n in target] for u in source}
    return len(kuhn_matching(source, adj)) == len(source)


def castle_points(
    sys: OdometerSystem, castle: Castle, level: int
) -> list[list[tuple[int, Coords]]]:
    """For every residue x mod the level grid: the (tower, shape element) levels holding x.

    Only Z-odometers: the point s·b of a level is (b + s) mod N.
    """
    n = sys.atom_count(level)
    hits: list[list[tuple[int, Coords]]] = [[] for _ in range(n)]
    for i, tower in enumerate(castle.towers):
        for b in atoms(sys, tower.base, level):
            for s in tower.shape.elements:
                hits[(b + s[0]) % n].append((i, s))
    return hits
