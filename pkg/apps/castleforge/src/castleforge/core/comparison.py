"""Dynamical subequivalence, castle matching and almost finiteness.

A witness for A ≺ B is a list of clopen pieces of A, each with a mover s such
that the moved pieces sU are pairwise disjoint inside B. Witnesses are plain
data; `verify_witness` re-derives every containment exactly.
"""

import math
from collections import deque
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

import numpy as np
import structlog
from py_common.metrics import ATOMS_SWEPT, timed

from castleforge.core.certificates import Claim, check, failures, fmt, holds
from castleforge.core.dynsys import (
    ClopenSet,
    OdometerSystem,
    SymbolicSystem,
    combine,
    empty,
    indicator,
    is_subset,
    lower,
    make_clopen,
    measure,
    translate,
    translate_mask,
    union_all,
    upper,
    window_counts,
)
from castleforge.core.errors import (
    CastleTooSparseError,
    CoverageFailureError,
    EmptySetError,
    FolnerExhaustedError,
    HallViolationError,
    InputError,
    ReserveTooSmallError,
    VerificationError,
)
from castleforge.core.group import (
    Coords,
    FiniteSubset,
    FolnerFamily,
    GroupDescriptor,
    inv_coords,
    invariance_defect,
    inverse_set,
    mul_coords,
    product_set,
)
from castleforge.core.tiling import (
    Castle,
    Tower,
    castle_density,
    castle_level,
    castle_refine_by_partition,
    footprint,
    occupancy,
    ow_castle,
    remainder,
    verify_castle,
)

logger = structlog.get_logger()


@dataclass(frozen=True)
class Piece:
    part: ClopenSet
    mover: Coords
    color: int = 0


@dataclass(frozen=True)
class SubequivalenceWitness:
    """Pieces partitioning `source`, moved disjointly into `target`."""

    source: ClopenSet
    target: ClopenSet
    pieces: tuple[Piece, ...]
    transcript: tuple[str, ...] = ()

    @property
    def colors(self) -> int:
        return 1


@dataclass(frozen=True)
class ColoredWitness(SubequivalenceWitness):
    """Witness for ≺_m: moved pieces need only be disjoint within a color."""

    m: int = 0

    @property
    def colors(self) -> int:
        return self.m + 1


def _witness_level(sys: SymbolicSystem, w: SubequivalenceWitness) -> int:
    return max(
        [w.source.level, w.target.level]
        + [p.part.level + sys.loss(p.mover) for p in w.pieces]
        + [p.part.level for p in w.pieces]
    )


def verify_witness(sys: SymbolicSystem, w: SubequivalenceWitness) -> list[Claim]:
    """Pieces partition the source; images lie in the target, disjoint per color."""
    level = _witness_level(sys, w)
    n = sys.atom_count(level)
    cover = np.zeros(n, dtype=np.int64)
    for p in w.pieces:
        cover += indicator(sys, p.part, level)
    src = indicator(sys, w.source, level)
    tgt = indicator(sys, w.target, level)
    partition_ok = bool(np.array_equal(cover, src.astype(np.int64)))
    inside = True
    clash: list[str] = []
    bad_color = False
    for color in range(w.colors):
        used = np.zeros(n, dtype=bool)
        for p in w.pieces:
            if p.color != color:
                continue
            img = translate_mask(sys, p.part, p.mover, level)
            inside &= bool((img <= tgt).all())
            overlap = np.nonzero(img & used)[0]
            if len(overlap):
                clash.append(sys.atom_label(level, int(overlap[0])))
            used |= img
    for p in w.pieces:
        bad_color |= not 0 <= p.color < w.colors
    return [
        holds("pieces_partition_source", partition_ok),
        holds("images_inside_target", inside),
        holds(
            "images_disjoint",
            not clash,
            f"overlapping target atoms (level {level}): {clash[:5]}" if clash else "",
        ),
        holds("colors_in_range", not bad_color),
    ]


# --- greedy subequivalence ----------------------------------------------------


def greedy_window_margin(
    sys: SymbolicSystem, A: ClopenSet, B: ClopenSet, F: FiniteSubset
) -> tuple[int, np.ndarray, np.ndarray, np.ndarray]:
    """(level, A-indicator, |B ∩ Fx|, |A ∩ F⁻¹Fx|) at a common level.

    The greedy cannot fail when |B ∩ Fx| > |A ∩ F⁻¹Fx| for every x ∈ A.
    """
    FF = product_set(inverse_set(F), F)
    level = max(A.level + sys.loss_set(FF), B.level + sys.loss_set(F))
    _, hits_b = window_counts(sys, B, F, level)
    _, hits_a = window_counts(sys, A, FF, level)
    return level, indicator(sys, A, level), hits_b, hits_a


def window_condition(sys: SymbolicSystem, A: ClopenSet, B: ClopenSet, F: FiniteSubset) -> bool:
    if A.empty:
        return True
    _, in_a, hits_b, hits_a = greedy_window_margin(sys, A, B, F)
    return bool((hits_b[in_a] > hits_a[in_a]).all())


def choose_mover_window(
    sys: SymbolicSystem,
    A: ClopenSet,
    B: ClopenSet,
    start: int = 1,
    index_bound: int | None = None,
) -> FiniteSubset:
    """First Følner member F meeting the greedy's pointwise window condition.

    Raises:
        FolnerExhaustedError: no member up to index_bound qualifies
    """
    bound = index_bound if index_bound is not None else 512
    found = FolnerFamily(sys.descriptor).first(
        lambda F: window_condition(sys, A, B, F), start, bound
    )
    if found is None:
        raise FolnerExhaustedError(
            f"No Følner window up to index {bound} separates B from A", index_bound=bound
        )
    logger.debug("mover_window_chosen", index=found[0], size=len(found[1]))
    return found[1]


def subequiv_greedy(
    sys: SymbolicSystem, A: ClopenSet, B: ClopenSet, F: FiniteSubset
) -> SubequivalenceWitness:
    """A ≺ B by the greedy pass over F in canonical order.

    A_k = (A ∖ ⋃_{j<k} A_j) ∩ s_k⁻¹(B ∖ ⋃_{j<k} s_jA_j).
    The density and window preconditions are recorded in the transcript.

    Raises:
        CoverageFailureError: part of A stays uncovered
    """
    if not len(F):
        raise EmptySetError("mover set F")
    transcript = []
    if not A.empty:
        c = Fraction(len(product_set(inverse_set(F), F)), len(F))
        mu_a, mu_b = measure(sys, A), measure(sys, B)
        dens_ok = c * upper(mu_a) < lower(mu_b)
        transcript.append(f"density c*mu(A) < mu(B): {fmt(c)} * {mu_a} < {mu_b}: {dens_ok}")
        transcript.append(f"window condition: {window_condition(sys, A, B, F)}")
    rest, free = A, B
    pieces = []
    with timed("subequiv_greedy"):
        for s in F.elements:
            if rest.empty:
                break
            back = translate(sys, free, inv_coords(F.descriptor, s))
            part = combine(sys, "intersect", rest, back)
            if part.empty:
                continue
            pieces.append(Piece(part, s))
            rest = combine(sys, "minus", rest, part)
            free = combine(sys, "minus", free, translate(sys, part, s))
            logger.debug("greedy_piece_assigned", mover=list(s), atoms=len(part))
    if not rest.empty:
        level, _, hits_b, hits_a = greedy_window_margin(sys, A, B, F)
        fine = max(level, rest.level)
        x = int(np.nonzero(indicator(sys, rest, fine))[0][0])
        if fine > level:
            x = int(sys.coarsen_index(fine, level)[x])
        raise CoverageFailureError(
            sys.atom_label(level, x), level, int(hits_b[x]), int(hits_a[x])
        )
    witness = SubequivalenceWitness(A, B, tuple(pieces), tuple(transcript))
    failed = failures(verify_witness(sys, witness))
    if failed:
        raise VerificationError("greedy witness failed verification", failed)
    return witness


# --- bipartite matching ---------------------------------------------------------


def hopcroft_karp(
    left: Sequence[int], adj: Mapping[int, Sequence[int]]
) -> dict[int, int]:
    """Maximum matching left → right by layered augmenting paths.

    Vertices are visited in the given order, so the result is deterministic.
    """
    match_l: dict[int, int] = {}
    match_r: dict[int, int] = {}
    inf = math.inf

    def layer() -> tuple[dict[int, float], float]:
        dist: dict[int, float] = {}
        queue: deque[int] = deque()
        for u in left:
            if u in match_l:
                dist[u] = inf
            else:
                dist[u] = 0
                queue.append(u)
        found = inf
        while queue:
            u = queue.popleft()
            if dist[u] >= found:
                continue
            for v in adj.get(u, ()):
                w = match_r.get(v)
                if w is None:
                    found = min(found, dist[u] + 1)
                elif dist[w] == inf:
                    dist[w] = dist[u] + 1
                    queue.append(w)
        return dist, found

    def augment(root: int, dist: dict[int, float], found: float) -> bool:
        stack = [root]
        via: list[int] = []
        iters = {root: iter(adj.get(root, ()))}
        while stack:
            u = stack[-1]
            for v in iters[u]:
                w = match_r.get(v)
                if w is None:
                    if dist[u] + 1 == found:
                        for uk, vk in zip(stack, via + [v], strict=True):
                            match_l[uk] = vk
                            match_r[vk] = uk
                        return True
                elif dist[w] == dist[u] + 1 and w not in iters:
                    stack.append(w)
                    via.append(v)
                    iters[w] = iter(adj.get(w, ()))
                    break
            else:
                dist[u] = inf
                stack.pop()
                if via:
                    via.pop()
        return False

    while True:
        dist, found = layer()
        if found == inf:
            break
        grown = False
        for u in left:
            if u not in match_l:
                grown |= augment(u, dist, found)
        if not grown:
            break
    return match_l


def hall_deficiency(
    left: Sequence[int], adj: Mapping[int, Sequence[int]], matching: Mapping[int, int]
) -> tuple[list[int], list[int]]:
    """An unmatched vertex's alternating closure Z with |N(Z)| < |Z|."""
    match_r = {v: u for u, v in matching.items()}
    root = next(u for u in left if u not in matching)
    Z, N = [root], []
    seen_l, seen_r = {root}, set()
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for v in adj.get(u, ()):
            if v in seen_r:
                continue
            seen_r.add(v)
            N.append(v)
            w = match_r.get(v)
            if w is not None and w not in seen_l:
                seen_l.add(w)
                Z.append(w)
                queue.append(w)
    return sorted(Z), sorted(N)


def default_reserve_fraction(d: Fraction) -> Fraction:
    """r = 2d/(1−d): the first ⌈r|S_i|⌉ slots of each tower then have density ≥ 2d."""
    if d >= 1:
        raise ReserveTooSmallError(Fraction(0), 2 * d)
    return min(Fraction(1), 2 * d / (1 - d))


def match_to_partition(
    sys: SymbolicSystem,
    castle: Castle,
    F: FiniteSubset,
    reserve_fraction: Fraction | None = None,
    K: FiniteSubset | None = None,
    delta: Fraction | None = None,
) -> Castle:
    """Absorb the remainder into reserve tower levels: the output partitions X.

    The reserve is the first ⌈reserve_fraction·|S_i|⌉ shape slots of every
    tower; without a fraction, `default_reserve_fraction` of the remainder
    density d is used. An uncovered atom u is matched to a reserve atom
    v = f·u (f ∈ F); if v = s·b for a base atom b, the tower over b gains the
    element f⁻¹s.

    Raises:
        InputError: the system does not translate atoms exactly
        ReserveTooSmallError: the reserve has density below 2d
        HallViolationError: no matching saturates the uncovered atoms
    """
    if not isinstance(sys, OdometerSystem):
        raise InputError("match_to_partition needs atom-exact translation (odometers)")
    level = castle_level(sys, castle)
    n_atoms = sys.atom_count(level)
    covered = occupancy(sys, castle, level) > 0
    uncovered = [int(u) for u in np.nonzero(~covered)[0]]
    if not uncovered:
        logger.info("match_nothing_uncovered", towers=len(castle))
        return castle
    d = Fraction(len(uncovered), n_atoms)
    if reserve_fraction is None:
        reserve_fraction = default_reserve_fraction(d)
    reserve_fraction = Fraction(reserve_fraction)

    reserve: dict[int, tuple[int, int, Coords]] = {}
    base_atoms: list[np.ndarray] = []
    for i, tower in enumerate(castle.towers):
        atoms = np.nonzero(indicator(sys, tower.base, level))[0]
        base_atoms.append(atoms)
        slots = math.ceil(reserve_fraction * len(tower.shape))
        for s in tower.shape.elements[:slots]:
            row = np.array([s], dtype=np.int64)
            for b in atoms:
                v = int(sys.orbit_indices(level, int(b), row)[0])
                reserve[v] = (i, int(b), s)
    reserve_density = Fraction(len(reserve), n_atoms)
    if reserve_density < 2 * d:
        raise ReserveTooSmallError(reserve_density, 2 * d)

    rows = F.array
    adj: dict[int, list[int]] = {}
    via: dict[tuple[int, int], Coords] = {}
    for u in uncovered:
        adj[u] = []
        for f, v in zip(F.elements, sys.orbit_indices(level, u, rows), strict=True):
            if int(v) in reserve and (u, int(v)) not in via:
                via[(u, int(v))] = f
                adj[u].append(int(v))
    with timed("match_to_partition"):
        matching = hopcroft_karp(uncovered, adj)
    ATOMS_SWEPT.labels(operation="match_to_partition").inc(len(uncovered))
    logger.info(
        "matching_augmented", uncovered=len(uncovered), reserve=len(reserve), matched=len(matching)
    )
    if len(matching) < len(uncovered):
        Z, N = hall_deficiency(uncovered, adj, matching)
        raise HallViolationError(
            [sys.atom_label(level, u) for u in Z], [sys.atom_label(level, v) for v in N]
        )

    desc = F.descriptor
    extras: dict[tuple[int, int], list[Coords]] = {}
    for u, v in matching.items():
        i, b, s = reserve[v]
        f = via[(u, v)]
        extras.setdefault((i, b), []).append(mul_coords(desc, inv_coords(desc, f), s))

    towers: list[Tower] = []
    for i, tower in enumerate(castle.towers):
        groups: dict[tuple[Coords, ...], list[int]] = {}
        for b in base_atoms[i]:
            key = tuple(sorted(extras.get((i, int(b)), [])))
            groups.setdefault(key, []).append(int(b))
        for key, atoms in sorted(groups.items()):
            shape = tower.shape.union(FiniteSubset(desc, key)) if key else tower.shape
            towers.append(Tower(make_clopen(sys, level, atoms), shape))
    out = Castle(tuple(towers), dict(castle.provenance))

    claims = verify_castle(sys, out)
    claims.append(check("footprint_is_x", measure(sys, footprint(sys, out)), "==", 1))
    slot_share = max(
        (Fraction(len(k), len(castle.towers[i].shape)) for (i, _), k in extras.items()),
        default=Fraction(0),
    )
    claims.append(
        holds(
            "extras_within_reserve",
            all(
                len(k) <= math.ceil(reserve_fraction * len(castle.towers[i].shape))
                for (i, _), k in extras.items()
            ),
            f"largest modified share {fmt(slot_share)}",
        )
    )
    claims.append(check("reserve_density", reserve_density, ">=", 2 * d))
    if K is not None and delta is not None:
        realized = max(
            (invariance_defect(t.shape, K) for t in out.towers if len(t.shape)),
            default=Fraction(0),
        )
        claims.append(
            check("matched_shape_defect", realized, "<=", delta + 2 * reserve_fraction, hard=False)
        )
    failed = failures(claims)
    if failed:
        raise VerificationError("matched castle failed its checks", failed)
    provenance = dict(castle.provenance)
    provenance.update(
        matched=len(matching), reserve_fraction=fmt(reserve_fraction), mover_window=len(F)
    )
    return Castle(out.towers, provenance, tuple(claims))


# --- almost finiteness ------------------------------------------------------------


@dataclass(frozen=True)
class AlmostFiniteWitness:
    castle: Castle
    chunks: tuple[tuple[FiniteSubset, ...], ...]
    selection: tuple[FiniteSubset, ...]
    colored: SubequivalenceWitness
    witness: SubequivalenceWitness
    claims: tuple[Claim, ...] = ()
    info: dict[str, Any] = field(default_factory=dict, compare=False, hash=False)


def _levels_union(
    sys: SymbolicSystem, castle: Castle, parts: Sequence[FiniteSubset]
) -> ClopenSet:
    return union_all(
        sys,
        (
            translate(sys, t.base, s)
            for t, S in zip(castle.towers, parts, strict=True)
            for s in S.elements
        ),
    )


def _flatten(
    sys: SymbolicSystem,
    castle: Castle,
    chunks: Sequence[Sequence[FiniteSubset]],
    colored: SubequivalenceWitness,
    target: ClopenSet,
) -> SubequivalenceWitness:
    """Send color j through φ_{i,j}: S_{i,0} → S_{i,j} (k-th element to k-th)."""
    desc = sys.descriptor
    pieces = []
    for p in colored.pieces:
        back = inv_coords(desc, p.mover)
        for i, tower in enumerate(castle.towers):
            zero, dest = chunks[i][0], chunks[i][p.color]
            for t, phi_t in zip(zero.elements, dest.elements, strict=True):
                landing = translate(sys, translate(sys, tower.base, t), back)
                W = combine(sys, "intersect", p.part, landing)
                if W.empty:
                    continue
                mover = mul_coords(desc, mul_coords(desc, phi_t, inv_coords(desc, t)), p.mover)
                pieces.append(Piece(W, mover))
    return SubequivalenceWitness(
        colored.source, target, tuple(pieces), colored.transcript + ("flattened via φ",)
    )


def almost_finite_witness(
    sys: SymbolicSystem,
    castle: Castle,
    n: int,
    m: int = 0,
    colored: ColoredWitness | None = None,
) -> AlmostFiniteWitness:
    """Selections S_i′ ⊆ S_i with |S_i′| < |S_i|/n and X ∖ ⋃S_iV_i ≺ ⋃S_i′V_i.

    With q = (m+1)n each shape is cut into canonical chunks S_{i,0..m} of size
    κ = ⌊|S_i|/(2q)⌋ + 1. The remainder is compared into ⋃S_{i,0}V_i, by the
    greedy when no colored witness is supplied, then flattened.

    Raises:
        CastleTooSparseError: density ≤ 1 − 1/(2q+1) or a shape below 2q slots
    """
    if n < 1 or m < 0:
        raise InputError(f"need n >= 1 and m >= 0, got n={n}, m={m}")
    q = (m + 1) * n
    density = castle_density(sys, castle)
    need = 1 - Fraction(1, 2 * q + 1)
    if lower(density) <= need:
        raise CastleTooSparseError(
            f"castle density {density} <= {need}", realized=density, required=need
        )
    chunks = []
    for tower in castle.towers:
        size = len(tower.shape)
        kappa = size // (2 * q) + 1
        if kappa * q >= size:
            raise CastleTooSparseError(
                f"shape of size {size} admits no κ with |S|/(2q) < κ < |S|/q for q={q}",
                realized=size,
                required=2 * q,
            )
        el = tower.shape.elements
        chunks.append(
            tuple(
                FiniteSubset(tower.shape.descriptor, el[j * kappa : (j + 1) * kappa])
                for j in range(m + 1)
            )
        )
    selection = tuple(
        FiniteSubset(t.shape.descriptor, tuple(sorted(e for c in cs for e in c.elements)))
        for t, cs in zip(castle.towers, chunks, strict=True)
    )
    A = remainder(sys, castle)
    B = _levels_union(sys, castle, [cs[0] for cs in chunks])
    with timed("almost_finite_witness"):
        if colored is not None:
            if colored.source != A or not is_subset(sys, colored.target, B):
                raise InputError("colored witness must map the remainder into the S_{i,0} levels")
            base_witness: SubequivalenceWitness = colored
        elif A.empty:
            base_witness = SubequivalenceWitness(A, B, ())
        else:
            F = choose_mover_window(sys, A, B)
            base_witness = subequiv_greedy(sys, A, B, F)
        target = _levels_union(sys, castle, list(selection))
        flat = _flatten(sys, castle, chunks, base_witness, target)

    claims = verify_witness(sys, base_witness)
    claims += verify_witness(sys, flat)
    claims.append(
        holds(
            "selection_small",
            all(
                len(sel) * n < len(t.shape)
                for sel, t in zip(selection, castle.towers, strict=True)
            ),
        )
    )
    claims.append(check("castle_density", density, ">", need))
    failed = failures(claims)
    if failed:
        raise VerificationError("almost finiteness witness failed", failed)
    logger.info("almost_finite_witness_built", n=n, m=m, pieces=len(flat.pieces))
    return AlmostFiniteWitness(
        castle, tuple(chunks), selection, base_witness, flat, tuple(claims), {"q": q}
    )


def af_from_comparison(
    sys: SymbolicSystem, K: FiniteSubset, delta: Fraction, n: int
) -> AlmostFiniteWitness:
    """(K,δ)-invariant castle and an m=0 witness of almost finiteness for n."""
    eps = Fraction(1, 2 * n + 2)
    castle = ow_castle(sys, K, delta, eps)
    return almost_finite_witness(sys, castle, n, 0)


# --- almost divisibility ------------------------------------------------------------


@dataclass(frozen=True)
class Division:
    parts: tuple[ClopenSet, ...]
    claims: tuple[Claim, ...]


def almost_divisible(
    sys: SymbolicSystem, U: ClopenSet, m: int, eta: Fraction
) -> Division:
    """m disjoint clopen subsets of U, each of density ≥ μ(U)/m − η.

    An internal castle (generators, δ = η, ε = η/2) is refined by {U, X∖U};
    in tower j the slots S_j′ = {s : sV_j ⊆ U} are cut canonically into m
    blocks of size ⌊|S_j′|/m⌋ or ⌈|S_j′|/m⌉ and part i collects block i.

    Raises:
        EmptySetError: U has density 0
    """
    eta = Fraction(eta)
    if m < 1 or eta <= 0:
        raise InputError(f"need m >= 1 and η > 0, got m={m}, η={eta}")
    mu = measure(sys, U)
    if upper(mu) == 0:
        raise EmptySetError("U (density 0)")
    desc: GroupDescriptor = sys.descriptor
    K = FiniteSubset.of(desc, desc.generators())
    castle = ow_castle(sys, K, eta, eta / 2)
    refined = castle_refine_by_partition(sys, castle, [U, combine(sys, "complement", U)])
    blocks: list[list[ClopenSet]] = [[] for _ in range(m)]
    for tower in refined.towers:
        inside = [
            s for s in tower.shape.elements if is_subset(sys, translate(sys, tower.base, s), U)
        ]
        q, r = divmod(len(inside), m)
        start = 0
        for i in range(m):
            size = q + (1 if i < r else 0)
            for s in inside[start : start + size]:
                blocks[i].append(translate(sys, tower.base, s))
            start += size
    parts = [union_all(sys, b) if b else empty() for b in blocks]

    bound = lower(mu) / m - eta
    claims = [check(f"part_{i}_density", measure(sys, P), ">=", bound) for i, P in enumerate(parts)]
    claims.append(holds("parts_inside_u", all(is_subset(sys, P, U) for P in parts)))
    claims.append(
        holds(
            "parts_disjoint",
            all(
                combine(sys, "intersect", parts[i], parts[j]).empty
                for i in range(m)
                for j in range(i + 1, m)
            ),
        )
    )
    failed = failures(claims)
    if failed:
        raise VerificationError("almost divisibility failed", failed)
    logger.info("almost_divisible_built", m=m, eta=str(eta), towers=len(refined))
    return Division(tuple(parts), tuple(claims))
