"""Finitely generated amenable groups with computable normal forms.

Two families are supported:
- free abelian groups Z^d (coordinates are the integer vector)
- the discrete Heisenberg group, normal form (a, b, c) with
  (a, b, c)(a', b', c') = (a + a', b + b', c + c' + ab')

Finite subsets keep their elements as a lexicographically sorted, deduplicated
tuple of coordinate tuples. Product sets and symmetric differences are computed
on numpy integer arrays; every ratio returned to callers is an exact Fraction.
"""

from collections.abc import Callable, Iterable, Iterator
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from functools import cache, cached_property

import numpy as np
import structlog

from castleforge.config import settings
from castleforge.core.errors import (
    DescriptorMismatchError,
    EmptySetError,
    InputError,
    NotFoundError,
)

logger = structlog.get_logger()

Coords = tuple[int, ...]


class GroupKind(Enum):
    """Supported group families."""

    FREE_ABELIAN = "free-abelian"
    HEISENBERG = "discrete-heisenberg"


@dataclass(frozen=True)
class GroupDescriptor:
    kind: GroupKind
    rank: int = 1

    def __post_init__(self) -> None:
        if self.kind is GroupKind.FREE_ABELIAN and self.rank < 1:
            raise InputError(f"Z^d needs d >= 1, got {self.rank}")
        if self.kind is GroupKind.HEISENBERG and self.rank != 3:
            object.__setattr__(self, "rank", 3)

    @property
    def dim(self) -> int:
        """Number of integer coordinates in the normal form."""
        return self.rank

    @property
    def abelian(self) -> bool:
        return self.kind is GroupKind.FREE_ABELIAN

    def generators(self) -> list[Coords]:
        """Standard symmetric generating set, canonically ordered."""
        if self.abelian:
            gens = []
            for i in range(self.rank):
                for sign in (-1, 1):
                    v = [0] * self.rank
                    v[i] = sign
                    gens.append(tuple(v))
            return sorted(gens)
        return sorted([(-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0)])

    def __str__(self) -> str:
        if self.abelian:
            return "Z" if self.rank == 1 else f"Z^{self.rank}"
        return "heisenberg"


def parse_descriptor(text: str) -> GroupDescriptor:
    """Parse "Z", "Z^3" or "heisenberg"."""
    t = text.strip().lower().replace(" ", "")
    if t in ("heisenberg", "discrete-heisenberg", "h3"):
        return GroupDescriptor(GroupKind.HEISENBERG, 3)
    if t == "z":
        return GroupDescriptor(GroupKind.FREE_ABELIAN, 1)
    if t.startswith("z^"):
        try:
            return GroupDescriptor(GroupKind.FREE_ABELIAN, int(t[2:]))
        except ValueError as exc:
            raise InputError(f"Bad group descriptor {text!r}") from exc
    raise InputError(f"Unknown group descriptor {text!r}")


@dataclass(frozen=True, order=True)
class GroupElement:
    """A group element in normal form. Ordering is lexicographic on coordinates."""

    coords: Coords
    descriptor: GroupDescriptor = field(compare=False, repr=False)

    def __post_init__(self) -> None:
        if len(self.coords) != self.descriptor.dim:
            raise InputError(
                f"{self.descriptor} elements need {self.descriptor.dim} coordinates, "
                f"got {self.coords}"
            )

    @property
    def is_identity(self) -> bool:
        return not any(self.coords)

    def __str__(self) -> str:
        if len(self.coords) == 1:
            return str(self.coords[0])
        return "(" + ",".join(str(c) for c in self.coords) + ")"


def element(descriptor: GroupDescriptor, *coords: int) -> GroupElement:
    return GroupElement(tuple(int(c) for c in coords), descriptor)


def identity(descriptor: GroupDescriptor) -> GroupElement:
    return GroupElement((0,) * descriptor.dim, descriptor)


def _check_same(a: GroupDescriptor, b: GroupDescriptor) -> None:
    if a != b:
        raise DescriptorMismatchError(str(a), str(b))


def mul_coords(descriptor: GroupDescriptor, g: Coords, h: Coords) -> Coords:
    if descriptor.abelian:
        return tuple(x + y for x, y in zip(g, h, strict=True))
    a, b, c = g
    a2, b2, c2 = h
    return (a + a2, b + b2, c + c2 + a * b2)


def inv_coords(descriptor: GroupDescriptor, g: Coords) -> Coords:
    if descriptor.abelian:
        return tuple(-x for x in g)
    a, b, c = g
    return (-a, -b, a * b - c)


def multiply(g: GroupElement, h: GroupElement) -> GroupElement:
    """Group product gh in normal form.

    Raises:
        DescriptorMismatchError: if g and h live in different groups
    """
    _check_same(g.descriptor, h.descriptor)
    return GroupElement(mul_coords(g.descriptor, g.coords, h.coords), g.descriptor)


def inverse(g: GroupElement) -> GroupElement:
    return GroupElement(inv_coords(g.descriptor, g.coords), g.descriptor)


# --- array helpers ---------------------------------------------------------


def _rows(descriptor: GroupDescriptor, elements: Iterable[Coords]) -> np.ndarray:
    arr = np.array(list(elements), dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, descriptor.dim), dtype=np.int64)
    return arr.reshape(-1, descriptor.dim)


def _product_rows(descriptor: GroupDescriptor, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """All products xy for x in X, y in Y as an (|X||Y|, dim) array."""
    if descriptor.abelian:
        out = X[:, None, :] + Y[None, :, :]
    else:
        out = X[:, None, :] + Y[None, :, :]
        out[..., 2] += X[:, None, 0] * Y[None, :, 1]
    return out.reshape(-1, descriptor.dim)


def _unique_rows(R: np.ndarray) -> np.ndarray:
    if len(R) == 0:
        return R
    return np.unique(R, axis=0)


def _shared_keys(*arrays: np.ndarray) -> list[np.ndarray]:
    """Encode rows of several arrays as int64 keys under one mixed-radix code."""
    nonempty = [a for a in arrays if len(a)]
    if not nonempty:
        return [np.zeros(0, dtype=np.int64) for _ in arrays]
    stacked = np.concatenate(nonempty)
    lo = stacked.min(axis=0)
    span = stacked.max(axis=0) - lo + 1
    keys = []
    for a in arrays:
        if len(a) == 0:
            keys.append(np.zeros(0, dtype=np.int64))
            continue
        shifted = a - lo
        k = np.zeros(len(a), dtype=np.int64)
        for j in range(a.shape[1]):
            k = k * span[j] + shifted[:, j]
        keys.append(k)
    return keys


@dataclass(frozen=True)
class FiniteSubset:
    """A finite subset of a group, deduplicated and canonically ordered."""

    descriptor: GroupDescriptor
    elements: tuple[Coords, ...]

    @classmethod
    def of(
        cls, descriptor: GroupDescriptor, items: Iterable[Coords | GroupElement | int]
    ) -> "FiniteSubset":
        coords: set[Coords] = set()
        for item in items:
            if isinstance(item, GroupElement):
                _check_same(descriptor, item.descriptor)
                coords.add(item.coords)
            elif isinstance(item, int):
                coords.add((item,))
            else:
                c = tuple(int(x) for x in item)
                if len(c) != descriptor.dim:
                    raise InputError(f"Element {c} has wrong arity for {descriptor}")
                coords.add(c)
        return cls(descriptor, tuple(sorted(coords)))

    @classmethod
    def from_rows(cls, descriptor: GroupDescriptor, rows: np.ndarray) -> "FiniteSubset":
        uniq = _unique_rows(rows)
        return cls(descriptor, tuple(tuple(int(x) for x in r) for r in uniq.tolist()))

    @cached_property
    def array(self) -> np.ndarray:
        return _rows(self.descriptor, self.elements)

    @cached_property
    def _index(self) -> frozenset[Coords]:
        return frozenset(self.elements)

    def __len__(self) -> int:
        return len(self.elements)

    def __iter__(self) -> Iterator[GroupElement]:
        for c in self.elements:
            yield GroupElement(c, self.descriptor)

    def __contains__(self, g: object) -> bool:
        if isinstance(g, GroupElement):
            return g.coords in self._index
        return g in self._index

    def __str__(self) -> str:
        return "{" + ", ".join(str(g) for g in self) + "}"

    def _same(self, other: "FiniteSubset") -> None:
        _check_same(self.descriptor, other.descriptor)

    def union(self, other: "FiniteSubset") -> "FiniteSubset":
        self._same(other)
        return FiniteSubset(self.descriptor, tuple(sorted(self._index | other._index)))

    def intersection(self, other: "FiniteSubset") -> "FiniteSubset":
        self._same(other)
        return FiniteSubset(self.descriptor, tuple(sorted(self._index & other._index)))

    def difference(self, other: "FiniteSubset") -> "FiniteSubset":
        self._same(other)
        return FiniteSubset(self.descriptor, tuple(sorted(self._index - other._index)))

    def issubset(self, other: "FiniteSubset") -> bool:
        self._same(other)
        return self._index <= other._index

    def left_translate(self, g: GroupElement) -> "FiniteSubset":
        """The set gF."""
        return product_set(FiniteSubset(self.descriptor, (g.coords,)), self)

    def right_translate(self, g: GroupElement) -> "FiniteSubset":
        """The set Fg."""
        return product_set(self, FiniteSubset(self.descriptor, (g.coords,)))

    def radius(self) -> int:
        """Largest absolute coordinate; bounds how far an element moves a level."""
        if not self.elements:
            return 0
        return int(np.abs(self.array).max())


def product_set(A: FiniteSubset, B: FiniteSubset) -> FiniteSubset:
    """The product set AB = {ab : a in A, b in B}."""
    _check_same(A.descriptor, B.descriptor)
    if not len(A) or not len(B):
        return FiniteSubset(A.descriptor, ())
    return FiniteSubset.from_rows(A.descriptor, _product_rows(A.descriptor, A.array, B.array))


def inverse_set(F: FiniteSubset) -> FiniteSubset:
    return FiniteSubset.of(F.descriptor, (inv_coords(F.descriptor, c) for c in F.elements))


def power_set(L: FiniteSubset, q: int) -> FiniteSubset:
    """L^q, with L^0 = {e}."""
    out = FiniteSubset(L.descriptor, (identity(L.descriptor).coords,))
    for _ in range(q):
        out = product_set(L, out)
    return out


def symmetrize(L: FiniteSubset) -> FiniteSubset:
    """L ∪ L⁻¹ ∪ {e}."""
    e = FiniteSubset(L.descriptor, (identity(L.descriptor).coords,))
    return L.union(inverse_set(L)).union(e)


def invariance_defect(F: FiniteSubset, K: FiniteSubset) -> Fraction:
    """Return |KF Δ F| / |F|; F is (K, δ)-invariant iff the result is < δ.

    Raises:
        EmptySetError: if F is empty
    """
    _check_same(F.descriptor, K.descriptor)
    if not len(F):
        raise EmptySetError("F")
    if not len(K):
        return Fraction(1)
    KF = _unique_rows(_product_rows(F.descriptor, K.array, F.array))
    kf_keys, f_keys = _shared_keys(KF, F.array)
    sym = np.setxor1d(kf_keys, f_keys, assume_unique=True)
    return Fraction(int(len(sym)), len(F))


def ball(descriptor: GroupDescriptor, r: int) -> FiniteSubset:
    """Word-metric ball of radius r for the standard symmetric generators."""
    if r < 0:
        raise InputError(f"Ball radius must be >= 0, got {r}")
    return _ball_cached(descriptor, r)


@cache
def _ball_cached(descriptor: GroupDescriptor, r: int) -> FiniteSubset:
    if descriptor.abelian and descriptor.rank == 1:
        return FiniteSubset(descriptor, tuple((i,) for i in range(-r, r + 1)))
    if descriptor.abelian:
        # L1 ball, built coordinate by coordinate
        pts = np.zeros((1, 0), dtype=np.int64)
        for _ in range(descriptor.rank):
            rng = np.arange(-r, r + 1, dtype=np.int64)
            grid = np.concatenate(
                [np.repeat(pts, len(rng), axis=0), np.tile(rng, len(pts))[:, None]], axis=1
            )
            pts = grid[np.abs(grid).sum(axis=1) <= r]
        return FiniteSubset.from_rows(descriptor, pts)
    gens = _rows(descriptor, descriptor.generators())
    seen = _rows(descriptor, [identity(descriptor).coords])
    frontier = seen
    for _ in range(r):
        step = _unique_rows(_product_rows(descriptor, frontier, gens))
        s_keys, n_keys = _shared_keys(seen, step)
        fresh = step[~np.isin(n_keys, s_keys)]
        if not len(fresh):
            break
        seen = np.concatenate([seen, fresh])
        frontier = fresh
    return FiniteSubset.from_rows(descriptor, seen)


def folner_set(descriptor: GroupDescriptor, index: int) -> FiniteSubset:
    """Member `index` (>= 1) of the standard Følner family.

    Boxes [0, n)^d for Z^d, word balls of radius n for the Heisenberg group.
    """
    if index < 1:
        raise InputError(f"Følner index starts at 1, got {index}")
    return _folner_cached(descriptor, index)


@cache
def _folner_cached(descriptor: GroupDescriptor, index: int) -> FiniteSubset:
    if not descriptor.abelian:
        return ball(descriptor, index)
    axes = [np.arange(index, dtype=np.int64)] * descriptor.rank
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, descriptor.rank)
    return FiniteSubset(descriptor, tuple(tuple(int(x) for x in r) for r in mesh.tolist()))


@dataclass(frozen=True)
class FolnerFamily:
    """Indexed Følner sequence for a descriptor."""

    descriptor: GroupDescriptor

    def __getitem__(self, index: int) -> FiniteSubset:
        return folner_set(self.descriptor, index)

    def first(
        self,
        predicate: Callable[[FiniteSubset], bool],
        start: int = 1,
        index_bound: int | None = None,
    ) -> tuple[int, FiniteSubset] | None:
        """First (index, member) at or after `start` satisfying predicate."""
        bound = index_bound if index_bound is not None else settings.MAX_FOLNER_INDEX
        for n in range(start, bound + 1):
            F = self[n]
            if predicate(F):
                return n, F
        return None


def almost_invariant_margin(K: FiniteSubset, delta: Fraction) -> Fraction:
    """ε such that every (1−ε)-large subset of a (K,ε)-invariant set is (K,δ)-invariant.

    With ε = min(δ, |K|)/(2|K|+2):
        |KF' Δ F'| ≤ |KF Δ F| + |K||F∖F'| + |F∖F'| < (|K|+2)ε|F|
    and |F'| ≥ (1−ε)|F|, so the defect of F' is below (|K|+2)ε/(1−ε) ≤ min(δ, |K|).
    """
    if delta <= 0:
        raise InputError(f"δ must be positive, got {delta}")
    k = max(len(K), 1)
    return Fraction(min(Fraction(delta), Fraction(k)), 2 * k + 2)


def property_star_search(
    K: FiniteSubset, delta: Fraction, c: Fraction, index_bound: int | None = None
) -> FiniteSubset:
    """Scan the Følner family for F with |F⁻¹F| ≤ c|F| and both F, F⁻¹F (K,δ)-invariant.

    Raises:
        NotFoundError: when no index up to index_bound qualifies
    """
    if delta <= 0 or c <= 1:
        raise InputError(f"property (*) needs δ > 0 and c > 1, got δ={delta}, c={c}")
    family = FolnerFamily(K.descriptor)
    bound = index_bound if index_bound is not None else settings.MAX_FOLNER_INDEX
    for n in range(1, bound + 1):
        F = family[n]
        if invariance_defect(F, K) >= delta:
            continue
        D = product_set(inverse_set(F), F)
        if len(D) > c * len(F):
            if K.descriptor.abelian:
                # |F⁻¹F|/|F| = (2 - 1/n)^d only grows along boxes
                break
            continue
        if invariance_defect(D, K) < delta:
            logger.info("property_star_found", index=n, size=len(F), product_size=len(D))
            return F
    raise NotFoundError(f"No Følner member up to index {bound} has property (*) for c={c}")
