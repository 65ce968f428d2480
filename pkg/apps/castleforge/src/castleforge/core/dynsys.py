"""Free zero-dimensional systems behind one symbolic interface.

A system exposes atoms at resolution levels (level k atoms partition X, the
level k+1 atoms refine them) and an index table `shift_index(level, g, target)`
mapping every level atom x to the target-level atom containing g·x. Every
clopen operation (translation, refinement, boolean algebra, window counts) is
built from that one table.

Two families are implemented:
- odometers over Z^d: level k atoms are residue vectors modulo the level-k grid
- primitive substitution subshifts over Z: level k atoms are admissible words
  of length 2k+1 centred at the origin, with the action (g·x)_i = x_{i-g}
"""

import math
from abc import ABC, abstractmethod
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Any

import numpy as np
import structlog

from castleforge.config import settings
from castleforge.core.errors import (
    ConfigError,
    InputError,
    LevelTooCoarseError,
    NonPrimitiveSubstitutionError,
    NotFreeError,
)
from castleforge.core.group import (
    Coords,
    FiniteSubset,
    GroupDescriptor,
    GroupElement,
    GroupKind,
    identity,
)

logger = structlog.get_logger()


# --- measures ----------------------------------------------------------------


@dataclass(frozen=True)
class RationalInterval:
    """Closed interval [lo, hi] with rational endpoints."""

    lo: Fraction
    hi: Fraction

    def __post_init__(self) -> None:
        if self.lo > self.hi:
            raise ValueError(f"Empty interval [{self.lo}, {self.hi}]")

    @property
    def width(self) -> Fraction:
        return self.hi - self.lo

    def contains(self, x: Fraction) -> bool:
        return self.lo <= x <= self.hi

    def __add__(self, other: "RationalInterval") -> "RationalInterval":
        return RationalInterval(self.lo + other.lo, self.hi + other.hi)

    def scale(self, c: Fraction) -> "RationalInterval":
        if c >= 0:
            return RationalInterval(self.lo * c, self.hi * c)
        return RationalInterval(self.hi * c, self.lo * c)

    def __str__(self) -> str:
        return f"[{self.lo}, {self.hi}]"


Measure = Fraction | RationalInterval


def lower(m: Measure) -> Fraction:
    return m.lo if isinstance(m, RationalInterval) else m


def upper(m: Measure) -> Fraction:
    return m.hi if isinstance(m, RationalInterval) else m


# --- clopen sets ---------------------------------------------------------------


@dataclass(frozen=True)
class ClopenSet:
    """A union of level atoms, normalized to the coarsest level representing it.

    Build instances through `make_clopen` (or the system helpers) so that equal
    sets compare equal.
    """

    level: int
    atoms: frozenset[int]

    @cached_property
    def indices(self) -> np.ndarray:
        return np.array(sorted(self.atoms), dtype=np.int64)

    def __len__(self) -> int:
        return len(self.atoms)

    @property
    def empty(self) -> bool:
        return not self.atoms


# --- systems -------------------------------------------------------------------


class SymbolicSystem(ABC):
    """Common interface of the computable free systems."""

    descriptor: GroupDescriptor
    exact_translation: bool = False

    @abstractmethod
    def atom_count(self, level: int) -> int: ...

    @abstractmethod
    def loss(self, g: Coords) -> int:
        """Levels lost by translating a clopen set by g."""

    @abstractmethod
    def _shift_table(self, level: int, g: Coords, target: int) -> np.ndarray: ...

    @abstractmethod
    def atom_label(self, level: int, index: int) -> str: ...

    @abstractmethod
    def atom_index(self, level: int, label: str) -> int: ...

    @abstractmethod
    def measure_atoms(self, level: int, atoms: np.ndarray) -> Measure: ...

    @abstractmethod
    def freeness_level(self, g: Coords) -> int:
        """Smallest level at which translation by g ≠ e moves every atom."""

    @abstractmethod
    def describe(self) -> dict[str, Any]: ...

    def atom_measure(self, level: int, index: int) -> Measure:
        return self.measure_atoms(level, np.array([index], dtype=np.int64))

    def loss_set(self, F: FiniteSubset) -> int:
        return max((self.loss(c) for c in F.elements), default=0)

    def shift_index(self, level: int, g: Coords, target: int) -> np.ndarray:
        """Index array over level atoms x giving the target atom containing g·x."""
        required = target + self.loss(g)
        if level < required:
            raise LevelTooCoarseError(level, required)
        return self._shift_table(level, g, target)

    def coarsen_index(self, level: int, target: int) -> np.ndarray:
        return self.shift_index(level, identity(self.descriptor).coords, target)

    def level_for_atoms(self, n: int) -> int:
        """Smallest level with at least n atoms (capped by MAX_ATOMS)."""
        level = 0
        while self.atom_count(level) < n:
            if self.atom_count(level + 1) > settings.MAX_ATOMS:
                logger.warning("atom_cap_reached", level=level, wanted=n)
                break
            level += 1
        return level


def diameter_level(delta: Fraction) -> int:
    """Level whose atoms have diameter 2^-level < δ in the fixed convention."""
    level = 0
    while Fraction(1, 2**level) >= delta:
        level += 1
    return level


def _label_residues(residues: Sequence[int]) -> str:
    return ",".join(str(r) for r in residues)


class OdometerSystem(SymbolicSystem):
    """Z^d odometer; coordinate j uses the repeating base pattern bases[j]."""

    exact_translation = True

    def __init__(self, bases: Sequence[Sequence[int]]):
        if not bases or any(not b for b in bases):
            raise ConfigError("Odometer needs a nonempty base pattern per coordinate")
        if any(m < 1 for b in bases for m in b):
            raise ConfigError(f"Odometer bases must be positive: {bases}")
        self.bases = tuple(tuple(int(m) for m in b) for b in bases)
        self.descriptor = GroupDescriptor(GroupKind.FREE_ABELIAN, len(self.bases))
        self._grids: dict[int, tuple[int, ...]] = {}
        self._residues: dict[int, tuple[np.ndarray, ...]] = {}

    def __repr__(self) -> str:
        return f"OdometerSystem({[list(b) for b in self.bases]})"

    def describe(self) -> dict[str, Any]:
        return {"kind": "odometer", "bases": [list(b) for b in self.bases]}

    def grid(self, level: int) -> tuple[int, ...]:
        if level not in self._grids:
            self._grids[level] = tuple(
                math.prod(b[i % len(b)] for i in range(level)) for b in self.bases
            )
        return self._grids[level]

    def atom_count(self, level: int) -> int:
        return math.prod(self.grid(level))

    def loss(self, g: Coords) -> int:
        return 0

    def residues(self, level: int) -> tuple[np.ndarray, ...]:
        if level not in self._residues:
            grids = self.grid(level)
            self._residues[level] = tuple(
                np.asarray(r, dtype=np.int64)
                for r in np.unravel_index(np.arange(math.prod(grids), dtype=np.int64), grids)
            )
        return self._residues[level]

    def _shift_table(self, level: int, g: Coords, target: int) -> np.ndarray:
        tgrid = self.grid(target)
        if len(tgrid) == 1:
            n = self.atom_count(level)
            return (np.arange(n, dtype=np.int64) + g[0]) % tgrid[0]
        moved = [(r + gj) % m for r, gj, m in zip(self.residues(level), g, tgrid, strict=True)]
        return np.ravel_multi_index(moved, tgrid).astype(np.int64)

    def orbit_indices(self, level: int, v: int, rows: np.ndarray) -> np.ndarray:
        """Level atoms s·v for every row s of `rows`."""
        grids = self.grid(level)
        if len(grids) == 1:
            return (v + rows[:, 0]) % grids[0]
        r = np.array(np.unravel_index(v, grids), dtype=np.int64)
        moved = (r[None, :] + rows) % np.array(grids, dtype=np.int64)
        return np.ravel_multi_index(tuple(moved.T), grids).astype(np.int64)

    def atom_label(self, level: int, index: int) -> str:
        return _label_residues(np.unravel_index(index, self.grid(level)))

    def atom_index(self, level: int, label: str) -> int:
        try:
            parts = tuple(int(p) for p in label.split(","))
            return int(np.ravel_multi_index(parts, self.grid(level)))
        except ValueError as exc:
            raise InputError(f"Bad odometer atom {label!r} at level {level}") from exc

    def measure_atoms(self, level: int, atoms: np.ndarray) -> Measure:
        return Fraction(len(atoms), self.atom_count(level))

    def freeness_level(self, g: Coords) -> int:
        if not any(g):
            return 0
        if all(gj == 0 or math.prod(self.bases[j]) == 1 for j, gj in enumerate(g)):
            raise NotFreeError(f"Translation by {g} fixes every atom; the action is not free")
        level = 0
        while all(gj % m == 0 for gj, m in zip(g, self.grid(level), strict=True)):
            level += 1
        return level


class SubstitutionSystem(SymbolicSystem):
    """Two-sided subshift of a primitive aperiodic substitution, acted on by Z."""

    def __init__(self, rules: dict[str, str]):
        if not rules:
            raise ConfigError("Empty substitution")
        for letter, image in rules.items():
            if len(letter) != 1 or not image or any(ch not in rules for ch in image):
                raise ConfigError(f"Bad substitution rule {letter}->{image}")
        self.rules = dict(sorted(rules.items()))
        self.alphabet = tuple(self.rules)
        self.descriptor = GroupDescriptor(GroupKind.FREE_ABELIAN, 1)
        self._words: dict[int, tuple[str, ...]] = {}
        self._word_index: dict[int, dict[str, int]] = {}
        self._tables: dict[tuple[int, Coords, int], np.ndarray] = {}
        self._induced: dict[int, list[list[int]]] = {}
        if not primitivity_certificate(self.rules):
            raise NonPrimitiveSubstitutionError(
                f"Substitution {format_rules(self.rules)} is not primitive"
            )

    def __repr__(self) -> str:
        return f"SubstitutionSystem({format_rules(self.rules)!r})"

    def describe(self) -> dict[str, Any]:
        return {"kind": "substitution", "rules": format_rules(self.rules)}

    def apply(self, word: str, times: int = 1) -> str:
        for _ in range(times):
            word = "".join(self.rules[ch] for ch in word)
        return word

    @cached_property
    def legal_pairs(self) -> tuple[str, ...]:
        """Admissible two-letter words, closed under the substitution."""
        pairs: set[str] = set()
        for ch in self.alphabet:
            img = self.rules[ch]
            pairs.update(img[i : i + 2] for i in range(len(img) - 1))
        frontier = set(pairs)
        while frontier:
            fresh = set()
            for w in frontier:
                img = self.apply(w)
                for i in range(len(img) - 1):
                    p = img[i : i + 2]
                    if p not in pairs:
                        fresh.add(p)
            pairs |= fresh
            frontier = fresh
        if not pairs:
            # every image has length one: only constant words
            pairs = {ch + self.rules[ch] for ch in self.alphabet}
        return tuple(sorted(pairs))

    def words(self, n: int) -> tuple[str, ...]:
        """Sorted admissible words of length n."""
        if n not in self._words:
            if n <= 2:
                out = set(self.alphabet) if n == 1 else set(self.legal_pairs)
                if n == 0:
                    out = {""}
            else:
                depth = 0
                while min(len(self.apply(ch, depth)) for ch in self.alphabet) < n:
                    depth += 1
                out = set()
                for pair in self.legal_pairs:
                    img = self.apply(pair, depth)
                    out.update(img[i : i + n] for i in range(len(img) - n + 1))
            self._words[n] = tuple(sorted(out))
            self._word_index[n] = {w: i for i, w in enumerate(self._words[n])}
        return self._words[n]

    def level_words(self, level: int) -> tuple[str, ...]:
        return self.words(2 * level + 1)

    def atom_count(self, level: int) -> int:
        return len(self.level_words(level))

    def loss(self, g: Coords) -> int:
        return abs(g[0])

    def _shift_table(self, level: int, g: Coords, target: int) -> np.ndarray:
        key = (level, g, target)
        if key not in self._tables:
            words = self.level_words(level)
            self.level_words(target)
            index = self._word_index[2 * target + 1]
            start = level - target - g[0]
            stop = start + 2 * target + 1
            self._tables[key] = np.fromiter(
                (index[w[start:stop]] for w in words), dtype=np.int64, count=len(words)
            )
        return self._tables[key]

    def atom_label(self, level: int, index: int) -> str:
        return self.level_words(level)[index]

    def atom_index(self, level: int, label: str) -> int:
        self.level_words(level)
        try:
            return self._word_index[2 * level + 1][label]
        except KeyError as exc:
            raise InputError(f"{label!r} is not an admissible level-{level} word") from exc

    def _induced_substitution(self, n: int) -> list[list[int]]:
        """σ_n on admissible n-words: v ↦ the first |σ(v_0)| n-factors of σ(v)."""
        if n not in self._induced:
            words = self.words(n)
            index = self._word_index[n]
            table = []
            for v in words:
                img = self.apply(v)
                table.append([index[img[i : i + n]] for i in range(len(self.rules[v[0]]))])
            self._induced[n] = table
        return self._induced[n]

    def frequency(self, n: int, members: Iterable[int]) -> RationalInterval:
        """Enclosure of the measure of a union of n-word cylinders.

        Iterates exact integer count vectors of the induced substitution; each
        step takes mediants of the previous ratios, so [min, max] of the ratios
        shrinks monotonically around the unique invariant frequency.
        """
        words = self.words(n)
        chosen = set(members)
        if not chosen:
            return RationalInterval(Fraction(0), Fraction(0))
        if len(chosen) == len(words):
            return RationalInterval(Fraction(1), Fraction(1))
        table = self._induced_substitution(n)
        counts = [1 if i in chosen else 0 for i in range(len(words))]
        lengths = [1] * len(words)
        tol = settings.frequency_tolerance
        lo, hi = Fraction(0), Fraction(1)
        for _ in range(settings.MAX_FREQUENCY_STEPS):
            counts = [sum(counts[u] for u in row) for row in table]
            lengths = [sum(lengths[u] for u in row) for row in table]
            ratios = [Fraction(c, ln) for c, ln in zip(counts, lengths, strict=True)]
            lo, hi = max(lo, min(ratios)), min(hi, max(ratios))
            if hi - lo <= tol:
                break
        else:
            logger.warning("frequency_tolerance_not_reached", n=n, width=str(hi - lo))
        return RationalInterval(lo, hi)

    def measure_atoms(self, level: int, atoms: np.ndarray) -> Measure:
        return self.frequency(2 * level + 1, (int(a) for a in atoms))

    def has_period(self, length: int, period: int) -> bool:
        return any(w[:-period] == w[period:] for w in self.words(length))

    def freeness_level(self, g: Coords) -> int:
        p = abs(g[0])
        if p == 0:
            return 0

        def moves(level: int) -> bool:
            return not self.has_period(2 * level + 1 + p, p)

        cap = 64 * p + 1024
        hi = 1
        while not moves(hi):
            hi *= 2
            if 2 * hi + 1 + p > cap:
                raise NotFreeError(f"Admissible words of length > {cap} have period {p}")
        lo = 0
        while lo < hi:
            mid = (lo + hi) // 2
            if moves(mid):
                hi = mid
            else:
                lo = mid + 1
        return lo


def format_rules(rules: dict[str, str]) -> str:
    return "; ".join(f"{k}->{v}" for k, v in sorted(rules.items()))


def parse_rules(text: str) -> dict[str, str]:
    """Parse "a->ab; b->a"."""
    rules: dict[str, str] = {}
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        if "->" not in part:
            raise ConfigError(f"Bad substitution rule {part!r}")
        left, right = (s.strip() for s in part.split("->", 1))
        if left in rules:
            raise ConfigError(f"Duplicate rule for {left!r}")
        rules[left] = right
    return rules


def primitivity_certificate(rules: dict[str, str]) -> bool:
    """True iff the substitution matrix is primitive (Wielandt bound (n-1)^2+1)."""
    alphabet = sorted(rules)
    pos = {ch: i for i, ch in enumerate(alphabet)}
    n = len(alphabet)
    M = np.zeros((n, n), dtype=np.int64)
    for ch, img in rules.items():
        for c in img:
            M[pos[c], pos[ch]] += 1
    P = (M > 0).astype(np.int64)
    R = np.eye(n, dtype=np.int64)
    for _ in range((n - 1) ** 2 + 1):
        R = np.minimum(R @ P, 1)
    return bool(R.all())


def aperiodicity_certificate(
    sys: SubstitutionSystem, length: int | None = None, max_period: int | None = None
) -> bool:
    """True iff no admissible word of the given length has a period ≤ max_period."""
    L = length if length is not None else settings.APERIODICITY_WORD_LENGTH
    p = max_period if max_period is not None else settings.APERIODICITY_MAX_PERIOD
    return not any(sys.has_period(L, q) for q in range(1, min(p, L - 1) + 1))


def odometer(*bases: Sequence[int]) -> OdometerSystem:
    return OdometerSystem(bases)


def substitution(text: str) -> SubstitutionSystem:
    sys = SubstitutionSystem(parse_rules(text))
    if not aperiodicity_certificate(sys):
        raise NotFreeError(f"Substitution {text!r} fails the aperiodicity certificate")
    return sys


# --- clopen algebra --------------------------------------------------------------


def _mask(sys: SymbolicSystem, A: ClopenSet, level: int) -> np.ndarray:
    """Boolean indicator of A over the atoms of `level` (≥ A.level)."""
    base = np.zeros(sys.atom_count(A.level), dtype=bool)
    if A.atoms:
        base[A.indices] = True
    if level == A.level:
        return base
    if level < A.level:
        raise LevelTooCoarseError(level, A.level, "cannot coarsen a clopen set")
    return base[sys.coarsen_index(level, A.level)]


def indicator(sys: SymbolicSystem, A: ClopenSet, level: int) -> np.ndarray:
    return _mask(sys, A, level)


def make_clopen(sys: SymbolicSystem, level: int, atoms: Iterable[int] | np.ndarray) -> ClopenSet:
    """Normalize a set of level atoms to its coarsest representing level."""
    raw = atoms if isinstance(atoms, np.ndarray) else np.fromiter(atoms, dtype=np.int64)
    idx = np.unique(raw.astype(np.int64))
    while level > 0 and len(idx):
        n_coarse = sys.atom_count(level - 1)
        parents = sys.coarsen_index(level, level - 1)
        total = np.bincount(parents, minlength=n_coarse)
        hit = np.bincount(parents[idx], minlength=n_coarse)
        touched = hit > 0
        if not np.array_equal(hit[touched], total[touched]):
            break
        idx = np.nonzero(touched)[0].astype(np.int64)
        level -= 1
    if not len(idx):
        level = 0
    return ClopenSet(level, frozenset(int(i) for i in idx))


def from_mask(sys: SymbolicSystem, level: int, mask: np.ndarray) -> ClopenSet:
    return make_clopen(sys, level, np.nonzero(mask)[0])


def whole(sys: SymbolicSystem) -> ClopenSet:
    return ClopenSet(0, frozenset(range(sys.atom_count(0))))


def empty() -> ClopenSet:
    return ClopenSet(0, frozenset())


def from_labels(sys: SymbolicSystem, level: int, labels: Iterable[str]) -> ClopenSet:
    return make_clopen(sys, level, [sys.atom_index(level, lab) for lab in labels])


def congruence(sys: OdometerSystem, modulus: int, residues: Iterable[int]) -> ClopenSet:
    """{x : x ≡ r mod modulus for some r in residues} on a one-dimensional odometer."""
    if sys.descriptor.dim != 1:
        raise InputError("congruence classes are defined for Z-odometers")
    level = 0
    while sys.grid(level)[0] % modulus:
        level += 1
        if level > 64:
            raise InputError(f"Modulus {modulus} never divides the odometer grid")
    wanted = {r % modulus for r in residues}
    n = sys.grid(level)[0]
    return make_clopen(sys, level, [x for x in range(n) if x % modulus in wanted])


def cylinder(sys: SubstitutionSystem, word: str, anchor: int = 0) -> ClopenSet:
    """{x : x[anchor : anchor + len(word)] = word}."""
    if not word:
        return whole(sys)
    level = max(abs(anchor), abs(anchor + len(word) - 1))
    words = sys.level_words(level)
    start = level + anchor
    chosen = [i for i, w in enumerate(words) if w[start : start + len(word)] == word]
    return make_clopen(sys, level, chosen)


def refine(sys: SymbolicSystem, A: ClopenSet, level: int) -> np.ndarray:
    """Atom indices of A at a finer level (unnormalized)."""
    return np.nonzero(_mask(sys, A, level))[0].astype(np.int64)


def translate(sys: SymbolicSystem, A: ClopenSet, g: GroupElement | Coords) -> ClopenSet:
    """The image gA."""
    coords = g.coords if isinstance(g, GroupElement) else tuple(g)
    if A.empty or not any(coords):
        return A
    level = A.level + sys.loss(coords)
    inv = tuple(-c for c in coords)
    pre = sys.shift_index(level, inv, A.level)
    base = _mask(sys, A, A.level)
    return from_mask(sys, level, base[pre])


def translate_mask(sys: SymbolicSystem, A: ClopenSet, g: Coords, level: int) -> np.ndarray:
    """Indicator of gA at `level` (which must resolve the translate)."""
    inv = tuple(-c for c in g)
    return _mask(sys, A, A.level)[sys.shift_index(level, inv, A.level)]


def combine(
    sys: SymbolicSystem, op: str, A: ClopenSet, B: ClopenSet | None = None
) -> ClopenSet:
    """Boolean operation after refining to a common level.

    op is one of "union", "intersect", "minus", "complement" (B ignored).
    """
    if op == "complement":
        return from_mask(sys, A.level, ~_mask(sys, A, A.level))
    if B is None:
        raise InputError(f"combine({op!r}) needs two operands")
    level = max(A.level, B.level)
    a, b = _mask(sys, A, level), _mask(sys, B, level)
    if op == "union":
        out = a | b
    elif op == "intersect":
        out = a & b
    elif op == "minus":
        out = a & ~b
    else:
        raise InputError(f"Unknown clopen operation {op!r}")
    return from_mask(sys, level, out)


def union_all(sys: SymbolicSystem, sets: Iterable[ClopenSet]) -> ClopenSet:
    items = [s for s in sets if not s.empty]
    if not items:
        return empty()
    level = max(s.level for s in items)
    acc = np.zeros(sys.atom_count(level), dtype=bool)
    for s in items:
        acc |= _mask(sys, s, level)
    return from_mask(sys, level, acc)


def is_subset(sys: SymbolicSystem, A: ClopenSet, B: ClopenSet) -> bool:
    return combine(sys, "minus", A, B).empty


def disjoint(sys: SymbolicSystem, A: ClopenSet, B: ClopenSet) -> bool:
    return combine(sys, "intersect", A, B).empty


def measure(sys: SymbolicSystem, A: ClopenSet) -> Measure:
    """Exact Haar measure (odometer) or a frequency enclosure (substitution)."""
    return sys.measure_atoms(A.level, A.indices)


def freeness_certificate(sys: SymbolicSystem, F: FiniteSubset) -> int:
    """A level at which every non-identity element of F moves every atom."""
    return max((sys.freeness_level(c) for c in F.elements), default=0)


def window_counts(
    sys: SymbolicSystem, A: ClopenSet, F: FiniteSubset, level: int | None = None
) -> tuple[int, np.ndarray]:
    """Per-atom counts |A ∩ Fx| = Σ_{s∈F} 1_A(sx) at an evaluation level.

    The default level is max(freeness level of F, the level resolving the
    F-translates of A).
    """
    need = A.level + sys.loss_set(F)
    if level is None:
        level = max(need, freeness_certificate(sys, F))
    elif level < need:
        raise LevelTooCoarseError(level, need)
    base = _mask(sys, A, A.level)
    counts = np.zeros(sys.atom_count(level), dtype=np.int64)
    for s in F.elements:
        counts += base[sys.shift_index(level, s, A.level)]
    return level, counts
