"""Upper and lower Banach densities.

For clopen sets on the uniquely ergodic systems both densities equal the
invariant measure. Finite Følner windows give certified brackets: over every
level atom x, min and max of |A ∩ Fx| / |F|.
"""

from dataclasses import dataclass
from fractions import Fraction

import structlog

from castleforge.core.certificates import Claim, check, holds
from castleforge.core.dynsys import (
    ClopenSet,
    Measure,
    SymbolicSystem,
    combine,
    freeness_certificate,
    is_subset,
    lower,
    measure,
    translate,
    union_all,
    upper,
    window_counts,
)
from castleforge.core.errors import EmptySetError
from castleforge.core.group import FiniteSubset, invariance_defect, inverse_set

logger = structlog.get_logger()


@dataclass(frozen=True)
class DensityReport:
    exact: Measure
    window_lo: Fraction
    window_hi: Fraction
    window: FiniteSubset
    level: int

    @property
    def consistent(self) -> bool:
        return self.window_lo <= lower(self.exact) and upper(self.exact) <= self.window_hi


def window_density_bounds(
    sys: SymbolicSystem, A: ClopenSet, F: FiniteSubset, level: int | None = None
) -> tuple[Fraction, Fraction]:
    """(min_x, max_x) of |A ∩ Fx| / |F| over the atoms of the evaluation level."""
    if not len(F):
        raise EmptySetError("window F")
    _, counts = window_counts(sys, A, F, level)
    return Fraction(int(counts.min()), len(F)), Fraction(int(counts.max()), len(F))


def banach_density(sys: SymbolicSystem, A: ClopenSet) -> Measure:
    return measure(sys, A)


def density_report(sys: SymbolicSystem, A: ClopenSet, F: FiniteSubset) -> DensityReport:
    level, counts = window_counts(sys, A, F)
    return DensityReport(
        exact=banach_density(sys, A),
        window_lo=Fraction(int(counts.min()), len(F)),
        window_hi=Fraction(int(counts.max()), len(F)),
        window=F,
        level=level,
    )


def boundary_set(sys: SymbolicSystem, A: ClopenSet, K: FiniteSubset) -> ClopenSet:
    """KA Δ A."""
    KA = union_all(sys, (translate(sys, A, k) for k in K.elements))
    return combine(
        sys, "union", combine(sys, "minus", KA, A), combine(sys, "minus", A, KA)
    )


def kdelta_star_check(
    sys: SymbolicSystem, A: ClopenSet, K: FiniteSubset, delta: Fraction, F: FiniteSubset
) -> bool:
    """|(KA Δ A) ∩ Fx| < δ|A ∩ Fx| at every atom x of the evaluation level.

    An atom whose window misses A makes the check false (F too small).
    """
    if not len(F):
        raise EmptySetError("window F")
    boundary = boundary_set(sys, A, K)
    level = max(
        A.level + sys.loss_set(F),
        boundary.level + sys.loss_set(F),
        freeness_certificate(sys, F),
    )
    _, hits = window_counts(sys, A, F, level)
    _, edge = window_counts(sys, boundary, F, level)
    blind = hits == 0
    if blind.any():
        atom = int(blind.nonzero()[0][0])
        logger.warning(
            "kdelta_star_empty_window",
            atom=sys.atom_label(level, atom),
            level=level,
            window_size=len(F),
        )
        return False
    return bool((edge * delta.denominator < delta.numerator * hits).all())


def density_growth_check(
    sys: SymbolicSystem,
    A: ClopenSet,
    B: ClopenSet,
    T: FiniteSubset,
    eps: Fraction,
    delta: Fraction,
    window: FiniteSubset,
) -> list[Claim]:
    """Lower-density growth: hypotheses and conclusion of the (T⁻¹,δ)* step.

    When B ⊆ A, B is (T⁻¹,δ)*-invariant (tested with `window`) and
    |A ∩ Tx| ≥ ε|T| everywhere, then D̲(A) ≥ (1 − ε(1+δ)) D̲(B) + ε.
    """
    contained = is_subset(sys, B, A)
    star = B.empty or kdelta_star_check(sys, B, inverse_set(T), delta, window)
    _, counts = window_counts(sys, A, T)
    hit_ratio = Fraction(int(counts.min()), len(T))
    covering = hit_ratio >= eps
    hypotheses = contained and star and covering
    target = (1 - eps * (1 + delta)) * lower(measure(sys, B)) + eps
    conclusion = check("density_growth_conclusion", measure(sys, A), ">=", target, hard=False)
    return [
        holds("density_growth_b_in_a", contained, hard=False),
        holds("density_growth_star_invariance", star, hard=False),
        check("density_growth_window_hits", hit_ratio, ">=", eps, hard=False),
        Claim(
            "density_growth",
            conclusion.value,
            conclusion.relation,
            conclusion.bound,
            (not hypotheses) or conclusion.passed,
            hard=True,
            detail="hypotheses hold" if hypotheses else "hypotheses fail; conclusion not required",
        ),
    ]


def union_star_check(
    sys: SymbolicSystem,
    shapes: list[FiniteSubset],
    union: ClopenSet,
    K: FiniteSubset,
    eps: Fraction,
    delta: Fraction,
    window: FiniteSubset,
) -> list[Claim]:
    """Positive-density union of (K, δ(1−ε))-invariant ε-disjoint shapes is (K,δ)*-invariant.

    Shapes built by the clopen castle step are disjoint inside each tower, so
    ε-disjointness holds with the shapes themselves.
    """
    shapes_ok = all(invariance_defect(S, K) < delta * (1 - eps) for S in shapes)
    positive = lower(measure(sys, union)) > 0
    star = kdelta_star_check(sys, union, K, delta, window) if positive else False
    hypotheses = shapes_ok and positive
    return [
        holds("union_star_shape_invariance", shapes_ok, hard=False),
        holds("union_star_positive_density", positive, hard=False),
        holds(
            "union_star",
            (not hypotheses) or star,
            detail="(K,δ)* checked on one window" if hypotheses else "hypotheses fail",
            hard=False,
        ),
    ]
