from fractions import Fraction

from hypothesis import given
from hypothesis import strategies as st

from castleforge.core.density import (
    banach_density,
    boundary_set,
    density_growth_check,
    density_report,
    kdelta_star_check,
    union_star_check,
    window_density_bounds,
)
from castleforge.core.dynsys import (
    congruence,
    cylinder,
    empty,
    lower,
    make_clopen,
    measure,
    odometer,
    upper,
    whole,
)

from conftest import interval, ints


def by_name(claims):
    return {c.name: c for c in claims}


def test_window_brackets_on_the_odometer(base2):
    A = congruence(base2, 8, [0])
    assert window_density_bounds(base2, A, interval(0, 8)) == (Fraction(1, 8), Fraction(1, 8))
    assert window_density_bounds(base2, A, interval(0, 4)) == (Fraction(0), Fraction(1, 4))


@given(st.sets(st.integers(0, 15)), st.integers(1, 40))
def test_windows_bracket_the_measure(atoms, n):
    sys = odometer([2])
    A = make_clopen(sys, 4, atoms)
    lo, hi = window_density_bounds(sys, A, interval(0, n))
    assert lo <= measure(sys, A) <= hi


def test_report_on_fibonacci_is_consistent(fib):
    report = density_report(fib, cylinder(fib, "a"), interval(0, 34))
    assert report.consistent
    assert report.window_lo <= lower(report.exact)
    assert upper(banach_density(fib, cylinder(fib, "a"))) <= report.window_hi


def test_boundary_of_half_the_residues(base2):
    A = congruence(base2, 4, [0, 1])
    B = boundary_set(base2, A, ints(1))
    assert B == congruence(base2, 4, [0, 2])


def test_star_invariance(base2):
    A = congruence(base2, 8, [0])
    assert kdelta_star_check(base2, whole(base2), ints(1), Fraction(1, 5), interval(0, 4))
    assert not kdelta_star_check(base2, A, ints(1), Fraction(1, 2), interval(0, 8))
    assert kdelta_star_check(base2, A, ints(1), Fraction(3), interval(0, 8))


def test_star_invariance_fails_on_blind_windows(base2):
    A = congruence(base2, 8, [0])
    assert not kdelta_star_check(base2, A, ints(1), Fraction(3), ints(0))


def test_density_growth_from_empty_start(base2):
    claims = by_name(
        density_growth_check(
            base2,
            whole(base2),
            empty(),
            interval(0, 4),
            Fraction(1, 2),
            Fraction(1, 5),
            interval(0, 8),
        )
    )
    assert claims["density_growth_b_in_a"].passed
    assert claims["density_growth_window_hits"].passed
    assert claims["density_growth"].passed
    assert claims["density_growth"].detail == "hypotheses hold"


def test_density_growth_not_required_without_hypotheses(base2):
    claims = by_name(
        density_growth_check(
            base2,
            congruence(base2, 4, [0]),
            congruence(base2, 4, [1]),
            interval(0, 4),
            Fraction(1, 2),
            Fraction(1, 5),
            interval(0, 8),
        )
    )
    assert not claims["density_growth_b_in_a"].passed
    assert claims["density_growth"].passed
    assert claims["density_growth"].hard


def test_union_star_on_full_union(base2):
    claims = by_name(
        union_star_check(
            base2,
            [interval(0, 61)],
            whole(base2),
            ints(-1, 1),
            Fraction(1, 30),
            Fraction(1, 5),
            interval(0, 61),
        )
    )
    assert claims["union_star_shape_invariance"].passed
    assert claims["union_star_positive_density"].passed
    assert claims["union_star"].passed
