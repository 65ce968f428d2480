from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from castleforge.core.dynsys import (
    RationalInterval,
    aperiodicity_certificate,
    combine,
    congruence,
    cylinder,
    disjoint,
    freeness_certificate,
    from_labels,
    is_subset,
    make_clopen,
    measure,
    odometer,
    parse_rules,
    primitivity_certificate,
    substitution,
    translate,
    union_all,
    whole,
    window_counts,
)
from castleforge.core.errors import (
    ConfigError,
    InputError,
    LevelTooCoarseError,
    NonPrimitiveSubstitutionError,
    NotFreeError,
)

from conftest import interval, ints

GOLDEN = (5**0.5 - 1) / 2


def test_odometer_grid_and_labels(odo23):
    assert odo23.grid(3) == (8, 27)
    assert odo23.atom_count(2) == 36
    label = odo23.atom_label(2, 7)
    assert odo23.atom_index(2, label) == 7


def test_make_clopen_normalizes_to_coarsest_level(base2):
    evens = make_clopen(base2, 4, [0, 2, 4, 6, 8, 10, 12, 14])
    assert evens.level == 1
    assert evens.atoms == frozenset({0})
    assert make_clopen(base2, 3, range(8)) == whole(base2)
    assert make_clopen(base2, 5, []).level == 0


def test_congruence_and_measure(base2):
    A = congruence(base2, 8, [3, 5, 6])
    assert A.level == 3
    assert measure(base2, A) == Fraction(3, 8)


def test_translation_is_exact_on_odometers(base2):
    A = congruence(base2, 8, [0])
    assert translate(base2, A, (3,)) == congruence(base2, 8, [3])
    assert translate(base2, A, (-1,)) == congruence(base2, 8, [7])


@given(st.sets(st.integers(0, 15)), st.integers(-40, 40))
def test_translation_preserves_measure(atoms, g):
    sys = odometer([2])
    A = make_clopen(sys, 4, atoms)
    assert measure(sys, translate(sys, A, (g,))) == measure(sys, A)


@given(st.sets(st.integers(0, 15)), st.sets(st.integers(0, 31)))
def test_boolean_algebra_against_residues(a, b):
    sys = odometer([2])
    A, B = make_clopen(sys, 4, a), make_clopen(sys, 5, b)
    lifted_a = {x for x in range(32) if x % 16 in a}
    union = combine(sys, "union", A, B)
    meet = combine(sys, "intersect", A, B)
    assert measure(sys, union) == Fraction(len(lifted_a | b), 32)
    assert measure(sys, meet) == Fraction(len(lifted_a & b), 32)
    assert disjoint(sys, combine(sys, "minus", A, B), B)
    assert is_subset(sys, meet, A)
    assert combine(sys, "complement", combine(sys, "complement", A)) == A


def test_union_all_of_nothing_is_empty(base2):
    assert union_all(base2, []).empty


def test_two_dimensional_translate(odo23):
    A = make_clopen(odo23, 1, [odo23.atom_index(1, "0,0")])
    moved = translate(odo23, A, (1, 2))
    assert moved == make_clopen(odo23, 1, [odo23.atom_index(1, "1,2")])


def test_odometer_rejects_bad_bases():
    with pytest.raises(ConfigError):
        odometer([])
    with pytest.raises(ConfigError):
        odometer([0])


def test_trivial_odometer_is_not_free():
    with pytest.raises(NotFreeError):
        odometer([1]).freeness_level((1,))


def test_freeness_levels(base2):
    assert base2.freeness_level((1,)) == 1
    assert base2.freeness_level((4,)) == 3
    assert freeness_certificate(base2, ints(-4, 0, 4)) == 3
    assert freeness_certificate(base2, interval(-3, 4)) == 2


def test_fibonacci_words(fib):
    assert fib.level_words(1) == ("aab", "aba", "baa", "bab")
    assert all("bb" not in w for w in fib.words(9))
    assert fib.atom_label(1, fib.atom_index(1, "bab")) == "bab"
    with pytest.raises(InputError):
        fib.atom_index(1, "bbb")


def test_fibonacci_letter_frequencies(fib):
    a = measure(fib, cylinder(fib, "a"))
    b = measure(fib, cylinder(fib, "b"))
    assert isinstance(a, RationalInterval)
    # [a] has frequency 1/φ; 1/φ² belongs to [b].
    assert float(a.lo) <= GOLDEN <= float(a.hi)
    assert float(b.lo) <= 1 - GOLDEN <= float(b.hi)
    assert a.width <= Fraction(1, 10**6)
    assert isinstance(b, RationalInterval)
    assert b.width <= Fraction(1, 10**6)
    assert not float(a.lo) <= 1 - GOLDEN <= float(a.hi)


def test_substitution_translation_loses_levels(fib):
    A = cylinder(fib, "a")
    moved = translate(fib, A, (2,))
    assert moved == cylinder(fib, "a", 2)


def test_substitution_coarse_level_is_rejected(fib):
    with pytest.raises(LevelTooCoarseError):
        fib.shift_index(0, (1,), 0)


def test_rule_parsing_and_certificates():
    assert parse_rules("a->ab; b->a") == {"a": "ab", "b": "a"}
    with pytest.raises(ConfigError):
        parse_rules("a=ab")
    assert primitivity_certificate({"a": "ab", "b": "a"})
    assert not primitivity_certificate({"a": "aa", "b": "ab"})
    with pytest.raises(NonPrimitiveSubstitutionError):
        substitution("a->aa; b->ab")
    assert aperiodicity_certificate(substitution("a->ab; b->ba"))


def test_periodic_substitution_is_refused():
    with pytest.raises(NotFreeError):
        substitution("a->ab; b->ab")


def test_labels_and_window_counts(base2):
    A = from_labels(base2, 2, ["0"])
    level, counts = window_counts(base2, A, ints(0, 1, 2, 3))
    assert level == 2
    assert np.all(counts == 1)
