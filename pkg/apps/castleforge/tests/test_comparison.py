from fractions import Fraction

import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from castleforge.core.certificates import all_pass
from castleforge.core.comparison import (
    ColoredWitness,
    Piece,
    SubequivalenceWitness,
    af_from_comparison,
    almost_divisible,
    almost_finite_witness,
    choose_mover_window,
    default_reserve_fraction,
    hopcroft_karp,
    match_to_partition,
    subequiv_greedy,
    verify_witness,
    window_condition,
)
from castleforge.core.dynsys import (
    congruence,
    empty,
    is_subset,
    make_clopen,
    measure,
    odometer,
    whole,
)
from castleforge.core.errors import (
    CastleTooSparseError,
    CoverageFailureError,
    EmptySetError,
    HallViolationError,
    InputError,
    ReserveTooSmallError,
)
from castleforge.core.tiling import footprint, ow_castle, rokhlin_castle

import oracles
from conftest import interval, ints

FIFTH = Fraction(1, 5)


def by_name(claims):
    return {c.name: c for c in claims}


@pytest.fixture
def castle(base2):
    return ow_castle(base2, ints(-1, 1), FIFTH, FIFTH)


# --- matching ---------------------------------------------------------------------


@given(
    st.dictionaries(
        st.integers(0, 7), st.lists(st.integers(0, 7), max_size=4, unique=True), max_size=8
    )
)
def test_hopcroft_karp_is_maximum(adj):
    left = sorted(adj)
    fast = hopcroft_karp(left, adj)
    assert len(fast) == len(oracles.kuhn_matching(left, adj))
    assert len(set(fast.values())) == len(fast)
    assert all(v in adj[u] for u, v in fast.items())


# --- greedy subequivalence --------------------------------------------------------------


def test_greedy_moves_zero_class_by_three(base2):
    A, B = congruence(base2, 8, [0]), congruence(base2, 8, [3, 5, 6])
    F = choose_mover_window(base2, A, B)
    assert F == interval(0, 6)
    witness = subequiv_greedy(base2, A, B, F)
    assert [p.mover for p in witness.pieces] == [(3,)]
    assert witness.pieces[0].part == A
    assert all_pass(verify_witness(base2, witness))


def test_greedy_with_empty_source(base2):
    witness = subequiv_greedy(base2, empty(), congruence(base2, 2, [0]), ints(0))
    assert witness.pieces == ()


def test_greedy_needs_movers(base2):
    with pytest.raises(EmptySetError):
        subequiv_greedy(base2, whole(base2), whole(base2), ints())


@given(
    st.sets(st.integers(0, 15), min_size=1, max_size=2),
    st.sets(st.integers(0, 15), min_size=8),
    st.integers(2, 6),
)
@settings(max_examples=80, deadline=None, suppress_health_check=[HealthCheck.filter_too_much])
def test_window_condition_guarantees_success(a, b, k):
    sys = odometer([2])
    A, B, F = make_clopen(sys, 4, a), make_clopen(sys, 4, b), interval(0, k)
    assume(window_condition(sys, A, B, F))
    witness = subequiv_greedy(sys, A, B, F)
    assert all_pass(verify_witness(sys, witness))


@given(
    st.sets(st.integers(0, 15), min_size=4),
    st.sets(st.integers(0, 15), max_size=6),
    st.integers(1, 6),
)
@settings(max_examples=80, deadline=None, suppress_health_check=[HealthCheck.filter_too_much])
def test_infeasible_instances_fail_loudly(a, b, k):
    sys = odometer([2])
    A, B, F = make_clopen(sys, 4, a), make_clopen(sys, 4, b), interval(0, k)
    assume(not oracles.subequivalence_feasible(sys, A, B, F, 4))
    with pytest.raises(CoverageFailureError):
        subequiv_greedy(sys, A, B, F)


def test_colliding_pieces_are_named(base2):
    A, B = congruence(base2, 4, [0, 1]), congruence(base2, 4, [2])
    pieces = (Piece(congruence(base2, 4, [0]), (2,)), Piece(congruence(base2, 4, [1]), (1,)))
    claims = by_name(verify_witness(base2, SubequivalenceWitness(A, B, pieces)))
    assert claims["pieces_partition_source"].passed
    assert claims["images_inside_target"].passed
    assert not claims["images_disjoint"].passed
    assert "overlapping target atoms" in claims["images_disjoint"].detail


def test_colors_separate_colliding_pieces(base2):
    A, B = congruence(base2, 4, [0, 1]), congruence(base2, 4, [2])
    pieces = (
        Piece(congruence(base2, 4, [0]), (2,), color=0),
        Piece(congruence(base2, 4, [1]), (1,), color=1),
    )
    witness = ColoredWitness(A, B, pieces, m=1)
    assert witness.colors == 2
    assert all_pass(verify_witness(base2, witness))


# --- remainder matching -------------------------------------------------------------------


def test_match_absorbs_the_remainder(base2, castle):
    matched = match_to_partition(base2, castle, interval(-160, 161), FIFTH, ints(-1, 1), FIFTH)
    assert footprint(base2, matched) == whole(base2)
    assert matched.provenance["matched"] == 38
    claims = by_name(matched.claims)
    assert claims["footprint_is_x"].passed
    assert claims["extras_within_reserve"].passed
    assert claims["reserve_density"].value == "97/512"
    hits = oracles.castle_points(base2, matched, 9)
    assert all(len(h) == 1 for h in hits)


def test_default_reserve_is_twice_the_remainder(base2, castle):
    # d = 38/512, so r = 2d/(1-d) = 38/237 and the reserve holds 10 + 7·10 atoms.
    assert default_reserve_fraction(Fraction(38, 512)) == Fraction(38, 237)
    matched = match_to_partition(base2, castle, interval(-160, 161))
    assert matched.provenance["reserve_fraction"] == "38/237"
    assert by_name(matched.claims)["reserve_density"].value == "5/32"
    assert footprint(base2, matched) == whole(base2)


def test_thin_reserve_is_a_precondition_failure(base2, castle):
    with pytest.raises(ReserveTooSmallError) as info:
        match_to_partition(base2, castle, interval(-160, 161), Fraction(1, 10))
    assert info.value.realized == Fraction(49, 512)
    assert info.value.required == Fraction(76, 512)


def test_match_reports_hall_violations(base2, castle):
    with pytest.raises(HallViolationError) as info:
        match_to_partition(base2, castle, ints(0), FIFTH)
    assert len(info.value.deficient) >= 1
    assert info.value.neighbours == []


def test_match_needs_exact_translation(fib, castle):
    with pytest.raises(InputError):
        match_to_partition(fib, castle, ints(0), Fraction(1, 10))


def test_match_of_a_partition_is_a_no_op(base2):
    full = rokhlin_castle(base2, 3)
    assert match_to_partition(base2, full, ints(-1, 1), Fraction(1, 4)) is full


# --- almost finiteness and divisibility ------------------------------------------------------


def test_almost_finite_witness(base2, castle):
    af = almost_finite_witness(base2, castle, 1)
    assert all_pass(af.claims)
    assert all_pass(verify_witness(base2, af.witness))
    assert len(af.selection[0]) == 31
    assert af.info["q"] == 1


def test_almost_finite_needs_a_dense_castle(base2, castle):
    with pytest.raises(CastleTooSparseError):
        almost_finite_witness(base2, castle, 11)


def test_almost_finiteness_from_comparison(base2):
    af = af_from_comparison(base2, ints(-1, 1), FIFTH, 1)
    assert all_pass(af.claims)


def test_halving_the_space(base2):
    division = almost_divisible(base2, whole(base2), 2, Fraction(1, 10))
    first, second = division.parts
    # F = [0,121) at level 12: towers of 121 slots over {0} and 119 slots over
    # 33 atoms, split 61/60 and 60/59.
    assert measure(base2, first) == Fraction(2041, 4096)
    assert measure(base2, second) == Fraction(2007, 4096)
    assert all_pass(division.claims)


def test_division_of_a_residue_class(base2):
    U = congruence(base2, 4, [1, 2, 3])
    division = almost_divisible(base2, U, 3, Fraction(1, 10))
    assert all(is_subset(base2, P, U) for P in division.parts)
    assert all(measure(base2, P) >= Fraction(1, 4) - Fraction(1, 10) for P in division.parts)


def test_division_of_nothing(base2):
    with pytest.raises(EmptySetError):
        almost_divisible(base2, empty(), 2, Fraction(1, 10))
