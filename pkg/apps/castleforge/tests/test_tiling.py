from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from castleforge.core.certificates import all_pass
from castleforge.core.dynsys import (
    combine,
    congruence,
    disjoint,
    freeness_certificate,
    make_clopen,
    odometer,
    whole,
    window_counts,
)
from castleforge.core.errors import (
    InputError,
    InsufficientInvarianceError,
    LevelTooCoarseError,
    PartitionError,
)
from castleforge.core.group import FiniteSubset
from castleforge.core.tiling import (
    Castle,
    Placement,
    TileSet,
    Tower,
    castle_density,
    castle_refine_by_partition,
    clopen_castle_step,
    difference_set,
    footprint,
    monochromatic_levels,
    ow_castle,
    partition_labels,
    quasitile,
    remainder,
    rokhlin_castle,
    stage_count,
    tile_region,
    verify_castle,
    verify_tiling,
)

import oracles
from conftest import Z2, interval, ints


def by_name(claims):
    return {c.name: c for c in claims}


# --- castles ------------------------------------------------------------------------


def test_two_tower_overlap_is_named(base2):
    castle = Castle(
        (
            Tower(congruence(base2, 4, [0]), interval(0, 3)),
            Tower(congruence(base2, 4, [2]), interval(0, 2)),
        )
    )
    claim = by_name(verify_castle(base2, castle))["levels_disjoint"]
    assert not claim.passed
    assert "tower 0 level 2" in claim.detail
    assert "tower 1 level 0" in claim.detail


def test_empty_shapes_verify_without_error(base2):
    castle = Castle((Tower(congruence(base2, 2, [0]), ints()),))
    claims = by_name(verify_castle(base2, castle, ints(-1, 1), Fraction(1, 5)))
    assert claims["levels_disjoint"].passed
    assert claims["shape_invariance"].value == "0/1"


def test_rokhlin_tower_is_a_partition(base2, odo23):
    castle = rokhlin_castle(base2, 4)
    assert len(castle) == 1
    assert castle.towers[0].shape == interval(0, 16)
    assert footprint(base2, castle) == whole(base2)
    assert all_pass(castle.claims)

    flat = rokhlin_castle(odo23, 1)
    assert len(flat.towers[0].shape) == 6
    assert castle_density(odo23, flat) == 1


def test_clopen_step_covers_with_pairs(base2):
    castle = clopen_castle_step(base2, make_clopen(base2, 0, []), ints(0, 1), Fraction(2, 5), 3)
    assert footprint(base2, castle) == whole(base2)
    assert all(t.shape == ints(0, 1) for t in castle.towers)


def test_clopen_step_rejects_bad_parameters(base2):
    empty_set = make_clopen(base2, 0, [])
    with pytest.raises(InputError):
        clopen_castle_step(base2, empty_set, ints(0, 1), Fraction(1, 2), 3)
    with pytest.raises(LevelTooCoarseError):
        clopen_castle_step(base2, empty_set, interval(0, 8), Fraction(1, 4), 1)


@given(
    st.sets(st.integers(0, 15), max_size=10),
    st.integers(2, 9),
    st.sampled_from([Fraction(1, 3), Fraction(1, 4), Fraction(2, 5), Fraction(1, 10)]),
)
@settings(max_examples=60, deadline=None)
def test_clopen_step_against_point_oracle(y_atoms, k, eps):
    sys = odometer([2])
    Y = make_clopen(sys, 4, y_atoms)
    S = interval(0, k)
    level = max(4, freeness_certificate(sys, difference_set(S)))
    castle = clopen_castle_step(sys, Y, S, eps, level)
    n = sys.atom_count(level)
    hits = oracles.castle_points(sys, castle, level)
    occupied = {x for x in range(n) if hits[x]}
    in_y = set(oracles.atoms(sys, Y, level))
    assert all(len(h) <= 1 for h in hits)
    assert not occupied & in_y
    for t in castle.towers:
        assert t.shape.issubset(S)
        assert len(t.shape) >= (1 - eps) * k
    for x in range(n):
        window = {(x + s) % n for s in range(k)}
        assert len(window & (occupied | in_y)) >= eps * k


def test_clopen_step_on_fibonacci(fib):
    S = interval(0, 3)
    level = freeness_certificate(fib, difference_set(S))
    castle = clopen_castle_step(fib, make_clopen(fib, 0, []), S, Fraction(1, 3), level)
    assert all_pass(castle.claims)
    assert len(castle) >= 1


def test_clopen_step_in_two_dimensions(odo23):
    box = FiniteSubset.of(Z2, [(0, 0), (0, 1), (1, 0), (1, 1)])
    castle = clopen_castle_step(odo23, make_clopen(odo23, 0, []), box, Fraction(1, 4), 2)
    assert all_pass(castle.claims)
    A = footprint(odo23, castle)
    _, counts = window_counts(odo23, A, box)
    assert counts.min() >= 1


def test_stage_bound():
    assert stage_count(Fraction(1, 30)) == 101


def test_ow_castle_on_the_dyadic_odometer(base2):
    # F = [0,61) at level 9; atom 0 takes the full shape, then every 59th atom
    # finds 59 >= (29/30)·61 free slots {2..60} until the sweep wraps at 472.
    castle = ow_castle(base2, ints(-1, 1), Fraction(1, 5), Fraction(1, 5))
    assert len(castle) == 2
    full, trimmed = castle.towers
    assert full.shape == interval(0, 61)
    assert full.base == make_clopen(base2, 9, [0])
    assert trimmed.shape == interval(2, 61)
    assert trimmed.base == make_clopen(base2, 9, range(59, 414, 59))
    assert castle_density(base2, castle) == Fraction(237, 256)
    assert remainder(base2, castle) == make_clopen(base2, 9, range(474, 512))
    prov = castle.provenance
    assert prov["level"] == 9
    assert prov["stages"] == 1
    assert prov["eps_prime"] == "1/30"
    assert prov["stage_bound"] == 101
    assert prov["beta"] == "1/8"
    assert prov["stage_indices"] == [61]
    assert prov["stage_densities"] == ["237/256"]
    assert all_pass(castle.claims)
    names = {c.name for c in castle.claims}
    assert {"levels_disjoint", "shape_invariance", "footprint_density", "density_growth"} <= names


def test_ow_castle_levels_are_disjoint_pointwise(base2):
    castle = ow_castle(base2, ints(-1, 1), Fraction(1, 5), Fraction(1, 5))
    hits = oracles.castle_points(base2, castle, 9)
    assert all(len(h) <= 1 for h in hits)
    assert sum(1 for h in hits if h) == 474


def test_ow_castle_rejects_nonpositive_parameters(base2):
    with pytest.raises(InputError):
        ow_castle(base2, ints(-1, 1), Fraction(0), Fraction(1, 5))


# --- quasitiling ---------------------------------------------------------------------


def test_quasitile_whole_tiles():
    tileset, placements = quasitile(
        ints(-1, 1), Fraction(2), Fraction(1, 10), interval(0, 100), [interval(0, 8)]
    )
    assert len(placements) == 12
    assert tileset.tiles == (interval(0, 8),)
    claims = by_name(verify_tiling(tileset, placements, interval(0, 100), Fraction(1, 10)))
    assert claims["coverage"].value == "24/25"
    assert all_pass(claims.values())


def test_quasitile_keeps_large_remnants():
    tileset, placements = quasitile(
        ints(-1, 1), Fraction(2), Fraction(1, 10), interval(0, 102), [interval(0, 8)]
    )
    assert len(placements) == 13
    assert tileset.tiles[1] == interval(2, 8)
    assert placements[-1] == Placement(1, (94,))
    assert all(d < tileset.delta for d in tileset.defects)


def test_quasitile_default_tile():
    tileset, _ = quasitile(ints(-1, 1), Fraction(2), Fraction(1, 5), interval(0, 70))
    assert tileset.tiles[0] == interval(0, 7)


def test_quasitile_needs_an_invariant_region():
    with pytest.raises(InsufficientInvarianceError):
        quasitile(ints(-1, 1), Fraction(2), Fraction(1, 10), ints(0, 5, 10), [interval(0, 8)])


def test_tile_region_prefers_large_tiles():
    placements, covered = tile_region([interval(0, 2), interval(0, 5)], interval(0, 12))
    big = [p for p in placements if p.tile == 1]
    assert len(big) == 2
    assert len(covered) == 12


def test_overlapping_tiles_are_reported():
    tileset = TileSet((interval(0, 8),), ints(-1, 1), Fraction(1, 2), (Fraction(1, 4),))
    claims = by_name(
        verify_tiling(
            tileset, [Placement(0, (0,)), Placement(0, (4,))], interval(0, 12), Fraction(1, 10)
        )
    )
    assert not claims["tiles_disjoint"].passed
    assert claims["tiles_inside_region"].passed


# --- partitions ----------------------------------------------------------------------


def test_partition_labels(base2):
    level, labels = partition_labels(base2, [congruence(base2, 2, [0]), congruence(base2, 2, [1])])
    assert level == 1
    assert labels.tolist() == [0, 1]
    with pytest.raises(PartitionError):
        partition_labels(base2, [congruence(base2, 2, [0]), congruence(base2, 4, [0])])
    with pytest.raises(PartitionError):
        partition_labels(base2, [congruence(base2, 4, [0])])


def test_refinement_makes_levels_monochromatic(base2):
    castle = rokhlin_castle(base2, 2)
    P = [make_clopen(base2, 3, [a]) for a in range(8)]
    assert not monochromatic_levels(base2, castle, P)
    refined = castle_refine_by_partition(base2, castle, P)
    assert len(refined) == 2
    assert monochromatic_levels(base2, refined, P)
    assert footprint(base2, refined) == footprint(base2, castle)


def test_refinement_by_trivial_partition_keeps_towers(base2):
    castle = rokhlin_castle(base2, 3)
    U = whole(base2)
    refined = castle_refine_by_partition(base2, castle, [U, combine(base2, "complement", U)])
    assert len(refined) == 1
    assert disjoint(base2, remainder(base2, refined), U)
