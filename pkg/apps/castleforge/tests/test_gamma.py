from fractions import Fraction

import pytest

from castleforge.core.certificates import all_pass
from castleforge.core.dynsys import make_clopen
from castleforge.core.errors import EmptyCoreError, InputError, PartitionError
from castleforge.core.gamma import (
    build_gamma_witness,
    choose_gamma_tile,
    gamma_q,
    gamma_witness,
    layer_tile,
    tile_castle,
)
from castleforge.core.tiling import rokhlin_castle

from conftest import interval, ints

FIFTH = Fraction(1, 5)


@pytest.fixture
def quarters(base2):
    return [make_clopen(base2, 2, [a]) for a in range(4)]


def test_q_is_the_first_integer_past_one_over_eps():
    assert gamma_q(FIFTH) == 6
    assert gamma_q(Fraction(1, 6)) == 7
    assert gamma_q(Fraction(2, 5)) == 3


def test_layers_of_an_interval():
    layered = layer_tile(interval(0, 16), ints(-1, 1), 4)
    assert layered.Q == 4
    assert layered.core == interval(4, 12)
    assert layered.layers[0] == ints(0, 15)
    assert layered.layers[3] == ints(3, 12)
    assert layered.one_step_ok()


def test_depth_profile_rises_and_falls():
    depth = layer_tile(interval(0, 16), ints(1), 6).depth()
    assert [depth[(t,)] for t in range(16)] == [0, 1, 2, 3, 4, 5, 6, 6, 6, 6, 5, 4, 3, 2, 1, 0]


def test_small_tiles_have_no_core():
    with pytest.raises(EmptyCoreError):
        layer_tile(interval(0, 4), ints(-1, 1), 4)
    with pytest.raises(InputError):
        layer_tile(interval(0, 4), ints(-1, 1), 0)


def test_witness_on_a_single_tower(base2, quarters):
    tiled = tile_castle(rokhlin_castle(base2, 6), [interval(0, 16)])
    witness = gamma_witness(base2, tiled, ints(-1, 1), FIFTH, quarters)
    assert witness.Q == 6
    assert witness.info["pairs"] == 2
    assert witness.info["leftovers"] == 0
    assert witness.info["classes"] == 1
    assert witness.info["max_commutator"] == "1/6"
    assert witness.f1.integral(base2, quarters[0]) == Fraction(13, 192)
    assert witness.f2.integral(base2, quarters[0]) == Fraction(13, 192)
    assert witness.f1.value(8) == 1
    assert witness.f2.value(24) == 1
    assert witness.f1.value(24) == 0
    assert all_pass(witness.claims)


def test_commutator_bound_is_exact(base2, quarters):
    tiled = tile_castle(rokhlin_castle(base2, 6), [interval(0, 16)])
    witness = gamma_witness(base2, tiled, ints(-1, 1), FIFTH, quarters)
    moved = witness.f1.translate(base2, (1,))
    assert moved.sup_distance(base2, witness.f1) == Fraction(1, 6)


def test_levels_must_be_monochromatic(base2, quarters):
    tiled = tile_castle(rokhlin_castle(base2, 1), [interval(0, 2)])
    with pytest.raises(PartitionError):
        gamma_witness(base2, tiled, ints(-1, 1), FIFTH, quarters)


def test_tile_choice():
    assert choose_gamma_tile(ints(-1, 1), FIFTH) == interval(0, 240)


def test_pipeline_on_the_dyadic_odometer(base2, quarters):
    witness = build_gamma_witness(base2, ints(-1, 1), FIFTH, quarters)
    assert witness.f1.level == 12
    assert witness.info["pairs"] == 8
    assert witness.info["leftovers"] == 1
    assert witness.info["tile_size"] == 240
    assert all_pass(witness.claims)
