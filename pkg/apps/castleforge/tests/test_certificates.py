from fractions import Fraction

import pytest

from castleforge.core.certificates import (
    Claim,
    all_pass,
    check,
    failures,
    fmt,
    holds,
    parse_rational,
    reevaluate,
)
from castleforge.core.dynsys import RationalInterval


def test_formatting():
    assert fmt(Fraction(6, 8)) == "3/4"
    assert fmt(3) == "3/1"
    assert fmt(RationalInterval(Fraction(1, 3), Fraction(1, 2))) == "[1/3, 1/2]"
    assert parse_rational(" 7/21 ") == Fraction(1, 3)


@pytest.mark.parametrize(
    ("value", "relation", "bound", "expected"),
    [
        (Fraction(1, 3), "<", Fraction(1, 2), True),
        (Fraction(1, 2), "<", Fraction(1, 2), False),
        (Fraction(1, 2), "<=", Fraction(1, 2), True),
        (Fraction(2, 3), ">", Fraction(1, 2), True),
        (Fraction(1, 2), ">=", Fraction(1, 2), True),
        (Fraction(1, 2), "==", Fraction(2, 4), True),
    ],
)
def test_exact_relations(value, relation, bound, expected):
    claim = check("c", value, relation, bound)
    assert claim.passed is expected
    assert reevaluate(claim) is expected


def test_intervals_must_clear_the_bound_entirely():
    straddling = RationalInterval(Fraction(2, 5), Fraction(3, 5))
    assert not check("c", straddling, ">=", Fraction(1, 2)).passed
    assert not check("c", straddling, "<", Fraction(1, 2)).passed
    assert check("c", straddling, "<", 1).passed
    assert check("c", straddling, ">", 0).passed
    assert reevaluate(check("c", straddling, "<=", Fraction(3, 5)))


def test_boolean_claims():
    good, bad = holds("ok", True), holds("broken", False, "atom 3")
    assert reevaluate(good) and not reevaluate(bad)
    assert failures([good, bad]) == [bad]
    assert not all_pass([good, bad])
    assert all_pass([good, holds("soft", False, hard=False)])


def test_tampered_claims_are_detected():
    claim = check("density", Fraction(1, 4), ">=", Fraction(1, 2))
    forged = Claim(claim.name, claim.value, claim.relation, claim.bound, True)
    assert reevaluate(forged) is False
