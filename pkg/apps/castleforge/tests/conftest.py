from pathlib import Path

import pytest

from castleforge.core.dynsys import OdometerSystem, SubstitutionSystem, odometer, substitution
from castleforge.core.group import FiniteSubset, GroupDescriptor, GroupKind

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

Z = GroupDescriptor(GroupKind.FREE_ABELIAN, 1)
Z2 = GroupDescriptor(GroupKind.FREE_ABELIAN, 2)
H3 = GroupDescriptor(GroupKind.HEISENBERG, 3)


def ints(*values: int) -> FiniteSubset:
    return FiniteSubset.of(Z, [(v,) for v in values])


def interval(lo: int, hi: int) -> FiniteSubset:
    """[lo, hi) in Z."""
    return ints(*range(lo, hi))


@pytest.fixture
def base2() -> OdometerSystem:
    return odometer([2])


@pytest.fixture
def odo23() -> OdometerSystem:
    return odometer([2], [3])


@pytest.fixture
def fib() -> SubstitutionSystem:
    return substitution("a->ab; b->a")


@pytest.fixture
def configs() -> Path:
    return CONFIGS
