"""Named, exactly evaluated claims.

Every construction returns the claims it re-verified; the CLI turns them into a
Certificate. Hard claims decide the exit status, soft claims are reported only.
"""

from collections.abc import Iterable
from dataclasses import dataclass
from fractions import Fraction

from castleforge.core.dynsys import RationalInterval

Number = Fraction | int | RationalInterval


def fmt(x: Number) -> str:
    """Canonical text for exact quantities: "p/q" or "[lo, hi]"."""
    if isinstance(x, RationalInterval):
        return f"[{fmt(x.lo)}, {fmt(x.hi)}]"
    q = Fraction(x)
    return f"{q.numerator}/{q.denominator}"


def parse_rational(text: str) -> Fraction:
    return Fraction(text.strip())


@dataclass(frozen=True)
class Claim:
    name: str
    value: str
    relation: str
    bound: str
    passed: bool
    hard: bool = True
    detail: str = ""


def _holds(value: Number, relation: str, bound: Fraction) -> bool:
    if isinstance(value, RationalInterval):
        if relation == "<":
            return value.hi < bound
        if relation == "<=":
            return value.hi <= bound
        if relation == ">":
            return value.lo > bound
        if relation == ">=":
            return value.lo >= bound
        if relation == "==":
            return value.lo == value.hi == bound
        raise ValueError(f"Unknown relation {relation!r}")
    v = Fraction(value)
    if relation == "<":
        return v < bound
    if relation == "<=":
        return v <= bound
    if relation == ">":
        return v > bound
    if relation == ">=":
        return v >= bound
    if relation == "==":
        return v == bound
    raise ValueError(f"Unknown relation {relation!r}")


def check(
    name: str,
    value: Number,
    relation: str,
    bound: Fraction | int,
    *,
    hard: bool = True,
    detail: str = "",
) -> Claim:
    b = Fraction(bound)
    return Claim(name, fmt(value), relation, fmt(b), _holds(value, relation, b), hard, detail)


def holds(name: str, ok: bool, detail: str = "", *, hard: bool = True) -> Claim:
    return Claim(name, "true" if ok else "false", "==", "true", ok, hard, detail)


def reevaluate(claim: Claim) -> bool:
    """Recompute pass/fail from the serialized value and bound alone."""
    if claim.relation == "==" and claim.bound == "true":
        return claim.value == "true"
    value: Number
    if claim.value.startswith("["):
        lo, hi = claim.value.strip("[]").split(",")
        value = RationalInterval(parse_rational(lo), parse_rational(hi))
    else:
        value = parse_rational(claim.value)
    return _holds(value, claim.relation, parse_rational(claim.bound))


def failures(claims: Iterable[Claim]) -> list[Claim]:
    return [c for c in claims if c.hard and not c.passed]


def all_pass(claims: Iterable[Claim]) -> bool:
    return not failures(claims)
