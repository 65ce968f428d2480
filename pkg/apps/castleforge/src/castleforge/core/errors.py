"""Exception hierarchy for castleforge.

Three families map onto CLI exit codes:
- InputError: malformed configs, artifacts or mismatched operands (exit 2)
- PreconditionError: an operation's stated precondition does not hold (exit 3)
- ConstructionError: a construction or verification claim failed (exit 1)

Exceptions keep their diagnostic data as attributes so callers and the CLI
can report exact values without parsing messages.
"""

from typing import Any


class CastleforgeError(Exception):
    """Base class for all castleforge errors."""

    exit_code = 1


class InputError(CastleforgeError):
    exit_code = 2


class DescriptorMismatchError(InputError):
    def __init__(self, left: str, right: str):
        self.left = left
        self.right = right
        super().__init__(f"Group descriptor mismatch: {left} vs {right}")


class EmptySetError(InputError):
    def __init__(self, what: str):
        self.what = what
        super().__init__(f"{what} must be nonempty")


class ConfigError(InputError):
    pass


class PreconditionError(CastleforgeError):
    exit_code = 3


class LevelTooCoarseError(PreconditionError):
    def __init__(self, level: int, required: int, reason: str = "translates not atom-exact"):
        self.level = level
        self.required = required
        super().__init__(f"Level {level} too coarse (need >= {required}): {reason}")


class NotFreeError(PreconditionError):
    pass


class NonPrimitiveSubstitutionError(PreconditionError):
    pass


class FolnerExhaustedError(PreconditionError):
    """Følner scan ran past the configured bound before a condition held."""

    def __init__(self, message: str, pair: tuple[int, int] | None = None, index_bound: int = 0):
        self.pair = pair
        self.index_bound = index_bound
        super().__init__(message)


class NotFoundError(PreconditionError):
    pass


class InsufficientInvarianceError(PreconditionError):
    def __init__(self, message: str, realized: Any = None, required: Any = None):
        self.realized = realized
        self.required = required
        super().__init__(message)


class PartitionError(PreconditionError):
    pass


class EmptyCoreError(PreconditionError):
    def __init__(self, tile_size: int, Q: int):
        self.tile_size = tile_size
        self.Q = Q
        super().__init__(f"Tile of size {tile_size} has empty core for Q={Q}")


class CastleTooSparseError(PreconditionError):
    def __init__(self, message: str, realized: Any = None, required: Any = None):
        self.realized = realized
        self.required = required
        super().__init__(message)


class ReserveTooSmallError(PreconditionError):
    """Reserve levels of density below twice the remainder density."""

    def __init__(self, realized: Any, required: Any):
        self.realized = realized
        self.required = required
        super().__init__(f"Reserve density {realized} below 2·remainder = {required}")


class RationalAngleError(PreconditionError):
    pass


class ConstructionError(CastleforgeError):
    exit_code = 1


class CoverageFailureError(ConstructionError):
    """Greedy subequivalence left part of the source uncovered."""

    def __init__(self, atom: str, level: int, target_count: int, source_count: int):
        self.atom = atom
        self.level = level
        self.target_count = target_count
        self.source_count = source_count
        super().__init__(
            f"Coverage failure at atom {atom} (level {level}): "
            f"|B ∩ Fx|={target_count}, |A ∩ F⁻¹Fx|={source_count}"
        )


class HallViolationError(ConstructionError):
    def __init__(self, deficient: list[str], neighbours: list[str]):
        self.deficient = deficient
        self.neighbours = neighbours
        super().__init__(
            f"Hall violation: {len(deficient)} uncovered atoms reach only "
            f"{len(neighbours)} reserve atoms: {deficient[:8]}"
        )


class VerificationError(ConstructionError):
    def __init__(self, message: str, failed: list[Any] | None = None):
        self.failed = failed or []
        super().__init__(message)
