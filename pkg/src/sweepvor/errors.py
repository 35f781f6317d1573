"""Exception types shared across the package."""


class SweepvorError(Exception):
    """Base class for all package-specific errors."""


# geometry -------------------------------------------------------------

class NonConvexDomain(SweepvorError):
    pass


class SeedOutsideDomain(SweepvorError):
    pass


class DuplicateSeeds(SweepvorError):
    pass


class SamplingExhausted(SweepvorError):
    pass


class UnsupportedOrder(SweepvorError):
    pass


class IoError(SweepvorError):
    pass


class SchemaError(SweepvorError):
    """Malformed mesh/solution file; the message carries the offending field path."""


class PointOutsideDomain(SweepvorError):
    pass


# scheduling -----------------------------------------------------------

class DimensionMismatch(SweepvorError):
    pass


class NodeSetMismatch(SweepvorError):
    pass


class EmptySubset(SweepvorError):
    pass


class UnknownId(SweepvorError):
    pass


# assembly / solving ---------------------------------------------------

class QuadratureFailure(SweepvorError):
    pass


class SingularBlock(SweepvorError):
    pass


class SingularDiagonalBlock(SingularBlock):
    pass


class SingularMatrix(SweepvorError):
    pass


class ScheduleInvalid(SweepvorError):
    pass


class SizeMismatch(SweepvorError):
    pass


# transport ------------------------------------------------------------

class NotCoercive(SweepvorError):
    pass


class NotInflow(SweepvorError):
    pass


class InsufficientData(SweepvorError):
    pass


class VerificationFailure(SweepvorError):
    """An internal cross-check (Kahn oracle, triangularity scan, mesh self-check) failed."""
