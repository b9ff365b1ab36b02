"""Exception hierarchy shared across the package."""


class FedRDError(Exception):
    """Base class for all package errors."""


class DataError(FedRDError, ValueError):
    """Invalid survival data or malformed input file."""


class SingularInformation(FedRDError, ArithmeticError):
    """The information matrix cannot be inverted.

    Raised when the (possibly aggregated) ``A`` matrix is numerically
    singular, which happens with too few events or too little covariate
    variation inside risk sets.
    """


class NonPositiveVariance(FedRDError, ValueError):
    pass


class ZeroSE(FedRDError, ArithmeticError):
    """Standard error is zero while the estimate is not; the z statistic is infinite."""


class NoComparablePairs(FedRDError, ValueError):
    pass


class NonFiniteHazard(FedRDError, ArithmeticError):
    pass


class NegativeHazard(FedRDError, ValueError):
    pass


class ProtocolError(FedRDError):
    """A federation message or payload violates the protocol."""


class LocalTimeMissingFromGrid(ProtocolError):
    pass


class ZeroRiskSet(ProtocolError):
    pass


class DuplicateSite(ProtocolError):
    pass


class WireError(ProtocolError):
    """Malformed encoded message."""


class VersionMismatch(WireError):
    pass


class TruncatedPayload(WireError):
    pass


class DimensionMismatch(WireError):
    pass


class Timeout(FedRDError, TimeoutError):
    pass


class MissingSite(Timeout):
    """A site seen in an earlier round did not deliver its payload in time."""
