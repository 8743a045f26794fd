"""Exception types raised across the package."""


class SpvmfError(Exception):
    """Base class for all package errors."""


class RotationAtCayleySingularity(SpvmfError, ValueError):
    """Rotation has an eigenvalue of -1, so it has no Cayley parameters."""


class DegenerateDecomposition(SpvmfError, ValueError):
    """Target direction is colinear with the base direction."""


class InvalidPacf(SpvmfError, ValueError):
    """Partial autocorrelation outside the open interval (-1, 1)."""


class NonStationaryAr(SpvmfError, ValueError):
    """AR coefficients do not define a stationary process."""


class UnknownGroupLabel(SpvmfError, KeyError):
    """A subject carries a group label that is not among the known levels."""


class DimensionMismatch(SpvmfError, ValueError):
    pass


class NonFiniteLogPosterior(SpvmfError, FloatingPointError):
    """The sampler reached a non-finite state; ``block`` names the culprit."""

    def __init__(self, block, detail=""):
        self.block = block
        msg = f"non-finite log posterior after block {block!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class TraceTooShort(SpvmfError, ValueError):
    pass


class DegenerateResultant(SpvmfError, ValueError):
    """The mean of the unit vectors is numerically zero."""


class AllDrawsDegenerate(SpvmfError, ValueError):
    """Every posterior draw gave a zero tangent-normal magnitude."""


class RankDeficientDesign(SpvmfError, ValueError):
    pass


class DataFormatError(SpvmfError, ValueError):
    """Malformed input file; ``row`` is the 1-based line number when known."""

    def __init__(self, path, message, row=None):
        self.path = str(path)
        self.row = row
        where = f"{self.path}, row {row}" if row is not None else self.path
        super().__init__(f"{where}: {message}")
