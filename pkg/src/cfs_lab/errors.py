"""Exception hierarchy.

Every error carries a stable ``name`` (the class name) and the process exit
code the command-line front end maps it to: 2 for invalid input or
configuration, 3 for numerical failures.
"""


class CFSError(Exception):
    exit_code = 3

    def __init__(self, message="", **details):
        super().__init__(message)
        self.message = message
        self.details = details

    @property
    def name(self):
        return type(self).__name__

    def to_dict(self):
        out = {"error": self.name, "message": self.message}
        out.update({k: v for k, v in self.details.items() if v is not None})
        return out


class UsageError(CFSError):
    """Invalid input, options or configuration."""

    exit_code = 2


class NumericalError(CFSError):
    """A computation could not be completed to the requested accuracy."""

    exit_code = 3


# operator_core
class NotHermitian(UsageError):
    pass


class SignatureViolation(UsageError):
    pass


class DimensionMismatch(UsageError):
    pass


class NotGramUnitary(UsageError):
    pass


class ZeroSpinSpace(UsageError):
    pass


class DegenerateRange(NumericalError):
    pass


# sphere_model
class DomainError(UsageError):
    pass


class InvalidOptions(UsageError):
    pass


# dirac_minkowski
class OffShell(UsageError):
    pass


class NearLightCone(UsageError):
    pass


class QuadratureFailure(NumericalError):
    pass


class BadFit(NumericalError):
    pass


class SingularGram(NumericalError):
    pass


# quantum_geometry
class NotRegular(NumericalError):
    pass


class DegenerateSpectrum(NumericalError):
    pass


class NotProperlyTimelike(NumericalError):
    pass


class NotGenericallySeparated(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class NotSpacelike(UsageError):
    pass


class NotSpinConnectable(NumericalError):
    """Raised with ``reason`` naming the failed condition and, for chains
    and triples, ``pair`` naming the failing link."""

    def __init__(self, message="", reason=None, pair=None):
        super().__init__(message, reason=reason, pair=pair)
        self.reason = reason
        self.pair = pair


# cli
class OutputPathUnwritable(UsageError):
    pass


class InputNotFound(UsageError):
    pass


class ParseError(UsageError):
    def __init__(self, message="", line=None, column=None):
        super().__init__(message, line=line, column=column)
        self.line = line
        self.column = column
