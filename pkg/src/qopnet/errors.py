"""Shared exception hierarchy.

Every error raised on purpose by this package derives from QopnetError so the
CLI can map failures to exit code 1 with a category tag, while genuine bugs
(AttributeError and friends) escape untouched.
"""


class QopnetError(Exception):
    """Base class for all deliberate failures."""

    category = "error"


class ConfigurationError(QopnetError, ValueError):
    """Invalid parameter values: rho <= 1, negative accuracy, bad kinds."""

    category = "config"


class DimensionMismatchError(QopnetError, ValueError):
    """Operands disagree on the ambient dimension or on layer widths."""

    category = "dimension"


class ResourceCapError(QopnetError, RuntimeError):
    """A lattice count or enumeration exceeded its configured cap."""

    category = "resource"


class NonConvergenceError(QopnetError, RuntimeError):
    """An iterative root polish failed to reach tolerance."""

    category = "nonconvergence"


class NetworkFormatError(QopnetError, ValueError):
    """A serialized network document is malformed; message names the path."""

    category = "format"


class SynthesisError(QopnetError, RuntimeError):
    """A constructed network violates one of its own accuracy budgets."""

    category = "synthesis"


class VerificationError(QopnetError, RuntimeError):
    """A measured quantity contradicts the bound it is required to satisfy."""

    category = "verification"
