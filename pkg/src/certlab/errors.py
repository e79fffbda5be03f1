"""Exception hierarchy shared by every certlab module.

Each error carries the magnitude that triggered it (when there is one) so
callers and the CLI can report something more useful than a bare name.
"""

from __future__ import annotations


class CertlabError(Exception):
    """Base class for every error raised on purpose by certlab."""

    exit_code = 3

    def __init__(self, message: str, magnitude: float | None = None):
        super().__init__(message)
        self.magnitude = magnitude


class InputError(CertlabError, ValueError):
    """The caller supplied something outside an operation's domain."""

    exit_code = 2


# linear algebra -----------------------------------------------------------

class ValidationError(InputError):
    """A matrix or vector failed an invariant check."""


class NotHermitian(ValidationError):
    pass


class NotPSD(ValidationError):
    pass


class BadTrace(ValidationError):
    pass


class NotSquare(ValidationError):
    pass


class DimMismatch(InputError):
    pass


class NonPositiveP(InputError):
    pass


class OutsideBlochBall(ValidationError):
    pass


class InvariantViolation(ValidationError):
    """A structured record (spectrum, report) broke one of its invariants."""


# haar ----------------------------------------------------------------------

class BadDim(InputError):
    pass


class NonTraceless(InputError):
    pass


# bucketing -----------------------------------------------------------------

class EpsOutOfRange(InputError):
    pass


class ZeroEigenvalue(InputError):
    pass


class PreconditionViolated(InputError):
    pass


class UnknownBucket(InputError):
    pass


# instances -----------------------------------------------------------------

class OddDim(InputError):
    pass


class EigTooSmall(InputError):
    pass


class MagnitudeTooLarge(InputError):
    pass


class FarnessDeficit(InputError):
    pass


class SpectrumOutOfRegime(InputError):
    pass


class CertificateViolation(CertlabError):
    """A construction failed its own post-condition check (a bug, not bad input)."""


# divergence ----------------------------------------------------------------

class SingularSigma(InputError):
    pass


class TooLarge(InputError):
    pass


class InfiniteSupport(InputError):
    pass


class ZeroMassCell(InputError):
    pass


# complexity ----------------------------------------------------------------

class NoMultiBuckets(InputError):
    pass


class EmptySum(InputError):
    pass


# certifier -----------------------------------------------------------------

class ConfigInvalid(InputError):
    pass


class ZeroMassBlock(InputError):
    pass


# io ------------------------------------------------------------------------

class ParseError(InputError):
    pass


class CertlabIOError(InputError):
    """Reading or writing a file failed."""
