class ValidateException(Exception):
    pass


class NumericException(Exception):
    pass


class VerificationException(Exception):
    pass


class ConfigException(ValidateException):
    pass


class NonHermitianDipole(ValidateException):
    pass


class DimensionMismatch(ValidateException, ValueError):
    pass


class LengthMismatch(ValidateException, ValueError):
    pass


class EmptyNodes(ValidateException, ValueError):
    pass


class IndexOutOfRange(ValidateException, IndexError):
    pass


class UnsupportedOrder(ValidateException):
    pass


class CacheSizeExceeded(ValidateException):
    pass


class FingerprintMismatch(ValidateException):
    pass


class CorruptCache(ValidateException):
    pass


class VersionMismatch(ValidateException):
    pass


class NoAscentDirection(NumericException):
    pass


class StepLimitExceeded(NumericException):
    pass


class ToleranceNotMet(NumericException):
    pass


class QuadratureNotConverged(NumericException):
    pass


class CutoffTooSmall(NumericException):
    pass


class NoConvergence(NumericException):
    pass


class HybridizationAmbiguity(NumericException):
    pass


class GradientCheckFailed(VerificationException):
    pass


class AccuracyCheckFailed(VerificationException):
    pass
