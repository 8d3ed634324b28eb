"""Exception classes.  Each error carries the exit code that the command line
tool returns when the error reaches the top level:  2 for configuration
problems, 3 for file and stream problems, 4 for numeric validation problems.
"""

class EnkgError(Exception):
    """Base class for all errors raised by this package.
    """
    exit_code = 1

# ------------------------ Configuration errors (exit code 2)

class ConfigError(EnkgError, ValueError):
    exit_code = 2

class InvalidParams(ConfigError):
    pass

class InvalidTemperature(ConfigError):
    pass

class InvalidPTarget(ConfigError):
    pass

class InvalidThreshold(ConfigError):
    pass

class InvalidSpec(ConfigError):
    pass

# ------------------------ Trace file and stream errors (exit code 3)

class TraceIOError(EnkgError):
    exit_code = 3

class BadMagic(TraceIOError):
    pass

class UnsupportedVersion(TraceIOError):
    pass

class TruncatedPayload(TraceIOError):
    pass

class SinkFailure(TraceIOError):
    pass

class InvalidHeader(TraceIOError):
    pass

# ------------------------ Numeric validation errors (exit code 4)

class NumericError(EnkgError, ValueError):
    exit_code = 4

class NonFiniteInput(NumericError):
    pass

class NonFiniteProbability(NumericError):
    pass

class NegativeProbability(NumericError):
    pass

class MassNotNormalized(NumericError):
    pass

class ZeroMassPrefix(NumericError):
    pass

class NonFiniteLogit(NumericError):
    pass

class DimensionMismatch(NumericError):
    pass

class UninitializedState(NumericError):
    pass

class EntropyOutOfRange(NumericError):
    pass
