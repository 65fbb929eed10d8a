"""Exception types shared across the package.

Each class carries the machine-readable code used by the CLI when mapping
failures to exit codes and structured error output.
"""


class LatcohError(Exception):
    """Base class for package errors."""

    code = "ERROR"


class ConfigError(LatcohError):
    """Invalid configuration or malformed input document."""

    code = "CONFIG"


class StructureError(LatcohError):
    """Operator violates an invariant-level structural constraint."""

    code = "STRUCTURE"


class StabilityError(LatcohError):
    """Closed loop has strictly unstable (or non-negative) modes.

    ``wavenumbers`` lists the offending wavenumber tuples when known.
    """

    code = "UNSTABLE"

    def __init__(self, message, wavenumbers=()):
        super().__init__(message)
        self.wavenumbers = tuple(tuple(int(c) for c in n) for n in wavenumbers)


class ParityError(LatcohError):
    """Measure requires an even side length."""

    code = "PARITY"


class OracleCapError(LatcohError):
    """Instance exceeds the dense-oracle state cap."""

    code = "ORACLE_CAP"


class ValidationFailure(LatcohError):
    """Formula/oracle comparison exceeded the allowed deviation."""

    code = "VALIDATION"
