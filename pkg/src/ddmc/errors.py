"""Exception types shared across the package."""

from __future__ import annotations


class DdmcError(Exception):
    """Base class for all package errors."""

    code = "error"


class ConfigError(DdmcError):
    """Config file could not be parsed or is structurally invalid."""

    code = "config-parse"

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(message if field is None else f"{field}: {message}")


class ModelValidationError(DdmcError):
    """One or more model invariants failed; carries the full issue list."""

    code = "model-invalid"

    def __init__(self, issues):
        self.issues = list(issues)
        super().__init__("; ".join(str(i) for i in self.issues))


class OutsideDomainError(DdmcError):
    code = "outside-domain"


class RateOverflowError(DdmcError):
    code = "rate-overflow"


class LeftDomainError(DdmcError):
    code = "left-domain"


class GridMismatchError(DdmcError):
    code = "grid-mismatch"


class SigmaSingularError(DdmcError):
    code = "sigma-singular"


class SingularCovarianceError(DdmcError):
    code = "singular-covariance"


class SingularEndpointCovarianceError(DdmcError):
    code = "singular-endpoint-covariance"


class ParamsOutOfRangeError(DdmcError):
    code = "params-out-of-range"


class UnboundedRatioError(DdmcError):
    code = "unbounded-ratio"


class ThinningBoundError(DdmcError):
    code = "thinning-bound"


class NonfiniteWeightError(DdmcError):
    code = "nonfinite-weight"
