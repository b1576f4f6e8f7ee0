"""Exception hierarchy shared by every stage."""


class PanensError(ValueError):
    """Base class; ``code`` is the machine-parsable tag printed by the CLI."""

    code = "error"


class DimsMismatch(PanensError):
    code = "dims-mismatch"


class LengthMismatch(PanensError):
    code = "length-mismatch"


class RunSumMismatch(PanensError):
    code = "run-sum-mismatch"


class NonFiniteCost(PanensError):
    code = "non-finite-cost"


class InconsistentQueryCount(PanensError):
    code = "inconsistent-query-count"


class ClassLogitLengthMismatch(PanensError):
    code = "class-logit-length"


class InvalidWindow(PanensError):
    code = "invalid-window"


class SpecInvalid(PanensError):
    code = "spec-invalid"


class ContainerError(PanensError):
    code = "container"
