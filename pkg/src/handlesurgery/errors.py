"""Exception hierarchy shared by every module.

Each error carries a short machine-readable ``code`` that the command line
front end prints as ``error[<code>]: <message>``.
"""


class HandleSurgeryError(Exception):
    code = "error"

    def __init__(self, message: str = "", **details):
        super().__init__(message)
        self.details = details


class ContractViolation(HandleSurgeryError):
    code = "contract"


class InvalidJetPoint(HandleSurgeryError):
    code = "invalid-jet-point"


class InvalidParams(HandleSurgeryError):
    code = "invalid-params"


class OffSurfaceError(HandleSurgeryError):
    code = "off-surface"

    def __init__(self, message: str = "", residual: float = float("nan"), **details):
        super().__init__(message, residual=residual, **details)
        self.residual = residual


class NotOnSectionError(HandleSurgeryError):
    code = "not-on-section"


class NoConvergenceError(HandleSurgeryError):
    code = "no-convergence"


class DomainError(HandleSurgeryError):
    code = "domain"


class UnboundedFlowError(HandleSurgeryError):
    code = "unbounded-flow"


class SchemaError(HandleSurgeryError):
    code = "schema"


class DuplicateChordError(HandleSurgeryError):
    code = "duplicate-chord"


class ComposabilityError(HandleSurgeryError):
    code = "composability"


class ActionGapError(HandleSurgeryError):
    code = "action-gap"


class TransversalityError(HandleSurgeryError):
    code = "transversality"


class OutOfChartError(HandleSurgeryError):
    code = "out-of-chart"


class PreconditionError(HandleSurgeryError):
    code = "precondition"


class NotFoundError(HandleSurgeryError):
    code = "not-found"

    def __init__(self, message: str = "", best_residual: float = float("inf"), **details):
        super().__init__(message, best_residual=best_residual, **details)
        self.best_residual = best_residual


class DivergenceError(HandleSurgeryError):
    code = "divergence"

    def __init__(self, message: str = "", trace=None, **details):
        super().__init__(message, **details)
        self.trace = list(trace or [])


class ThresholdNotFoundError(HandleSurgeryError):
    code = "threshold-not-found"


class SymmetryError(HandleSurgeryError):
    code = "not-symmetric"


class DegeneracyError(HandleSurgeryError):
    code = "degenerate"


class UnclassifiableError(HandleSurgeryError):
    code = "unclassifiable"


class InconclusiveError(HandleSurgeryError):
    code = "inconclusive"


class NoValidRadiiError(HandleSurgeryError):
    code = "no-valid-radii"


class ResolutionError(HandleSurgeryError):
    code = "resolution"


class ConfigError(HandleSurgeryError):
    code = "config"
