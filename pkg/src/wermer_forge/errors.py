"""Exception hierarchy shared by every module of the package."""


class WermerError(Exception):
    """Base class for all errors raised by wermer_forge."""


class ParameterError(WermerError, ValueError):
    """A parameter lies outside its admissible range."""


class SamplingBudgetError(WermerError):
    """Rejection sampling ran out of attempts (domain nearly empty)."""


class EvaluationError(WermerError):
    """A map was evaluated at (or numerically at) a pole."""


class DivisionGuardError(WermerError):
    """Inversion required dividing by a numerical zero."""


class InversionError(WermerError):
    """Stagewise inversion failed; ``diagnostic`` says where and why."""

    def __init__(self, message, diagnostic=None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}


class ContourError(WermerError):
    """The scalar map comes too close to zero on the integration contour."""


class QuadratureError(WermerError):
    """Contour quadrature did not stabilise under point doubling."""


class FitError(WermerError):
    """Least-squares fit was ill-conditioned."""


class NoWitnessError(WermerError):
    """The witness-circle search exhausted its grid."""


class ConditioningError(WermerError):
    """Interpolation points are too close together."""


class CorrectionBudgetError(WermerError):
    """An interpolation correction exceeded its sup-norm budget."""

    def __init__(self, message, sup_norm=None, budget=None):
        super().__init__(message)
        self.sup_norm = sup_norm
        self.budget = budget


class ChainError(WermerError):
    """A stage of the finite chain failed; names the stage and condition."""

    def __init__(self, message, stage=None, condition=None):
        super().__init__(message)
        self.stage = stage
        self.condition = condition
