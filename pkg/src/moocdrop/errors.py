"""Exception types shared across the package."""


class MoocDropError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(MoocDropError, ValueError):
    """Operand shapes are inconsistent."""


class InputError(MoocDropError, ValueError):
    """Caller-supplied data violates a precondition (empty corpus, bad index, ...)."""


class TrainingDiverged(MoocDropError, RuntimeError):
    """A parameter or gradient became non-finite during training."""

    def __init__(self, param_name: str, detail: str = ""):
        self.param_name = param_name
        msg = f"training diverged: non-finite values in {param_name!r}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class ExtractionError(MoocDropError, RuntimeError):
    """Per-video embedding extraction failed."""


class UndefinedMetricError(MoocDropError, ValueError):
    """Metric is undefined for the given inputs (e.g. single-class AUC)."""
