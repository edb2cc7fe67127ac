"""Exception hierarchy shared across the package."""


class JointImputeError(Exception):
    """Base class for all package errors."""


class DataError(JointImputeError):
    """Invalid input data: malformed file, bad weight, category out of range."""


class EstimationError(JointImputeError):
    """An estimator could not be evaluated (zero denominator with no fallback)."""


class NoDonorInformationError(EstimationError):
    """A class needs imputation but carries no donor information anywhere."""

    def __init__(self, group: int, detail: str = ""):
        self.group = group
        msg = f"no donor information in class {group}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class BalanceError(JointImputeError):
    """Balanced selection failed: infeasible mandatory constraints or a
    numerical failure in the flight phase."""
