from typing import Any, Optional

from .in_config import EXIT_NUMERICAL, EXIT_USAGE


class FlowLabError(Exception):
    """
    Base error of the lab.

    Attributes:
        message (str): Human readable description.
        context (dict): Structured fields (time, index, system, ...) for logs and reports.
        exit_code (int): Process exit code the CLI maps this error to.
    """

    exit_code = EXIT_USAGE

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.message = message
        self.context = context

    def to_dict(self) -> dict:
        return {"error": type(self).__name__, "message": self.message, **self.context}


class ConfigError(FlowLabError):
    pass


class UnknownSystemError(ConfigError):
    pass


class NumericalError(FlowLabError):
    exit_code = EXIT_NUMERICAL


class FlowEscapeError(NumericalError):
    def __init__(self, exit_time: float, point: Optional[list] = None, **context: Any):
        super().__init__(
            f"trajectory left the bounding box at t={exit_time:.6g}",
            exit_time=exit_time,
            point=point,
            **context,
        )
        self.exit_time = exit_time


class FrameDegeneracyError(NumericalError):
    def __init__(self, time: float, **context: Any):
        super().__init__(f"tangent frame degenerated at t={time:.6g}", time=time, **context)
        self.time = time


class SingularityError(NumericalError):
    pass


class NearSingularityError(SingularityError):
    def __init__(self, time: float, distance: float, **context: Any):
        super().__init__(
            f"orbit within {distance:.3g} of an equilibrium at t={time:.6g}",
            time=time,
            distance=distance,
            **context,
        )
        self.time = time


class TruncatedDistanceDomainError(SingularityError):
    pass


class NoDominationError(NumericalError):
    def __init__(self, angle_gap: float, **context: Any):
        super().__init__(
            f"no domination: principal angle gap {angle_gap:.3g}", angle_gap=angle_gap, **context
        )


class InconsistentSplittingError(NumericalError):
    pass


class UnsupportedDimensionError(NumericalError):
    pass


class PlissInputError(NumericalError):
    def __init__(self, index: int, value: float, bound: float):
        super().__init__(
            f"term a_{index}={value:.6g} exceeds the upper bound A={bound:.6g}",
            index=index,
            value=value,
            bound=bound,
        )
        self.index = index


class PlissPreconditionError(NumericalError):
    pass


class GridMismatchError(NumericalError):
    pass


class EmptyMeasureError(NumericalError):
    pass
