from .in_config import (
    PROJECT_NAME,
    SERVICE_NAME,
    TOOL_VERSION,
    DEFAULT_STEP,
    MAX_STEP,
    DEFAULT_RENORM_EVERY,
    DEFAULT_METHOD,
    DEFAULT_WARM,
    DEFAULT_BURN_IN,
    DEFAULT_GRID_RES,
    NEAR_SINGULARITY,
    INCONCLUSIVE_BAND,
    EXIT_OK,
    EXIT_CRITERION_FAIL,
    EXIT_USAGE,
    EXIT_NUMERICAL,
)
from .in_logging import get_service_logger, set_log_level
from .in_errors import (
    FlowLabError,
    ConfigError,
    UnknownSystemError,
    NumericalError,
    FlowEscapeError,
    FrameDegeneracyError,
    SingularityError,
    NearSingularityError,
    TruncatedDistanceDomainError,
    NoDominationError,
    InconsistentSplittingError,
    UnsupportedDimensionError,
    PlissInputError,
    PlissPreconditionError,
    GridMismatchError,
    EmptyMeasureError,
)
from .in_schemas import ProvenanceHeader, ReportEnvelope
from .in_io import write_json, write_csv, read_csv, config_hash, to_jsonable

__all__ = [
    "get_service_logger",
    "set_log_level",
    "PROJECT_NAME",
    "SERVICE_NAME",
    "TOOL_VERSION",
    "DEFAULT_STEP",
    "MAX_STEP",
    "DEFAULT_RENORM_EVERY",
    "DEFAULT_METHOD",
    "DEFAULT_WARM",
    "DEFAULT_BURN_IN",
    "DEFAULT_GRID_RES",
    "NEAR_SINGULARITY",
    "INCONCLUSIVE_BAND",
    "EXIT_OK",
    "EXIT_CRITERION_FAIL",
    "EXIT_USAGE",
    "EXIT_NUMERICAL",
    "FlowLabError",
    "ConfigError",
    "UnknownSystemError",
    "NumericalError",
    "FlowEscapeError",
    "FrameDegeneracyError",
    "SingularityError",
    "NearSingularityError",
    "TruncatedDistanceDomainError",
    "NoDominationError",
    "InconsistentSplittingError",
    "UnsupportedDimensionError",
    "PlissInputError",
    "PlissPreconditionError",
    "GridMismatchError",
    "EmptyMeasureError",
    "ProvenanceHeader",
    "ReportEnvelope",
    "write_json",
    "write_csv",
    "read_csv",
    "config_hash",
    "to_jsonable",
]
