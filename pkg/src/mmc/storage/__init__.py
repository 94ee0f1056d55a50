from .checks import (
    DEFAULT_EXHAUSTIVE_BOUND,
    HistoryTooLargeError,
    LinearizabilityResult,
    StalenessViolation,
    check_linearizable,
    check_staleness,
)
from .history import HistoryEntry, MalformedHistoryError, OpHistory
from .service import (
    Ack,
    GeoKey,
    ReadNotFound,
    ReadValue,
    Record,
    StorageParams,
    StorageService,
    Unavailable,
    Version,
    newer,
)

__all__ = [
    "Ack", "GeoKey", "ReadNotFound", "ReadValue", "Record", "StorageParams", "StorageService",
    "Unavailable", "Version", "newer", "HistoryEntry", "MalformedHistoryError", "OpHistory",
    "DEFAULT_EXHAUSTIVE_BOUND", "HistoryTooLargeError", "LinearizabilityResult", "StalenessViolation",
    "check_linearizable", "check_staleness",
]
