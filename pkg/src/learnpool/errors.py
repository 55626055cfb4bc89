"""Exception types shared across the pipeline."""


class FormatError(ValueError):
    """Malformed on-disk data (truncated records, bad headers, bad magic)."""


class DataError(ValueError):
    """Well-formed data with out-of-range content, e.g. a label >= t."""


class StateError(RuntimeError):
    """Operation attempted on an object in the wrong lifecycle state."""
