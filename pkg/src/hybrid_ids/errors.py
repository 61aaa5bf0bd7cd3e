"""Exception types shared across the package."""


class HybridIdsError(Exception):
    """Base class for errors raised by this package."""


class MalformedRecordError(HybridIdsError, ValueError):
    """A KDD record could not be parsed."""

    def __init__(self, reason, line_no=None):
        self.reason = reason
        self.line_no = line_no
        where = f"line {line_no}: " if line_no is not None else ""
        super().__init__(f"{where}malformed-record: {reason}")


class EmptyDataError(HybridIdsError, ValueError):
    """An operation received an empty input it cannot work with."""


class ArtifactMismatchError(HybridIdsError):
    """Two artifacts were produced under different feature schemas."""

    def __init__(self, expected, found, what="artifact"):
        self.expected = expected
        self.found = found
        super().__init__(
            f"schema digest mismatch for {what}: expected {expected}, found {found}"
        )
