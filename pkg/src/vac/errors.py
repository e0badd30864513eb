"""Exception hierarchy shared across the package.

Every error raised by vac derives from :class:`VacError` so callers can
catch the whole family.  The CLI maps subfamilies to exit codes.
"""


class VacError(Exception):
    """Base class for all vac errors."""


class ConfigError(VacError):
    """Invalid or unknown configuration (CLI exit code 2)."""


class BadConfig(ConfigError):
    """A network/training config violates its constraints."""


class DataError(VacError):
    """Problems with datasets and scene files (CLI exit code 3)."""


class MalformedRecord(DataError):
    def __init__(self, path, line_no, line):
        super().__init__(f"{path}:{line_no}: cannot parse record: {line!r}")
        self.line_no = line_no


class IndexOutOfRange(DataError):
    pass


class EmptyMesh(DataError):
    pass


class DegenerateMesh(VacError):
    pass


class NonFinite(VacError):
    pass


class DegenerateEncoding(VacError):
    pass


class DegenerateView(VacError):
    """Silhouette too small for a reliable view gradient."""


class NonFiniteLoss(VacError):
    """A training loss went NaN/inf (CLI exit code 4)."""

    def __init__(self, term, step=None):
        at = f" at step {step}" if step is not None else ""
        super().__init__(f"non-finite loss term {term!r}{at}")
        self.term = term
        self.step = step


class EmptyDataset(DataError):
    pass


class MissingCrop(DataError):
    pass


class MissingFile(DataError):
    pass


class ChecksumMismatch(DataError):
    pass


class SchemaVersionMismatch(DataError):
    pass


class RegionOutOfBounds(VacError):
    pass


class DimensionMismatch(VacError):
    pass


class NotPSD(VacError):
    pass


class EmptySet(VacError):
    pass
