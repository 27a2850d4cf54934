"""Exception hierarchy.

Every error raised on purpose by this package derives from SpectraBenchError,
so callers (and the CLI exit-code mapping) can tell config problems, data
problems, and genuine bugs apart.
"""


class SpectraBenchError(Exception):
    """Base class for all errors raised deliberately by spectrabench."""


class ConfigError(SpectraBenchError):
    """Run configuration is malformed or inconsistent."""


class DataError(SpectraBenchError):
    """Umbrella for problems with dataset files or dataset content."""


class ParseError(DataError):
    """A file could not be parsed; message names the offending row."""


class SchemaError(DataError):
    """File structure disagrees with the documented schema."""


class LabelError(DataError):
    """A label token is outside its documented vocabulary."""


class IntegrityError(DataError):
    """Cross-record consistency violated (duplicate ids, split overlap)."""


class DomainError(SpectraBenchError):
    """An argument value is outside the documented domain."""


class CapacityError(SpectraBenchError):
    """Not enough samples, bands, or candidates to honor the request."""


class DegenerateError(SpectraBenchError):
    """Input is degenerate for the requested operation (zero variance etc.)."""


class ShapeError(SpectraBenchError):
    """Array shapes or lengths disagree."""


class UnsupportedError(SpectraBenchError):
    """The request falls outside the implemented range (e.g. table limits)."""
