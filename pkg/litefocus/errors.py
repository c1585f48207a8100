"""Exception types raised by the litefocus kernels and file formats."""


class LiteFocusError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(LiteFocusError, ValueError):
    """Bad shape, out-of-range argument or non-finite value."""


class DegenerateFocusError(ValidationError):
    """A query would attend to an empty key set."""


class FormatError(LiteFocusError):
    """An LFTN file has a bad magic or an unsupported version."""


class TruncationError(FormatError):
    """An LFTN payload does not match the length declared in its header."""
