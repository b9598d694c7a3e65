"""Exception hierarchy. The CLI maps each class onto an exit code."""


class NitesError(Exception):
    exit_code = 4


class ConfigError(NitesError, ValueError):
    """Invalid configuration or argument combination."""

    exit_code = 2


class FitError(NitesError):
    """A transform or statistical model could not be fitted."""

    exit_code = 4


class ModelQualityError(NitesError):
    """Sampling gave up, e.g. the rejection step never accepted."""

    exit_code = 4


class ModelFormatError(NitesError):
    """A model file is truncated, corrupt or of an unsupported version."""

    exit_code = 3
