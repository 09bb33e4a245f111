# msfcn/errors.py


class MsfcnError(RuntimeError):
    """Base for every failure the CLI maps to an exit code."""

    exit_code = 1


class ConfigError(MsfcnError):
    """Unknown key, bad value, or an architecture that cannot be built."""

    exit_code = 1


class CheckpointError(MsfcnError):
    """Checkpoint directory is incomplete or disagrees with the config."""

    exit_code = 1


class ShapeError(MsfcnError):
    exit_code = 2


class FormatError(MsfcnError):
    """A TNS file failed to parse. The message names the field."""

    exit_code = 2


class DataError(MsfcnError):
    exit_code = 2


class NumericError(MsfcnError):
    """Training hit a non-finite loss. Fatal for the run."""

    exit_code = 3
