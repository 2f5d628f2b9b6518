"""Exception hierarchy shared by all rtlab modules.

CLI exit codes: ConfigError family -> 2, DivergenceError -> 3,
MissingArtifactError family -> 4.
"""


class RtlabError(Exception):
    """Base class for every error raised by rtlab."""


class ConfigError(RtlabError, ValueError):
    """A configuration value violates its contract."""


class DimensionError(RtlabError, ValueError):
    """Tensor or array shapes are incompatible for the requested op."""


class ContractError(RtlabError, ValueError):
    """A call violates an operation's pre- or post-conditions."""


class TapeError(RtlabError, RuntimeError):
    """Backward invoked on a tape that was already consumed."""


class CheckpointError(RtlabError, ValueError):
    """Checkpoint bytes are truncated, corrupt, or of the wrong version."""


class DatasetIOError(RtlabError, ValueError):
    """A dataset file fails header, shape, or label validation."""


class PlanError(ConfigError):
    """A sweep plan is internally inconsistent."""


class MissingArtifactError(RtlabError, FileNotFoundError):
    """A referenced checkpoint or dataset does not exist."""


class DivergenceError(RtlabError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class ReportError(RtlabError, ValueError):
    """Report generation referenced incomplete or missing runs."""

    def __init__(self, message, missing=()):
        super().__init__(message)
        self.missing = tuple(missing)
