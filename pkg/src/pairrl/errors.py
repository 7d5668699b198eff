"""Exception hierarchy shared by all pairrl modules."""


class PairError(Exception):
    """Base class for every error raised by pairrl."""


class InvalidParameterError(PairError, ValueError):
    pass


class InvalidTaskError(PairError, ValueError):
    pass


class InvalidActionError(PairError, ValueError):
    pass


class InvalidLayoutError(PairError, ValueError):
    pass


class EpisodeFinishedError(PairError, RuntimeError):
    pass


class ShapeError(PairError, ValueError):
    pass


class UnsupportedLossError(PairError, KeyError):
    pass


class UnsupportedEnvError(PairError, TypeError):
    pass


class NumericalFailureError(PairError, FloatingPointError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class DegenerateRelabelError(PairError, ValueError):
    pass


class InvalidSpecError(PairError, ValueError):
    pass


class ContractViolationError(PairError, ValueError):
    pass


class InvalidConfigError(PairError, ValueError):
    pass


class ConfigKeyError(InvalidConfigError):
    """Unknown key in a config file or override."""

    def __init__(self, key):
        super().__init__(f"unknown config key: {key!r}")
        self.key = key


class WorkerError(PairError, RuntimeError):
    """Environment failure during collection, tagged with the worker id."""

    def __init__(self, worker_id, cause):
        super().__init__(f"worker {worker_id}: {cause}")
        self.worker_id = worker_id
        self.cause = cause
