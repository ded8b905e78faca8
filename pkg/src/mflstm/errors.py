"""Exception hierarchy shared by every subpackage."""


class MflstmError(Exception):
    """Base class for all library errors."""


class ShapeError(MflstmError, ValueError):
    pass


class NumericError(MflstmError, ValueError):
    pass


class ConfigurationError(MflstmError, ValueError):
    pass


class DomainError(MflstmError, ValueError):
    pass


class StateError(MflstmError, RuntimeError):
    pass


class ParseError(MflstmError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SolverError(MflstmError, RuntimeError):
    def __init__(self, message, step=None):
        self.step = step
        super().__init__(message)


class TrainingDiverged(MflstmError, RuntimeError):
    def __init__(self, epoch, message="loss became non-finite"):
        self.epoch = epoch
        super().__init__(f"training diverged at epoch {epoch}: {message}")


class SearchFailed(MflstmError, RuntimeError):
    def __init__(self, message, trials=()):
        self.trials = list(trials)
        super().__init__(message)


class PartialEnsembleError(MflstmError, RuntimeError):
    def __init__(self, failed_seeds, completed=()):
        self.failed_seeds = list(failed_seeds)
        self.completed = list(completed)
        super().__init__(f"ensemble members failed for seeds {self.failed_seeds}")


class EvaluationError(MflstmError, RuntimeError):
    def __init__(self, mu, t, cause):
        self.mu = mu
        self.t = t
        super().__init__(f"evaluator failed at mu={mu}, t={t}: {cause}")
