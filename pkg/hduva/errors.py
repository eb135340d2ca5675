"""
Exceptions raised by hduva.  Every class carries the exit code the command
line front end uses when the error reaches it.
"""


class HduvaError(Exception):
    """
    Base class for all hduva errors.
    """
    exit_code = 1


class ArgumentError(HduvaError, ValueError):
    """Invalid argument: bad shape, bad value, unknown name or config key."""
    exit_code = 2


class DataIOError(HduvaError, OSError):
    """A dataset or input file could not be read."""
    exit_code = 3


class TrainingDivergenceError(HduvaError, RuntimeError):
    """
    Raised when a training objective turns non-finite.  `term` names the
    offending ELBO term.
    """
    exit_code = 4

    def __init__(self, term: str, message: str = ''):
        self.term = term
        super().__init__(message or f"Training diverged: non-finite {term}")

    def __reduce__(self):
        return type(self), (self.term, str(self))


class StateError(HduvaError, RuntimeError):
    """The model is in a state that cannot serve the request."""
    exit_code = 4


class MissingArtifactError(HduvaError, FileNotFoundError):
    """A checkpoint, manifest or run record does not exist."""
    exit_code = 5
