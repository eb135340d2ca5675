# pylint: disable=missing-module-docstring

from . import scenarios
from .errors import (ArgumentError, DataIOError, HduvaError, MissingArtifactError, StateError,
                     TrainingDivergenceError)

__version__ = "0.1.0"
