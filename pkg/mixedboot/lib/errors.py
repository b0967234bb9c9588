#!/usr/bin/env python3
from typing import Optional

EXIT_OK: int = 0
EXIT_UNEXPECTED: int = 1
EXIT_PARSE_ERROR: int = 2
EXIT_FIT_ERROR: int = 3
EXIT_BOOTSTRAP_DEGENERACY: int = 4


class MixedBootError(Exception):
    exit_code: int = EXIT_UNEXPECTED


class DataError(MixedBootError):
    exit_code = EXIT_PARSE_ERROR


class IngestError(DataError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigurationError(MixedBootError):
    exit_code = EXIT_PARSE_ERROR


class DomainError(MixedBootError):
    exit_code = EXIT_FIT_ERROR


class SingularDesignError(MixedBootError):
    exit_code = EXIT_FIT_ERROR


class FitConvergenceError(MixedBootError):
    exit_code = EXIT_FIT_ERROR

    def __init__(self, message: str, best_theta=None, iterations: int = 0):
        super().__init__(message)
        self.best_theta = best_theta
        self.iterations = iterations


class DegeneratePoolError(MixedBootError):
    exit_code = EXIT_BOOTSTRAP_DEGENERACY

    def __init__(self, pool: str, message: str = ""):
        self.pool = pool
        super().__init__(
            f"degenerate resampling pool '{pool}'" + (f": {message}" if message else "")
        )


class BootstrapError(MixedBootError):
    exit_code = EXIT_BOOTSTRAP_DEGENERACY


class PostscalingError(BootstrapError):
    def __init__(self, column: str):
        self.column = column
        super().__init__(
            f"cannot ratio-correct column '{column}', replicate mean is zero"
        )


class InferenceError(MixedBootError):
    exit_code = EXIT_BOOTSTRAP_DEGENERACY


class StudyAbortedError(MixedBootError):
    exit_code = EXIT_FIT_ERROR
