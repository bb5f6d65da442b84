"""
Exception hierarchy for the sampling plan toolkit

Every error carries the exit code the command line reports for it:
2 for input and validation problems, 3 for numerical and solver failures.
"""


class SamplingPlanError(Exception):
    """Base class of all toolkit errors"""

    exit_code = 1
    message_key = "error_generic"


class InputError(SamplingPlanError, ValueError):
    """Invalid input, configuration or data"""

    exit_code = 2
    message_key = "error_input"


class DomainError(InputError):
    """Argument outside the domain of a function"""


class DegenerateSampleError(InputError):
    """Sample without spread (constant values, zero scale estimate)"""

    message_key = "error_degenerate_sample"


class DegeneratePairsError(InputError):
    """Paired sample with zero variance in one coordinate"""

    message_key = "error_degenerate_sample"


class DependenceOutOfRangeError(InputError):
    """Dependence coefficient at or beyond the admissible cap"""

    message_key = "error_dependence_range"

    def __init__(self, value: float, cap: float):
        self.value = value
        self.cap = cap
        super().__init__(
            f"dependence coefficient {value:.6g} outside (-{cap:g}, {cap:g})"
        )


class InfeasibleAllocationError(InputError):
    """Stage-1 risk does not leave room for a stage-2 risk"""


class ConfigError(InputError):
    """Unknown or malformed configuration key"""

    message_key = "error_config"


class DataFileError(InputError):
    """Missing, unreadable or malformed data file"""

    message_key = "error_data_file"

    def __init__(self, path, reason: str, line: int = None):
        self.path = str(path)
        self.reason = reason
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {reason}")


class NumericalError(SamplingPlanError, ArithmeticError):
    """Numerical procedure failed"""

    exit_code = 3
    message_key = "error_numerical"


class ConvergenceError(NumericalError):
    """Iteration or quadrature did not reach its tolerance"""

    def __init__(self, message: str, estimate: float = None, error_bound: float = None):
        self.estimate = estimate
        self.error_bound = error_bound
        super().__init__(message)


class NullConditioningError(NumericalError):
    """Stage-2 OC conditioned on an event of (numerically) zero probability"""


class ZeroSeparationError(NumericalError):
    """Quantile estimator cannot separate AQL from RQL"""


class InfeasibleSpecError(NumericalError):
    """No grid point yields a finite stage-2 objective"""


class DegenerateEstimateError(NumericalError):
    """Monte Carlo estimate without hits on the conditioning event"""


class SimulationAbortedError(NumericalError):
    """Too many repetitions failed to produce a plan"""
