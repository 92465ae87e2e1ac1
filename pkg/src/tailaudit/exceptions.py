"""Exception hierarchy shared across the package.

Each error class carries the CLI exit code the runner maps it to.
"""


class TailAuditError(Exception):
    exit_code = 1


class ConfigError(TailAuditError, ValueError):
    """Invalid configuration value; the message names the offending key."""

    exit_code = 2


class ValidationError(ConfigError):
    pass


class InfeasibleConstraintError(TailAuditError):
    """No checkpoint satisfied the common-group performance floor."""

    exit_code = 3

    def __init__(self, best_p_common, baseline, message=None):
        self.best_p_common = best_p_common
        self.baseline = baseline
        if message is None:
            message = (
                f"no epoch satisfied P_common >= {baseline:.6g}; "
                f"best achieved P_common = {best_p_common:.6g}"
            )
        super().__init__(message)


class NumericalFailureError(TailAuditError, FloatingPointError):
    exit_code = 4

    def __init__(self, message, index=None, epoch=None, batch=None):
        self.index = index
        self.epoch = epoch
        self.batch = batch
        super().__init__(message)


class SchemaError(TailAuditError, ValueError):
    """Malformed CSV input; ``line`` is 1-based."""

    exit_code = 5

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptySubgroupError(TailAuditError, ValueError):
    exit_code = 5


class DegenerateSplitError(TailAuditError, ValueError):
    exit_code = 2


class UndefinedMetricError(TailAuditError, ValueError):
    exit_code = 4


class BootstrapInstabilityError(TailAuditError, RuntimeError):
    exit_code = 4
