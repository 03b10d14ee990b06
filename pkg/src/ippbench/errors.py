"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration problems exit 2, data
problems (missing/corrupt files, schema clashes) exit 3, anything else 4.
"""


class IppError(Exception):
    """Base class for all package errors."""


class ConfigError(IppError):
    """Invalid or unknown configuration value/key."""


class GenerationError(IppError):
    """World or node-set generation cannot satisfy its constraints."""


class SensingError(IppError):
    """Sensor invoked from an invalid pose (e.g. inside an obstacle)."""


class DataFormatError(IppError):
    """A persisted artifact (dataset, model file) failed to parse."""


class SchemaMismatchError(IppError):
    """Feature schema of a model does not match the running code."""


class TrainingError(IppError):
    """Learner received unusable training data."""


class InstanceTooLargeError(IppError):
    """Exact solver invoked on an instance beyond its guard limits."""


class ContractViolationError(IppError):
    """An operation was called outside its documented precondition."""
