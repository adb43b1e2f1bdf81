"""Exception types raised across the package."""


class SpecificationError(ValueError):
    """A model, layout or prior specification is inconsistent."""


class DomainError(ValueError):
    """An argument lies outside the domain of a density or sampler."""


class DimensionError(ValueError):
    """Array arguments have incompatible shapes."""


class DegenerateChainError(ValueError):
    """A Markov chain has no well-defined stationary distribution."""


class InitializationError(RuntimeError):
    """No starting point with finite log-joint density could be found."""


class ChainAborted(RuntimeError):
    """A sampler produced a non-finite log-joint density.

    Attributes
    ----------
    dump : dict
        Snapshot of the sampler state at the time of failure.
    """

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump or {}


class ModelDegenerateError(ValueError):
    """A goodness-of-fit statistic is undefined for the fitted model."""


class DataFormatError(ValueError):
    """A data or chain file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class StoreMismatchError(RuntimeError):
    """A persisted chain was written by another format version or configuration."""
