"""Exception types shared across the package."""


class IsptrainError(Exception):
    """Base class for all package errors."""


class ConfigurationError(IsptrainError):
    """Invalid job, model or CLI configuration."""


class DataError(IsptrainError):
    """Malformed or out-of-range training data."""


class ProtocolError(IsptrainError):
    """A communication or synchronization contract was broken."""


class PullTimeout(ProtocolError):
    """An announced update never appeared in the store."""


class NotEnoughData(IsptrainError):
    """Too few points to fit a learning curve."""


class NotReached(IsptrainError):
    """A loss threshold was never reached in a metric log."""


class JobAborted(IsptrainError):
    """A worker failed or the supervisor gave up waiting for reports."""
