"""Exception hierarchy shared across the package."""


class VirtualChannelError(Exception):
    """Base class for all package errors."""


class ChannelModelError(VirtualChannelError, ValueError):
    """Invalid channel parameters."""


class ConfigError(VirtualChannelError, ValueError):
    """Invalid experiment configuration; ``field`` names the offending entry."""

    def __init__(self, message, field=None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


class NumericalError(VirtualChannelError, ArithmeticError):
    """A numerical procedure failed to converge or hit a singular system."""


class ConvergenceError(NumericalError):
    """Fixed-point iteration did not converge.

    ``last`` holds the final iterate (a matrix or value vector) and ``delta``
    the last sup-norm change.
    """

    def __init__(self, message, last=None, delta=None):
        super().__init__(message)
        self.last = last
        self.delta = delta


class UnstableQueueError(NumericalError):
    """Mean arrival rate is not below the service rate, so no stationary law exists."""

    def __init__(self, arrival_rate, service_rate):
        super().__init__(
            f"unstable: arrival rate {arrival_rate:.6g} segments/block "
            f">= service rate {service_rate:.6g} segments/block"
        )
        self.arrival_rate = arrival_rate
        self.service_rate = service_rate
