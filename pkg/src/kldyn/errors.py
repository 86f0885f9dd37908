"""Exception types raised across the package."""


class KLDynError(Exception):
    """Base class for all package errors."""


class InputError(KLDynError, ValueError):
    """An argument violates an operation's precondition."""


class DomainError(InputError):
    """A scalar argument lies outside a function's domain."""


class CapabilityError(KLDynError):
    """The requested computation is not supported for this input."""


class ContractError(KLDynError):
    """An input object is in the wrong state (e.g. trajectory not converged)."""


class InsufficientDataError(KLDynError):
    """Too few usable samples for a fit."""


class DegenerateSampleError(KLDynError):
    """Every sample was excluded, nothing can be concluded."""


class LevelNotReachedError(KLDynError):
    """No point of the requested level set was found."""


class RoundingFloorError(KLDynError):
    """Data in the window sit at the floating-point noise floor."""


class IntegrationError(KLDynError, RuntimeError):
    """Step-size underflow during integration.

    ``partial`` holds whatever was integrated before the failure.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial
