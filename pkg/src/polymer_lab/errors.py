"""Exception types raised by polymer_lab."""


class PolymerLabError(ValueError):
    """Base class for all input errors raised by the package."""


class InvalidEndpointError(PolymerLabError):
    pass


class UnreachableEndpointError(PolymerLabError):
    pass


class InvalidHorizonError(PolymerLabError):
    pass


class IncompatibleEnvironmentsError(PolymerLabError):
    pass


class InsufficientReplicatesError(PolymerLabError):
    pass
