from typing import Optional, Tuple


class FsoGroomError(Exception):
    """Base class for every domain error raised by ``fso_groom``."""


class ConfigurationError(FsoGroomError, ValueError):
    """Invalid topology, channel or simulation parameters."""


class ReservationError(FsoGroomError):
    """
    A (link, wavelength) reservation was rejected.

    The resource state is left exactly as it was before the call.
    """
    def __init__(self, message : str, link : Optional[Tuple[int, int]]=None, wavelength : Optional[int]=None):
        super().__init__(message)
        self.link = link
        self.wavelength = wavelength


class ProvisioningError(FsoGroomError):
    """Rack-to-rack provisioning could not place a lightpath."""
    def __init__(self, message : str, pair : Optional[Tuple[int, int]]=None, link : Optional[Tuple[int, int]]=None):
        super().__init__(message)
        self.pair = pair
        self.link = link


class InstabilityError(FsoGroomError):
    """Offered load reached or exceeded the service capacity (rho >= 1) or a queue overflowed its cap."""


class EnumerationLimitError(FsoGroomError):
    """The instance is too large for exhaustive enumeration."""
