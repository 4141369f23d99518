class GeoLocError(Exception):
    """Base class for all domain errors raised by geolocsft."""


class OutOfRangeLatitude(GeoLocError, ValueError):
    pass


class NonFiniteInput(GeoLocError, ValueError):
    pass


class EmptyInput(GeoLocError, ValueError):
    pass


class InvalidRadii(GeoLocError, ValueError):
    pass


class NoCandidates(GeoLocError):
    """Raised when every attempt of a prediction set failed to parse."""

    def __init__(self, sample_id: str | None = None):
        self.sample_id = sample_id
        super().__init__(f"No parsed candidates for sample {sample_id!r}")


class ThresholdMismatch(GeoLocError, ValueError):
    pass


class EmptyCollection(GeoLocError, ValueError):
    pass


class EmptyAfterParse(GeoLocError):
    pass


class EmptySamples(GeoLocError, ValueError):
    pass


class IncompleteProvenance(GeoLocError, ValueError):
    pass


class ConfigError(GeoLocError):
    pass


class TransportError(GeoLocError):
    """Base class for errors raised while talking to a remote endpoint."""


class Timeout(TransportError):
    pass


class HttpStatus(TransportError):
    def __init__(self, code: int, message: str = ""):
        self.code = code
        super().__init__(f"HTTP {code}: {message}" if message else f"HTTP {code}")


class RateLimited(TransportError):
    pass


class AuthMissing(TransportError):
    def __init__(self, env_var: str):
        self.env_var = env_var
        super().__init__(f"Environment variable {env_var!r} is not set")
