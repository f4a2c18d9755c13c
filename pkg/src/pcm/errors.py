"""Exception hierarchy shared by every layer of the package."""


class PCMError(Exception):
    """Base class for all errors raised by this package."""


# ring
class NotPrime(PCMError, ValueError):
    pass


class ZeroInverse(PCMError, ZeroDivisionError):
    pass


class EmptyRoots(PCMError, ValueError):
    pass


class ModulusMismatch(PCMError, ValueError):
    pass


# homomorphic backend
class InvalidParams(PCMError, ValueError):
    pass


class WrongKey(PCMError):
    pass


class BackendMismatch(PCMError):
    pass


class SlotOverflow(PCMError, ValueError):
    pass


class MissingRotationKeys(PCMError):
    pass


class DepthUnavailable(PCMError):
    """The circuit needs more multiplicative depth than the parameters allow."""


# protocol layers
class EmptySet(PCMError, ValueError):
    pass


class InsufficientPowers(PCMError, ValueError):
    pass


class Oversize(PCMError, ValueError):
    pass


class DuplicateElements(PCMError, ValueError):
    pass


class OutOfDomain(PCMError, ValueError):
    pass


class LengthMismatch(PCMError, ValueError):
    pass


class WeightLengthMismatch(LengthMismatch):
    pass


class InvalidThreshold(PCMError, ValueError):
    pass


class EmptyThresholdSet(PCMError):
    pass


class ModulusTooSmall(PCMError, ValueError):
    """Integer ranges used by a comparison would wrap around modulo q."""


class ProtocolFailure(PCMError):
    """A response could not be decoded (e.g. the noise budget was exhausted)."""


# engine / wire
class MalformedFrame(PCMError, ValueError):
    pass


class UnsupportedVersion(PCMError, ValueError):
    pass


class CapacityExceeded(PCMError, ValueError):
    pass


class ConfigError(PCMError, ValueError):
    pass


class ProtocolError(PCMError):
    """The peer violated the session protocol or returned an Error frame."""

    def __init__(self, code: int, message: str):
        super().__init__(f"[{code}] {message}")
        self.code = code
        self.message = message


# apps
class ParseError(PCMError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line


class WidthMismatch(ParseError):
    pass
