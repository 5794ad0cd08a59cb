"""Exception hierarchy shared by every otfdh module."""


class OtfdhError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(OtfdhError, ValueError):
    """An argument violates a documented precondition."""


class UnsupportedParameterError(ParameterError):
    """The argument is valid in principle but outside what we can decide."""


class GenerationError(OtfdhError, RuntimeError):
    """A randomized search ran out of its candidate budget."""


class DecodeError(OtfdhError, ValueError):
    """Bytes could not be decoded; usually a sign of tampering."""


class SizeError(OtfdhError, ValueError):
    """Data is longer than the key material available for it."""


class ProtocolError(OtfdhError):
    """A protocol message or role operation was refused."""


class Rejected(ProtocolError):
    """An inbound message was rejected; ``cause`` is a short machine tag."""

    def __init__(self, cause: str, detail: str = ""):
        self.cause = cause
        self.detail = detail
        super().__init__(f"{cause}: {detail}" if detail else cause)


class AuthenticationError(Rejected):
    def __init__(self, detail: str = ""):
        super().__init__("auth", detail)
