"""One Diffie-Hellman exchange and the one-time pad derived from its secret."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .errors import ParameterError, ProtocolError, SizeError
from .numtheory import DhParams, RandomSource, modexp, uniform_secret


@dataclass(frozen=True)
class DhEphemeral:
    params: DhParams
    secret: int = field(repr=False)
    public_value: int

    def __post_init__(self):
        if not 2 <= self.secret <= self.params.p - 2:
            raise ParameterError("DH secret outside [2, p - 2]")


@dataclass(frozen=True)
class SharedKey:
    k: int = field(repr=False)
    otp: bytes = field(repr=False)

    @classmethod
    def from_secret(cls, k: int, params: DhParams) -> SharedKey:
        return cls(k, k.to_bytes(params.width, "big"))

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256(self.otp).hexdigest()[:16]


def dh_offer(params: DhParams, rng: RandomSource | None = None, *, secret: int | None = None) -> DhEphemeral:
    """Draw a fresh secret (or use ``secret``) and compute g**secret mod p."""
    if not isinstance(params, DhParams):
        raise ParameterError("dh_offer needs validated DhParams")
    if secret is None:
        if rng is None:
            raise ParameterError("dh_offer needs an rng or an explicit secret")
        secret = uniform_secret(params.p, rng)
    return DhEphemeral(params, secret, modexp(params.g, secret, params.p))


def check_public_value(value: int, params: DhParams) -> None:
    # 0, 1 and p - 1 collapse the key into a subgroup of order <= 2
    if not 2 <= value <= params.p - 2:
        raise ProtocolError(f"degenerate DH public value {value}")


def dh_combine(mine: DhEphemeral, theirs_public: int) -> SharedKey:
    check_public_value(theirs_public, mine.params)
    k = modexp(theirs_public, mine.secret, mine.params.p)
    return SharedKey.from_secret(k, mine.params)


def xor_otp(data: bytes, key: SharedKey) -> bytes:
    """XOR ``data`` with the leading bytes of the pad.  Its own inverse."""
    if len(data) > len(key.otp):
        raise SizeError(f"{len(data)} bytes do not fit a {len(key.otp)}-byte pad")
    return bytes(a ^ b for a, b in zip(data, key.otp))
