"""Textbook RSA: no padding, no hashing, chunked over arbitrary-length data.

A byte string is cut into blocks of ``modulus_bytes - 1`` bytes so every block
value is below n.  Each block is raised to the exponent and written back as a
fixed ``modulus_bytes``-wide block.  One trailer byte records how many bytes the
final block carries (``len(data) % block_size``; 0 means a full block).  The
empty string maps to the empty string.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DecodeError, GenerationError, ParameterError
from .numtheory import RandomSource, generate_prime, modexp

DEFAULT_E = 65537


@dataclass(frozen=True)
class RsaPublicKey:
    n: int
    e: int

    @property
    def modulus_bytes(self) -> int:
        return (self.n.bit_length() + 7) // 8


@dataclass(frozen=True)
class RsaKeyPair:
    public: RsaPublicKey
    d: int
    p_factor: int
    q_factor: int

    @property
    def n(self) -> int:
        return self.public.n

    def self_test(self, rng: RandomSource, trials: int = 8) -> bool:
        n, e = self.public.n, self.public.e
        for _ in range(trials):
            m = rng.uniform_below(n)
            if modexp(modexp(m, e, n), self.d, n) != m:
                return False
        return True


def keypair_from_factors(p: int, q: int, e: int = DEFAULT_E) -> RsaKeyPair:
    """Build a key pair from known primes; d is the inverse of e mod phi(n)."""
    if p == q:
        raise ParameterError("RSA factors must be distinct")
    phi = (p - 1) * (q - 1)
    if e < 3 or e % 2 == 0 or math.gcd(e, phi) != 1:
        raise ParameterError(f"e = {e} is not an odd unit mod phi(n)")
    return RsaKeyPair(RsaPublicKey(p * q, e), pow(e, -1, phi), p, q)


def rsa_keygen(bits: int, rng: RandomSource, e: int = DEFAULT_E) -> RsaKeyPair:
    """Fresh key pair whose modulus has exactly ``bits`` bits."""
    if bits < 64 or bits % 2:
        raise ParameterError(f"RSA modulus size must be even and >= 64, got {bits}")
    half = bits // 2
    for _ in range(64):
        # two top bits set on each factor pins the product to exactly `bits` bits
        p = generate_prime(half, rng, top_bits=2)
        q = generate_prime(half, rng, top_bits=2)
        if p == q:
            continue
        phi = (p - 1) * (q - 1)
        exp = e
        while math.gcd(exp, phi) != 1:
            exp += 2
        return keypair_from_factors(p, q, exp)
    raise GenerationError("could not draw two distinct RSA primes")


def _widths(n: int) -> tuple[int, int]:
    if n < 257:
        raise ParameterError("modulus too small to carry one byte per block")
    width = (n.bit_length() + 7) // 8
    return width - 1, width


def rsa_apply(data: bytes, exponent: int, n: int) -> bytes:
    """Forward transform: chunk, exponentiate, emit fixed-width blocks plus trailer."""
    if not data:
        return b""
    chunk, width = _widths(n)
    if chunk > 256:
        raise ParameterError("modulus too large for a one-byte length trailer")
    out = bytearray()
    for i in range(0, len(data), chunk):
        m = int.from_bytes(data[i : i + chunk], "big")
        out += modexp(m, exponent, n).to_bytes(width, "big")
    out.append(len(data) % chunk)
    return bytes(out)


def rsa_unapply(data: bytes, exponent: int, n: int) -> bytes:
    """Inverse transform of :func:`rsa_apply` under the matching exponent."""
    if not data:
        return b""
    chunk, width = _widths(n)
    body, trailer = data[:-1], data[-1]
    if len(body) == 0 or len(body) % width:
        raise DecodeError(f"ciphertext body of {len(body)} bytes is not a whole number of blocks")
    if trailer >= chunk:
        raise DecodeError(f"bad length trailer {trailer}")
    nblocks = len(body) // width
    out = bytearray()
    for i in range(nblocks):
        c = int.from_bytes(body[i * width : (i + 1) * width], "big")
        if c >= n:
            raise DecodeError("block value not below the modulus")
        size = trailer if (i == nblocks - 1 and trailer) else chunk
        m = modexp(c, exponent, n)
        if m >> (8 * size):
            raise DecodeError("recovered block overflows its slot")
        out += m.to_bytes(size, "big")
    return bytes(out)


def rsa_encrypt(m: bytes, key: RsaPublicKey) -> bytes:
    return rsa_apply(m, key.e, key.n)


def rsa_decrypt(c: bytes, kp: RsaKeyPair) -> bytes:
    return rsa_unapply(c, kp.d, kp.n)


def rsa_sign(m: bytes, kp: RsaKeyPair) -> bytes:
    return rsa_apply(m, kp.d, kp.n)


def rsa_verify(m: bytes, sig: bytes, key: RsaPublicKey) -> bool:
    """Recover the signed bytes with the public exponent and compare to ``m``."""
    try:
        return rsa_unapply(sig, key.e, key.n) == m
    except DecodeError:
        return False


@dataclass(frozen=True)
class SignedPayload:
    payload: bytes
    signature: bytes

    @classmethod
    def create(cls, payload: bytes, kp: RsaKeyPair) -> SignedPayload:
        return cls(payload, rsa_sign(payload, kp))

    def verify(self, key: RsaPublicKey) -> bool:
        return rsa_verify(self.payload, self.signature, key)
