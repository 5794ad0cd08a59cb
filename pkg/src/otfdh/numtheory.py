"""Modular arithmetic, primality and primitive roots for DH and RSA.

Integers are plain Python ints.  Their canonical byte form is big-endian with
no leading zero byte; zero encodes as the empty string.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass
from functools import lru_cache

from .errors import DecodeError, GenerationError, ParameterError, UnsupportedParameterError

MR_ROUNDS = 32
TRIAL_DIVISION_LIMIT = 1 << 16
FACTORING_LIMIT = 1 << 20
SIEVE_LIMIT = 2000


def _small_primes(limit: int) -> list[int]:
    flags = bytearray([1]) * limit
    flags[0:2] = b"\x00\x00"
    for i in range(2, math.isqrt(limit - 1) + 1):
        if flags[i]:
            flags[i * i :: i] = bytes(len(range(i * i, limit, i)))
    return [i for i, f in enumerate(flags) if f]


SMALL_PRIMES = _small_primes(SIEVE_LIMIT)
_PRIMORIAL = math.prod(SMALL_PRIMES)


class RandomSource:
    """Seeded deterministic generator.  Single owner; not thread safe."""

    def __init__(self, seed: int):
        if not 0 <= seed < 1 << 64:
            raise ParameterError(f"seed must fit in 64 bits, got {seed}")
        self.seed = seed
        self._gen = random.Random(seed)

    def __repr__(self) -> str:
        return f"RandomSource(seed={self.seed})"

    def randbits(self, k: int) -> int:
        return self._gen.getrandbits(k) if k > 0 else 0

    def uniform_below(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection sampling."""
        if n < 1:
            raise ParameterError("uniform_below needs n >= 1")
        k = (n - 1).bit_length()
        while True:
            r = self.randbits(k)
            if r < n:
                return r

    def uniform_range(self, lo: int, hi: int) -> int:
        """Uniform integer in the closed range [lo, hi]."""
        if hi < lo:
            raise ParameterError(f"empty range [{lo}, {hi}]")
        return lo + self.uniform_below(hi - lo + 1)

    def random(self) -> float:
        return self._gen.random()

    def randbytes(self, n: int) -> bytes:
        return self.randbits(8 * n).to_bytes(n, "big") if n else b""

    def fork(self, label: str) -> RandomSource:
        """Independent child stream derived from this source's seed and ``label``."""
        digest = hashlib.sha256(f"{self.seed}:{label}".encode()).digest()
        return RandomSource(int.from_bytes(digest[:8], "big"))


def int_to_bytes(n: int) -> bytes:
    if n < 0:
        raise ParameterError("only non-negative integers have a canonical encoding")
    return n.to_bytes((n.bit_length() + 7) // 8, "big")


def int_from_bytes(data: bytes) -> int:
    if data[:1] == b"\x00":
        raise DecodeError("non-canonical integer: leading zero byte")
    return int.from_bytes(data, "big")


def modexp(base: int, exponent: int, modulus: int) -> int:
    """base**exponent mod modulus by square-and-multiply."""
    if modulus < 2:
        raise ParameterError(f"modulus must be >= 2, got {modulus}")
    if exponent < 0:
        raise ParameterError("negative exponents are not supported")
    # CPython's three-argument pow is a windowed square-and-multiply.
    return pow(base, exponent, modulus)


def _trial_division(n: int) -> bool:
    if n < 2:
        return False
    for d in SMALL_PRIMES:
        if d * d > n:
            return True
        if n % d == 0:
            return n == d
    for d in range(SMALL_PRIMES[-1] + 2, math.isqrt(n) + 1, 2):
        if n % d == 0:
            return False
    return True


def _miller_rabin(n: int, rounds: int, rng: RandomSource) -> bool:
    s, d = 0, n - 1
    while d % 2 == 0:
        s += 1
        d //= 2
    for _ in range(rounds):
        x = pow(rng.uniform_range(2, n - 2), d, n)
        if x == 1 or x == n - 1:
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def is_prime(n: int, rounds: int = MR_ROUNDS, rng: RandomSource | None = None) -> bool:
    """Exact below 2**16, Miller-Rabin with ``rounds`` random bases above.

    Without an explicit ``rng`` the bases come from a source seeded by ``n``,
    so the answer is reproducible.
    """
    if rounds < 1:
        raise ParameterError("rounds must be >= 1")
    if n < TRIAL_DIVISION_LIMIT:
        return _trial_division(n)
    if math.gcd(n, _PRIMORIAL) != 1:
        return False
    if rng is None:
        rng = RandomSource(n & (1 << 64) - 1)
    return _miller_rabin(n, rounds, rng)


def is_safe_prime(p: int) -> bool:
    return p > 4 and p % 2 == 1 and is_prime(p) and is_prime((p - 1) // 2)


def generate_prime(bits: int, rng: RandomSource, *, top_bits: int = 1, budget: int = 200_000) -> int:
    """Random prime with exactly ``bits`` bits and its ``top_bits`` high bits set."""
    if bits < 2 or not 1 <= top_bits <= bits:
        raise ParameterError(f"cannot make a {bits}-bit prime with {top_bits} top bits set")
    high = ((1 << top_bits) - 1) << (bits - top_bits)
    for _ in range(budget):
        n = rng.randbits(bits) | high | 1
        if n > SMALL_PRIMES[-1] and math.gcd(n, _PRIMORIAL) != 1:
            continue
        if is_prime(n, rng=rng):
            return n
    raise GenerationError(f"no {bits}-bit prime found within {budget} candidates")


def generate_safe_prime(bits: int, rng: RandomSource, *, budget: int = 2_000_000) -> int:
    """Random p = 2q + 1 with p and q prime and p exactly ``bits`` bits long."""
    if bits < 8:
        raise ParameterError(f"safe primes need bits >= 8, got {bits}")
    qbits = bits - 1
    for _ in range(budget):
        q = rng.randbits(qbits) | (1 << (qbits - 1)) | 1
        p = 2 * q + 1
        if p > SMALL_PRIMES[-1] and math.gcd(q * p, _PRIMORIAL) != 1:
            continue
        # cheap single-round screen before the full test
        if pow(2, p - 1, p) != 1:
            continue
        if is_prime(q, rng=rng) and is_prime(p, rng=rng):
            return p
    raise GenerationError(f"no {bits}-bit safe prime found within {budget} candidates")


@lru_cache(maxsize=4096)
def _prime_factors(n: int) -> tuple[int, ...]:
    factors = []
    d = 2
    while d * d <= n:
        if n % d == 0:
            factors.append(d)
            while n % d == 0:
                n //= d
        d += 1 if d == 2 else 2
    if n > 1:
        factors.append(n)
    return tuple(factors)


def is_primitive_root(g: int, p: int) -> bool:
    """True iff g generates the multiplicative group mod the prime p."""
    if not is_prime(p):
        raise ParameterError(f"{p} is not prime")
    if not 1 <= g < p:
        raise ParameterError(f"g must lie in [1, {p - 1}], got {g}")
    q = (p - 1) // 2
    if p > 4 and is_prime(q):
        return pow(g, 2, p) != 1 and pow(g, q, p) != 1
    if p >= FACTORING_LIMIT:
        raise UnsupportedParameterError(f"cannot factor p - 1 for non-safe p of {p.bit_length()} bits")
    return all(pow(g, (p - 1) // f, p) != 1 for f in _prime_factors(p - 1))


def find_primitive_root(p: int, rng: RandomSource, prefer_prime_g: bool = True, *, budget: int = 100_000) -> int:
    """Random primitive root of the safe prime p, optionally itself prime."""
    if not is_safe_prime(p):
        raise ParameterError(f"{p} is not a safe prime")
    for _ in range(budget):
        g = rng.uniform_range(2, p - 2)
        if prefer_prime_g and not is_prime(g, rng=rng):
            continue
        if is_primitive_root(g, p):
            return g
    raise GenerationError(f"no primitive root of {p} found within {budget} candidates")


def uniform_secret(p: int, rng: RandomSource) -> int:
    """Uniform DH secret in [2, p - 2]."""
    if p < 5:
        raise ParameterError(f"p must be >= 5, got {p}")
    return rng.uniform_range(2, p - 2)


@dataclass(frozen=True)
class DhParams:
    """The structural pair (g, p): prime modulus p and a primitive root g."""

    g: int
    p: int

    def __post_init__(self):
        if not isinstance(self.g, int) or not isinstance(self.p, int):
            raise ParameterError("DhParams fields must be integers")
        if self.p < 5 or not is_prime(self.p):
            raise ParameterError(f"p = {self.p} is not a usable prime")
        if not 2 <= self.g < self.p:
            raise ParameterError(f"g = {self.g} out of range for p = {self.p}")
        if not is_primitive_root(self.g, self.p):
            raise ParameterError(f"g = {self.g} is not a primitive root mod {self.p}")

    @property
    def width(self) -> int:
        """Byte length of any key derived under these parameters."""
        return (self.p.bit_length() + 7) // 8

    @classmethod
    def generate(cls, bits: int, rng: RandomSource, prefer_prime_g: bool = True) -> DhParams:
        p = generate_safe_prime(bits, rng)
        return cls(find_primitive_root(p, rng, prefer_prime_g), p)
