"""Arithmetic in the prime plaintext ring Z_q.

Values handed around the protocol layers are plain Python ints reduced into
``[0, q)``. :class:`Scalar` wraps one together with its modulus where type
safety matters (mostly at API edges and in tests).
"""
from __future__ import annotations

import secrets
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from pcm.errors import EmptyRoots, ModulusMismatch, NotPrime, ZeroInverse

MAX_MODULUS_BITS = 62

# Deterministic Miller-Rabin witnesses, correct for every n < 3.3e24.
_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41)


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    for p in _MR_BASES:
        if n % p == 0:
            return n == p
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in _MR_BASES:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


@dataclass(frozen=True)
class PrimeModulus:
    q: int

    def __post_init__(self):
        if not isinstance(self.q, int) or self.q < 3:
            raise NotPrime(f"modulus must be an integer >= 3, got {self.q!r}")
        if self.q.bit_length() > MAX_MODULUS_BITS:
            raise NotPrime(f"modulus must be below 2^{MAX_MODULUS_BITS}")
        if not is_prime(self.q):
            raise NotPrime(f"{self.q} is not prime")

    def __int__(self) -> int:
        return self.q

    def __call__(self, value: int) -> "Scalar":
        return Scalar(value % self.q, self)


@dataclass(frozen=True)
class Scalar:
    value: int
    modulus: PrimeModulus

    def __post_init__(self):
        if not 0 <= self.value < self.modulus.q:
            raise ValueError(f"{self.value} not reduced modulo {self.modulus.q}")

    def _coerce(self, other) -> int:
        if isinstance(other, Scalar):
            if other.modulus != self.modulus:
                raise ModulusMismatch(f"{self.modulus.q} != {other.modulus.q}")
            return other.value
        if isinstance(other, int):
            return other % self.modulus.q
        return NotImplemented

    def _wrap(self, v: int) -> "Scalar":
        return Scalar(v % self.modulus.q, self.modulus)

    def __add__(self, other):
        o = self._coerce(other)
        return NotImplemented if o is NotImplemented else self._wrap(self.value + o)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._coerce(other)
        return NotImplemented if o is NotImplemented else self._wrap(self.value - o)

    def __rsub__(self, other):
        o = self._coerce(other)
        return NotImplemented if o is NotImplemented else self._wrap(o - self.value)

    def __mul__(self, other):
        o = self._coerce(other)
        return NotImplemented if o is NotImplemented else self._wrap(self.value * o)

    __rmul__ = __mul__

    def __neg__(self):
        return self._wrap(-self.value)

    def __pow__(self, exp: int):
        return mod_pow(self, exp)

    def __int__(self) -> int:
        return self.value

    def __eq__(self, other):
        if isinstance(other, Scalar):
            return self.modulus == other.modulus and self.value == other.value
        if isinstance(other, int):
            return self.value == other % self.modulus.q
        return NotImplemented

    def __hash__(self):
        return hash((self.value, self.modulus.q))

    def __repr__(self):
        return f"Scalar({self.value} mod {self.modulus.q})"


def mod_pow(base: Scalar, exp: int) -> Scalar:
    """Square-and-multiply exponentiation; ``0**0`` is 1."""
    if exp < 0:
        raise ValueError("exponent must be non-negative")
    q = base.modulus.q
    result, b = 1, base.value
    while exp:
        if exp & 1:
            result = result * b % q
        b = b * b % q
        exp >>= 1
    return Scalar(result, base.modulus)


def mod_inv(x: Scalar) -> Scalar:
    if x.value == 0:
        raise ZeroInverse("zero has no multiplicative inverse")
    return mod_pow(x, x.modulus.q - 2)


def inverse(x: int, q: int) -> int:
    """Integer shortcut for :func:`mod_inv`."""
    if x % q == 0:
        raise ZeroInverse("zero has no multiplicative inverse")
    return pow(x, q - 2, q)


@dataclass(frozen=True)
class CoeffPoly:
    """Monic polynomial ``sum(a_i X^i)`` stored low degree first."""

    coefficients: tuple[int, ...]
    modulus: PrimeModulus

    def __post_init__(self):
        if not self.coefficients or self.coefficients[-1] != 1:
            raise ValueError("polynomial must be monic")

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def __call__(self, x: int | Scalar) -> Scalar:
        q = self.modulus.q
        xv = int(x) % q
        acc = 0
        for a in reversed(self.coefficients):
            acc = (acc * xv + a) % q
        return Scalar(acc, self.modulus)


def to_coeffs(roots: Sequence[Scalar | int], modulus: PrimeModulus | None = None) -> CoeffPoly:
    """Coefficients of ``prod(X - y)`` over the given roots."""
    if len(roots) == 0:
        raise EmptyRoots("cannot build a polynomial from no roots")
    if modulus is None:
        if not isinstance(roots[0], Scalar):
            raise TypeError("modulus required when roots are plain ints")
        modulus = roots[0].modulus
    q = modulus.q
    coeffs = [1]
    for y in roots:
        if isinstance(y, Scalar) and y.modulus != modulus:
            raise ModulusMismatch("roots live in different rings")
        yv = int(y) % q
        nxt = [0] * (len(coeffs) + 1)
        for i, c in enumerate(coeffs):
            nxt[i + 1] = (nxt[i + 1] + c) % q
            nxt[i] = (nxt[i] - yv * c) % q
        coeffs = nxt
    return CoeffPoly(tuple(coeffs), modulus)


class Rng:
    """Seedable random source for all protocol randomness.

    Backed by numpy's Philox counter-based generator. Children derived with
    :meth:`child` depend only on the parent seed and the key path, so work
    fanned out over threads stays reproducible.
    """

    def __init__(self, seed: int | Sequence[int] | None = None, *, _seq: np.random.SeedSequence | None = None):
        if _seq is None:
            if seed is None:
                seed = secrets.randbits(128)
            _seq = np.random.SeedSequence(seed)
        self._seq = _seq
        self._gen = np.random.Generator(np.random.Philox(_seq))

    def child(self, *key: int) -> "Rng":
        seq = np.random.SeedSequence(self._seq.entropy, spawn_key=tuple(self._seq.spawn_key) + tuple(key))
        return Rng(_seq=seq)

    def uniform(self, q: int) -> int:
        return int(self._gen.integers(0, q))

    def nonzero(self, q: int) -> int:
        return int(self._gen.integers(1, q))

    def uniform_vector(self, q: int, n: int) -> np.ndarray:
        return self._gen.integers(0, q, size=n, dtype=np.uint64)

    def nonzero_vector(self, q: int, n: int) -> np.ndarray:
        return self._gen.integers(1, q, size=n, dtype=np.uint64)

    def permutation(self, n: int) -> list[int]:
        return [int(i) for i in self._gen.permutation(n)]

    def token(self, nbytes: int = 16) -> bytes:
        return self._gen.bytes(nbytes)


def sample_uniform(modulus: PrimeModulus, domain: str, rng: Rng) -> Scalar:
    """Draw from ``"Zq"`` (all residues) or ``"Zq*"`` (non-zero residues)."""
    if domain == "Zq":
        return Scalar(rng.uniform(modulus.q), modulus)
    if domain == "Zq*":
        return Scalar(rng.nonzero(modulus.q), modulus)
    raise ValueError(f"unknown domain {domain!r}")


def sum_distribution(k: int, modulus: PrimeModulus | int) -> tuple[Fraction, Fraction]:
    """Exact law of a sum of ``k`` independent uniform non-zero residues.

    Returns ``(z, p)``: the probability the sum is zero, and the probability
    it equals any one fixed non-zero value.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    q = int(modulus.q if isinstance(modulus, PrimeModulus) else modulus)
    z, p = Fraction(0), Fraction(1, q - 1)
    for _ in range(k - 1):
        z, p = p, p + (z - p) / (q - 1)
    return z, p

