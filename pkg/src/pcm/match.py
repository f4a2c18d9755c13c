"""Per-set matching: full containment, threshold and Tversky similarity.

Every matcher returns an encrypted status that is zero exactly when the set
matches (full containment additionally has a small false-positive rate when
two or more client elements are missing).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Sequence

from pcm.core import is_in_roots
from pcm.errors import EmptyThresholdSet, InvalidParams, InvalidThreshold, ModulusTooSmall
from pcm.he.backend import Ciphertext, PublicKey, SecretKey
from pcm.psi import (
    Query,
    QueryVariant,
    ServerSet,
    decrypt_slots,
    epsica_process,
    epsica_sd_process,
    psi_process,
)
from pcm.ring import Rng


class MatchKind(str, Enum):
    FULL = "full"
    THRESHOLD = "threshold"
    TVERSKY = "tversky"


@dataclass(frozen=True, eq=False)
class MatchingStatus:
    ct: Ciphertext
    set_id: int = 0


def _rational(x) -> Fraction:
    if isinstance(x, float):
        return Fraction(str(x))
    return Fraction(x)


def tversky_param_process(alpha, beta, t) -> tuple[int, int, int]:
    """Integer ``(a, b, c)`` with ``a|X∩Y| - b|X| - c|Y| >= 0`` iff similarity >= t."""
    alpha, beta, t = _rational(alpha), _rational(beta), _rational(t)
    if t <= 0 or t > 1:
        raise InvalidThreshold(f"threshold must lie in (0, 1], got {t}")
    if alpha < 0 or beta < 0:
        raise InvalidParams("alpha and beta must be non-negative")
    l = math.lcm(t.numerator, alpha.denominator, beta.denominator)
    a = l * (1 / t - 1 + alpha + beta)
    b, c = l * alpha, l * beta
    assert a.denominator == b.denominator == c.denominator == 1
    a, b, c = int(a), int(b), int(c)
    g = math.gcd(a, b, c) or 1
    return a // g, b // g, c // g


@dataclass(frozen=True)
class TverskyParams:
    alpha: Fraction
    beta: Fraction
    t: Fraction
    a: int
    b: int
    c: int

    @classmethod
    def create(cls, alpha, beta, t) -> "TverskyParams":
        alpha, beta, t = _rational(alpha), _rational(beta), _rational(t)
        a, b, c = tversky_param_process(alpha, beta, t)
        if a <= 0:
            raise InvalidParams(f"Tversky parameters give a={a}; the comparison is degenerate")
        if a - b - c < 0:
            raise InvalidParams("a - b - c must be non-negative for a two-sided range test")
        return cls(alpha, beta, t, a, b, c)

    @classmethod
    def jaccard(cls, t) -> "TverskyParams":
        return cls.create(1, 1, t)

    def matches_plain(self, ca: int, size_x: int, size_y: int) -> bool:
        """Integer form of the similarity test."""
        return self.a * ca - self.b * size_x - self.c * size_y >= 0


def tversky_similarity(X: set, Y: set, alpha, beta) -> Fraction | None:
    """Exact Tversky index, ``None`` when the denominator vanishes."""
    alpha, beta = _rational(alpha), _rational(beta)
    ca = len(X & Y)
    den = ca + alpha * len(X - Y) + beta * len(Y - X)
    if den == 0:
        return None
    return Fraction(ca) / den


def tversky_match_oracle(X: set, Y: set, params: TverskyParams) -> bool:
    sim = tversky_similarity(X, Y, params.alpha, params.beta)
    if sim is None:
        # 0/0: fall back to the integer form, which holds with equality
        return params.matches_plain(len(X & Y), len(X), len(Y))
    return sim >= params.t


# -- process functions -----------------------------------------------------

def _no_match(pk: PublicKey, rng: Rng) -> Ciphertext:
    """Encrypted random non-zero status: a set that statically cannot match."""
    he = pk.backend
    return he.encrypt_constant(pk, rng.nonzero(he.q))


def _cardinality(pk: PublicKey, Q: Query, Y: ServerSet, rng: Rng) -> Ciphertext:
    if Q.variant is QueryVariant.SMALL_INPUT:
        return epsica_process(pk, Q, Y, rng)
    return epsica_sd_process(pk, Q, Y)


def _query_size_bound(Q: Query) -> int:
    return len(Q.ciphertexts)


def f_match(pk: PublicKey, Q: Query, Y: ServerSet, rng: Rng) -> Ciphertext:
    """Zero iff ``X ⊆ Y`` (up to a false-positive rate of about 1/(q-1))."""
    he = pk.backend
    if Q.variant is QueryVariant.SMALL_INPUT:
        if len(Y) == 0:
            return he.sum_all(pk, [_no_match(pk, rng.child(1, i)) for i in range(len(Q))])
        return he.sum_all(pk, psi_process(pk, Q, Y, rng))
    # small domain: |X| - |X ∩ Y| counts missing elements exactly
    ca = epsica_sd_process(pk, Q, Y)
    size = he.sum_all(pk, Q.ciphertexts)
    return he.mul(he.sub(size, ca), rng.nonzero_vector(he.q, he.slot_count))


def threshold_range(Q: Query, Y: ServerSet, t_min: int) -> list[int]:
    return list(range(max(t_min, 0), min(_query_size_bound(Q), len(Y)) + 1))


def th_match(pk: PublicKey, Q: Query, Y: ServerSet, t_min: int, rng: Rng, *,
             strict: bool = False) -> Ciphertext:
    """Zero iff ``|X ∩ Y| >= t_min``; exact."""
    T = threshold_range(Q, Y, t_min)
    if not T:
        if strict:
            raise EmptyThresholdSet(f"t_min={t_min} exceeds the reachable cardinality")
        return _no_match(pk, rng)
    _guard_modulus(pk, 0, max(T))
    if len(Y) == 0:
        return pk.backend.encrypt_constant(pk, 0)  # T == [0]
    ca = _cardinality(pk, Q, Y, rng.child(0))
    return is_in_roots(pk, ca, T, rng.child(1))


def tversky_roots_small_input(params: TverskyParams, size_x: int, size_y: int) -> list[int]:
    """Cardinalities ``ca`` satisfying the two-sided Tversky range test."""
    a, b, c = params.a, params.b, params.c
    hi = (a - b - c) * size_y
    return [ca for ca in range(min(size_x, size_y) + 1)
            if 0 <= a * ca - b * size_x - c * size_y <= hi]


def tversky_roots_small_domain(params: TverskyParams, size_y: int) -> list[int]:
    """Values of ``a*ca - b|X|`` inside ``[c|Y|, (a-b)|Y|]``."""
    c = params.c
    return [c * size_y + t for t in range((params.a - params.b - c) * size_y + 1)]


def small_domain_span(params: TverskyParams, domain_size: int, size_y: int) -> tuple[int, int]:
    """Smallest and largest achievable ``a*ca - b|X|`` for a set ``Y`` in the domain."""
    a, b = params.a, params.b
    lo = hi = 0
    for sx in range(domain_size + 1):
        ca_lo = max(0, sx - (domain_size - size_y))
        ca_hi = min(sx, size_y)
        if ca_lo > ca_hi:
            continue
        lo = min(lo, a * ca_lo - b * sx)
        hi = max(hi, a * ca_hi - b * sx)
    return lo, hi


def _guard_modulus(pk: PublicKey, lo: int, hi: int) -> None:
    if hi - lo >= pk.params.q:
        raise ModulusTooSmall(f"values in [{lo}, {hi}] would wrap modulo {pk.params.q}")


def tv_match(pk: PublicKey, Q: Query, Y: ServerSet, params: TverskyParams, rng: Rng) -> Ciphertext:
    """Zero iff the Tversky similarity of ``X`` and ``Y`` is at least ``t``; exact.

    Small-input queries reveal ``|X|`` to the server, so the affine test folds
    into an explicit list of admissible cardinalities. Small-domain queries
    compute ``a*ca - b*|X|`` homomorphically and test it against the shifted
    range ``[c|Y|, (a-b)|Y|]``.
    """
    he = pk.backend
    if Q.variant is QueryVariant.SMALL_INPUT:
        size_x = _query_size_bound(Q)
        roots = tversky_roots_small_input(params, size_x, len(Y))
        if not roots:
            return _no_match(pk, rng)
        _guard_modulus(pk, 0, min(size_x, len(Y)))
        if len(Y) == 0:
            return he.encrypt_constant(pk, 0)  # ca is structurally 0 and 0 is admissible
        ca = epsica_process(pk, Q, Y, rng.child(0))
        return is_in_roots(pk, ca, roots, rng.child(1))
    lo, hi = small_domain_span(params, len(Q.ciphertexts), len(Y))
    _guard_modulus(pk, lo, hi)
    ca = epsica_sd_process(pk, Q, Y)
    size = he.sum_all(pk, Q.ciphertexts)
    w = he.sub(he.mul(ca, params.a), he.mul(size, params.b))
    return is_in_roots(pk, w, tversky_roots_small_domain(params, len(Y)), rng.child(1))


def match_reveal(sk: SecretKey, status: Ciphertext | MatchingStatus, slot: int = 0) -> int:
    """1 when the status decrypts to zero, else 0."""
    ct = status.ct if isinstance(status, MatchingStatus) else status
    return int(decrypt_slots(sk, ct)[slot] == 0)


def match_process(pk: PublicKey, Q: Query, Y: ServerSet, kind: MatchKind, rng: Rng, *,
                  t_min: int = 0, tversky: TverskyParams | None = None) -> Ciphertext:
    kind = MatchKind(kind)
    if kind is MatchKind.FULL:
        return f_match(pk, Q, Y, rng)
    if kind is MatchKind.THRESHOLD:
        return th_match(pk, Q, Y, t_min, rng)
    if tversky is None:
        raise InvalidParams("Tversky matching needs TverskyParams")
    return tv_match(pk, Q, Y, tversky, rng)


def match_oracle(X: Sequence[int], Y: Sequence[int], kind: MatchKind, *, t_min: int = 0,
                 tversky: TverskyParams | None = None) -> bool:
    """Plaintext matching function."""
    Xs, Ys = set(X), set(Y)
    kind = MatchKind(kind)
    if kind is MatchKind.FULL:
        return Xs <= Ys
    if kind is MatchKind.THRESHOLD:
        return len(Xs & Ys) >= t_min
    return tversky_match_oracle(Xs, Ys, tversky)
