"""Encrypted zero test and set-inclusion tests.

Inclusion results are zero in a slot exactly when the tested value is in the
set; otherwise the slot is a uniformly random non-zero residue, because the
(non-zero) product is multiplied by a fresh random mask from Z_q*.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from pcm.errors import EmptySet, InsufficientPowers
from pcm.he.backend import Ciphertext, PublicKey, ceil_log2
from pcm.ring import Rng, to_coeffs

RootSpec = int | np.ndarray  # one root for all slots, or a per-slot root vector


def is_zero(pk: PublicKey, x: Ciphertext) -> Ciphertext:
    """Slot-wise ``1 - x^(q-1)``: 1 where the slot is 0, else 0."""
    he = pk.backend
    q = he.q
    he.require_depth(x, ceil_log2(q - 1), "zero detection")
    return he.power(x, q - 1, complement=True)


def mask(pk: PublicKey, ct: Ciphertext, rng: Rng) -> Ciphertext:
    """Multiply every slot by an independent uniform non-zero residue."""
    he = pk.backend
    return he.mul(ct, rng.nonzero_vector(he.q, he.slot_count))


def is_in_encrypted(pk: PublicKey, x: Ciphertext, Y: Sequence[Ciphertext], rng: Rng) -> Ciphertext:
    """``r * prod(x - y)`` over encrypted set members, as a balanced tree."""
    if not Y:
        raise EmptySet("inclusion test against an empty set")
    he = pk.backend
    diffs = [he.sub(x, y) for y in Y]
    return mask(pk, he.product_tree(diffs), rng)


def is_in_roots(pk: PublicKey, x: Ciphertext, roots: Sequence[RootSpec], rng: Rng) -> Ciphertext:
    """``r * prod(x - y)`` over plaintext set members.

    Each root may be a per-slot vector, which lets one ciphertext test many
    independent (value, set) pairs at once.
    """
    if len(roots) == 0:
        raise EmptySet("inclusion test against an empty set")
    he = pk.backend
    diffs = [he.sub(x, y) for y in roots]
    return mask(pk, he.product_tree(diffs), rng)


def is_in_values(pk: PublicKey, y: int, X: Sequence[Ciphertext], rng: Rng) -> Ciphertext:
    """``r * prod(y - x)``: is the plaintext ``y`` among the encrypted values?"""
    if not X:
        raise EmptySet("inclusion test against an empty set")
    he = pk.backend
    diffs = [he.rsub(y, x) for x in X]
    return mask(pk, he.product_tree(diffs), rng)


def is_in_plain(pk: PublicKey, powers: Sequence[Ciphertext], Y: Sequence[int], rng: Rng,
                *, split: bool = False) -> Ciphertext:
    """Power-basis inclusion test ``r * sum(a_i x^i)`` with ``prod(X - y) = sum(a_i X^i)``.

    ``powers[i]`` encrypts ``x^(i+1)``. With at least ``|Y|`` powers the
    evaluation needs no ciphertext multiplication. With ``split=True`` a
    polynomial of degree up to ``2p`` is evaluated as ``L(x) + x^p * H(x)``
    from ``p`` powers, spending one multiplication level.
    """
    if len(Y) == 0:
        raise EmptySet("inclusion test against an empty set")
    he = pk.backend
    n, p = len(Y), len(powers)
    coeffs = to_coeffs(list(Y), pk.params.modulus).coefficients
    if n <= p:
        acc = _evaluate(pk, powers, coeffs)
    elif split and n <= 2 * p:
        low = _evaluate(pk, powers, coeffs[:p])
        high = _evaluate(pk, powers, coeffs[p:])
        acc = he.add(low, he.mul(powers[p - 1], high))
    else:
        need = n if not split else (n + 1) // 2
        raise InsufficientPowers(f"degree {n} polynomial needs {need} powers, got {p}")
    return mask(pk, acc, rng)


def _evaluate(pk: PublicKey, powers: Sequence[Ciphertext], coeffs: Sequence[int]) -> Ciphertext:
    """``a_0 + sum_{i>=1} a_i x^i`` from encrypted powers."""
    he = pk.backend
    acc = he.encrypt_constant(pk, coeffs[0] % he.q)
    for i, a in enumerate(coeffs[1:]):
        acc = he.add(acc, he.mul(powers[i], int(a)))
    return acc
