"""Slot replication of queries (powers and duplicate copies) and its check.

Layout: copy ``c`` starts at ``c * copy_width``; inside a copy, element ``i``
starts at ``i * block_width`` and its ``p`` consecutive slots hold
``x_i, x_i^2, ..., x_i^p``.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from pcm.errors import InvalidParams, SlotOverflow
from pcm.he.backend import Ciphertext, PublicKey
from pcm.psi import Query, QueryVariant, ReplicationMeta
from pcm.ring import Rng


def next_pow2(n: int) -> int:
    return 1 if n <= 1 else 1 << (n - 1).bit_length()


def make_layout(n_elements: int, powers: int, duplicates: int, slot_count: int, *,
                block_width: int | None = None, copy_width: int | None = None) -> ReplicationMeta:
    if powers < 1 or duplicates < 1:
        raise InvalidParams("powers and duplicates must be positive")
    bw = block_width or powers
    cw = copy_width or max(1, n_elements * bw)
    if bw < powers or cw < n_elements * bw:
        raise InvalidParams("blocks or copies are too narrow for the layout")
    if (duplicates - 1) * cw + n_elements * bw > slot_count or (duplicates > 1 and duplicates * cw > slot_count):
        raise SlotOverflow(f"{duplicates} copies of {n_elements}x{powers} slots exceed {slot_count} slots")
    return ReplicationMeta(powers, duplicates, bw, cw, n_elements)


def layout_vector(elements: Sequence[int], meta: ReplicationMeta, q: int, slot_count: int) -> np.ndarray:
    out = np.zeros(slot_count, dtype=np.uint64)
    for i, x in enumerate(elements):
        v = 1
        for j in range(1, meta.powers + 1):
            v = v * x % q
            for c in range(meta.duplicates):
                out[meta.slot(c, i, j)] = v
    return out


def encode_replicated_query(pk: PublicKey, elements: Sequence[int], powers: int = 1, duplicates: int = 1, *,
                            block_width: int | None = None, copy_width: int | None = None,
                            variant: QueryVariant = QueryVariant.SMALL_INPUT) -> Query:
    """Single ciphertext holding every element's powers, ``duplicates`` times."""
    he = pk.backend
    meta = make_layout(len(elements), powers, duplicates, he.slot_count,
                       block_width=block_width, copy_width=copy_width)
    slots = layout_vector(elements, meta, he.q, he.slot_count)
    ct = he.encrypt(pk, slots)
    return Query(variant, (ct,), len(elements), replication=meta)


def spread(pk: PublicKey, ct: Ciphertext, length: int) -> Ciphertext:
    """Copy every non-zero-block value into the ``length - 1`` slots after it.

    The input must be zero outside the block starts, and starts must be at
    least ``length`` apart. Uses only rotations and additions.
    """
    he = pk.backend
    pieces = [ct]  # pieces[b] covers 2**b slots
    while (1 << len(pieces)) <= length:
        p = pieces[-1]
        pieces.append(he.add(p, he.rotate(p, -(1 << (len(pieces) - 1)))))
    out, offset = None, 0
    for b in range(len(pieces) - 1, -1, -1):
        if length & (1 << b):
            piece = pieces[b] if offset == 0 else he.rotate(pieces[b], -offset)
            out = piece if out is None else he.add(out, piece)
            offset += 1 << b
    return out


def _indicator(slot_count: int, positions) -> np.ndarray:
    v = np.zeros(slot_count, dtype=np.uint64)
    v[list(positions)] = 1
    return v


def replication_violations(pk: PublicKey, Q: Query, rng: Rng, *,
                           binary_slots: Sequence[int] = ()) -> Ciphertext:
    """Masked per-slot violation terms, before the final sum.

    Covers: copies equal to their successor, ``x^(j+1) = x * x^j`` inside
    each live block of copy 0, and zero padding elsewhere. Slots listed in
    ``binary_slots`` (copy 0) are instead required to hold a bit.
    """
    he = pk.backend
    meta = Q.replication
    if meta is None:
        raise InvalidParams("query carries no replication layout")
    n, q = he.slot_count, he.q
    (ct,) = Q.ciphertexts
    terms = []

    def rmask(positions) -> np.ndarray:
        m = np.zeros(n, dtype=np.uint64)
        idx = np.fromiter(positions, dtype=np.int64)
        if len(idx):
            m[idx] = rng.nonzero_vector(q, len(idx))
        return m

    k, cw, bw, p, ne = meta.duplicates, meta.copy_width, meta.block_width, meta.powers, meta.elements
    if k > 1:
        diff = he.sub(ct, he.rotate(ct, cw))
        terms.append(he.mul(diff, rmask(range((k - 1) * cw))))
    if p > 1 and ne:
        starts = _indicator(n, (i * bw for i in range(ne)))
        base = spread(pk, he.mul(ct, starts), p)
        chain = he.sub(he.mul(base, ct), he.rotate(ct, 1))
        terms.append(he.mul(chain, rmask(i * bw + j for i in range(ne) for j in range(p - 1))))
    binary = set(binary_slots)
    if binary:
        idx = sorted(binary)
        bits = he.mul(ct, he.sub(ct, 1))
        terms.append(he.mul(bits, rmask(idx)))
    live = {i * bw + j for i in range(ne) for j in range(p)} | binary
    copy_span = cw if k > 1 else n
    pad = [s for s in range(copy_span) if s not in live]
    if k > 1:
        pad.extend(range(k * cw, n))
    if pad:
        terms.append(he.mul(ct, rmask(pad)))
    if not terms:
        return he.encrypt_constant(pk, 0)
    total = terms[0]
    for t in terms[1:]:
        total = he.add(total, t)
    return total


def replication_check(pk: PublicKey, Q: Query, rng: Rng, *, binary_slots: Sequence[int] = ()) -> Ciphertext:
    """Randomizer in every slot: 0 for an honest layout, non-zero (whp) otherwise."""
    he = pk.backend
    total = replication_violations(pk, Q, rng, binary_slots=binary_slots)
    n = he.slot_count
    if n & (n - 1):
        raise InvalidParams("replication checks need a power-of-two slot count")
    return he.slot_reduce(total, "sum", n)
