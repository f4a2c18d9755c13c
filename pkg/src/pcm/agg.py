"""Collection-wide aggregation of per-set matching statuses."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from pcm.core import is_zero
from pcm.errors import DepthUnavailable, InvalidParams, LengthMismatch, ModulusTooSmall
from pcm.he.backend import Ciphertext, PublicKey, SecretKey, ceil_log2
from pcm.psi import decrypt_slots
from pcm.ring import Rng, inverse


class AggregateKind(str, Enum):
    NAIVE = "naive"
    EXISTENTIAL = "existential"
    EXISTENTIAL_CHUNKED = "existential-chunked"
    CARDINALITY = "cardinality"
    CARDINALITY_SHUFFLED = "cardinality-shuffled"
    RETRIEVAL = "retrieval"


@dataclass(frozen=True, eq=False)
class AggregateResponse:
    kind: AggregateKind
    ciphertexts: tuple[Ciphertext, ...]
    chunk_width: int | None = None
    n_sets: int = 0


@dataclass(frozen=True)
class AssociatedData:
    """Non-zero datum per server set plus the rank of the wanted match."""

    values: tuple[int, ...]
    kappa: int = 1

    def __init__(self, values: Sequence[int], kappa: int = 1):
        vals = tuple(int(v) for v in values)
        if any(v == 0 for v in vals):
            raise InvalidParams("associated data must be non-zero (0 marks 'no such match')")
        if not 1 <= kappa:
            raise InvalidParams("kappa must be a positive rank")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "kappa", int(kappa))


@dataclass(frozen=True)
class RevealedAggregate:
    kind: AggregateKind
    value: int | tuple[int, ...]

    @property
    def exists(self) -> bool:
        """Existential answer, also derived from per-chunk bits."""
        if self.kind is AggregateKind.EXISTENTIAL_CHUNKED:
            return any(self.value)
        if self.kind is AggregateKind.NAIVE:
            return any(self.value)
        return bool(self.value)


def na_agg(statuses: Sequence[Ciphertext]) -> AggregateResponse:
    return AggregateResponse(AggregateKind.NAIVE, tuple(statuses), n_sets=len(statuses))


def _masked_product(pk: PublicKey, cts: Sequence[Ciphertext], rng: Rng) -> Ciphertext:
    he = pk.backend
    return he.mul(he.product_tree(cts), rng.nonzero_vector(he.q, he.slot_count))


def x_agg(pk: PublicKey, statuses: Sequence[Ciphertext], rng: Rng, l: int | None = None) -> AggregateResponse:
    """Product of all statuses (zero iff some set matches).

    With ``l`` the product is taken per chunk of ``2**l`` consecutive sets,
    which caps the extra depth at ``l``.
    """
    he = pk.backend
    n = len(statuses)
    if n == 0:
        raise InvalidParams("aggregation needs at least one set")
    depth = max(s.depth for s in statuses)
    if l is None:
        if depth + ceil_log2(n) > he.depth_budget:
            raise DepthUnavailable(f"full product over {n} sets needs depth {depth + ceil_log2(n)}")
        return AggregateResponse(AggregateKind.EXISTENTIAL, (_masked_product(pk, statuses, rng),), n_sets=n)
    width = 1 << l
    if depth + l > he.depth_budget:
        raise DepthUnavailable(f"chunks of 2^{l} need depth {depth + l}")
    chunks = tuple(_masked_product(pk, statuses[k:k + width], rng.child(k))
                   for k in range(0, n, width))
    return AggregateResponse(AggregateKind.EXISTENTIAL_CHUNKED, chunks, chunk_width=width, n_sets=n)


def _guard_count(pk: PublicKey, n: int) -> None:
    # an encrypted count of up to n matches must not wrap around q
    if n >= pk.params.q:
        raise ModulusTooSmall(f"counting over {n} sets wraps modulo {pk.params.q}")


def ca_agg(pk: PublicKey, statuses: Sequence[Ciphertext], rng: Rng, mode: str = "is_zero") -> AggregateResponse:
    """Number of matching sets: an encrypted count, or the shuffled statuses."""
    he = pk.backend
    if mode == "is_zero":
        _guard_count(pk, len(statuses))
        count = he.sum_all(pk, [is_zero(pk, s) for s in statuses])
        return AggregateResponse(AggregateKind.CARDINALITY, (count,), n_sets=len(statuses))
    if mode == "shuffle":
        order = rng.permutation(len(statuses))
        return AggregateResponse(AggregateKind.CARDINALITY_SHUFFLED,
                                 tuple(statuses[i] for i in order), n_sets=len(statuses))
    raise InvalidParams(f"unknown cardinality mode {mode!r}")


def ret_agg(pk: PublicKey, statuses: Sequence[Ciphertext], data: AssociatedData) -> AggregateResponse:
    """Datum of the kappa-th matching set in index order (0 if there is none)."""
    he = pk.backend
    if len(data.values) != len(statuses):
        raise LengthMismatch(f"{len(data.values)} data values for {len(statuses)} sets")
    _guard_count(pk, len(statuses))
    ctr = he.encrypt_constant(pk, 0)
    acc = he.encrypt_constant(pk, 0)
    for gamma, d in zip(statuses, data.values):
        b = is_zero(pk, gamma)
        ctr = he.add(ctr, b)
        hit = is_zero(pk, he.sub(he.mul(ctr, b), data.kappa))
        acc = he.add(acc, he.mul(hit, d))
    return AggregateResponse(AggregateKind.RETRIEVAL, (acc,), n_sets=len(statuses))


def agg_reveal(sk: SecretKey, resp: AggregateResponse, *, undo: int | None = None) -> RevealedAggregate:
    """Decode a response; ``undo`` divides out a multiplicative protection term."""
    q = sk.params.q

    def value(ct: Ciphertext) -> int:
        v = decrypt_slots(sk, ct)[0]
        return v * inverse(undo, q) % q if undo is not None else v

    kind = resp.kind
    if kind is AggregateKind.NAIVE:
        return RevealedAggregate(kind, tuple(int(value(c) == 0) for c in resp.ciphertexts))
    if kind is AggregateKind.EXISTENTIAL:
        return RevealedAggregate(kind, int(value(resp.ciphertexts[0]) == 0))
    if kind is AggregateKind.EXISTENTIAL_CHUNKED:
        return RevealedAggregate(kind, tuple(int(value(c) == 0) for c in resp.ciphertexts))
    if kind is AggregateKind.CARDINALITY_SHUFFLED:
        return RevealedAggregate(kind, sum(int(value(c) == 0) for c in resp.ciphertexts))
    return RevealedAggregate(kind, value(resp.ciphertexts[0]))


def aggregate_oracle(kind: AggregateKind, matches: Sequence[bool], *, chunk_width: int | None = None,
                     data: AssociatedData | None = None):
    """Plaintext aggregation of per-set match bits."""
    kind = AggregateKind(kind)
    bits = [bool(m) for m in matches]
    if kind is AggregateKind.NAIVE:
        return tuple(int(b) for b in bits)
    if kind is AggregateKind.EXISTENTIAL:
        return int(any(bits))
    if kind is AggregateKind.EXISTENTIAL_CHUNKED:
        return tuple(int(any(bits[k:k + chunk_width])) for k in range(0, len(bits), chunk_width))
    if kind in (AggregateKind.CARDINALITY, AggregateKind.CARDINALITY_SHUFFLED):
        return sum(bits)
    seen = 0
    for b, d in zip(bits, data.values):
        seen += b
        if b and seen == data.kappa:
            return d
    return 0
