"""Single-set PSI layer: query encoding, processing, reveal and query checks.

Two status conventions coexist. Small-input statuses are zero for members
(an inclusion test output), small-domain statuses are 1 for members (the
product of two indicator bits). The matching layer normalizes both.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from pcm.core import is_in_roots, is_in_values, is_zero
from pcm.errors import (
    DuplicateElements,
    EmptySet,
    LengthMismatch,
    OutOfDomain,
    Oversize,
    ProtocolFailure,
    WeightLengthMismatch,
)
from pcm.he.backend import Ciphertext, DecryptFailure, PublicKey, SecretKey
from pcm.ring import Rng, inverse


class QueryVariant(str, Enum):
    SMALL_INPUT = "small-input"
    SMALL_DOMAIN = "small-domain"


@dataclass(frozen=True)
class ClientSet:
    elements: tuple[int, ...]
    max_size: int | None = None

    def __init__(self, elements: Iterable[int], max_size: int | None = None):
        elems = tuple(int(e) for e in elements)
        if len(set(elems)) != len(elems):
            raise DuplicateElements("client set contains repeated elements")
        if max_size is not None and len(elems) > max_size:
            raise Oversize(f"{len(elems)} elements exceed the declared capacity {max_size}")
        object.__setattr__(self, "elements", elems)
        object.__setattr__(self, "max_size", max_size)

    def __len__(self):
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)


@dataclass(frozen=True)
class ServerSet:
    elements: tuple[int, ...]
    id: int = 0

    def __init__(self, elements: Iterable[int], id: int = 0):
        object.__setattr__(self, "elements", tuple(int(e) for e in elements))
        object.__setattr__(self, "id", id)

    def __len__(self):
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)


@dataclass(frozen=True)
class Domain:
    """Ordered element domain shared by both parties."""

    elements: tuple[int, ...]

    def __init__(self, elements: Iterable[int]):
        elems = tuple(int(e) for e in elements)
        if len(set(elems)) != len(elems):
            raise DuplicateElements("domain elements must be distinct")
        object.__setattr__(self, "elements", elems)
        object.__setattr__(self, "_index", {e: i for i, e in enumerate(elems)})

    @classmethod
    def range(cls, size: int) -> "Domain":
        return cls(range(size))

    def __len__(self):
        return len(self.elements)

    def index(self, e: int) -> int:
        try:
            return self._index[int(e)]
        except KeyError:
            raise OutOfDomain(f"{e} is not in the domain") from None

    def indicator(self, S: Iterable[int]) -> list[int]:
        v = [0] * len(self.elements)
        for e in S:
            v[self.index(e)] = 1
        return v


@dataclass(frozen=True)
class ReplicationMeta:
    powers: int = 1
    duplicates: int = 1
    block_width: int = 1
    copy_width: int = 1
    elements: int = 0

    def slot(self, copy: int, element: int, power: int) -> int:
        """Slot of ``x_element ** power`` (power counted from 1) in ``copy``."""
        return copy * self.copy_width + element * self.block_width + power - 1


@dataclass(frozen=True, eq=False)
class Query:
    variant: QueryVariant
    ciphertexts: tuple[Ciphertext, ...]
    declared_size: int
    replication: ReplicationMeta | None = None
    domain: Domain | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.ciphertexts)


# -- client side ----------------------------------------------------------

def encode_query(pk: PublicKey, X: ClientSet) -> Query:
    """One ciphertext per element (slot 0 carries the value)."""
    he = pk.backend
    cts = tuple(he.encrypt(pk, [x]) for x in X)
    return Query(QueryVariant.SMALL_INPUT, cts, len(X) if X.max_size is None else X.max_size)


def encode_sd_query(pk: PublicKey, X: ClientSet, D: Domain) -> Query:
    """Encrypted membership bit for every domain element, in domain order."""
    he = pk.backend
    bits = D.indicator(X)
    cts = tuple(he.encrypt(pk, [b]) for b in bits)
    return Query(QueryVariant.SMALL_DOMAIN, cts, len(D), domain=D)


def _check_variant(Q: Query, variant: QueryVariant) -> None:
    if Q.variant is not variant:
        raise ValueError(f"expected a {variant.value} query, got {Q.variant.value}")


# -- server side: small input ---------------------------------------------

def psi_process(pk: PublicKey, Q: Query, Y: ServerSet, rng: Rng, *, shuffle: bool = False) -> list[Ciphertext]:
    """Inclusion status of every client element in ``Y`` (0 = member).

    ``shuffle`` permutes the statuses so that the client learns only how
    many of its elements are members (cardinality-only reveal).
    """
    _check_variant(Q, QueryVariant.SMALL_INPUT)
    if len(Y) == 0:
        raise EmptySet("server set is empty")
    roots = list(Y.elements)
    statuses = [is_in_roots(pk, x, roots, rng.child(0, i)) for i, x in enumerate(Q.ciphertexts)]
    if shuffle:
        statuses = [statuses[i] for i in rng.child(1).permutation(len(statuses))]
    return statuses


def epsica_process(pk: PublicKey, Q: Query, Y: ServerSet, rng: Rng) -> Ciphertext:
    """Encrypted ``|X ∩ Y|`` (sum of zero indicators over the statuses)."""
    he = pk.backend
    statuses = psi_process(pk, Q, Y, rng)
    return he.sum_all(pk, [is_zero(pk, s) for s in statuses])


def psi_sum_process(pk: PublicKey, Q: Query, Y: ServerSet, W: Sequence[int], rng: Rng) -> Ciphertext:
    """Encrypted sum of the weights of server elements present in the query."""
    _check_variant(Q, QueryVariant.SMALL_INPUT)
    if len(W) != len(Y):
        raise WeightLengthMismatch(f"{len(W)} weights for {len(Y)} server elements")
    he = pk.backend
    if not Q.ciphertexts:
        return he.encrypt_constant(pk, 0)
    terms = []
    for i, (y, w) in enumerate(zip(Y.elements, W)):
        hit = is_zero(pk, is_in_values(pk, y, Q.ciphertexts, rng.child(i)))
        terms.append(he.mul(hit, int(w)))
    return he.sum_all(pk, terms)


# -- server side: small domain --------------------------------------------

def _server_indicator(Q: Query, Y: ServerSet, D: Domain | None) -> list[int]:
    D = D or Q.domain
    if D is None:
        raise ValueError("small-domain processing needs the domain")
    if len(Q.ciphertexts) != len(D):
        raise LengthMismatch(f"query has {len(Q.ciphertexts)} entries for a domain of {len(D)}")
    return D.indicator(Y)


def psi_sd_process(pk: PublicKey, Q: Query, Y: ServerSet, D: Domain | None = None) -> list[Ciphertext]:
    """Per-domain-element status ``z_i * v_i`` (1 = in both sets)."""
    _check_variant(Q, QueryVariant.SMALL_DOMAIN)
    he = pk.backend
    v = _server_indicator(Q, Y, D)
    return [he.mul(z, vi) for z, vi in zip(Q.ciphertexts, v)]


def epsica_sd_process(pk: PublicKey, Q: Query, Y: ServerSet, D: Domain | None = None) -> Ciphertext:
    he = pk.backend
    return he.sum_all(pk, psi_sd_process(pk, Q, Y, D))


def psi_sum_sd_process(pk: PublicKey, Q: Query, Y: ServerSet, W: Sequence[int],
                       D: Domain | None = None) -> Ciphertext:
    """``sum w_i z_i v_i`` with one weight per domain element."""
    _check_variant(Q, QueryVariant.SMALL_DOMAIN)
    he = pk.backend
    v = _server_indicator(Q, Y, D)
    if len(W) != len(v):
        raise WeightLengthMismatch(f"{len(W)} weights for a domain of {len(v)}")
    return he.sum_all(pk, [he.mul(z, int(w) * vi) for z, w, vi in zip(Q.ciphertexts, W, v)])


# -- malicious-query checks -------------------------------------------------

def mal_check(pk: PublicKey, Q: Query, rng: Rng) -> Ciphertext:
    """Randomizer that is 0 for distinct-element queries, uniform otherwise.

    ``T = prod_{i<j}(x_i - x_j)`` is zero iff two elements coincide; the
    result is ``r * IsZero(T)`` with ``r`` uniform in Z_q.
    """
    _check_variant(Q, QueryVariant.SMALL_INPUT)
    he = pk.backend
    pairs = list(itertools.combinations(Q.ciphertexts, 2))
    if not pairs:
        return he.encrypt_constant(pk, 0)
    T = he.product_tree([he.sub(a, b) for a, b in pairs])
    return he.mul(is_zero(pk, T), rng.uniform_vector(he.q, he.slot_count))


def pairwise_product(pk: PublicKey, Q: Query) -> Ciphertext:
    """Encrypted ``prod_{i<j}(x_i - x_j)`` (1 for queries with under two elements)."""
    he = pk.backend
    pairs = list(itertools.combinations(Q.ciphertexts, 2))
    if not pairs:
        return he.encrypt_constant(pk, 1)
    return he.product_tree([he.sub(a, b) for a, b in pairs])


def mal_check_multiplicative(pk: PublicKey, Q: Query, result: Ciphertext) -> Ciphertext:
    """Protect ``result`` as ``A * T``; zero-detection-free alternative."""
    _check_variant(Q, QueryVariant.SMALL_INPUT)
    return pk.backend.mul(result, pairwise_product(pk, Q))


def client_pairwise_product(X: Iterable[int], q: int) -> int:
    """The client's own ``T`` for undoing the multiplicative protection."""
    T = 1
    for a, b in itertools.combinations(list(X), 2):
        T = T * (a - b) % q
    return T


def undo_multiplicative(T: int, M: int, q: int) -> int:
    """``M * T^-1``; raises ZeroInverse when the client's own set repeats."""
    return M * inverse(T, q) % q


def sd_mal_check(pk: PublicKey, Q: Query, rng: Rng) -> Ciphertext:
    """Randomizer that is 0 iff every query entry is a bit.

    Each entry contributes ``IsIn(z, {0, 1}) = r * z * (z - 1)``.
    """
    _check_variant(Q, QueryVariant.SMALL_DOMAIN)
    he = pk.backend
    terms = [he.mul(he.mul(z, he.sub(z, 1)), rng.child(i).nonzero_vector(he.q, he.slot_count))
             for i, z in enumerate(Q.ciphertexts)]
    return he.sum_all(pk, terms)


def amortized_randomizers(pk: PublicKey, R: Ciphertext, N: int, rng: Rng) -> list[Ciphertext]:
    """``N`` randomizers ``delta_i * R`` derived from one check."""
    he = pk.backend
    return [he.mul(R, rng.child(i).nonzero_vector(he.q, he.slot_count)) for i in range(N)]


def apply_randomizer(pk: PublicKey, result: Ciphertext, R: Ciphertext, rng: Rng) -> Ciphertext:
    return pk.backend.add(result, amortized_randomizers(pk, R, 1, rng)[0])


# -- client reveal ---------------------------------------------------------

def decrypt_slots(sk: SecretKey, ct: Ciphertext) -> list[int]:
    """Decrypt, turning a depth-exhaustion failure into :class:`ProtocolFailure`."""
    out = sk.backend.decrypt(sk, ct)
    if isinstance(out, DecryptFailure):
        raise ProtocolFailure(f"decryption failed: depth {out.depth_used} > budget {out.depth_budget}")
    return out


def reveal_psi(sk: SecretKey, statuses: Sequence[Ciphertext], Q_elements: Sequence[int],
               variant: QueryVariant = QueryVariant.SMALL_INPUT) -> set[int]:
    """Client elements found in the server set.

    ``Q_elements`` are the client's own elements (small input) or the domain
    elements (small domain), aligned with ``statuses``.
    """
    if len(statuses) != len(Q_elements):
        raise LengthMismatch("statuses and elements differ in length")
    hit = 0 if variant is QueryVariant.SMALL_INPUT else 1
    return {x for x, s in zip(Q_elements, statuses) if decrypt_slots(sk, s)[0] == hit}


def reveal_scalar(sk: SecretKey, ct: Ciphertext, slot: int = 0) -> int:
    return decrypt_slots(sk, ct)[slot]
