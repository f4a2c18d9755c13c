"""Client encoding, server evaluation and client reveal for each pipeline.

A pipeline turns a client input into ``(header, ciphertexts)``, evaluates
that query against a collection on the server side, and decodes the
response. The scalar pipeline keeps one value per ciphertext and follows
the layer functions directly; the batched chem and doc pipelines (in
:mod:`pcm.apps`) pack many server sets into the slots of each ciphertext.
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence, TypeVar

import numpy as np

from pcm.agg import (
    AggregateKind,
    AggregateResponse,
    AssociatedData,
    RevealedAggregate,
    agg_reveal,
    ca_agg,
    na_agg,
    ret_agg,
    x_agg,
)
from pcm.engine.config import SessionConfig
from pcm.engine.wire import ErrorCode
from pcm.errors import DepthUnavailable, InvalidParams, ProtocolError
from pcm.he.backend import Ciphertext, PublicKey, SecretKey, ceil_log2
from pcm.match import match_process
from pcm.psi import (
    ClientSet,
    Domain,
    Query,
    QueryVariant,
    ServerSet,
    amortized_randomizers,
    client_pairwise_product,
    decrypt_slots,
    mal_check,
    pairwise_product,
    sd_mal_check,
)
from pcm.ring import Rng

T = TypeVar("T")
R = TypeVar("R")


@dataclass
class Collection:
    """Server sets with their identifiers and optional associated data."""

    ids: list[str]
    sets: list[list]
    data: list[int] | None = None

    def __post_init__(self):
        if len(self.ids) != len(self.sets):
            raise InvalidParams("ids and sets differ in length")
        if self.data is not None and len(self.data) != len(self.sets):
            raise InvalidParams("data and sets differ in length")

    def __len__(self):
        return len(self.sets)


@dataclass
class ClientState:
    """What the client keeps between sending a query and reading the response."""

    values: dict = field(default_factory=dict)


def parallel_map(fn: Callable[[T], R], items: Iterable[T], threads: int) -> list[R]:
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _error(msg: str) -> ProtocolError:
    return ProtocolError(ErrorCode.BAD_QUERY, msg)


class Pipeline(ABC):
    name: str

    def __init__(self, cfg: SessionConfig):
        self.cfg = cfg

    @abstractmethod
    def encode(self, pk: PublicKey, client_input: Any, rng: Rng, *,
               unchecked: bool = False) -> tuple[dict, list[Ciphertext], ClientState]:
        """``unchecked`` skips client-side validation (to build malformed test queries).

        For small-domain scalar queries ``unchecked`` input is the raw entry vector.
        """

    @abstractmethod
    def evaluate(self, pk: PublicKey, header: dict, cts: Sequence[Ciphertext], collection: Collection,
                 rng: Rng, threads: int = 1) -> tuple[dict, list[Ciphertext]]:
        ...

    @abstractmethod
    def reveal(self, sk: SecretKey, header: dict, cts: Sequence[Ciphertext],
               state: ClientState) -> RevealedAggregate:
        ...

    def validate_collection(self, collection: Collection) -> None:
        if len(collection) == 0:
            raise InvalidParams("the collection is empty; at least one set is required")


def protect(pk: PublicKey, cts: Sequence[Ciphertext], R: Ciphertext, rng: Rng) -> list[Ciphertext]:
    """Add an independent multiple of the check randomizer to every response ciphertext."""
    he = pk.backend
    return [he.add(c, d) for c, d in zip(cts, amortized_randomizers(pk, R, len(cts), rng))]


# -- scalar pipeline ---------------------------------------------------------

class ScalarPipeline(Pipeline):
    """One encrypted value per ciphertext; every layer combination is available."""

    name = "scalar"

    def _domain(self) -> Domain:
        return Domain.range(self.cfg.psi.domain_size or 0)

    def encode(self, pk, client_input, rng, *, unchecked=False):
        he = pk.backend
        elements = [int(x) for x in client_input]
        state = ClientState({"elements": elements})
        if self.cfg.variant is QueryVariant.SMALL_INPUT:
            if not unchecked:
                ClientSet(elements)
            cts = [he.encrypt(pk, [x]) for x in elements]
            return {"variant": "small-input", "size": len(cts)}, cts, state
        D = self._domain()
        if unchecked:
            bits = elements  # raw per-domain entries, not necessarily bits
            state = ClientState({"elements": []})
        else:
            ClientSet(elements)
            for x in elements:
                D.index(x)
            bits = D.indicator(elements)
        cts = [he.encrypt(pk, [b]) for b in bits]
        return {"variant": "small-domain", "size": len(cts)}, cts, state

    def _query(self, header: dict, cts: Sequence[Ciphertext]) -> Query:
        variant = self.cfg.variant
        if header.get("variant") != variant.value:
            raise _error(f"expected a {variant.value} query")
        if variant is QueryVariant.SMALL_INPUT:
            return Query(variant, tuple(cts), len(cts))
        D = self._domain()
        if len(cts) != len(D):
            raise _error(f"{len(cts)} entries for a domain of {len(D)}")
        return Query(variant, tuple(cts), len(D), domain=D)

    def statuses(self, pk: PublicKey, Q: Query, collection: Collection, rng: Rng,
                 threads: int = 1) -> list[Ciphertext]:
        cfg = self.cfg
        kind = cfg.match_kind
        tv = cfg.tversky() if kind.value == "tversky" else None

        def one(j: int) -> Ciphertext:
            Y = ServerSet(collection.sets[j], id=j)
            return match_process(pk, Q, Y, kind, rng.child(1, j), t_min=cfg.match.t_min, tversky=tv)

        return parallel_map(one, range(len(collection)), threads)

    def evaluate(self, pk, header, cts, collection, rng, threads=1):
        self.validate_collection(collection)
        cfg = self.cfg
        Q = self._query(header, cts)
        statuses = self.statuses(pk, Q, collection, rng, threads)
        resp = aggregate(pk, cfg, statuses, collection, rng.child(2))
        out = list(resp.ciphertexts)
        mode = cfg.mal.mode
        if mode == "additive":
            check = mal_check if Q.variant is QueryVariant.SMALL_INPUT else sd_mal_check
            out = protect(pk, out, check(pk, Q, rng.child(3)), rng.child(4))
        elif mode == "multiplicative":
            T = pairwise_product(pk, Q)
            out = [pk.backend.mul(c, T) for c in out]
        if resp.kind is AggregateKind.EXISTENTIAL:
            return {"kind": resp.kind.value}, out  # fixed size: independent of N
        return {"kind": resp.kind.value, "n_sets": resp.n_sets, "chunk_width": resp.chunk_width}, out

    def reveal(self, sk, header, cts, state):
        undo = None
        if self.cfg.mal.mode == "multiplicative":
            undo = client_pairwise_product(state.values["elements"], sk.params.q)
        resp = AggregateResponse(AggregateKind(header["kind"]), tuple(cts), header.get("chunk_width"),
                                 header.get("n_sets", 0))
        return agg_reveal(sk, resp, undo=undo)


def aggregate(pk: PublicKey, cfg: SessionConfig, statuses: Sequence[Ciphertext], collection: Collection,
              rng: Rng) -> AggregateResponse:
    kind = cfg.agg_kind
    if kind is AggregateKind.NAIVE:
        return na_agg(statuses)
    if kind is AggregateKind.EXISTENTIAL:
        return x_agg(pk, statuses, rng)
    if kind is AggregateKind.EXISTENTIAL_CHUNKED:
        return x_agg(pk, statuses, rng, l=cfg.agg.chunk_log)
    if kind is AggregateKind.CARDINALITY:
        return ca_agg(pk, statuses, rng, mode="is_zero")
    if kind is AggregateKind.CARDINALITY_SHUFFLED:
        return ca_agg(pk, statuses, rng, mode="shuffle")
    if collection.data is None:
        raise InvalidParams("retrieval aggregation needs associated data for every set")
    return ret_agg(pk, statuses, AssociatedData(collection.data, cfg.agg.kappa))


# -- shared helpers for the batched pipelines -------------------------------

def indicator(slot_count: int, positions: Iterable[int], values: np.ndarray | None = None) -> np.ndarray:
    v = np.zeros(slot_count, dtype=np.uint64)
    idx = np.fromiter(positions, dtype=np.int64)
    if len(idx):
        v[idx] = 1 if values is None else values
    return v


def random_at(rng: Rng, q: int, slot_count: int, positions: Sequence[int]) -> np.ndarray:
    """Independent non-zero residues at ``positions``, zero elsewhere."""
    positions = list(positions)
    return indicator(slot_count, positions, rng.nonzero_vector(q, len(positions)) if positions else None)


def lane_existential(pk: PublicKey, groups: Sequence[Ciphertext], lanes: int, lane_width: int) -> Ciphertext:
    """Product of every slot at a lane start, over all groups, left in slot 0.

    Inputs must hold 1 in every slot that is not a live lane start.
    """
    he = pk.backend
    extra = ceil_log2(len(groups)) + ceil_log2(lanes)
    depth = max(g.depth for g in groups)
    if depth + extra > he.depth_budget:
        raise DepthUnavailable(f"existential reduction needs depth {depth + extra} but the budget is "
                               f"{he.depth_budget}")
    acc = he.product_tree(list(groups))
    acc = he.slot_reduce(acc, "product", lanes, stride=lane_width)
    return he.mul(acc, indicator(he.slot_count, [0]))


def lane_chunks(pk: PublicKey, groups: Sequence[Ciphertext], lanes: int, lane_width: int, n_sets: int,
                l: int) -> list[Ciphertext]:
    """Per-chunk products of ``2**l`` consecutive lanes, packed one chunk per slot.

    Inputs must hold 1 in every slot that is not a live lane start.
    """
    he = pk.backend
    width = 1 << l
    depth = max(g.depth for g in groups)
    if depth + l > he.depth_budget:
        raise DepthUnavailable(f"chunks of 2^{l} need depth {depth + l} but the budget is {he.depth_budget}")
    sources: list[tuple[Ciphertext, int]] = []  # (ciphertext, slot) per chunk
    if width <= lanes:
        per_group = lanes // width
        for g, ct in enumerate(groups):
            folded = he.slot_reduce(ct, "product", width, stride=lane_width)
            for m in range(per_group):
                if (g * per_group + m) * width < n_sets:
                    sources.append((folded, m * width * lane_width))
    else:
        gpc = width // lanes
        for k in range(0, len(groups), gpc):
            acc = he.product_tree(list(groups[k:k + gpc]))
            sources.append((he.slot_reduce(acc, "product", lanes, stride=lane_width), 0))
    n = he.slot_count
    out = []
    for base in range(0, len(sources), n):
        acc = None
        for k, (ct, s) in enumerate(sources[base:base + n]):
            term = he.mul(ct, indicator(n, [s]))
            if s != k:
                term = he.rotate(term, s - k)
            acc = term if acc is None else he.add(acc, term)
        out.append(acc)
    return out


def read_slots(sk: SecretKey, ct: Ciphertext, slots: Iterable[int]) -> list[int]:
    values = decrypt_slots(sk, ct)
    return [values[s] for s in slots]


# -- registry ---------------------------------------------------------------

def pipeline_for(cfg: SessionConfig) -> Pipeline:
    if cfg.pipeline == "scalar":
        return ScalarPipeline(cfg)
    if cfg.pipeline == "chem":
        from pcm.apps.chem import ChemPipeline
        return ChemPipeline(cfg)
    if cfg.pipeline == "doc":
        from pcm.apps.doc import DocPipeline
        return DocPipeline(cfg)
    raise InvalidParams(f"unknown pipeline {cfg.pipeline!r}")
