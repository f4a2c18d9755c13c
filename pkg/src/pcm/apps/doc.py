"""Keyword search over a document corpus.

Every keyword is hashed with ``t`` keyed hash functions into Z_q. The client
sends all ``t * n_c`` hashed values with their first ``p`` powers in one
ciphertext, duplicated once per lane. Each lane carries one document: per
hash function the server evaluates the polynomial whose roots are that
document's hashed keywords, split as ``L(x) + x^p * H(x)`` so that the PSI
layer needs one ciphertext multiplication, then sums the randomly weighted
results (full containment).
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from pcm import kernels
from pcm.agg import AggregateKind, RevealedAggregate
from pcm.engine.config import SessionConfig
from pcm.engine.packing import PackingPlan, pack_server_sets
from pcm.engine.pipelines import (
    ClientState,
    Collection,
    Pipeline,
    indicator,
    lane_existential,
    parallel_map,
    protect,
    random_at,
    read_slots,
)
from pcm.engine.replication import encode_replicated_query, next_pow2, replication_check
from pcm.engine.wire import ErrorCode
from pcm.errors import CapacityExceeded, DuplicateElements, Oversize, ParseError, ProtocolError
from pcm.he.backend import Ciphertext, PublicKey
from pcm.psi import Query, QueryVariant, ReplicationMeta
from pcm.ring import Rng, sum_distribution


@dataclass(frozen=True)
class DocumentRecord:
    id: str
    keywords: tuple[str, ...]

    def __post_init__(self):
        if not self.keywords:
            raise ParseError(f"document {self.id!r} has no keywords")


@dataclass(frozen=True)
class KeywordEncoding:
    hash_count: int
    key: bytes
    q: int

    def __post_init__(self):
        if self.hash_count < 1:
            raise ValueError("hash_count must be at least 1")
        if len(self.key) > 56:
            raise ValueError("hash key is limited to 56 bytes")

    def hash(self, word: str, h: int) -> int:
        k = self.key + b"#" + h.to_bytes(4, "big")
        digest = hashlib.blake2b(word.encode(), key=k, digest_size=16).digest()
        return int.from_bytes(digest, "big") % self.q


@dataclass(frozen=True)
class LabeledScalar:
    value: int
    word: int
    hash: int


def hash_keywords(words: Sequence[str], enc: KeywordEncoding) -> list[LabeledScalar]:
    """``t`` labelled scalars per word, word-major."""
    return [LabeledScalar(enc.hash(w, h), i, h) for i, w in enumerate(words) for h in range(enc.hash_count)]


# -- false-positive accounting ------------------------------------------------

def mapping_false_positive(q: int, t: int) -> Fraction:
    """Chance that a missing keyword hashes onto a single given keyword under all ``t`` hashes."""
    return Fraction(1, q ** t)


def mapping_false_positive_bits(q: int, t: int) -> float:
    """``log2`` of :func:`mapping_false_positive`."""
    return -t * math.log2(q)


def document_false_positive(q: int, t: int, doc_size: int, missing: int) -> float:
    """Chance that a document lacking ``missing`` query keywords is reported as a match.

    Each of the ``t * missing`` hashed values collides with one of the
    document's ``doc_size`` hashed keywords with probability
    ``1 - (1 - 1/q)^doc_size``; the non-colliding ones each add a uniform
    non-zero term to the masked sum, which vanishes with probability
    ``z^[k]``.
    """
    if missing == 0:
        return 1.0
    hit = 1 - (1 - 1 / q) ** doc_size
    n = t * missing
    total = 0.0
    for k in range(n + 1):
        weight = math.comb(n, k) * (1 - hit) ** k * hit ** (n - k)
        total += weight * (1.0 if k == 0 else float(sum_distribution(k, q)[0]))
    return total


# -- corpus ---------------------------------------------------------------

def parse_corpus(lines: Iterable[str], max_keywords: int | None = None) -> list[DocumentRecord]:
    out, seen = [], set()
    for no, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
            rid, words = str(rec["id"]), rec["keywords"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ParseError(f"bad corpus record: {exc}", no) from exc
        if not isinstance(words, list) or not all(isinstance(w, str) for w in words):
            raise ParseError("keywords must be a list of strings", no)
        if rid in seen:
            raise ParseError(f"duplicate record id {rid!r}", no)
        words = tuple(dict.fromkeys(words))
        if not words:
            raise ParseError(f"document {rid!r} has no keywords", no)
        if max_keywords is not None and len(words) > max_keywords:
            raise ParseError(f"document {rid!r} has {len(words)} keywords (limit {max_keywords})", no)
        seen.add(rid)
        out.append(DocumentRecord(rid, words))
    return out


def ingest_corpus(path: str | Path, max_keywords: int | None = None) -> Collection:
    with open(path) as fh:
        docs = parse_corpus(fh, max_keywords)
    return Collection([d.id for d in docs], [list(d.keywords) for d in docs])


def write_corpus(path: str | Path, docs: Sequence[DocumentRecord]) -> None:
    with open(path, "w") as fh:
        for d in docs:
            fh.write(json.dumps({"id": d.id, "keywords": list(d.keywords)}) + "\n")


def synthetic_corpus(n: int, doc_size: int = 128, vocabulary: int = 5000, seed: int = 0) -> list[DocumentRecord]:
    """Documents of ``doc_size`` distinct words drawn from ``w0 .. w{vocabulary-1}``."""
    gen = np.random.default_rng(seed)
    return [DocumentRecord(f"doc{j:06d}", tuple(f"w{int(i)}" for i in gen.choice(vocabulary, doc_size, replace=False)))
            for j in range(n)]


# -- pipeline ---------------------------------------------------------------

class DocPipeline(Pipeline):
    """Small-input full matching with power and duplicate replication."""

    name = "doc"

    def encoding(self, q: int) -> KeywordEncoding:
        d = self.cfg.doc
        return KeywordEncoding(d.hash_count, d.hash_key.encode(), q)

    def layout(self, slot_count: int) -> tuple[int, int, int]:
        """(powers, copy width, copies) for the configured query capacity."""
        d = self.cfg.doc
        p = d.powers
        if p & (p - 1):
            raise CapacityExceeded("doc.powers must be a power of two")
        if d.max_keywords > 2 * p:
            raise CapacityExceeded(f"{d.max_keywords} keywords per document need more than {p} powers")
        cw = next_pow2(d.hash_count * d.max_query_keywords * p)
        if cw > slot_count:
            raise CapacityExceeded(f"a query copy of {cw} slots exceeds {slot_count} slots")
        return p, cw, slot_count // cw

    def plan(self, slot_count: int, n_sets: int) -> PackingPlan:
        _, cw, _ = self.layout(slot_count)
        return pack_server_sets(n_sets, cw, slot_count, lanes_per_set=self.cfg.doc.repetitions)

    def encode(self, pk, client_input, rng, *, unchecked=False):
        he = pk.backend
        words = [str(w) for w in client_input]
        if not unchecked:
            if len(set(words)) != len(words):
                raise DuplicateElements("query repeats a keyword")
            if len(words) > self.cfg.doc.max_query_keywords:
                raise Oversize(f"{len(words)} keywords exceed the query limit {self.cfg.doc.max_query_keywords}")
        p, cw, k = self.layout(he.slot_count)
        labels = hash_keywords(words, self.encoding(he.q))
        Q = encode_replicated_query(pk, [s.value for s in labels], p, k, block_width=p, copy_width=cw)
        header = {"variant": "small-input", "n_elements": len(labels), "hash_count": self.cfg.doc.hash_count,
                  "powers": p, "copy_width": cw, "copies": k}
        return header, list(Q.ciphertexts), ClientState({"words": words})

    def _meta(self, header: dict, cts: Sequence[Ciphertext], slot_count: int) -> ReplicationMeta:
        p, cw, k = self.layout(slot_count)
        expect = {"powers": p, "copy_width": cw, "copies": k, "hash_count": self.cfg.doc.hash_count}
        if any(header.get(key) != v for key, v in expect.items()) or len(cts) != 1:
            raise ProtocolError(ErrorCode.BAD_QUERY, f"query layout does not match {expect}")
        ne = header.get("n_elements")
        t = self.cfg.doc.hash_count
        if not isinstance(ne, int) or ne < 0 or ne % t or ne * p > cw:
            raise ProtocolError(ErrorCode.BAD_QUERY, f"bad element count {ne!r}")
        return ReplicationMeta(p, k, p, cw, ne)

    def _coefficients(self, words: Sequence[str], enc: KeywordEncoding) -> list[np.ndarray]:
        """Per hash function, coefficients (low degree first) of the document polynomial."""
        out = []
        for h in range(enc.hash_count):
            roots = np.array(sorted({enc.hash(w, h) for w in words}), dtype=np.uint64)
            out.append(kernels.poly_from_roots(roots, enc.q))
        return out

    def _group_status(self, pk: PublicKey, Q: Ciphertext, meta: ReplicationMeta, lanes: Sequence[list[str]],
                      rng: Rng) -> Ciphertext:
        he = pk.backend
        q, n = he.q, he.slot_count
        p, cw, ne = meta.powers, meta.copy_width, meta.elements
        t = self.cfg.doc.hash_count
        enc = self.encoding(q)
        CL, CH = np.zeros(n, dtype=np.uint64), np.zeros(n, dtype=np.uint64)
        A0, AP = np.zeros(n, dtype=np.uint64), np.zeros(n, dtype=np.uint64)
        cache: dict[int, list[np.ndarray]] = {}
        for c, words in enumerate(lanes):
            key = id(words)
            if key not in cache:
                cache[key] = self._coefficients(words, enc)
            polys = cache[key]
            for i in range(ne):
                a = polys[i % t]
                if len(a) - 1 > 2 * p:
                    raise CapacityExceeded(f"document polynomial of degree {len(a) - 1} exceeds {2 * p}")
                base = c * cw + i * p
                low = a[1:p]
                CL[base:base + len(low)] = low
                A0[base] = a[0]
                if len(a) > p:
                    AP[base] = a[p]
                    high = a[p + 1:2 * p + 1]
                    CH[base:base + len(high)] = high
        lo = he.add(he.slot_reduce(he.mul(Q, CL), "sum", p), A0)
        hi = he.add(he.slot_reduce(he.mul(Q, CH), "sum", p), AP)
        evals = he.add(lo, he.mul(he.rotate(Q, p - 1), hi))
        starts = [c * cw + i * p for c in range(len(lanes)) for i in range(ne)]
        gamma = he.slot_reduce(he.mul(evals, random_at(rng, q, n, starts)), "sum", cw)
        return gamma

    def evaluate(self, pk, header, cts, collection, rng, threads=1):
        self.validate_collection(collection)
        he = pk.backend
        cfg = self.cfg
        meta = self._meta(header, cts, he.slot_count)
        N = len(collection)
        plan = self.plan(he.slot_count, N)
        r = cfg.doc.repetitions
        kind = cfg.agg_kind
        order = rng.child(2).permutation(N) if kind is AggregateKind.CARDINALITY_SHUFFLED else list(range(N))
        Q = cts[0]

        def group(g: int) -> Ciphertext:
            lanes = [collection.sets[order[j]] for j in plan.group(g) for _ in range(r)]
            return self._group_status(pk, Q, meta, lanes, rng.child(1, g))

        gammas = parallel_map(group, range(plan.n_groups), threads)
        cw, L = meta.copy_width, plan.lanes_per_ct
        n = he.slot_count
        rheader = {"kind": kind.value, "n_sets": N, "lanes": L, "lane_width": cw, "repetitions": r}
        live = [[c * cw for c in range(len(plan.group(g)) * r)] for g in range(plan.n_groups)]
        if kind is AggregateKind.EXISTENTIAL:
            ones = [he.add(he.mul(gm, indicator(n, lv)), 1 - indicator(n, lv)) for gm, lv in zip(gammas, live)]
            out = [lane_existential(pk, ones, L, cw)]
            rheader = {"kind": kind.value}  # fixed size: independent of N
        else:
            out = [he.mul(gm, indicator(n, lv)) for gm, lv in zip(gammas, live)]
        Qm = Query(QueryVariant.SMALL_INPUT, (Q,), meta.elements, replication=meta)
        R = replication_check(pk, Qm, rng.child(3))
        return rheader, protect(pk, out, R, rng.child(4))

    def reveal(self, sk, header, cts, state):
        kind = AggregateKind(header["kind"])
        if kind is AggregateKind.EXISTENTIAL:
            return RevealedAggregate(kind, int(read_slots(sk, cts[0], [0])[0] == 0))
        N, L, cw, r = header["n_sets"], header["lanes"], header["lane_width"], header["repetitions"]
        per_ct = L // r
        bits = []
        for g, ct in enumerate(cts):
            docs = min(per_ct, N - g * per_ct)
            vals = read_slots(sk, ct, [c * cw for c in range(docs * r)])
            bits.extend(int(all(v == 0 for v in vals[d * r:(d + 1) * r])) for d in range(docs))
        if kind is AggregateKind.CARDINALITY_SHUFFLED:
            return RevealedAggregate(kind, sum(bits))
        return RevealedAggregate(kind, tuple(bits))


def doc_config(agg: str = "existential", *, profile: str = "P32k", backend: str = "depth-tracked",
               hash_count: int = 2, repetitions: int = 1, max_keywords: int = 128, max_query_keywords: int = 8,
               powers: int = 64, seed: int | None = None, **he_overrides) -> SessionConfig:
    """Session configuration for document search (``agg`` "x", "ca" or an aggregate kind)."""
    agg_kind = {"x": "existential", "ca": "cardinality-shuffled"}.get(agg, agg)
    he = {"profile": profile, "backend": backend, **he_overrides}
    if he_overrides.get("modulus") is not None:
        he["profile"] = None
    return SessionConfig.from_dict({
        "pipeline": "doc",
        "seed": seed,
        "he": he,
        "psi": {"variant": "small-input"},
        "match": {"kind": "full"},
        "agg": {"kind": agg_kind},
        "doc": {"hash_count": hash_count, "repetitions": repetitions, "max_keywords": max_keywords,
                "max_query_keywords": max_query_keywords, "powers": powers},
    })


def doc_search(query: Sequence[str], corpus: Collection | Sequence[DocumentRecord], agg: str = "x",
               profile: str = "P32k", repetitions: int = 1, *, seed: int | None = None, threads: int = 1,
               **cfg_kwargs) -> RevealedAggregate:
    """In-process search: existential bit or shuffled count of documents containing every keyword."""
    from pcm.engine.local import run_local

    if not isinstance(corpus, Collection):
        corpus = Collection([d.id for d in corpus], [list(d.keywords) for d in corpus])
    cfg = doc_config(agg, profile=profile, repetitions=repetitions, seed=seed, **cfg_kwargs)
    return run_local(cfg, corpus, list(query), threads=threads).result
