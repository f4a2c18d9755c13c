"""Chemical similarity search over fixed-width structural fingerprints.

Each fingerprint is a set of bit positions. The client sends its own
fingerprint as an encrypted bit vector, replicated once per lane; the server
packs one compound per lane, computes ``a*|X∩Y| - b*|X|`` with a single
plaintext product and a lane sum, and tests it against the admissible
Tversky range with a product tree.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from pcm.agg import AggregateKind, RevealedAggregate
from pcm.engine.config import SessionConfig
from pcm.engine.packing import PackingPlan, pack_server_sets
from pcm.engine.pipelines import (
    ClientState,
    Collection,
    Pipeline,
    indicator,
    lane_chunks,
    lane_existential,
    parallel_map,
    protect,
    random_at,
    read_slots,
)
from pcm.engine.replication import replication_check
from pcm.engine.wire import ErrorCode
from pcm.errors import (
    CapacityExceeded,
    OutOfDomain,
    ParseError,
    ProtocolError,
    WidthMismatch,
)
from pcm.he.backend import Ciphertext, PublicKey, ceil_log2
from pcm.match import TverskyParams, _guard_modulus, small_domain_span, tversky_roots_small_domain
from pcm.psi import Query, QueryVariant, ReplicationMeta
from pcm.ring import Rng

MACCS_WIDTH = 166


@dataclass(frozen=True)
class Fingerprint:
    id: str
    bits: frozenset[int]
    width: int = MACCS_WIDTH

    def __post_init__(self):
        if any(b < 0 or b >= self.width for b in self.bits):
            raise WidthMismatch(f"fingerprint {self.id!r} has bits outside [0, {self.width})")

    def to_hex(self) -> str:
        return hex(sum(1 << b for b in self.bits))

    def to_line(self) -> str:
        return f"{self.id}\t{self.to_hex()}"


def decode_bits(text: str, width: int, line: int | None = None) -> frozenset[int]:
    """``0x``-prefixed hex or a 0/1 string; bit ``i`` is ``(value >> i) & 1``."""
    text = text.strip()
    try:
        if text[:2].lower() == "0x":
            value = int(text, 16)
            if value >> width:
                raise WidthMismatch(f"hex value has more than {width} bits", line)
        else:
            if set(text) - {"0", "1"} or not text:
                raise ParseError(f"fingerprint {text[:20]!r} is neither hex nor a 0/1 string", line)
            if len(text) != width:
                raise WidthMismatch(f"0/1 string of length {len(text)}, expected {width}", line)
            value = int(text, 2)
    except ValueError as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"bad hex fingerprint: {exc}", line) from exc
    return frozenset(i for i in range(width) if (value >> i) & 1)


def parse_fingerprints(lines: Iterable[str], width: int = MACCS_WIDTH) -> list[Fingerprint]:
    out = []
    seen = set()
    for no, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError("expected '<id>\\t<fingerprint>'", no)
        fid, body = parts[0].strip(), parts[1]
        if not fid:
            raise ParseError("empty record id", no)
        if fid in seen:
            raise ParseError(f"duplicate record id {fid!r}", no)
        bits = decode_bits(body, width, no)
        if not bits:
            raise ParseError(f"fingerprint {fid!r} has no bits set", no)
        seen.add(fid)
        out.append(Fingerprint(fid, bits, width))
    return out


def ingest_fingerprints(path: str | Path, width: int = MACCS_WIDTH) -> Collection:
    """Fingerprint file (``<id>\\t<hex or 0/1 string>`` per line) as server sets."""
    with open(path) as fh:
        fps = parse_fingerprints(fh, width)
    return Collection([f.id for f in fps], [sorted(f.bits) for f in fps])


def synthetic_fingerprints(n: int, width: int = MACCS_WIDTH, seed: int = 0, *, density: float = 0.25,
                           flip: float = 0.04, family_size: int = 8) -> list[Fingerprint]:
    """Deterministic fingerprints in families of near-duplicates.

    Family centres have each bit set with probability ``density``; members
    flip each bit of their centre with probability ``flip``.
    """
    gen = np.random.default_rng(seed)
    n_families = max(1, -(-n // family_size))
    centres = gen.random((n_families, width)) < density
    out = []
    for j in range(n):
        fam = int(gen.integers(n_families))
        bits = centres[fam] ^ (gen.random(width) < flip)
        if not bits.any():
            bits[int(gen.integers(width))] = True
        out.append(Fingerprint(f"cmpd{j:06d}", frozenset(int(i) for i in np.flatnonzero(bits)), width))
    return out


def write_fingerprints(path: str | Path, fps: Sequence[Fingerprint]) -> None:
    with open(path, "w") as fh:
        for f in fps:
            fh.write(f.to_line() + "\n")


def tversky_depth(params: TverskyParams, max_set_size: int) -> int:
    """Product-tree depth of the range test for sets up to ``max_set_size`` bits."""
    return ceil_log2(len(tversky_roots_small_domain(params, max_set_size)))


class ChemPipeline(Pipeline):
    """Small-domain Tversky matching with one compound per lane."""

    name = "chem"

    @property
    def width(self) -> int:
        return self.cfg.chem.width

    def plan(self, slot_count: int, n_sets: int) -> PackingPlan:
        return pack_server_sets(n_sets, self.width, slot_count, lane_width=self.cfg.chem.lane_width)

    def _meta(self, plan: PackingPlan) -> ReplicationMeta:
        return ReplicationMeta(1, plan.lanes_per_ct, 1, plan.lane_width, self.width)

    def encode(self, pk, client_input, rng, *, unchecked=False):
        he = pk.backend
        plan = self.plan(he.slot_count, 0)
        bits = sorted(int(b) for b in client_input)
        if not unchecked:
            for b in bits:
                if not 0 <= b < self.width:
                    raise OutOfDomain(f"bit {b} outside the fingerprint width {self.width}")
        lw = plan.lane_width
        slots = np.zeros(he.slot_count, dtype=np.uint64)
        for c in range(plan.lanes_per_ct):
            for b in bits:
                slots[c * lw + b] = 1 if not unchecked else slots[c * lw + b] + 1
        ct = he.encrypt(pk, slots)
        header = {"variant": "small-domain", "width": self.width, "lane_width": lw, "lanes": plan.lanes_per_ct}
        return header, [ct], ClientState({"bits": bits})

    def _check_header(self, header: dict, cts: Sequence[Ciphertext], plan: PackingPlan) -> None:
        expect = {"width": self.width, "lane_width": plan.lane_width, "lanes": plan.lanes_per_ct}
        if any(header.get(k) != v for k, v in expect.items()) or len(cts) != 1:
            raise ProtocolError(ErrorCode.BAD_QUERY, f"query layout does not match {expect}")

    def _group_status(self, pk: PublicKey, Q: Ciphertext, sets: Sequence[Sequence[int]], plan: PackingPlan,
                      tv: TverskyParams, rng: Rng) -> Ciphertext:
        he = pk.backend
        q, n, lw = he.q, he.slot_count, plan.lane_width
        W = np.zeros(n, dtype=np.uint64)
        roots = []
        for c, Y in enumerate(sets):
            base = c * lw
            W[base:base + self.width] = (-tv.b) % q
            W[np.asarray(Y, dtype=np.int64) + base] = (tv.a - tv.b) % q
            roots.append(tversky_roots_small_domain(tv, len(Y)))
        w = he.slot_reduce(he.mul(Q, W), "sum", lw)
        starts = [c * lw for c in range(len(sets))]
        factors = []
        for k in range(max(len(r) for r in roots)):
            rk = indicator(n, starts, np.array([r[min(k, len(r) - 1)] % q for r in roots], dtype=np.uint64))
            factors.append(he.sub(w, rk))
        return he.mul(he.product_tree(factors), random_at(rng, q, n, starts))

    def evaluate(self, pk, header, cts, collection, rng, threads=1):
        self.validate_collection(collection)
        he = pk.backend
        cfg = self.cfg
        N = len(collection)
        plan = self.plan(he.slot_count, N)
        self._check_header(header, cts, plan)
        tv = cfg.tversky()
        for Y in collection.sets:
            if any(not 0 <= b < self.width for b in Y):
                raise CapacityExceeded(f"server fingerprint has bits outside width {self.width}")
            _guard_modulus(pk, *small_domain_span(tv, self.width, len(Y)))
        kind = cfg.agg_kind
        order = list(range(N))
        if kind is AggregateKind.CARDINALITY_SHUFFLED:
            order = rng.child(2).permutation(N)
        Q = cts[0]

        def group(g: int) -> Ciphertext:
            sets = [collection.sets[order[j]] for j in plan.group(g)]
            return self._group_status(pk, Q, sets, plan, tv, rng.child(1, g))

        statuses = parallel_map(group, range(plan.n_groups), threads)
        lw, L = plan.lane_width, plan.lanes_per_ct
        rheader = {"kind": kind.value, "n_sets": N, "lanes": L, "lane_width": lw}
        if kind in (AggregateKind.EXISTENTIAL, AggregateKind.EXISTENTIAL_CHUNKED):
            ones = []
            for g, s in enumerate(statuses):
                live = [c * lw for c in range(len(plan.group(g)))]
                ones.append(he.add(s, 1 - indicator(he.slot_count, live)))
            if kind is AggregateKind.EXISTENTIAL:
                out = [lane_existential(pk, ones, L, lw)]
                rheader = {"kind": kind.value}  # fixed size: independent of N
            else:
                l = cfg.agg.chunk_log
                out = lane_chunks(pk, ones, L, lw, N, l)
                rheader.update(chunk_width=1 << l, n_chunks=-(-N // (1 << l)))
        else:
            out = statuses
        binary = range(self.width) if cfg.mal.mode == "additive" else ()
        Qm = Query(QueryVariant.SMALL_DOMAIN, (Q,), self.width, replication=self._meta(plan))
        R = replication_check(pk, Qm, rng.child(3), binary_slots=binary)
        return rheader, protect(pk, out, R, rng.child(4))

    def reveal(self, sk, header, cts, state):
        kind = AggregateKind(header["kind"])
        if kind is AggregateKind.EXISTENTIAL:
            return RevealedAggregate(kind, int(read_slots(sk, cts[0], [0])[0] == 0))
        N, L, lw = header["n_sets"], header["lanes"], header["lane_width"]
        if kind is AggregateKind.EXISTENTIAL_CHUNKED:
            n = sk.params.slot_count
            bits = []
            for k in range(header["n_chunks"]):
                bits.append(int(read_slots(sk, cts[k // n], [k % n])[0] == 0))
            return RevealedAggregate(kind, tuple(bits))
        bits = []
        for g, ct in enumerate(cts):
            live = min(L, N - g * L)
            bits.extend(int(v == 0) for v in read_slots(sk, ct, [c * lw for c in range(live)]))
        if kind is AggregateKind.CARDINALITY_SHUFFLED:
            return RevealedAggregate(kind, sum(bits))
        return RevealedAggregate(kind, tuple(bits))


def chem_config(agg: str = "existential-chunked", *, profile: str = "P32k", backend: str = "depth-tracked",
                chunk_log: int | None = 6, mal: str = "off", alpha="1", beta="1", threshold="4/5",
                width: int = MACCS_WIDTH, seed: int | None = None, **he_overrides) -> SessionConfig:
    """Session configuration for the chemical search pipeline.

    ``agg`` is "x" (chunked existential), "ca" (shuffled count) or an
    aggregation kind; ``he_overrides`` (``modulus``, ``slot_count``, ...)
    replace the profile.
    """
    agg_kind = {"x": "existential-chunked", "ca": "cardinality-shuffled"}.get(agg, agg)
    he = {"profile": profile, "backend": backend, **he_overrides}
    if he_overrides.get("modulus") is not None:
        he["profile"] = None
    return SessionConfig.from_dict({
        "pipeline": "chem",
        "seed": seed,
        "he": he,
        "psi": {"variant": "small-domain", "domain_size": width},
        "match": {"kind": "tversky", "alpha": alpha, "beta": beta, "threshold": threshold},
        "agg": {"kind": agg_kind, "chunk_log": chunk_log if agg_kind == "existential-chunked" else None},
        "mal": {"mode": mal},
        "chem": {"width": width},
    })


def chem_search(client: Fingerprint | Iterable[int], collection: Collection | Sequence[Fingerprint],
                agg: str = "x", profile: str = "P32k", *, seed: int | None = None, threads: int = 1,
                **cfg_kwargs) -> RevealedAggregate:
    """In-process search: X-Agg (chunked, l = 6) bit(s) or a shuffled count."""
    from pcm.engine.local import run_local

    if not isinstance(collection, Collection):
        collection = Collection([f.id for f in collection], [sorted(f.bits) for f in collection])
    bits = client.bits if isinstance(client, Fingerprint) else client
    cfg = chem_config(agg, profile=profile, seed=seed, **cfg_kwargs)
    return run_local(cfg, collection, sorted(bits), threads=threads).result
