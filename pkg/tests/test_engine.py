import json
import random
import socket
import threading
from contextlib import contextmanager
from fractions import Fraction

import pytest

from pcm.agg import AggregateKind, aggregate_oracle
from pcm.apps.chem import chem_config, synthetic_fingerprints
from pcm.apps.doc import KeywordEncoding, doc_config, synthetic_corpus
from pcm.engine.client import ClientSession, run_client_query
from pcm.engine.config import SessionConfig
from pcm.engine.local import run_local
from pcm.engine.packing import pack_server_sets
from pcm.engine.pipelines import Collection
from pcm.engine.server import AuditLog, ServerContext, run_server_session
from pcm.engine.wire import ErrorCode, MessageType, WireMessage, json_body, read_message, write_message
from pcm.errors import CapacityExceeded, InvalidParams, ProtocolError
from pcm.match import TverskyParams, tversky_match_oracle
from pcm.ring import Rng


def scalar_cfg(agg="existential", match="full", variant="small-input", q=1009, mal="off", **extra):
    """Clear-ring scalar session; ``extra`` carries domain_size and match/agg option tables."""
    d = {
        "pipeline": "scalar",
        "seed": 5,
        "he": {"profile": None, "backend": "clear-ring", "modulus": q},
        "psi": {"variant": variant, "domain_size": extra.pop("domain_size", None)},
        "match": {"kind": match, **extra.pop("match_opts", {})},
        "agg": {"kind": agg, **extra.pop("agg", {})},
        "mal": {"mode": mal},
    }
    return SessionConfig.from_dict(d)


@contextmanager
def loopback(cfg, collection, *, threads=1, audit=None, seed=11):
    ctx = ServerContext(collection, cfg, threads=threads, audit=audit or AuditLog(None), seed=seed)
    listener = socket.create_server(("127.0.0.1", 0))
    stop = threading.Event()
    t = threading.Thread(target=run_server_session, args=(listener, ctx), kwargs={"stop": stop}, daemon=True)
    t.start()
    try:
        yield listener.getsockname()[:2], ctx
    finally:
        stop.set()
        t.join(timeout=10)
        listener.close()


def full_oracle(X, sets):
    return [set(X) <= set(Y) for Y in sets]


# -- loopback ----------------------------------------------------------------

def test_doc_loopback_eight_docs_query_matching_doc_3():
    docs = synthetic_corpus(8, doc_size=32, vocabulary=400, seed=4)
    col = Collection([d.id for d in docs], [list(d.keywords) for d in docs])
    cfg = doc_config("x", seed=1)
    query = list(docs[3].keywords[:5])
    with loopback(cfg, col) as (addr, _):
        assert run_client_query(addr, query, cfg).value == 1
        assert run_client_query(addr, ["absent-keyword-1", "absent-keyword-2"], cfg).value == 0


@pytest.mark.parametrize("agg", ["existential", "cardinality", "naive"])
def test_scalar_loopback_trio_matches_oracle(agg):
    cfg = scalar_cfg(agg)
    sets = [[1, 2, 3], [2, 3, 4], [5, 6], [2, 3]]
    col = Collection([f"s{i}" for i in range(len(sets))], sets)
    with loopback(cfg, col) as (addr, _):
        with ClientSession(cfg).connect(*addr) as session:
            for X in ([2, 3], [5], [7, 8]):  # count 3, single match, no match
                got = session.query(X).value
                assert got == aggregate_oracle(AggregateKind(agg), full_oracle(X, sets))


def test_chem_loopback_trio_matches_oracle():
    fps = synthetic_fingerprints(24, seed=3, flip=0.02)
    col = Collection([f.id for f in fps], [sorted(f.bits) for f in fps])
    tv = TverskyParams.create(1, 1, Fraction(4, 5))
    cfg = chem_config("ca", seed=2)
    with loopback(cfg, col) as (addr, _):
        with ClientSession(cfg).connect(*addr) as session:
            for X in (sorted(fps[0].bits), sorted(fps[9].bits), [0, 1, 2]):
                expect = sum(tversky_match_oracle(set(X), set(Y), tv) for Y in col.sets)
                assert session.query(X).value == expect
            assert session.query([0, 1, 2]).value == 0


def test_session_reuses_one_setup():
    cfg = scalar_cfg()
    col = Collection(["a"], [[1, 2]])
    with loopback(cfg, col) as (addr, _):
        with ClientSession(cfg).connect(*addr) as session:
            session.query([1])
            session.query([3])
            sent = [t for d, t, _ in session.frame_log if d == "sent"]
    assert sent == [MessageType.HELLO, MessageType.SETUP, MessageType.QUERY, MessageType.QUERY]


def test_single_round_per_query():
    cfg = scalar_cfg()
    col = Collection(["a", "b"], [[1, 2], [3]])
    with loopback(cfg, col) as (addr, _):
        with ClientSession(cfg).connect(*addr) as session:
            session.setup()
            before = len(session.frame_log)
            session.query([1])
            tail = [(d, t) for d, t, _ in session.frame_log[before:]]
    assert tail == [("sent", MessageType.QUERY), ("received", MessageType.RESPONSE)]


# -- ordering and configuration errors ------------------------------------------

def test_query_before_setup_is_refused():
    cfg = scalar_cfg()
    col = Collection(["a"], [[1]])
    with loopback(cfg, col) as (addr, _):
        with socket.create_connection(addr) as s, s.makefile("rb") as r, s.makefile("wb") as w:
            write_message(w, WireMessage(MessageType.QUERY, b""))
            msg = read_message(r)
            assert msg.type is MessageType.ERROR
            assert msg.body[:2] == int(ErrorCode.SETUP_REQUIRED).to_bytes(2, "big")
            assert msg.body[2:] == b"setup-required"
            assert read_message(r) is None  # session closed


def test_query_before_setup_surfaces_protocol_error():
    cfg = scalar_cfg()
    col = Collection(["a"], [[1]])
    with loopback(cfg, col) as (addr, _):
        session = ClientSession(cfg).connect(*addr)
        session._ready = True  # skip setup on purpose
        with pytest.raises(ProtocolError) as err:
            session.query([1])
        session.close()
    assert err.value.code == ErrorCode.SETUP_REQUIRED and "setup-required" in err.value.message


def test_config_digest_mismatch_is_refused():
    server_cfg = scalar_cfg("existential")
    client_cfg = scalar_cfg("cardinality")
    with loopback(server_cfg, Collection(["a"], [[1]])) as (addr, _):
        with ClientSession(client_cfg).connect(*addr) as session:
            with pytest.raises(ProtocolError) as err:
                session.setup()
    assert err.value.code == ErrorCode.CONFIG_MISMATCH


def test_unexpected_message_type():
    cfg = scalar_cfg()
    with loopback(cfg, Collection(["a"], [[1]])) as (addr, _):
        with socket.create_connection(addr) as s, s.makefile("rb") as r, s.makefile("wb") as w:
            write_message(w, WireMessage(MessageType.RESPONSE, json_body({})))
            msg = read_message(r)
    assert msg.type is MessageType.ERROR
    assert int.from_bytes(msg.body[:2], "big") == ErrorCode.UNEXPECTED_MESSAGE


def test_digest_ignores_local_settings():
    a, b = scalar_cfg(), scalar_cfg()
    b.threads, b.seed = 8, 99
    assert a.digest() == b.digest()
    assert a.digest() != scalar_cfg(q=101).digest()


def test_empty_collection_is_refused():
    with pytest.raises(InvalidParams):
        ServerContext(Collection([], []), scalar_cfg())


# -- audit log -----------------------------------------------------------------

def test_audit_log_is_ndjson(tmp_path):
    path = tmp_path / "audit.ndjson"
    cfg = scalar_cfg("cardinality")
    col = Collection(["a", "b"], [[1, 2], [2]])
    with loopback(cfg, col, audit=AuditLog(path)) as (addr, _):
        with ClientSession(cfg).connect(*addr) as session:
            session.query([2])
            session.query([1])
    records = [json.loads(line) for line in path.read_text().splitlines()]
    assert [r["query"] for r in records] == [0, 1]
    for r in records:
        assert r["config_digest"] == cfg.digest()
        assert r["n_sets"] == 2 and r["wall_seconds"] >= 0
        assert r["counters"]["ct_mul"] > 0
        assert len(r["session"]) == 32
    assert records[0]["session"] == records[1]["session"]


# -- determinism across worker counts ---------------------------------------

@pytest.mark.parametrize("make", [
    lambda: (scalar_cfg("cardinality-shuffled"), Collection([str(i) for i in range(12)],
                                                            [[i % 5, i % 7 + 5] for i in range(12)]), [1, 6]),
    lambda: (chem_config("naive", seed=0), None, None),
    lambda: (doc_config("ca", seed=0), None, None),
], ids=["scalar", "chem", "doc"])
def test_threads_bit_identical(make):
    cfg, col, query = make()
    if cfg.pipeline == "chem":
        fps = synthetic_fingerprints(200, seed=8)
        col = Collection([f.id for f in fps], [sorted(f.bits) for f in fps])
        query = sorted(fps[4].bits)
    elif cfg.pipeline == "doc":
        docs = synthetic_corpus(70, doc_size=40, seed=8)
        col = Collection([d.id for d in docs], [list(d.keywords) for d in docs])
        query = list(docs[2].keywords[:4])
    runs = [run_local(cfg, col, query, seed=3, server_seed=17, threads=t) for t in (1, 8)]
    assert runs[0].response == runs[1].response
    assert runs[0].result == runs[1].result


def test_server_threads_bit_identical():
    cfg = scalar_cfg("naive")
    col = Collection([str(i) for i in range(16)], [[i, i + 1] for i in range(16)])
    blobs = []
    for threads in (1, 8):
        with loopback(cfg, col, threads=threads, seed=21) as (addr, _):
            with ClientSession(cfg, rng=Rng(4)).connect(*addr) as session:
                session.query([3])
                blobs.append((session.last.response_bytes, session.last.response_header))
    assert blobs[0] == blobs[1]


# -- response size -------------------------------------------------------------

def test_scalar_existential_response_size_constant_in_n():
    cfg = scalar_cfg("existential")
    sizes = {run_local(cfg, Collection([str(i) for i in range(n)], [[i] for i in range(n)]), [1],
                       seed=1).response_bytes for n in range(1, 65)}
    assert len(sizes) == 1


# -- replicated lanes agree with the scalar pipeline -----------------------------

def test_chem_lanes_equal_scalar_pipeline():
    width, q = 16, 1009
    chem = chem_config("naive", backend="clear-ring", modulus=q, slot_count=256, width=width, seed=0)
    scalar = scalar_cfg("naive", match="tversky", variant="small-domain", q=q, domain_size=width,
                        match_opts={"alpha": "1", "beta": "1", "threshold": "4/5"})
    rng = random.Random(2024)
    for trial in range(200):
        n = 1 + rng.randrange(20)
        sets = []
        for _ in range(n):
            Y = [b for b in range(width) if rng.randrange(3) == 0] or [rng.randrange(width)]
            sets.append(sorted(set(Y)))
        X = sorted({b for b in range(width) if rng.randrange(3) == 0})
        if trial % 4 == 0:
            X = list(sets[rng.randrange(n)])
        col = Collection([str(i) for i in range(n)], sets)
        batched = run_local(chem, col, X, seed=trial).result
        plain = run_local(scalar, col, X, seed=trial).result
        assert batched.value == plain.value, (X, sets)


def test_doc_lanes_equal_scalar_pipeline():
    q = 786433
    doc = doc_config("naive", backend="clear-ring", modulus=q, slot_count=4096, hash_count=1,
                     max_keywords=16, max_query_keywords=4, powers=8, seed=0)
    scalar = scalar_cfg("naive", q=q)
    enc = KeywordEncoding(1, doc.doc.hash_key.encode(), q)
    rng = random.Random(99)
    vocab = [f"w{i}" for i in range(40)]
    for trial in range(200):
        n = 1 + rng.randrange(12)
        docs = [sorted({vocab[rng.randrange(40)] for _ in range(1 + rng.randrange(16))}) for _ in range(n)]
        if trial % 2 == 0:
            src = docs[rng.randrange(n)]
            words = list(dict.fromkeys(src[rng.randrange(len(src))] for _ in range(1 + rng.randrange(4))))
        else:
            words = list(dict.fromkeys(vocab[rng.randrange(40)] for _ in range(1 + rng.randrange(4))))
        col = Collection([str(i) for i in range(n)], docs)
        hashed = Collection(col.ids, [sorted({enc.hash(w, 0) for w in d}) for d in docs])
        batched = run_local(doc, col, words, seed=trial).result
        plain = run_local(scalar, hashed, [enc.hash(w, 0) for w in words], seed=trial).result
        assert batched.value == plain.value, (words, docs)


# -- malicious queries -------------------------------------------------------

def test_duplicate_query_reveals_junk_under_additive_check():
    q = 101
    cfg = scalar_cfg("cardinality", q=q, mal="additive")
    col = Collection(["a", "b", "c"], [[1, 2], [1], [3]])
    honest = run_local(cfg, col, [1], seed=0).result.value
    assert honest == 2
    trials, hits = 400, 0
    for s in range(trials):
        if run_local(cfg, col, [1, 1], seed=s, unchecked=True).result.value == honest:
            hits += 1
    mean = trials / q
    assert hits <= mean + 4 * (mean * (1 - 1 / q)) ** 0.5


def test_client_rejects_duplicate_query_without_unchecked():
    with pytest.raises(Exception):
        run_local(scalar_cfg(), Collection(["a"], [[1]]), [1, 1])


# -- packing plan --------------------------------------------------------------

def test_packing_plan_locate():
    plan = pack_server_sets(300, 166, 32768)
    assert plan.lanes_per_ct == 128 and plan.lane_width == 256
    assert plan.n_groups == 3
    assert plan.locate(0) == (0, 0) and plan.locate(129) == (1, 1)
    assert list(plan.group(2)) == list(range(256, 300))
    assert pack_server_sets(10, 256, 8192).lanes_per_ct == 32
    single = pack_server_sets(1, 1, 1)
    assert (single.lanes_per_ct, single.n_groups) == (1, 1)
    with pytest.raises(CapacityExceeded):
        pack_server_sets(1, 512, 256)
