import csv
import json
import socket
import threading
import time
from fractions import Fraction

import pytest

from pcm import costs
from pcm.agg import AggregateKind
from pcm.apps import cli
from pcm.apps.bench import COLUMNS, bench, fp_report, write_csv
from pcm.apps.chem import (
    Fingerprint,
    chem_config,
    chem_search,
    decode_bits,
    ingest_fingerprints,
    parse_fingerprints,
    synthetic_fingerprints,
)
from pcm.apps.doc import (
    DocumentRecord,
    KeywordEncoding,
    doc_search,
    hash_keywords,
    ingest_corpus,
    parse_corpus,
    synthetic_corpus,
)
from pcm.apps.generic import parse_sets
from pcm.engine.local import run_local
from pcm.engine.pipelines import Collection
from pcm.engine.server import ServerContext
from pcm.errors import InvalidParams, ParseError, WidthMismatch
from pcm.match import TverskyParams, tversky_match_oracle

TV = TverskyParams.create(1, 1, Fraction(4, 5))


def as_collection(fps):
    return Collection([f.id for f in fps], [sorted(f.bits) for f in fps])


# -- fingerprint ingestion -------------------------------------------------------

def test_hex_line_decodes_low_bit_first():
    [fp] = parse_fingerprints(["c1\t0xA"], width=4)
    assert fp.id == "c1" and fp.bits == {1, 3}


def test_binary_string_matches_hex():
    assert decode_bits("1010", 4) == decode_bits("0xA", 4)


def test_binary_string_wrong_width():
    with pytest.raises(WidthMismatch):
        parse_fingerprints(["c1\t101"], width=4)


def test_hex_too_wide():
    with pytest.raises(WidthMismatch):
        decode_bits("0x1F", 4)


def test_parse_error_reports_line_number():
    with pytest.raises(ParseError) as err:
        parse_fingerprints(["c1\t0x1", "c2 0x2"], width=4)
    assert err.value.line == 2


def test_all_zero_fingerprint_is_rejected():
    with pytest.raises(ParseError):
        parse_fingerprints(["c1\t0x0"], width=4)


def test_empty_file_gives_empty_collection_and_server_refuses(tmp_path):
    path = tmp_path / "empty.tsv"
    path.write_text("")
    col = ingest_fingerprints(path)
    assert len(col) == 0
    with pytest.raises(InvalidParams):
        ServerContext(col, chem_config("x"))


def test_fingerprint_file_round_trip(tmp_path):
    fps = synthetic_fingerprints(10, seed=1)
    path = tmp_path / "fps.tsv"
    path.write_text("".join(f.to_line() + "\n" for f in fps))
    col = ingest_fingerprints(path)
    assert col.ids == [f.id for f in fps]
    assert col.sets == [sorted(f.bits) for f in fps]


def test_synthetic_fingerprints_are_deterministic():
    assert synthetic_fingerprints(5, seed=3) == synthetic_fingerprints(5, seed=3)
    assert synthetic_fingerprints(5, seed=3) != synthetic_fingerprints(5, seed=4)


# -- keyword hashing and corpus -----------------------------------------------

def test_hash_keywords_counts_and_labels():
    enc = KeywordEncoding(2, b"k", 4079617)
    words = [f"word{i}" for i in range(8)]
    out = hash_keywords(words, enc)
    assert len(out) == 16
    assert [(s.word, s.hash) for s in out[:4]] == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert all(0 <= s.value < enc.q for s in out)


def test_hash_keywords_single_hash_is_plain_list():
    enc = KeywordEncoding(1, b"k", 101)
    out = hash_keywords(["a", "b", "c"], enc)
    assert [s.value for s in out] == [enc.hash(w, 0) for w in "abc"]


def test_hash_keywords_deterministic_and_keyed():
    words = ["alpha", "beta"]
    a = hash_keywords(words, KeywordEncoding(2, b"k1", 786433))
    assert a == hash_keywords(words, KeywordEncoding(2, b"k1", 786433))
    assert a != hash_keywords(words, KeywordEncoding(2, b"k2", 786433))


def test_corpus_parsing(tmp_path):
    path = tmp_path / "c.ndjson"
    path.write_text('{"id": "d1", "keywords": ["a", "b", "a"]}\n\n{"id": "d2", "keywords": ["c"]}\n')
    col = ingest_corpus(path)
    assert col.ids == ["d1", "d2"] and col.sets == [["a", "b"], ["c"]]
    with pytest.raises(ParseError):
        parse_corpus(['{"id": "d1", "keywords": []}'])
    with pytest.raises(ParseError):
        parse_corpus(['{"id": "d1", "keywords": ["a", "b"]}'], max_keywords=1)
    with pytest.raises(ParseError):
        DocumentRecord("x", ())


def test_generic_sets_parse():
    col = parse_sets(['{"id": "s", "elements": [3, 1], "data": 7}', '{"id": "t", "elements": [2], "data": 1}'])
    assert col.ids == ["s", "t"] and sorted(col.sets[0]) == [1, 3] and col.data == [7, 1]


# -- chemical search ------------------------------------------------------------

def test_chem_self_match():
    fps = synthetic_fingerprints(40, seed=6)
    assert chem_search(fps[17], fps, "x").exists


def test_chem_empty_query_is_non_match():
    fps = synthetic_fingerprints(16, seed=6)
    assert chem_search([], fps, "ca").value == 0
    assert not chem_search([], fps, "x").exists


def test_chem_count_matches_rational_oracle_256():
    fps = synthetic_fingerprints(256, seed=12, flip=0.02)
    col = as_collection(fps)
    for qi in (0, 77, 200):
        X = set(fps[qi].bits)
        expect = sum(tversky_match_oracle(X, set(Y), TV) for Y in col.sets)
        assert expect >= 1
        assert chem_search(fps[qi], col, "ca", seed=qi).value == expect


def test_chem_naive_bits_match_oracle_on_every_pair():
    fps = synthetic_fingerprints(256, seed=13, flip=0.03)
    col = as_collection(fps)
    X = set(fps[5].bits)
    got = run_local(chem_config("naive", seed=0), col, sorted(X)).result.value
    assert got == tuple(int(tversky_match_oracle(X, set(Y), TV)) for Y in col.sets)


def test_chem_chunk_bits_match_oracle_per_chunk():
    fps = synthetic_fingerprints(200, seed=14, flip=0.02, family_size=40)
    col = as_collection(fps)
    X = set(fps[3].bits)
    bits = [tversky_match_oracle(X, set(Y), TV) for Y in col.sets]
    got = run_local(chem_config("x", chunk_log=5, seed=1), col, sorted(X)).result
    assert got.kind is AggregateKind.EXISTENTIAL_CHUNKED
    assert got.value == tuple(int(any(bits[k:k + 32])) for k in range(0, 200, 32))


# -- document search -----------------------------------------------------------

def test_doc_query_subset_matches():
    docs = synthetic_corpus(10, doc_size=64, seed=3)
    assert doc_search(list(docs[6].keywords[:8]), docs, "x").value == 1


def test_doc_count_matches_containment_oracle_64():
    docs = synthetic_corpus(64, doc_size=20, vocabulary=60, seed=5)
    col = Collection([d.id for d in docs], [list(d.keywords) for d in docs])
    for trial in range(6):
        src = docs[trial * 7].keywords
        query = list(src[:1 + trial % 3])
        expect = sum(set(query) <= set(d.keywords) for d in docs)
        got = doc_search(query, col, "ca", seed=trial).value
        # no false negatives; false positives are at most 2^-39 per document
        assert got == expect


def test_doc_naive_bits_have_no_false_negatives():
    docs = synthetic_corpus(40, doc_size=16, vocabulary=30, seed=9)
    col = Collection([d.id for d in docs], [list(d.keywords) for d in docs])
    query = list(docs[0].keywords[:2])
    got = doc_search(query, col, "naive").value
    for bit, d in zip(got, docs):
        if set(query) <= set(d.keywords):
            assert bit == 1


def test_doc_repetitions_agree():
    docs = synthetic_corpus(20, doc_size=32, vocabulary=80, seed=10)
    col = Collection([d.id for d in docs], [list(d.keywords) for d in docs])
    query = list(docs[4].keywords[:2])
    expect = sum(set(query) <= set(d.keywords) for d in docs)
    assert doc_search(query, col, "ca", repetitions=3).value == expect


# -- bench -----------------------------------------------------------------------

def test_bench_csv_schema(tmp_path):
    rows = bench("doc", [1, 3])
    path = tmp_path / "report.csv"
    write_csv(path, rows)
    with open(path) as fh:
        reader = csv.DictReader(fh)
        assert reader.fieldnames == [
            "scenario", "n_sets", "profile", "ct_add", "ct_mul", "pt_mul", "rotations", "exponentiations",
            "query_bytes", "response_bytes", "server_seconds", "client_seconds", "depth", "table2_check",
        ]
        got = list(reader)
    assert COLUMNS == reader.fieldnames
    assert [r["n_sets"] for r in got] == ["1", "3"]
    assert all(r["table2_check"] == "ok" for r in got)
    assert got[0]["response_bytes"] == got[1]["response_bytes"]


def test_bench_chem_rows():
    rows = bench("chem", [2])
    assert rows[0]["table2_check"] == "ok" and rows[0]["profile"] == "P32k"


def test_psi_row_four_by_eight():
    add, mul, exp = costs.measure("PSI", costs.Sizes(n_c=4, n_s=8))
    assert mul == 32 and exp == 0


def test_fp_report_lines():
    lines = fp_report()
    assert any(line.startswith("P8k") and "2^-43.92" in line for line in lines)
    assert any(line.startswith("P32k") and "2^-39.17" in line for line in lines)


# -- command line --------------------------------------------------------------

def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def _wait_for(port, timeout=10.0):
    end = time.time() + timeout
    while time.time() < end:
        try:
            socket.create_connection(("127.0.0.1", port), timeout=1).close()
            return
        except OSError:
            time.sleep(0.05)
    raise TimeoutError(port)


def test_cli_server_client_round_trip(tmp_path):
    cfg = {"pipeline": "scalar", "he": {"profile": None, "backend": "clear-ring", "modulus": 1009},
           "agg": {"kind": "cardinality"}}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    (tmp_path / "sets.jsonl").write_text('{"id": "a", "elements": [1, 2]}\n{"id": "b", "elements": [2, 3]}\n')
    (tmp_path / "q.json").write_text('{"elements": [2]}')
    port = _free_port()
    server = threading.Thread(target=cli.server_main, daemon=True, args=([
        "--listen", f"127.0.0.1:{port}", "--collection", str(tmp_path / "sets.jsonl"),
        "--config", str(tmp_path / "cfg.json"), "--max-sessions", "2", "--audit", str(tmp_path / "audit")],))
    server.start()
    _wait_for(port)  # uses up the first session
    rc = cli.client_main(["--connect", f"127.0.0.1:{port}", "--query", str(tmp_path / "q.json"),
                          "--config", str(tmp_path / "cfg.json"), "--keys", str(tmp_path / "keys"),
                          "--out", str(tmp_path / "out.json")])
    server.join(timeout=10)
    assert rc == 0
    assert json.loads((tmp_path / "out.json").read_text())["value"] == 2
    assert (tmp_path / "keys" / "keys.json").stat().st_mode & 0o777 == 0o600
    assert len((tmp_path / "audit").read_text().splitlines()) == 1


def test_cli_exit_code_protocol_error(tmp_path):
    (tmp_path / "cfg.toml").write_text('pipeline = "scalar"\n[he]\nprofile = "P8k"\n')
    (tmp_path / "q.json").write_text('{"elements": [1]}')
    rc = cli.client_main(["--connect", f"127.0.0.1:{_free_port()}", "--query", str(tmp_path / "q.json"),
                          "--config", str(tmp_path / "cfg.toml"), "--keys", str(tmp_path / "k")])
    assert rc == 2


def test_cli_exit_code_config_error(tmp_path):
    (tmp_path / "bad.toml").write_text('pipeline = "nope"\n')
    (tmp_path / "q.json").write_text('{"elements": [1]}')
    rc = cli.client_main(["--connect", "127.0.0.1:1", "--query", str(tmp_path / "q.json"),
                          "--config", str(tmp_path / "bad.toml"), "--keys", str(tmp_path / "k")])
    assert rc == 3
    (tmp_path / "cfg.toml").write_text('pipeline = "chem"\n')  # chem needs small-domain Tversky
    assert cli.server_main(["--listen", "127.0.0.1:0", "--collection", str(tmp_path / "none.tsv"),
                            "--config", str(tmp_path / "cfg.toml")]) == 3


def test_cli_missing_collection_is_input_error(tmp_path):
    assert cli.chem_main(["search", "--collection", str(tmp_path / "none.tsv"), "--fingerprint", "0x1"]) == 3


def test_cli_server_refuses_empty_collection(tmp_path):
    (tmp_path / "empty.tsv").write_text("")
    assert cli.chem_main(["serve", "--collection", str(tmp_path / "empty.tsv"),
                          "--listen", "127.0.0.1:0"]) == 3


def test_cli_chem_and_doc_search(tmp_path, capsys):
    fps_path, corpus_path = tmp_path / "fps.tsv", tmp_path / "corpus.ndjson"
    assert cli.chem_main(["generate", "--n", "20", "--seed", "1", "--out", str(fps_path)]) == 0
    assert cli.chem_main(["search", "--collection", str(fps_path), "--fingerprint", "@cmpd000004",
                          "--agg", "ca", "--out", str(tmp_path / "c.json")]) == 0
    assert json.loads((tmp_path / "c.json").read_text())["value"] >= 1
    assert cli.doc_main(["generate", "--n", "5", "--doc-size", "16", "--out", str(corpus_path)]) == 0
    first = json.loads(corpus_path.read_text().splitlines()[2])["keywords"][:3]
    assert cli.doc_main(["search", "--collection", str(corpus_path), "--keywords", ",".join(first),
                         "--out", str(tmp_path / "d.json")]) == 0
    assert json.loads((tmp_path / "d.json").read_text())["value"] == 1
    assert cli.doc_main(["fp"]) == 0
    assert "2^-43.92" in capsys.readouterr().out


def test_cli_bench(tmp_path):
    out = tmp_path / "r.csv"
    assert cli.bench_main(["--scenario", "doc", "--sweep", "1,2", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 3
    assert cli.bench_main(["--scenario", "doc", "--sweep", "x", "--out", str(out)]) == 3


def test_fingerprint_rejects_out_of_width_bits():
    with pytest.raises(WidthMismatch):
        Fingerprint("x", frozenset({200}))
