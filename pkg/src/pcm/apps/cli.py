"""Command-line entry points.

Exit codes: 0 success, 2 protocol or transport error, 3 configuration or
input error.
"""
from __future__ import annotations

import argparse
import json
import logging
import socket
import sys
from pathlib import Path
from typing import Any, Callable

from pcm.engine.config import SessionConfig, load_config
from pcm.engine.pipelines import Collection
from pcm.errors import (
    ConfigError,
    MalformedFrame,
    ParseError,
    PCMError,
    ProtocolError,
    ProtocolFailure,
    UnsupportedVersion,
)

EXIT_OK, EXIT_PROTOCOL, EXIT_CONFIG = 0, 2, 3

log = logging.getLogger("pcm")


def _guard(fn: Callable[[argparse.Namespace], int]) -> Callable[[list[str] | None], int]:
    def main(argv: list[str] | None = None) -> int:
        parser = fn.parser()  # type: ignore[attr-defined]
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        try:
            return fn(args)
        except (ProtocolError, ProtocolFailure, MalformedFrame, UnsupportedVersion, OSError) as exc:
            print(f"protocol error: {exc}", file=sys.stderr)
            return EXIT_PROTOCOL
        except (ConfigError, ParseError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except PCMError as exc:
            print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
            return EXIT_CONFIG

    main.__doc__ = fn.__doc__
    return main


def _command(parser_factory: Callable[[], argparse.ArgumentParser]):
    def wrap(fn):
        fn.parser = parser_factory
        return _guard(fn)
    return wrap


# -- shared helpers --------------------------------------------------------

def load_collection(path: str | Path, cfg: SessionConfig) -> Collection:
    from pcm.apps.chem import ingest_fingerprints
    from pcm.apps.doc import ingest_corpus
    from pcm.apps.generic import ingest_sets

    try:
        if cfg.pipeline == "chem":
            return ingest_fingerprints(path, cfg.chem.width)
        if cfg.pipeline == "doc":
            return ingest_corpus(path, cfg.doc.max_keywords)
        return ingest_sets(path)
    except OSError as exc:  # an unreadable input file is not a transport error
        raise ParseError(f"cannot read collection {path}: {exc}") from exc


def load_query(path: str | Path, cfg: SessionConfig) -> Any:
    """JSON query file: ``elements`` (scalar), ``fingerprint``/``bits`` (chem) or ``keywords`` (doc)."""
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read query {path}: {exc}") from exc
    if not isinstance(d, dict):
        raise ParseError("query file must hold a JSON object")
    try:
        if cfg.pipeline == "chem":
            if "fingerprint" in d:
                from pcm.apps.chem import decode_bits
                return sorted(decode_bits(str(d["fingerprint"]), cfg.chem.width))
            return sorted(int(b) for b in d["bits"])
        if cfg.pipeline == "doc":
            return [str(w) for w in d["keywords"]]
        return [int(x) for x in d["elements"]]
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"query file lacks the expected field: {exc}") from exc


def load_or_create_keys(keys: str | Path, cfg: SessionConfig):
    from pcm.he.serialize import keypair_from_dict, keypair_to_dict
    from pcm.ring import Rng

    path = Path(keys) / "keys.json"
    if path.exists():
        try:
            kp = keypair_from_dict(json.loads(path.read_text()))
        except (json.JSONDecodeError, PCMError) as exc:
            raise ConfigError(f"cannot load keys from {path}: {exc}") from exc
        if kp.params != cfg.he_params() or kp.public_key.backend.backend_id != cfg.he.backend:
            raise ConfigError(f"keys in {path} were made for different HE parameters")
        return kp
    kp = cfg.make_backend().keygen(Rng(cfg.seed))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(keypair_to_dict(kp)))
    path.chmod(0o600)
    return kp


def result_record(result, stats=None) -> dict:
    value = result.value
    rec = {"kind": result.kind.value, "value": list(value) if isinstance(value, tuple) else value,
           "exists": bool(result.exists) if result.kind.value != "retrieval" else None}
    if stats is not None:
        rec.update(query_bytes=stats.query_bytes, response_bytes=stats.response_bytes)
    return rec


def _write_out(path: str | None, rec: dict) -> None:
    text = json.dumps(rec, indent=2)
    if path:
        Path(path).write_text(text + "\n")
    else:
        print(text)


def _serve(cfg: SessionConfig, collection: Collection, listen: str, threads: int, audit: str | None,
           max_sessions: int | None, seed: int | None) -> int:
    from pcm.engine.server import AuditLog, ServerContext, parse_address, run_server_session

    try:
        host, port = parse_address(listen)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    ctx = ServerContext(collection, cfg, threads=threads, audit=AuditLog(audit), seed=seed)
    with socket.create_server((host, port)) as listener:
        print(f"listening on {host}:{listener.getsockname()[1]} ({len(collection)} sets)", flush=True)
        try:
            run_server_session(listener, ctx, max_sessions=max_sessions)
        except KeyboardInterrupt:
            pass
    return EXIT_OK


def _query(cfg: SessionConfig, connect: str, client_input: Any, keys: str | None, out: str | None) -> int:
    from pcm.engine.client import ClientSession
    from pcm.engine.server import parse_address

    try:
        host, port = parse_address(connect)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    kp = load_or_create_keys(keys, cfg) if keys else None
    with ClientSession(cfg, kp).connect(host, port) as session:
        result = session.query(client_input)
        _write_out(out, result_record(result, session.last))
    return EXIT_OK


# -- pcm-server / pcm-client --------------------------------------------------

def _server_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pcm-server", description="Serve a collection to matching queries.")
    p.add_argument("--listen", required=True, help="host:port (port 0 picks a free port)")
    p.add_argument("--collection", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--audit", default=None, help="append per-query NDJSON records here")
    p.add_argument("--max-sessions", type=int, default=None)
    p.add_argument("--seed", type=int, default=None, help="server randomness seed (reproducible runs only)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


@_command(_server_parser)
def server_main(args) -> int:
    """pcm-server entry point."""
    cfg = load_config(args.config)
    collection = load_collection(args.collection, cfg)
    threads = args.threads or cfg.threads
    return _serve(cfg, collection, args.listen, threads, args.audit, args.max_sessions, args.seed)


def _client_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pcm-client", description="Run one query against a pcm-server.")
    p.add_argument("--connect", required=True, help="host:port")
    p.add_argument("--query", required=True, help="JSON query file")
    p.add_argument("--config", required=True)
    p.add_argument("--keys", required=True, help="directory holding keys.json (created if missing)")
    p.add_argument("--out", default=None, help="result JSON (stdout if omitted)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


@_command(_client_parser)
def client_main(args) -> int:
    """pcm-client entry point."""
    cfg = load_config(args.config)
    return _query(cfg, args.connect, load_query(args.query, cfg), args.keys, args.out)


# -- pcm-chem -------------------------------------------------------------------

def _add_common_app_args(p: argparse.ArgumentParser, agg_default: str) -> None:
    p.add_argument("--config", default=None, help="config file; defaults are built from the flags below")
    p.add_argument("--agg", default=agg_default, help="x, ca, or an aggregation kind")
    p.add_argument("--profile", default="P32k")
    p.add_argument("--backend", default="depth-tracked")
    p.add_argument("--seed", type=int, default=None)


def _chem_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pcm-chem", description="Private chemical similarity search.")
    sub = p.add_subparsers(dest="cmd", required=True)
    g = sub.add_parser("generate", help="write a synthetic fingerprint file")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    for name in ("search", "serve", "query"):
        s = sub.add_parser(name)
        _add_common_app_args(s, "x")
        if name in ("search", "serve"):
            s.add_argument("--collection", required=True)
            s.add_argument("--threads", type=int, default=1)
        if name in ("search", "query"):
            s.add_argument("--fingerprint", required=True, help="hex or 0/1 string, or @id from --collection")
            s.add_argument("--out", default=None)
        if name == "serve":
            s.add_argument("--listen", required=True)
            s.add_argument("--audit", default=None)
            s.add_argument("--max-sessions", type=int, default=None)
        if name == "query":
            s.add_argument("--connect", required=True)
            s.add_argument("--keys", default=None)
        s.add_argument("-v", "--verbose", action="store_true")
    return p


@_command(_chem_parser)
def chem_main(args) -> int:
    """pcm-chem entry point."""
    from pcm.apps.chem import chem_config, decode_bits, synthetic_fingerprints, write_fingerprints

    if args.cmd == "generate":
        write_fingerprints(args.out, synthetic_fingerprints(args.n, seed=args.seed))
        return EXIT_OK
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = chem_config(args.agg, profile=args.profile, backend=args.backend, seed=args.seed)
    collection = load_collection(args.collection, cfg) if args.cmd in ("search", "serve") else None
    if args.cmd == "serve":
        return _serve(cfg, collection, args.listen, args.threads, args.audit, args.max_sessions, None)
    fp = args.fingerprint
    if fp.startswith("@"):
        if collection is None or fp[1:] not in collection.ids:
            raise ConfigError(f"unknown fingerprint id {fp[1:]!r}")
        bits = collection.sets[collection.ids.index(fp[1:])]
    else:
        bits = sorted(decode_bits(fp, cfg.chem.width))
    if args.cmd == "query":
        return _query(cfg, args.connect, bits, args.keys, args.out)
    from pcm.engine.local import run_local
    run = run_local(cfg, collection, bits, threads=args.threads)
    _write_out(args.out, result_record(run.result, run))
    return EXIT_OK


# -- pcm-doc ----------------------------------------------------------------------

def _doc_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pcm-doc", description="Private keyword search over documents.")
    sub = p.add_subparsers(dest="cmd", required=True)
    g = sub.add_parser("generate", help="write a synthetic corpus")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--doc-size", type=int, default=128)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    f = sub.add_parser("fp", help="print the per-document mapping false-positive rates")
    f.add_argument("--hashes", type=int, default=2)
    for name in ("search", "serve", "query"):
        s = sub.add_parser(name)
        _add_common_app_args(s, "x")
        s.add_argument("--repetitions", type=int, default=1)
        s.add_argument("--hashes", type=int, default=2)
        if name in ("search", "serve"):
            s.add_argument("--collection", required=True)
            s.add_argument("--threads", type=int, default=1)
        if name in ("search", "query"):
            s.add_argument("--keywords", required=True, help="comma-separated")
            s.add_argument("--out", default=None)
        if name == "serve":
            s.add_argument("--listen", required=True)
            s.add_argument("--audit", default=None)
            s.add_argument("--max-sessions", type=int, default=None)
        if name == "query":
            s.add_argument("--connect", required=True)
            s.add_argument("--keys", default=None)
        s.add_argument("-v", "--verbose", action="store_true")
    return p


@_command(_doc_parser)
def doc_main(args) -> int:
    """pcm-doc entry point."""
    from pcm.apps.bench import fp_report
    from pcm.apps.doc import doc_config, synthetic_corpus, write_corpus

    if args.cmd == "generate":
        write_corpus(args.out, synthetic_corpus(args.n, args.doc_size, seed=args.seed))
        return EXIT_OK
    if args.cmd == "fp":
        print("\n".join(fp_report(args.hashes)))
        return EXIT_OK
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = doc_config(args.agg, profile=args.profile, backend=args.backend, seed=args.seed,
                         hash_count=args.hashes, repetitions=args.repetitions)
    collection = load_collection(args.collection, cfg) if args.cmd in ("search", "serve") else None
    if args.cmd == "serve":
        return _serve(cfg, collection, args.listen, args.threads, args.audit, args.max_sessions, None)
    words = [w for w in args.keywords.split(",") if w]
    if args.cmd == "query":
        return _query(cfg, args.connect, words, args.keys, args.out)
    from pcm.engine.local import run_local
    run = run_local(cfg, collection, words, threads=args.threads)
    _write_out(args.out, result_record(run.result, run))
    return EXIT_OK


# -- pcm-bench --------------------------------------------------------------------

def _bench_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pcm-bench", description="Desk-scale cost and timing sweep.")
    p.add_argument("--scenario", required=True, choices=["chem", "doc"])
    p.add_argument("--sweep", default="1,8,64,512", help="comma-separated collection sizes")
    p.add_argument("--out", required=True)
    p.add_argument("--profile", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


@_command(_bench_parser)
def bench_main(args) -> int:
    """pcm-bench entry point."""
    from pcm.apps.bench import bench, fp_report, write_csv

    try:
        sweep = [int(x) for x in args.sweep.split(",") if x]
    except ValueError as exc:
        raise ConfigError(f"bad --sweep: {exc}") from exc
    if not sweep or min(sweep) < 1:
        raise ConfigError("--sweep needs positive collection sizes")
    rows = bench(args.scenario, sweep, profile=args.profile, seed=args.seed, threads=args.threads)
    write_csv(args.out, rows)
    for r in rows:
        print(f"{r['scenario']} N={r['n_sets']}: {r['server_seconds']}s server, "
              f"{r['response_bytes']} response bytes, depth {r['depth']}, table2 {r['table2_check']}")
    if args.scenario == "doc":
        print("\n".join(fp_report()))
    return EXIT_OK
