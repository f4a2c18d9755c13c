"""Server engine: session lifecycle, evaluation and audit log."""
from __future__ import annotations

import json
import logging
import socket
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO

from pcm.engine.config import SessionConfig
from pcm.engine.pipelines import Collection, pipeline_for
from pcm.engine.wire import (
    ErrorCode,
    MessageType,
    WireMessage,
    error_message,
    json_body,
    pack_payload,
    parse_json_body,
    read_message,
    unpack_payload,
    write_message,
)
from pcm.errors import MalformedFrame, PCMError, ProtocolError, UnsupportedVersion
from pcm.he.backend import PublicKey
from pcm.he.serialize import deserialize_ciphertext, public_key_from_dict, serialize_ciphertext
from pcm.ring import Rng

log = logging.getLogger(__name__)


class AuditLog:
    """Newline-delimited JSON records, one per evaluated query."""

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path else None
        self.records: list[dict] = []
        self._lock = threading.Lock()

    def append(self, record: dict) -> None:
        with self._lock:
            self.records.append(record)
            if self.path is not None:
                with self.path.open("a") as fh:
                    fh.write(json.dumps(record, sort_keys=True) + "\n")


@dataclass
class ServerContext:
    collection: Collection
    cfg: SessionConfig
    threads: int = 1
    audit: AuditLog = field(default_factory=lambda: AuditLog(None))
    seed: int | None = None

    def __post_init__(self):
        self.pipeline = pipeline_for(self.cfg)
        self.pipeline.validate_collection(self.collection)
        self._sessions = 0
        self._lock = threading.Lock()

    def session_rng(self) -> Rng:
        with self._lock:
            n = self._sessions
            self._sessions += 1
        return Rng(None) if self.seed is None else Rng(self.seed).child(n)


class _Session:
    def __init__(self, ctx: ServerContext, rfile: BinaryIO, wfile: BinaryIO, rng: Rng):
        self.ctx, self.rfile, self.wfile, self.rng = ctx, rfile, wfile, rng
        self.id = uuid.uuid4().hex
        self.pk: PublicKey | None = None
        self.queries = 0

    def send(self, msg: WireMessage) -> None:
        write_message(self.wfile, msg)

    def fail(self, code: ErrorCode, text: str) -> None:
        log.info("session %s: %s (%s)", self.id, text, code.name)
        self.send(error_message(code, text))

    def run(self) -> None:
        while True:
            try:
                msg = read_message(self.rfile)
            except (MalformedFrame, UnsupportedVersion) as exc:
                self.fail(ErrorCode.MALFORMED, str(exc))
                return
            if msg is None:
                return
            if not self.dispatch(msg):
                return

    def dispatch(self, msg: WireMessage) -> bool:
        """Handle one frame; False closes the session."""
        cfg = self.ctx.cfg
        if msg.type is MessageType.HELLO:
            self.send(WireMessage(MessageType.HELLO, json_body({"role": "server", "pipeline": cfg.pipeline,
                                                                "session": self.id})))
            return True
        if msg.type is MessageType.SETUP:
            return self.setup(msg)
        if msg.type is MessageType.QUERY:
            if self.pk is None:
                self.fail(ErrorCode.SETUP_REQUIRED, "setup-required")
                return False
            return self.query(msg)
        self.fail(ErrorCode.UNEXPECTED_MESSAGE, f"unexpected {msg.type.name} message")
        return False

    def setup(self, msg: WireMessage) -> bool:
        cfg = self.ctx.cfg
        try:
            d = parse_json_body(msg.body)
            if d.get("config_digest") != cfg.digest():
                self.fail(ErrorCode.CONFIG_MISMATCH, "configuration digest differs from the server's")
                return False
            pk = public_key_from_dict(d["public_key"])
        except (MalformedFrame, KeyError) as exc:
            self.fail(ErrorCode.MALFORMED, f"bad setup: {exc}")
            return False
        if pk.params != cfg.he_params() or pk.backend.backend_id != cfg.he.backend:
            self.fail(ErrorCode.CONFIG_MISMATCH, "public key parameters differ from the configuration")
            return False
        self.pk = pk
        self.send(WireMessage(MessageType.SETUP, json_body({"ok": True, "config_digest": cfg.digest()})))
        return True

    def query(self, msg: WireMessage) -> bool:
        ctx, pk = self.ctx, self.pk
        he = pk.backend
        try:
            header, blobs = unpack_payload(msg.body)
            cts = [deserialize_ciphertext(b, he) for b in blobs]
        except PCMError as exc:
            self.fail(ErrorCode.MALFORMED, f"bad query: {exc}")
            return False
        if any(c.key_id != pk.key_id for c in cts):
            self.fail(ErrorCode.MALFORMED, "query ciphertexts are not under the session key")
            return False
        index = self.queries
        self.queries += 1
        he.reset_counters()
        start = time.perf_counter()
        try:
            rheader, out = ctx.pipeline.evaluate(pk, header, cts, ctx.collection, self.rng.child(index),
                                                 ctx.threads)
        except ProtocolError as exc:
            self.fail(ErrorCode(exc.code) if exc.code in ErrorCode._value2member_map_ else ErrorCode.BAD_QUERY,
                      exc.message)
            return False
        except PCMError as exc:
            self.fail(ErrorCode.EVALUATION_FAILED, f"{type(exc).__name__}: {exc}")
            return True
        elapsed = time.perf_counter() - start
        counters = he.cost_counters()
        body = pack_payload(rheader, [serialize_ciphertext(c) for c in out])
        self.send(WireMessage(MessageType.RESPONSE, body))
        ctx.audit.append({
            "session": self.id,
            "query": index,
            "config_digest": ctx.cfg.digest(),
            "pipeline": ctx.cfg.pipeline,
            "n_sets": len(ctx.collection),
            "counters": counters.as_dict(),
            "depth": max((c.depth for c in out), default=0),
            "wall_seconds": round(elapsed, 6),
            "query_bytes": len(msg.body),
            "response_bytes": len(body),
            "timestamp": time.time(),
        })
        return True


def handle_stream(ctx: ServerContext, rfile: BinaryIO, wfile: BinaryIO) -> None:
    """Serve one session over a pair of byte streams."""
    _Session(ctx, rfile, wfile, ctx.session_rng()).run()


def handle_connection(ctx: ServerContext, conn: socket.socket) -> None:
    with conn, conn.makefile("rb") as rfile, conn.makefile("wb") as wfile:
        try:
            handle_stream(ctx, rfile, wfile)
        except (ConnectionError, BrokenPipeError) as exc:
            log.info("connection dropped: %s", exc)


def run_server_session(listener: socket.socket, ctx: ServerContext, *, max_sessions: int | None = None,
                       stop: threading.Event | None = None) -> None:
    """Accept connections and serve each session on its own thread."""
    served = 0
    workers: list[threading.Thread] = []
    listener.settimeout(0.2)
    try:
        while (max_sessions is None or served < max_sessions) and not (stop and stop.is_set()):
            try:
                conn, _ = listener.accept()
            except socket.timeout:
                continue
            conn.settimeout(None)
            t = threading.Thread(target=handle_connection, args=(ctx, conn), daemon=True)
            t.start()
            workers.append(t)
            served += 1
    finally:
        for t in workers:
            t.join()


def parse_address(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must look like host:port, got {addr!r}")
    return host, int(port)
