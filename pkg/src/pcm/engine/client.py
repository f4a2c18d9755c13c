"""Client engine: key setup, one-round queries and reveal."""
from __future__ import annotations

import socket
from dataclasses import dataclass, field
from typing import Any, BinaryIO

from pcm.agg import RevealedAggregate
from pcm.engine.config import SessionConfig
from pcm.engine.pipelines import pipeline_for
from pcm.engine.wire import (
    MessageType,
    WireMessage,
    json_body,
    pack_payload,
    parse_error_body,
    parse_json_body,
    read_message,
    unpack_payload,
    write_message,
)
from pcm.errors import MalformedFrame, ProtocolError
from pcm.he.backend import KeyPair
from pcm.he.serialize import deserialize_ciphertext, public_key_to_dict, serialize_ciphertext
from pcm.ring import Rng


@dataclass
class QueryStats:
    query_bytes: int = 0
    response_bytes: int = 0
    response_header: dict = field(default_factory=dict)


class ClientSession:
    """One connection; ``setup`` once, then any number of single-round queries."""

    def __init__(self, cfg: SessionConfig, keypair: KeyPair | None = None, rng: Rng | None = None):
        self.cfg = cfg
        self.rng = rng or Rng(cfg.seed)
        self.keypair = keypair or cfg.make_backend().keygen(self.rng.child(0))
        if keypair is not None and keypair.params != cfg.he_params():
            raise ProtocolError(0, "key pair parameters differ from the configuration")
        self.pipeline = pipeline_for(cfg)
        self.frame_log: list[tuple[str, MessageType, int]] = []
        self.last = QueryStats()
        self._queries = 0
        self._sock: socket.socket | None = None
        self._rfile: BinaryIO | None = None
        self._wfile: BinaryIO | None = None
        self._ready = False

    # -- transport ----------------------------------------------------------

    def connect(self, host: str, port: int, timeout: float | None = 60.0) -> "ClientSession":
        self._sock = socket.create_connection((host, port), timeout=timeout)
        return self.attach(self._sock.makefile("rb"), self._sock.makefile("wb"))

    def attach(self, rfile: BinaryIO, wfile: BinaryIO) -> "ClientSession":
        self._rfile, self._wfile = rfile, wfile
        return self

    def close(self) -> None:
        for f in (self._rfile, self._wfile):
            if f is not None:
                f.close()
        if self._sock is not None:
            self._sock.close()
        self._sock = self._rfile = self._wfile = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _send(self, msg: WireMessage) -> int:
        n = write_message(self._wfile, msg)
        self.frame_log.append(("sent", msg.type, n))
        return n

    def _recv(self, expected: MessageType) -> WireMessage:
        msg = read_message(self._rfile)
        if msg is None:
            raise ProtocolError(0, "server closed the connection")
        self.frame_log.append(("received", msg.type, len(msg.body)))
        if msg.type is MessageType.ERROR:
            code, text = parse_error_body(msg.body)
            raise ProtocolError(code, text)
        if msg.type is not expected:
            raise ProtocolError(0, f"expected {expected.name}, got {msg.type.name}")
        return msg

    # -- protocol -------------------------------------------------------------

    def setup(self) -> None:
        """Hello exchange plus Setup (public key, aux-key flags, config digest)."""
        self._send(WireMessage(MessageType.HELLO, json_body({"role": "client", "pipeline": self.cfg.pipeline})))
        self._recv(MessageType.HELLO)
        body = {"public_key": public_key_to_dict(self.keypair.public_key), "config_digest": self.cfg.digest()}
        self._send(WireMessage(MessageType.SETUP, json_body(body)))
        ack = parse_json_body(self._recv(MessageType.SETUP).body)
        if not ack.get("ok"):
            raise ProtocolError(0, "setup was not acknowledged")
        self._ready = True

    def query(self, client_input: Any, *, unchecked: bool = False) -> RevealedAggregate:
        if not self._ready:
            self.setup()
        pk, sk = self.keypair.public_key, self.keypair.secret_key
        header, cts, state = self.pipeline.encode(pk, client_input, self.rng.child(1, self._queries),
                                                  unchecked=unchecked)
        self._queries += 1
        body = pack_payload(header, [serialize_ciphertext(c) for c in cts])
        self._send(WireMessage(MessageType.QUERY, body))
        resp = self._recv(MessageType.RESPONSE)
        rheader, blobs = unpack_payload(resp.body)
        try:
            out = [deserialize_ciphertext(b, pk.backend) for b in blobs]
        except MalformedFrame as exc:
            raise ProtocolError(0, f"bad response: {exc}") from exc
        self.last = QueryStats(len(body), len(resp.body), rheader)
        return self.pipeline.reveal(sk, rheader, out, state)


def run_client_query(endpoint: tuple[str, int], X: Any, cfg: SessionConfig,
                     keypair: KeyPair | None = None) -> RevealedAggregate:
    """Connect, set up, run one query and close."""
    with ClientSession(cfg, keypair).connect(*endpoint) as session:
        return session.query(X)
