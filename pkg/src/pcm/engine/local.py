"""In-process protocol run with full serialization, for apps, tests and benchmarks."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Any

from pcm.agg import RevealedAggregate
from pcm.engine.config import SessionConfig
from pcm.engine.pipelines import Collection, pipeline_for
from pcm.engine.wire import pack_payload, unpack_payload
from pcm.he.backend import CostSnapshot, KeyPair
from pcm.he.serialize import deserialize_ciphertext, public_key_from_dict, public_key_to_dict, serialize_ciphertext
from pcm.ring import Rng


@dataclass
class LocalRun:
    result: RevealedAggregate
    counters: CostSnapshot
    query_bytes: int
    response_bytes: int
    server_seconds: float
    client_seconds: float
    depth: int
    response_header: dict
    response: bytes = b""


def run_local(cfg: SessionConfig, collection: Collection, client_input: Any, *, keypair: KeyPair | None = None,
              seed: int | None = None, server_seed: int | None = None, threads: int = 1,
              unchecked: bool = False) -> LocalRun:
    """Encode, evaluate and reveal as the two parties would, minus the socket."""
    seed = cfg.seed if seed is None else seed
    rng = Rng(seed)
    pipeline = pipeline_for(cfg)
    t0 = time.perf_counter()
    kp = keypair or cfg.make_backend().keygen(rng.child(0))
    header, cts, state = pipeline.encode(kp.public_key, client_input, rng.child(1), unchecked=unchecked)
    query = pack_payload(header, [serialize_ciphertext(c) for c in cts])
    t1 = time.perf_counter()

    # server side: its own backend bound to the received key
    spk = public_key_from_dict(public_key_to_dict(kp.public_key))
    she = spk.backend
    qh, blobs = unpack_payload(query)
    qcts = [deserialize_ciphertext(b, she) for b in blobs]
    srng = Rng(server_seed if server_seed is not None else (None if seed is None else seed + 1))
    rheader, out = pipeline.evaluate(spk, qh, qcts, collection, srng, threads)
    response = pack_payload(rheader, [serialize_ciphertext(c) for c in out])
    t2 = time.perf_counter()

    rh, rblobs = unpack_payload(response)
    rcts = [deserialize_ciphertext(b, kp.public_key.backend) for b in rblobs]
    result = pipeline.reveal(kp.secret_key, rh, rcts, state)
    t3 = time.perf_counter()
    return LocalRun(result, she.cost_counters(), len(query), len(response), t2 - t1, (t1 - t0) + (t3 - t2),
                    max((c.depth for c in out), default=0), rh, response)
