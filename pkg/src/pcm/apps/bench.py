"""Desk-scale benchmark: operation counts, bytes and wall time against N."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

from pcm import costs
from pcm.apps.chem import chem_config, synthetic_fingerprints
from pcm.apps.doc import doc_config, mapping_false_positive_bits, synthetic_corpus
from pcm.engine.local import run_local
from pcm.engine.pipelines import Collection
from pcm.he.params import PROFILES

COLUMNS = ["scenario", "n_sets", "profile", "ct_add", "ct_mul", "pt_mul", "rotations", "exponentiations",
           "query_bytes", "response_bytes", "server_seconds", "client_seconds", "depth", "table2_check"]

SCENARIOS = ("chem", "doc")


def table2_check(rows: Sequence[str], sizes: costs.Sizes) -> str:
    """Measured counts of the scalar layer functions versus the per-row formulas."""
    bad = [r for r in rows if costs.measure(r, sizes) != costs.ROWS[r].exact(sizes)]
    return "ok" if not bad else "mismatch:" + "|".join(bad)


def _scenario(scenario: str, n: int, profile: str | None, seed: int):
    if scenario == "chem":
        fps = synthetic_fingerprints(n, seed=seed)
        cfg = chem_config("x", profile=profile or "P32k", seed=seed)
        coll = Collection([f.id for f in fps], [sorted(f.bits) for f in fps])
        rows, sizes = ["ePSI-CA-SD", "X-Agg"], costs.Sizes(D=cfg.chem.width, N=n)
        return cfg, coll, sorted(fps[0].bits), rows, sizes
    if scenario == "doc":
        docs = synthetic_corpus(n, seed=seed)
        cfg = doc_config("x", profile=profile or "P32k", seed=seed)
        coll = Collection([d.id for d in docs], [list(d.keywords) for d in docs])
        t = cfg.doc.hash_count
        rows = ["PSI", "F-Match", "X-Agg"]
        sizes = costs.Sizes(n_c=t * cfg.doc.max_query_keywords, n_s=len(docs[0].keywords), N=n)
        return cfg, coll, list(docs[0].keywords[: cfg.doc.max_query_keywords]), rows, sizes
    raise ValueError(f"unknown scenario {scenario!r}")


def bench(scenario: str, sweep: Sequence[int], *, profile: str | None = None, seed: int = 0,
          threads: int = 1) -> list[dict]:
    out = []
    for n in sweep:
        cfg, coll, query, rows, sizes = _scenario(scenario, n, profile, seed)
        run = run_local(cfg, coll, query, seed=seed, threads=threads)
        c = run.counters
        out.append({
            "scenario": scenario,
            "n_sets": n,
            "profile": cfg.he_params().profile_name,
            "ct_add": c.ct_add,
            "ct_mul": c.ct_mul,
            "pt_mul": c.pt_mul,
            "rotations": c.rotations,
            "exponentiations": c.exponentiations,
            "query_bytes": run.query_bytes,
            "response_bytes": run.response_bytes,
            "server_seconds": f"{run.server_seconds:.6f}",
            "client_seconds": f"{run.client_seconds:.6f}",
            "depth": run.depth,
            "table2_check": table2_check(rows, sizes),
        })
    return out


def write_csv(path: str | Path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=COLUMNS)
        w.writeheader()
        w.writerows(rows)


def fp_report(t: int = 2) -> list[str]:
    """Per-document mapping false-positive rate for each profile modulus."""
    lines = []
    for name, p in PROFILES.items():
        lines.append(f"{name}: q={p.q} t={t} mapping FP = 2^{mapping_false_positive_bits(p.q, t):.2f} "
                     f"(hash range taken to be the plaintext modulus)")
    return lines
