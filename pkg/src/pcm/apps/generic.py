"""Collections of plain integer sets for the scalar pipeline."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

from pcm.engine.pipelines import Collection
from pcm.errors import ParseError


def parse_sets(lines: Iterable[str]) -> Collection:
    """JSON lines ``{"id": ..., "elements": [...], "data": <int, optional>}``."""
    ids, sets, data = [], [], []
    for no, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
            rid, elems = str(rec["id"]), [int(e) for e in rec["elements"]]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad set record: {exc}", no) from exc
        if rid in ids:
            raise ParseError(f"duplicate record id {rid!r}", no)
        ids.append(rid)
        sets.append(sorted(set(elems)))
        data.append(rec.get("data"))
    if any(d is None for d in data):
        if any(d is not None for d in data):
            raise ParseError("either every record or none carries 'data'")
        return Collection(ids, sets)
    return Collection(ids, sets, [int(d) for d in data])


def ingest_sets(path: str | Path) -> Collection:
    with open(path) as fh:
        return parse_sets(fh)
