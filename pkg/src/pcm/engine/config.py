"""Session configuration shared by client and server.

Files are TOML (nested tables) or JSON with the same structure::

    pipeline = "doc"            # scalar | chem | doc
    seed = 7

    [he]
    profile = "P32k"            # or slot_count / modulus / depth_budget
    backend = "depth-tracked"   # or "clear-ring"

    [agg]
    kind = "existential"
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

from pcm.agg import AggregateKind
from pcm.errors import ConfigError, PCMError
from pcm.he.backend import BackendKind, ModelBackend, make_backend
from pcm.he.params import PROFILES, UNBOUNDED_DEPTH, HEParams
from pcm.match import MatchKind, TverskyParams
from pcm.psi import QueryVariant
from pcm.ring import PrimeModulus

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

PIPELINES = ("scalar", "chem", "doc")
MAL_MODES = ("off", "additive", "multiplicative")


@dataclass
class HEConfig:
    profile: str | None = "P32k"
    backend: str = "depth-tracked"
    slot_count: int | None = None
    modulus: int | None = None
    depth_budget: int | None = None
    # None: NTT batching is required for slot_count > 1 except on the clear ring
    batching: bool | None = None


@dataclass
class PSIConfig:
    variant: str = "small-input"
    domain_size: int | None = None


@dataclass
class MatchConfig:
    kind: str = "full"
    t_min: int = 0
    alpha: str = "1"
    beta: str = "1"
    threshold: str = "4/5"


@dataclass
class AggConfig:
    kind: str = "existential"
    chunk_log: int | None = None
    kappa: int = 1


@dataclass
class MalConfig:
    mode: str = "off"


@dataclass
class ReplicationConfig:
    powers: int = 1
    duplicates: int = 1


@dataclass
class DocConfig:
    hash_count: int = 2
    repetitions: int = 1
    max_keywords: int = 128
    max_query_keywords: int = 8
    powers: int = 64
    hash_key: str = "pcm-keywords"


@dataclass
class ChemConfig:
    width: int = 166
    lane_width: int | None = None


@dataclass
class SessionConfig:
    pipeline: str = "scalar"
    seed: int | None = None
    threads: int = 1
    he: HEConfig = field(default_factory=HEConfig)
    psi: PSIConfig = field(default_factory=PSIConfig)
    match: MatchConfig = field(default_factory=MatchConfig)
    agg: AggConfig = field(default_factory=AggConfig)
    mal: MalConfig = field(default_factory=MalConfig)
    replication: ReplicationConfig = field(default_factory=ReplicationConfig)
    doc: DocConfig = field(default_factory=DocConfig)
    chem: ChemConfig = field(default_factory=ChemConfig)

    # -- derived objects --------------------------------------------------

    def he_params(self) -> HEParams:
        h = self.he
        if h.profile:
            if h.profile not in PROFILES:
                raise ConfigError(f"unknown HE profile {h.profile!r}")
            base = PROFILES[h.profile]
            if h.depth_budget is not None:
                base = dataclasses.replace(base, depth_budget=h.depth_budget)
            return base
        if h.modulus is None:
            raise ConfigError("he.modulus is required without a profile")
        try:
            return HEParams(
                slot_count=h.slot_count or 1,
                modulus=PrimeModulus(int(h.modulus)),
                depth_budget=UNBOUNDED_DEPTH if h.depth_budget is None else h.depth_budget,
                profile_name=f"custom-{h.slot_count or 1}-{h.modulus}",
                batching=self._batching(),
            )
        except PCMError as exc:
            raise ConfigError(str(exc)) from exc

    def _batching(self) -> bool:
        h = self.he
        if h.batching is not None:
            return bool(h.batching)
        return (h.slot_count or 1) > 1 and h.backend != BackendKind.CLEAR_RING.value

    def make_backend(self) -> ModelBackend:
        try:
            return make_backend(self.he.backend, self.he_params())
        except PCMError as exc:
            raise ConfigError(str(exc)) from exc

    def tversky(self) -> TverskyParams:
        m = self.match
        try:
            return TverskyParams.create(Fraction(m.alpha), Fraction(m.beta), Fraction(m.threshold))
        except (PCMError, ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"bad Tversky parameters: {exc}") from exc

    @property
    def variant(self) -> QueryVariant:
        return QueryVariant(self.psi.variant)

    @property
    def match_kind(self) -> MatchKind:
        return MatchKind(self.match.kind)

    @property
    def agg_kind(self) -> AggregateKind:
        return AggregateKind(self.agg.kind)

    # -- validation -------------------------------------------------------

    def validate(self) -> "SessionConfig":
        if self.pipeline not in PIPELINES:
            raise ConfigError(f"pipeline must be one of {PIPELINES}")
        if self.mal.mode not in MAL_MODES:
            raise ConfigError(f"mal.mode must be one of {MAL_MODES}")
        try:
            BackendKind(self.he.backend)
            variant, mk, ak = self.variant, self.match_kind, self.agg_kind
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.threads < 1:
            raise ConfigError("threads must be positive")
        if mk is MatchKind.TVERSKY:
            self.tversky()
        if ak is AggregateKind.EXISTENTIAL_CHUNKED and self.agg.chunk_log is None:
            raise ConfigError("existential-chunked aggregation needs agg.chunk_log")
        if self.agg.kappa < 1:
            raise ConfigError("agg.kappa must be positive")
        if variant is QueryVariant.SMALL_DOMAIN and not self.psi.domain_size and self.pipeline == "scalar":
            raise ConfigError("small-domain queries need psi.domain_size")
        if self.mal.mode == "multiplicative" and variant is not QueryVariant.SMALL_INPUT:
            raise ConfigError("multiplicative protection applies to small-input queries only")
        if self.pipeline == "chem":
            if variant is not QueryVariant.SMALL_DOMAIN or mk is not MatchKind.TVERSKY:
                raise ConfigError("the chem pipeline runs small-domain Tversky matching")
            if ak not in (AggregateKind.EXISTENTIAL, AggregateKind.EXISTENTIAL_CHUNKED,
                          AggregateKind.CARDINALITY_SHUFFLED, AggregateKind.NAIVE):
                raise ConfigError(f"the chem pipeline does not support {ak.value} aggregation")
            if self.mal.mode == "multiplicative":
                raise ConfigError("the chem pipeline supports mal.mode off or additive")
        if self.pipeline == "doc":
            if variant is not QueryVariant.SMALL_INPUT or mk is not MatchKind.FULL:
                raise ConfigError("the doc pipeline runs small-input full matching")
            if ak not in (AggregateKind.EXISTENTIAL, AggregateKind.CARDINALITY_SHUFFLED, AggregateKind.NAIVE):
                raise ConfigError(f"the doc pipeline does not support {ak.value} aggregation")
            if ak is AggregateKind.EXISTENTIAL and self.doc.repetitions != 1:
                raise ConfigError("existential doc search uses a single repetition")
            if self.doc.hash_count < 1 or self.doc.repetitions < 1:
                raise ConfigError("doc.hash_count and doc.repetitions must be positive")
            if self.mal.mode != "off":
                raise ConfigError("the doc pipeline relies on the replication check; set mal.mode = off")
        if self.pipeline in ("chem", "doc") and self.he.slot_count is None and not self.he.profile:
            raise ConfigError("batched pipelines need a batching HE profile or slot_count")
        self.he_params()
        return self

    # -- (de)serialization ------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        d = self.to_dict()
        d.pop("threads", None)  # local settings, not part of the agreement
        d.pop("seed", None)
        return hashlib.sha256(json.dumps(d, sort_keys=True, separators=(",", ":")).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SessionConfig":
        kwargs: dict[str, Any] = {}
        sections = {f.name: f for f in dataclasses.fields(cls)}
        for key, value in d.items():
            if key not in sections:
                raise ConfigError(f"unknown config key {key!r}")
            f = sections[key]
            sub = f.default_factory if f.default_factory is not dataclasses.MISSING else None
            if sub is not None:
                if not isinstance(value, dict):
                    raise ConfigError(f"[{key}] must be a table")
                names = {g.name for g in dataclasses.fields(sub)}
                unknown = set(value) - names
                if unknown:
                    raise ConfigError(f"unknown keys in [{key}]: {sorted(unknown)}")
                vals = {k: (str(v) if k in ("alpha", "beta", "threshold") else v) for k, v in value.items()}
                kwargs[key] = sub(**vals)
            else:
                kwargs[key] = value
        return cls(**kwargs).validate()


def load_config(path: str | Path) -> SessionConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix == ".json" or text.lstrip().startswith("{"):
            data = json.loads(text)
        else:
            data = tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a table")
    return SessionConfig.from_dict(data)
