"""Model homomorphic backends over Z_q slot vectors.

Both backends here keep the true slot values in memory. They are functional
models of a batched leveled scheme: they reproduce its arithmetic, its slot
rotations and its multiplicative depth budget, but provide no secrecy. A
lattice library plugs in behind :class:`pcm.he.rlwe.RlweAdapter` instead.
"""
from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Sequence, Union

import numpy as np

from pcm import kernels
from pcm.errors import (
    BackendMismatch,
    DepthUnavailable,
    InvalidParams,
    MissingRotationKeys,
    SlotOverflow,
    WrongKey,
)
from pcm.he.params import UNBOUNDED_DEPTH, HEParams
from pcm.ring import Rng, Scalar


class BackendKind(str, Enum):
    CLEAR_RING = "clear-ring"
    DEPTH_TRACKED = "depth-tracked"
    RLWE_ADAPTER = "rlwe-adapter"


class Freshness(str, Enum):
    FRESH = "fresh"
    EVALUATED = "evaluated"


@dataclass(frozen=True)
class DecryptFailure:
    """Returned (not raised) when a ciphertext exceeded its depth budget."""

    depth_used: int
    depth_budget: int


@dataclass(frozen=True, eq=False)
class PublicKey:
    key_id: bytes
    params: HEParams
    backend: "ModelBackend" = field(repr=False)
    rotations: bool = True
    relin: bool = True


@dataclass(frozen=True, eq=False)
class SecretKey:
    key_id: bytes
    params: HEParams
    token: bytes = field(repr=False)
    backend: "ModelBackend" = field(default=None, repr=False)


@dataclass(frozen=True, eq=False)
class KeyPair:
    public_key: PublicKey
    secret_key: SecretKey

    @property
    def params(self) -> HEParams:
        return self.public_key.params

    @property
    def aux_keys(self) -> dict:
        return {"rotations": self.public_key.rotations, "relin": self.public_key.relin}


class Ciphertext:
    """Encrypted slot vector. Treat as immutable."""

    __slots__ = ("backend_id", "key_id", "params", "slots", "depth", "freshness")

    def __init__(self, backend_id: str, key_id: bytes, params: HEParams, slots: np.ndarray,
                 depth: int = 0, freshness: Freshness = Freshness.EVALUATED):
        slots.flags.writeable = False
        self.backend_id = backend_id
        self.key_id = key_id
        self.params = params
        self.slots = slots
        self.depth = depth
        self.freshness = freshness

    @property
    def depth_used(self) -> int:
        return self.depth

    @property
    def slot_count(self) -> int:
        return len(self.slots)

    def __repr__(self):
        return (f"Ciphertext({self.backend_id}, key={self.key_id.hex()[:8]}, "
                f"slots={self.slot_count}, depth={self.depth}, {self.freshness.value})")


@dataclass(frozen=True)
class CostSnapshot:
    ct_add: int = 0
    ct_mul: int = 0
    pt_mul: int = 0
    rotations: int = 0
    exponentiations: int = 0

    @property
    def mults(self) -> int:
        """Multiplications with scalar-ciphertext products counted as full ones."""
        return self.ct_mul + self.pt_mul

    @property
    def adds(self) -> int:
        return self.ct_add

    def __sub__(self, other: "CostSnapshot") -> "CostSnapshot":
        return CostSnapshot(*(getattr(self, f.name) - getattr(other, f.name) for f in fields(self)))

    def __add__(self, other: "CostSnapshot") -> "CostSnapshot":
        return CostSnapshot(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


class CostCounters:
    """Thread-safe monotone operation counters."""

    _NAMES = ("ct_add", "ct_mul", "pt_mul", "rotations", "exponentiations")

    def __init__(self):
        self._lock = threading.Lock()
        self._c = dict.fromkeys(self._NAMES, 0)

    def bump(self, name: str, n: int = 1) -> None:
        with self._lock:
            self._c[name] += n

    def snapshot(self) -> CostSnapshot:
        with self._lock:
            return CostSnapshot(**self._c)

    def reset(self) -> None:
        with self._lock:
            for k in self._c:
                self._c[k] = 0


Plain = Union[int, Scalar, Sequence[int], np.ndarray]
Operand = Union[Ciphertext, Plain]


def ceil_log2(n: int) -> int:
    return max(0, (n - 1).bit_length())


class ModelBackend:
    """Shared implementation of the clear-ring and depth-tracked backends."""

    kind: BackendKind

    def __init__(self, params: HEParams):
        self.params = params
        self.q = params.q
        self.backend_id: str = self.kind.value
        self.counters = CostCounters()
        self._no_rotation: set[bytes] = set()

    # -- identity ---------------------------------------------------------

    @property
    def depth_budget(self) -> int:
        return self.params.depth_budget

    @property
    def slot_count(self) -> int:
        return self.params.slot_count

    def cost_counters(self) -> CostSnapshot:
        return self.counters.snapshot()

    def reset_counters(self) -> None:
        self.counters.reset()

    # -- keys -------------------------------------------------------------

    def keygen(self, rng: Rng | None = None, *, rotations: bool = True, relin: bool = True) -> KeyPair:
        self._validate_params()
        token = (rng or Rng()).token(16)
        key_id = hashlib.blake2b(token, digest_size=16).digest()
        pk = self.bind_public_key(key_id, rotations=rotations, relin=relin)
        return KeyPair(pk, SecretKey(key_id, self.params, token, self))

    def bind_public_key(self, key_id: bytes, *, rotations: bool = True, relin: bool = True) -> PublicKey:
        """Rebuild a public key received from the key owner."""
        if not rotations:
            self._no_rotation.add(bytes(key_id))
        return PublicKey(bytes(key_id), self.params, self, rotations, relin)

    def _validate_params(self) -> None:
        self.params.validate()

    def _check_pk(self, pk: PublicKey) -> None:
        if pk.backend is not self and (pk.backend.backend_id != self.backend_id or pk.params != self.params):
            raise WrongKey("public key belongs to a different backend or parameter set")

    def _check_ct(self, ct: Ciphertext) -> None:
        if ct.params is self.params and ct.backend_id == self.backend_id:
            return
        if ct.backend_id != self.backend_id or ct.params != self.params:
            raise BackendMismatch(f"ciphertext from {ct.backend_id}/{ct.params.profile_name} "
                                  f"used with {self.backend_id}/{self.params.profile_name}")

    # -- encode / encrypt -------------------------------------------------

    def encode(self, values: Plain) -> np.ndarray:
        """Plaintext vector reduced mod q and zero-padded to the slot count."""
        n = self.slot_count
        if isinstance(values, (int, np.integer, Scalar)):
            return np.full(n, int(values) % self.q, dtype=np.uint64)
        if isinstance(values, np.ndarray) and values.dtype == np.uint64 and len(values) == n:
            return values
        vals = [int(v) % self.q for v in values]
        if len(vals) > n:
            raise SlotOverflow(f"{len(vals)} values do not fit in {n} slots")
        out = np.zeros(n, dtype=np.uint64)
        out[: len(vals)] = vals
        return out

    def encrypt(self, pk: PublicKey, values: Plain) -> Ciphertext:
        self._check_pk(pk)
        if isinstance(values, (int, np.integer, Scalar)):
            values = [values]
        slots = self.encode(values).copy()
        return Ciphertext(self.backend_id, pk.key_id, self.params, slots, 0, Freshness.FRESH)

    def encrypt_constant(self, pk: PublicKey, value: int = 0) -> Ciphertext:
        """Encryption of ``value`` in every slot (e.g. a zero accumulator)."""
        self._check_pk(pk)
        slots = np.full(self.slot_count, value % self.q, dtype=np.uint64)
        return Ciphertext(self.backend_id, pk.key_id, self.params, slots, 0, Freshness.FRESH)

    def decrypt(self, sk: SecretKey, ct: Ciphertext) -> list[int] | DecryptFailure:
        self._check_ct(ct)
        if sk.key_id != ct.key_id:
            raise WrongKey("ciphertext was encrypted under a different key")
        if ct.depth > self.depth_budget:
            return DecryptFailure(ct.depth, self.depth_budget)
        return [int(v) for v in ct.slots]

    # -- arithmetic -------------------------------------------------------

    def _new(self, like: Ciphertext, slots: np.ndarray, depth: int) -> Ciphertext:
        return Ciphertext(self.backend_id, like.key_id, self.params, slots, depth, Freshness.EVALUATED)

    def _pair(self, a: Ciphertext, b: Ciphertext) -> None:
        self._check_ct(a)
        self._check_ct(b)
        if a.key_id != b.key_id:
            raise BackendMismatch("ciphertexts were encrypted under different keys")

    def add(self, a: Ciphertext, b: Operand) -> Ciphertext:
        self.counters.bump("ct_add")
        if isinstance(b, Ciphertext):
            self._pair(a, b)
            return self._new(a, kernels.add(a.slots, b.slots, self.q), max(a.depth, b.depth))
        self._check_ct(a)
        if isinstance(b, (int, np.integer, Scalar)):
            return self._new(a, kernels.add_scalar(a.slots, int(b) % self.q, self.q), a.depth)
        return self._new(a, kernels.add(a.slots, self.encode(b), self.q), a.depth)

    def sub(self, a: Ciphertext, b: Operand) -> Ciphertext:
        self.counters.bump("ct_add")
        if isinstance(b, Ciphertext):
            self._pair(a, b)
            return self._new(a, kernels.sub(a.slots, b.slots, self.q), max(a.depth, b.depth))
        self._check_ct(a)
        if isinstance(b, (int, np.integer, Scalar)):
            return self._new(a, kernels.add_scalar(a.slots, (-int(b)) % self.q, self.q), a.depth)
        return self._new(a, kernels.sub(a.slots, self.encode(b), self.q), a.depth)

    def rsub(self, a: Plain, b: Ciphertext) -> Ciphertext:
        """Plaintext minus ciphertext."""
        self.counters.bump("ct_add")
        self._check_ct(b)
        if isinstance(a, (int, np.integer, Scalar)):
            return self._new(b, kernels.rsub_scalar(int(a) % self.q, b.slots, self.q), b.depth)
        return self._new(b, kernels.sub(self.encode(a), b.slots, self.q), b.depth)

    def neg(self, a: Ciphertext) -> Ciphertext:
        return self.rsub(0, a)

    def mul(self, a: Ciphertext, b: Operand) -> Ciphertext:
        if isinstance(b, Ciphertext):
            self._pair(a, b)
            self.counters.bump("ct_mul")
            return self._new(a, kernels.mul(a.slots, b.slots, self.q), max(a.depth, b.depth) + 1)
        self._check_ct(a)
        self.counters.bump("pt_mul")
        if isinstance(b, (int, np.integer, Scalar)):
            return self._new(a, kernels.mul_scalar(a.slots, int(b) % self.q, self.q), a.depth)
        return self._new(a, kernels.mul(a.slots, self.encode(b), self.q), a.depth)

    def power(self, a: Ciphertext, e: int, *, complement: bool = False) -> Ciphertext:
        """``a**e`` slot-wise (``1 - a**e`` with ``complement``).

        Counted as one exponentiation; consumes ``ceil(log2 e)`` depth, the
        depth of a balanced square-and-multiply ladder.
        """
        if e < 0:
            raise ValueError("exponent must be non-negative")
        self._check_ct(a)
        self.counters.bump("exponentiations")
        out = kernels.power(a.slots, e, self.q)
        if complement:
            out = kernels.rsub_scalar(1, out, self.q)
        return self._new(a, out, a.depth + ceil_log2(e))

    def rotate(self, a: Ciphertext, k: int) -> Ciphertext:
        """Cyclic left rotation: slot ``i`` receives old slot ``i + k``."""
        self._check_ct(a)
        if a.key_id in self._no_rotation:
            raise MissingRotationKeys("public key was generated without rotation keys")
        self.counters.bump("rotations")
        return self._new(a, np.roll(a.slots, -k), a.depth)

    def slot_reduce(self, a: Ciphertext, op: str, width: int, stride: int = 1) -> Ciphertext:
        """Fold ``width`` slots spaced ``stride`` apart into the first of them.

        After the call slot ``j`` holds the fold of slots ``j, j+stride, ...,
        j+(width-1)*stride`` (cyclically). A product fold adds ``log2(width)``
        depth.
        """
        if width < 1 or width & (width - 1):
            raise ValueError("width must be a power of two")
        if width * stride > self.slot_count:
            raise SlotOverflow("fold span exceeds the slot count")
        if op not in ("sum", "product"):
            raise ValueError(f"unknown fold op {op!r}")
        step = stride
        while step < width * stride:
            rotated = self.rotate(a, step)
            a = self.add(a, rotated) if op == "sum" else self.mul(a, rotated)
            step *= 2
        return a

    def product_tree(self, cts: Sequence[Ciphertext]) -> Ciphertext:
        """Balanced product; ``len(cts) - 1`` multiplications."""
        if not cts:
            raise ValueError("empty product")
        layer = list(cts)
        while len(layer) > 1:
            nxt = [self.mul(layer[i], layer[i + 1]) for i in range(0, len(layer) - 1, 2)]
            if len(layer) % 2:
                nxt.append(layer[-1])
            layer = nxt
        return layer[0]

    def sum_all(self, pk: PublicKey, cts: Sequence[Ciphertext]) -> Ciphertext:
        """Sum starting from an encrypted zero; ``len(cts)`` additions."""
        acc = self.encrypt_constant(pk, 0)
        for c in cts:
            acc = self.add(acc, c)
        return acc

    def require_depth(self, ct: Ciphertext, extra: int, what: str) -> None:
        if ct.depth + extra > self.depth_budget:
            raise DepthUnavailable(
                f"{what} needs depth {ct.depth + extra} but the budget is {self.depth_budget}"
            )


class ClearRingBackend(ModelBackend):
    """Exact evaluation with unlimited depth; the correctness oracle."""

    kind = BackendKind.CLEAR_RING

    def __init__(self, params: HEParams):
        if not params.unbounded:
            params = HEParams(params.slot_count, params.modulus, UNBOUNDED_DEPTH,
                              params.profile_name, params.batching)
        super().__init__(params)

    def _validate_params(self) -> None:
        # NTT divisibility matters only for real batching; the clear ring
        # accepts it when asked for it and otherwise skips it.
        if self.params.batching:
            self.params.validate()


class DepthTrackedBackend(ModelBackend):
    """Batched model enforcing the depth budget at decryption time."""

    kind = BackendKind.DEPTH_TRACKED

    def __init__(self, params: HEParams):
        if params.unbounded:
            raise InvalidParams("the depth-tracked backend needs a finite depth budget")
        super().__init__(params)


def make_backend(kind: BackendKind | str, params: HEParams) -> ModelBackend:
    kind = BackendKind(kind)
    if kind is BackendKind.CLEAR_RING:
        return ClearRingBackend(params)
    if kind is BackendKind.DEPTH_TRACKED:
        return DepthTrackedBackend(params)
    raise InvalidParams("no RLWE library is bundled; implement pcm.he.rlwe.RlweAdapter")
