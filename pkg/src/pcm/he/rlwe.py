"""Adapter surface for a real lattice (RLWE/BFV) library.

The protocol layers only touch a backend through the methods below, with the
same signatures as :class:`pcm.he.backend.ModelBackend`. A binding to an
actual BFV implementation subclasses :class:`RlweAdapter`, maps these calls
onto the library, and defines its own opaque ciphertext payload for the wire.
Nothing in this package ships such a binding.
"""
from __future__ import annotations

import abc
from typing import Sequence

from pcm.he.backend import BackendKind, Ciphertext, CostSnapshot, DecryptFailure, KeyPair, PublicKey, SecretKey
from pcm.he.params import HEParams
from pcm.ring import Rng


class RlweAdapter(abc.ABC):
    kind = BackendKind.RLWE_ADAPTER

    def __init__(self, params: HEParams):
        self.params = params.validate()

    @property
    def backend_id(self) -> str:
        return self.kind.value

    @abc.abstractmethod
    def keygen(self, rng: Rng | None = None, *, rotations: bool = True, relin: bool = True) -> KeyPair: ...

    @abc.abstractmethod
    def encrypt(self, pk: PublicKey, values) -> Ciphertext: ...

    @abc.abstractmethod
    def encrypt_constant(self, pk: PublicKey, value: int = 0) -> Ciphertext: ...

    @abc.abstractmethod
    def decrypt(self, sk: SecretKey, ct: Ciphertext) -> list[int] | DecryptFailure: ...

    @abc.abstractmethod
    def add(self, a: Ciphertext, b) -> Ciphertext: ...

    @abc.abstractmethod
    def sub(self, a: Ciphertext, b) -> Ciphertext: ...

    @abc.abstractmethod
    def rsub(self, a, b: Ciphertext) -> Ciphertext: ...

    @abc.abstractmethod
    def mul(self, a: Ciphertext, b) -> Ciphertext: ...

    @abc.abstractmethod
    def power(self, a: Ciphertext, e: int, *, complement: bool = False) -> Ciphertext: ...

    @abc.abstractmethod
    def rotate(self, a: Ciphertext, k: int) -> Ciphertext: ...

    @abc.abstractmethod
    def slot_reduce(self, a: Ciphertext, op: str, width: int, stride: int = 1) -> Ciphertext: ...

    @abc.abstractmethod
    def product_tree(self, cts: Sequence[Ciphertext]) -> Ciphertext: ...

    @abc.abstractmethod
    def cost_counters(self) -> CostSnapshot: ...

    @abc.abstractmethod
    def serialize_ciphertext(self, ct: Ciphertext) -> bytes: ...

    @abc.abstractmethod
    def deserialize_ciphertext(self, data: bytes) -> Ciphertext: ...
