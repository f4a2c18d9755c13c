"""Homomorphic backend contract and model implementations."""
from pcm.he.backend import (
    BackendKind,
    Ciphertext,
    ClearRingBackend,
    CostSnapshot,
    DecryptFailure,
    DepthTrackedBackend,
    Freshness,
    KeyPair,
    ModelBackend,
    PublicKey,
    SecretKey,
    make_backend,
)
from pcm.he.params import PROFILES, UNBOUNDED_DEPTH, HEParams, profile, scalar_params

__all__ = [
    "BackendKind",
    "Ciphertext",
    "ClearRingBackend",
    "CostSnapshot",
    "DecryptFailure",
    "DepthTrackedBackend",
    "Freshness",
    "HEParams",
    "KeyPair",
    "ModelBackend",
    "PROFILES",
    "PublicKey",
    "SecretKey",
    "UNBOUNDED_DEPTH",
    "make_backend",
    "profile",
    "scalar_params",
]
