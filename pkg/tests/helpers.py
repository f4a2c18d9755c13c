from pcm.he.backend import ClearRingBackend, DepthTrackedBackend
from pcm.he.params import PROFILES, scalar_params
from pcm.ring import Rng


def clear_keys(q: int = 1009, seed: int = 0, slot_count: int = 1):
    he = ClearRingBackend(scalar_params(q, slot_count=slot_count))
    kp = he.keygen(Rng(seed))
    return he, kp.public_key, kp.secret_key


def profile_keys(name: str = "P8k", seed: int = 0):
    he = DepthTrackedBackend(PROFILES[name])
    kp = he.keygen(Rng(seed))
    return he, kp.public_key, kp.secret_key
