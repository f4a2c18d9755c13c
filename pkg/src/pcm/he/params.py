"""Parameter sets for the homomorphic backends."""
from __future__ import annotations

from dataclasses import dataclass

from pcm.errors import InvalidParams
from pcm.ring import PrimeModulus

# Stand-in for "no depth limit" (the clear-ring backend never runs out).
UNBOUNDED_DEPTH = 2**31 - 1


@dataclass(frozen=True)
class HEParams:
    """Slot count, plaintext modulus and multiplicative depth budget.

    ``batching`` marks parameter sets whose slots come from an NTT
    decomposition; those need ``2 * slot_count`` to divide ``q - 1``.
    """

    slot_count: int
    modulus: PrimeModulus
    depth_budget: int = UNBOUNDED_DEPTH
    profile_name: str = "custom"
    batching: bool = True

    def __post_init__(self):
        if isinstance(self.modulus, int):
            object.__setattr__(self, "modulus", PrimeModulus(self.modulus))
        if self.slot_count < 1:
            raise InvalidParams("slot_count must be positive")
        if self.depth_budget < 0:
            raise InvalidParams("depth_budget must be non-negative")

    @property
    def q(self) -> int:
        return self.modulus.q

    @property
    def unbounded(self) -> bool:
        return self.depth_budget >= UNBOUNDED_DEPTH

    def validate(self) -> "HEParams":
        """Raise :class:`InvalidParams` unless the set is usable for keygen."""
        if self.batching:
            n = self.slot_count
            if n & (n - 1):
                raise InvalidParams(f"batched slot_count must be a power of two, got {n}")
            if (self.q - 1) % (2 * n):
                raise InvalidParams(
                    f"2*slot_count={2 * n} does not divide q-1={self.q - 1}; no NTT batching"
                )
        return self

    def describe(self) -> dict:
        return {
            "profile": self.profile_name,
            "slot_count": self.slot_count,
            "modulus": self.q,
            "depth_budget": None if self.unbounded else self.depth_budget,
            "batching": self.batching,
        }

    @classmethod
    def from_description(cls, d: dict) -> "HEParams":
        budget = d.get("depth_budget")
        return cls(
            slot_count=int(d["slot_count"]),
            modulus=PrimeModulus(int(d["modulus"])),
            depth_budget=UNBOUNDED_DEPTH if budget is None else int(budget),
            profile_name=str(d.get("profile", "custom")),
            batching=bool(d.get("batching", True)),
        )


PROFILES: dict[str, HEParams] = {
    "P8k": HEParams(8192, PrimeModulus(4079617), 2, "P8k"),
    "P16k": HEParams(16384, PrimeModulus(163841), 7, "P16k"),
    "P32k": HEParams(32768, PrimeModulus(786433), 16, "P32k"),
}


def profile(name: str) -> HEParams:
    try:
        return PROFILES[name]
    except KeyError:
        raise InvalidParams(f"unknown profile {name!r}; known: {sorted(PROFILES)}") from None


def scalar_params(q: int, *, slot_count: int = 1, depth_budget: int = UNBOUNDED_DEPTH) -> HEParams:
    """Unbatched parameters for one-value-per-ciphertext evaluation."""
    return HEParams(slot_count, PrimeModulus(q), depth_budget, f"scalar-q{q}", batching=False)
