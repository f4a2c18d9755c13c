"""Assignment of server sets to ciphertext lanes."""
from __future__ import annotations

from dataclasses import dataclass

from pcm.engine.replication import next_pow2
from pcm.errors import CapacityExceeded


@dataclass(frozen=True)
class PackingPlan:
    n_sets: int
    lane_width: int
    lanes_per_ct: int
    lanes_per_set: int = 1

    @property
    def sets_per_ct(self) -> int:
        return self.lanes_per_ct // self.lanes_per_set

    @property
    def n_groups(self) -> int:
        return -(-self.n_sets // self.sets_per_ct) if self.n_sets else 0

    def locate(self, j: int) -> tuple[int, int]:
        """(ciphertext group, first lane) of set ``j``."""
        g, r = divmod(j, self.sets_per_ct)
        return g, r * self.lanes_per_set

    def group(self, g: int) -> range:
        start = g * self.sets_per_ct
        return range(start, min(self.n_sets, start + self.sets_per_ct))


def pack_server_sets(n_sets: int, width: int, slot_count: int, *, lanes_per_set: int = 1,
                     lane_width: int | None = None) -> PackingPlan:
    """Lanes are ``width`` rounded up to a power of two; one set per lane."""
    lw = lane_width or next_pow2(width)
    if lw < width or lw & (lw - 1):
        raise CapacityExceeded(f"lane width {lw} cannot hold {width} slots")
    if lw > slot_count:
        raise CapacityExceeded(f"a {lw}-slot lane does not fit in {slot_count} slots")
    lanes = slot_count // lw
    if lanes_per_set > lanes:
        raise CapacityExceeded(f"{lanes_per_set} lanes per set exceed {lanes} lanes per ciphertext")
    return PackingPlan(n_sets, lw, lanes, lanes_per_set)
