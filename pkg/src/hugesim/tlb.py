"""Fully associative LRU TLB holding entries of mixed page sizes."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

from .core import ORDERS, PAGE_SHIFT, AddrRange, PageSize


@dataclass(frozen=True)
class TlbConfig:
    entries: int = 64
    walk_cycles: int = 200
    hit_cycles: int = 0

    def __post_init__(self):
        if self.entries < 1:
            raise ValueError("TLB needs at least one entry")
        if not self.walk_cycles > self.hit_cycles >= 0:
            raise ValueError("need walk_cycles > hit_cycles >= 0")


class Tlb:
    def __init__(self, config: TlbConfig = TlbConfig()):
        self.config = config
        self.resident: OrderedDict[int, None] = OrderedDict()
        self.hits = 0
        self.misses = 0

    @property
    def walk_cycles_total(self) -> int:
        return self.misses * self.config.walk_cycles

    @property
    def hit_cycles_total(self) -> int:
        return self.hits * self.config.hit_cycles

    def access(self, vaddr: int, mapped_size: PageSize) -> bool:
        """Translate ``vaddr`` mapped at ``mapped_size``; True on a hit."""
        return self.access_page(vaddr >> PAGE_SHIFT, mapped_size.order)

    def access_page(self, page: int, order: int) -> bool:
        key = ((page >> order) << 4) | order
        resident = self.resident
        if key in resident:
            resident.move_to_end(key)
            self.hits += 1
            return True
        self.misses += 1
        resident[key] = None
        if len(resident) > self.config.entries:
            resident.popitem(last=False)
        return False

    def invalidate_range(self, r: AddrRange | tuple[int, int]) -> int:
        """Drop every entry whose coverage intersects ``r``; return the count."""
        start, end = (r.start, r.end) if isinstance(r, AddrRange) else r
        doomed = []
        for key in self.resident:
            order = key & 0xF
            tag = (key >> 4) << (order + PAGE_SHIFT)
            if tag < end and start < tag + (1 << (order + PAGE_SHIFT)):
                doomed.append(key)
        for key in doomed:
            del self.resident[key]
        return len(doomed)

    def invalidate_extent(self, page: int, order: int) -> int:
        """Drop entries intersecting the naturally aligned 2**order page block.

        Two aligned power-of-two blocks intersect only if one contains the
        other, so larger entries are found by key and smaller ones by scan.
        """
        resident = self.resident
        dropped = 0
        for o in ORDERS:
            if o >= order:
                key = ((page >> o) << 4) | o
                if key in resident:
                    del resident[key]
                    dropped += 1
        if order > 0:
            lo = page >> order
            doomed = [k for k in resident
                      if (k & 0xF) < order and (k >> 4) >> (order - (k & 0xF)) == lo]
            for key in doomed:
                del resident[key]
            dropped += len(doomed)
        return dropped

    def entries(self) -> list[tuple[int, PageSize]]:
        """Resident ``(tag, size)`` pairs, least recently used first."""
        out = []
        for key in self.resident:
            order = key & 0xF
            out.append(((key >> 4) << (order + PAGE_SHIFT), PageSize(order)))
        return out

    def flush(self) -> None:
        self.resident.clear()
