"""Page sizes, addresses and address ranges shared by the whole simulator."""

from __future__ import annotations

import enum
from dataclasses import dataclass

PAGE_SHIFT = 12
BASE_PAGE = 1 << PAGE_SHIFT
ADDR_BITS = 48
ADDR_LIMIT = 1 << ADDR_BITS

KiB = 1 << 10
MiB = 1 << 20
GiB = 1 << 30


class PageSize(enum.IntEnum):
    """Translation granularities, valued by buddy order (log2 of 4KiB frames)."""

    BASE_4K = 0
    HUGE_64K = 4
    HUGE_2M = 9
    HUGE_32M = 13

    @property
    def order(self) -> int:
        return int(self)

    @property
    def bytes(self) -> int:
        return BASE_PAGE << int(self)

    @property
    def frames(self) -> int:
        return 1 << int(self)

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def from_label(cls, label: str) -> "PageSize":
        try:
            return _BY_LABEL[label.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown page size {label!r}") from None

    @classmethod
    def from_order(cls, order: int) -> "PageSize":
        return cls(order)


_LABELS = {
    PageSize.BASE_4K: "4K",
    PageSize.HUGE_64K: "64K",
    PageSize.HUGE_2M: "2M",
    PageSize.HUGE_32M: "32M",
}
_BY_LABEL = {v: k for k, v in _LABELS.items()}

HUGE_SIZES = (PageSize.HUGE_64K, PageSize.HUGE_2M, PageSize.HUGE_32M)
ORDERS = tuple(int(s) for s in PageSize)


def check_vaddr(addr: int) -> int:
    if not 0 <= addr < ADDR_LIMIT:
        raise ValueError(f"address {addr:#x} outside the 48-bit address space")
    return addr


def align_down(addr: int, size: PageSize) -> int:
    return addr & ~(size.bytes - 1)


def align_up(addr: int, size: PageSize) -> int:
    mask = size.bytes - 1
    return (addr + mask) & ~mask


def is_aligned(addr: int, size: PageSize) -> bool:
    return addr & (size.bytes - 1) == 0


@dataclass(frozen=True, order=True)
class AddrRange:
    """Half-open byte range ``[start, end)`` on 4KiB boundaries."""

    start: int
    end: int

    def __post_init__(self):
        if not 0 <= self.start < self.end <= ADDR_LIMIT:
            raise ValueError(f"invalid range [{self.start:#x}, {self.end:#x})")
        if self.start % BASE_PAGE or self.end % BASE_PAGE:
            raise ValueError(
                f"range [{self.start:#x}, {self.end:#x}) is not 4KiB aligned"
            )

    @property
    def size(self) -> int:
        return self.end - self.start

    @property
    def pages(self) -> int:
        return self.size >> PAGE_SHIFT

    def contains(self, addr: int) -> bool:
        return self.start <= addr < self.end

    def covers(self, start: int, end: int) -> bool:
        return self.start <= start and end <= self.end

    def intersects(self, start: int, end: int) -> bool:
        return start < self.end and self.start < end

    def overlap_bytes(self, start: int, end: int) -> int:
        return max(0, min(end, self.end) - max(start, self.start))

    def __str__(self):
        return f"[{self.start:#x}, {self.end:#x})"


def range_contains(r: AddrRange, addr: int) -> bool:
    return r.contains(addr)


def extent_of(addr: int, size: PageSize) -> tuple[int, int]:
    """Naturally aligned extent of ``size`` containing ``addr``."""
    start = align_down(addr, size)
    return start, start + size.bytes


def parse_size(text: str) -> int:
    """Parse a byte count such as ``4096``, ``0x1000``, ``64K``, ``640MiB``."""
    s = text.strip().replace("_", "")
    units = {
        "GIB": GiB, "GB": GiB, "G": GiB,
        "MIB": MiB, "MB": MiB, "M": MiB,
        "KIB": KiB, "KB": KiB, "K": KiB,
    }
    upper = s.upper()
    if not upper.startswith("0X"):
        for suffix, mult in units.items():
            if upper.endswith(suffix):
                return int(s[: -len(suffix)], 0) * mult
    return int(s, 0)
