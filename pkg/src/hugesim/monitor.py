"""Region-based access monitoring in the style of Linux DAMON.

The monitored extent is tiled by regions. Every sampling window each region
checks one randomly chosen page against the set of pages touched in that
window. After ``aggregation_interval`` windows the per-region counts are
frozen into a :class:`Snapshot`, similar neighbours are merged, survivors are
split at random points, and the counts restart from zero.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .core import PAGE_SHIFT, AddrRange, PageSize, align_down


class AddressOutsideExtent(ValueError):
    pass


@dataclass(frozen=True)
class MonitorConfig:
    sampling_interval: int = 1000
    aggregation_interval: int = 20
    min_regions: int = 10
    max_regions: int = 500
    merge_threshold: int = 2

    def __post_init__(self):
        if self.sampling_interval < 1 or self.aggregation_interval < 1:
            raise ValueError("monitor intervals must be >= 1")
        if self.min_regions < 1:
            raise ValueError("min_regions must be >= 1")
        if self.max_regions < self.min_regions:
            raise ValueError("max_regions must be >= min_regions")
        if self.merge_threshold < 0:
            raise ValueError("merge_threshold must be >= 0")


@dataclass(frozen=True)
class Region:
    start: int
    end: int
    nr_accesses: int = 0
    age: int = 0

    @property
    def range(self) -> AddrRange:
        return AddrRange(self.start, self.end)

    @property
    def size(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class Snapshot:
    taken_at: int
    regions: tuple[Region, ...]
    max_accesses: int

    @property
    def extent(self) -> AddrRange:
        return AddrRange(self.regions[0].start, self.regions[-1].end)

    def frequency(self, region: Region) -> float:
        return region.nr_accesses / self.max_accesses


def check_tiling(regions) -> None:
    assert regions, "no regions"
    for r in regions:
        assert r.start < r.end, f"empty region [{r.start:#x}, {r.end:#x})"
    for a, b in zip(regions, regions[1:]):
        assert a.end == b.start, f"gap or overlap at {a.end:#x}/{b.start:#x}"


def access_frequency(snapshot: Snapshot, addr: int,
                     granularity: PageSize) -> float:
    """Byte-weighted mean access frequency of the ``granularity`` block at addr."""
    extent = snapshot.extent
    if not extent.contains(addr):
        raise AddressOutsideExtent(f"{addr:#x} outside monitored {extent}")
    lo = align_down(addr, granularity)
    hi = lo + granularity.bytes
    regions = snapshot.regions
    starts = [r.start for r in regions]
    i = max(0, np.searchsorted(starts, lo, side="right") - 1)
    total = 0
    weighted = 0.0
    while i < len(regions) and regions[i].start < hi:
        r = regions[i]
        overlap = min(hi, r.end) - max(lo, r.start)
        if overlap > 0:
            total += overlap
            weighted += overlap * r.nr_accesses
        i += 1
    return weighted / total / snapshot.max_accesses


class Monitor:
    """Adaptive region monitor over one address extent."""

    def __init__(self, extent: AddrRange, config: MonitorConfig = MonitorConfig(),
                 seed: int = 0):
        self.extent = extent
        self.config = config
        self.rng = np.random.default_rng(seed)
        self.first_page = extent.start >> PAGE_SHIFT
        npages = extent.pages
        if npages < config.min_regions:
            raise ValueError("extent smaller than min_regions pages")
        edges = [self.first_page + npages * i // config.min_regions
                 for i in range(config.min_regions + 1)]
        self._starts = np.array(edges[:-1], dtype=np.int64)
        self._ends = np.array(edges[1:], dtype=np.int64)
        n = len(self._starts)
        self._nr = np.zeros(n, dtype=np.int64)
        self._last_nr = np.zeros(n, dtype=np.int64)
        self._age = np.zeros(n, dtype=np.int64)
        self.ticks = 0
        self._window_ticks = 0
        self.snapshots_taken = 0

    def __len__(self):
        return len(self._starts)

    @property
    def regions(self) -> list[Region]:
        return [
            Region(s << PAGE_SHIFT, e << PAGE_SHIFT, nr, age)
            for s, e, nr, age in zip(self._starts.tolist(), self._ends.tolist(),
                                     self._nr.tolist(), self._age.tolist())
        ]

    def feed(self, touched: Iterable[int]) -> None:
        """One sampling window; ``touched`` holds virtual addresses."""
        mask = np.zeros(self.extent.pages, dtype=bool)
        idx = np.fromiter((a >> PAGE_SHIFT for a in touched), dtype=np.int64)
        idx -= self.first_page
        if idx.size and (idx.min() < 0 or idx.max() >= mask.size):
            raise AddressOutsideExtent("touched page outside monitored extent")
        mask[idx] = True
        self.feed_mask(mask)

    def feed_mask(self, mask: np.ndarray) -> None:
        """One sampling window given a per-page touched mask over the extent."""
        width = self._ends - self._starts
        picks = self._starts + np.floor(
            self.rng.random(len(width)) * width).astype(np.int64)
        self._nr += mask[picks - self.first_page] != 0
        self.ticks += 1
        self._window_ticks += 1

    @property
    def due(self) -> bool:
        return self._window_ticks >= self.config.aggregation_interval

    def snapshot(self) -> Snapshot:
        return Snapshot(self.ticks, tuple(self.regions),
                        self.config.aggregation_interval)

    def partial_snapshot(self) -> Snapshot | None:
        """Counts so far, scaled to the windows seen since the last aggregation."""
        if self._window_ticks == 0:
            return None
        return Snapshot(self.ticks, tuple(self.regions), self._window_ticks)

    def aggregate(self) -> Snapshot:
        snap = self.snapshot()
        self._merge()
        self._split()
        self._last_nr = self._nr.copy()
        self._nr[:] = 0
        self._window_ticks = 0
        self.snapshots_taken += 1
        return snap

    def _merge(self):
        cfg = self.config
        total = self.extent.pages
        size_limit = max(1, total // cfg.min_regions)
        thres = cfg.merge_threshold
        changed = np.abs(self._nr - self._last_nr) > thres
        self._age = np.where(changed, 0, self._age + 1)
        while True:
            merged = self._merge_pass(thres, size_limit)
            if merged <= cfg.max_regions or thres >= cfg.aggregation_interval:
                break
            thres = max(1, thres * 2)

    def _merge_pass(self, thres, size_limit):
        starts, ends = self._starts.tolist(), self._ends.tolist()
        nrs, ages = self._nr.tolist(), self._age.tolist()
        out_s, out_e, out_nr, out_age = [], [], [], []
        for s, e, nr, age in zip(starts, ends, nrs, ages):
            if out_s and abs(out_nr[-1] - nr) <= thres \
                    and out_e[-1] - out_s[-1] + e - s <= size_limit:
                psz, sz = out_e[-1] - out_s[-1], e - s
                out_nr[-1] = (out_nr[-1] * psz + nr * sz) // (psz + sz)
                out_age[-1] = (out_age[-1] * psz + age * sz) // (psz + sz)
                out_e[-1] = e
            else:
                out_s.append(s)
                out_e.append(e)
                out_nr.append(nr)
                out_age.append(age)
        self._starts = np.array(out_s, dtype=np.int64)
        self._ends = np.array(out_e, dtype=np.int64)
        self._nr = np.array(out_nr, dtype=np.int64)
        self._age = np.array(out_age, dtype=np.int64)
        return len(out_s)

    def _split(self):
        n = len(self._starts)
        cfg = self.config
        if n > cfg.max_regions // 2:
            return
        pieces = 3 if n * 3 <= cfg.max_regions and self.rng.random() < 0.5 else 2
        out_s, out_e, out_nr, out_age = [], [], [], []
        for s, e, nr, age in zip(self._starts.tolist(), self._ends.tolist(),
                                 self._nr.tolist(), self._age.tolist()):
            cuts = []
            left = e
            for _ in range(pieces - 1):
                width = left - s
                if width < 2:
                    break
                # cut at a random tenth, at least one page from either end
                at = s + max(1, min(width - 1, width * int(self.rng.integers(1, 10)) // 10))
                cuts.append(at)
                left = at
            bounds = [s] + sorted(cuts) + [e]
            for a, b in zip(bounds, bounds[1:]):
                out_s.append(a)
                out_e.append(b)
                out_nr.append(nr)
                out_age.append(age)
        self._starts = np.array(out_s, dtype=np.int64)
        self._ends = np.array(out_e, dtype=np.int64)
        self._nr = np.array(out_nr, dtype=np.int64)
        self._age = np.array(out_age, dtype=np.int64)

    def step(self, mask: np.ndarray) -> Snapshot | None:
        """Feed one window; aggregate and return a snapshot when one is due."""
        self.feed_mask(mask)
        if self.due:
            return self.aggregate()
        return None


# -- snapshot CSV -------------------------------------------------------------

SNAPSHOT_HEADER = ("start_hex", "end_hex", "nr_accesses", "age")


def format_snapshot(snapshot: Snapshot) -> str:
    out = io.StringIO()
    out.write(f"# taken_at={snapshot.taken_at} max_accesses={snapshot.max_accesses}\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(SNAPSHOT_HEADER)
    for r in snapshot.regions:
        w.writerow((f"{r.start:#x}", f"{r.end:#x}", r.nr_accesses, r.age))
    return out.getvalue()


def write_snapshot(path, snapshot: Snapshot) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_snapshot(snapshot))


def parse_snapshot(text: str) -> Snapshot:
    taken_at, max_accesses = 0, None
    rows = []
    for line in text.splitlines():
        if line.startswith("#"):
            for tok in line[1:].split():
                key, _, val = tok.partition("=")
                if key == "taken_at":
                    taken_at = int(val)
                elif key == "max_accesses":
                    max_accesses = int(val)
            continue
        if line.strip():
            rows.append(line)
    reader = csv.reader(rows)
    header = next(reader, None)
    if tuple(header or ()) != SNAPSHOT_HEADER:
        raise ValueError(f"bad snapshot header {header!r}")
    regions = tuple(Region(int(s, 16), int(e, 16), int(nr), int(age))
                    for s, e, nr, age in reader)
    check_tiling(regions)
    if max_accesses is None:
        raise ValueError("snapshot is missing max_accesses")
    return Snapshot(taken_at, regions, max_accesses)


def read_snapshot(path) -> Snapshot:
    with open(path, encoding="utf-8") as fh:
        return parse_snapshot(fh.read())
