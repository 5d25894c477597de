"""Trace-driven simulation of faults, TLB lookups, monitoring and allocation.

A run replays page numbers through an abstract page table. The first touch of
an unmapped page is a fault: the configured policy picks a page size, the
buddy allocator supplies the frames (compacting once if it has to), and the
fault path is charged fastpath, zeroing and compaction cycles. Every access
then goes through the TLB and is charged a hit or a page walk.
"""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Sequence

import numpy as np

from .core import PAGE_SHIFT, AddrRange, PageSize, extent_of
from .monitor import Monitor, MonitorConfig, Snapshot
from .physmem import (PINNED, AllocFailure, CostParams, Pattern, PhysMemory,
                      compaction_cost, zeroing_cost)
from .policy import POLICIES, BenefitParams, FaultContext, Reason
from .profile import Profile, load_profile, profile_from_snapshot
from .tlb import Tlb, TlbConfig
from .trace import WorkloadSpec, gen_pages, read_trace, records_to_pages

log = logging.getLogger(__name__)

UNMAPPED = 0xFF
FRAGMENT_SEED_OFFSET = 1
MONITOR_SEED_OFFSET = 2


class SimError(Exception):
    pass


class ConfigError(SimError, ValueError):
    pass


class MismatchedWorkloads(SimError, ValueError):
    pass


@dataclass(frozen=True)
class FragmentParams:
    occupancy: float = 0.0
    pattern: Pattern = Pattern.SPREAD
    movable_fraction: float = 1.0


@dataclass(frozen=True)
class SimConfig:
    policy: str = "base4k"
    workload: WorkloadSpec | None = None
    trace_path: str | None = None
    vma: AddrRange | None = None
    mem_frames: int = 1 << 18
    fragment: FragmentParams = FragmentParams()
    tlb: TlbConfig = TlbConfig()
    monitor: MonitorConfig | None = None
    cost: CostParams = CostParams()
    benefit: BenefitParams | None = None
    profile: Profile | None = None
    profile_path: str | None = None
    rng_seed: int = 0
    report_path: str | None = None

    def validate(self) -> None:
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}")
        if (self.workload is None) == (self.trace_path is None):
            raise ConfigError("exactly one of workload and trace_path is required")
        if self.mem_frames < 1:
            raise ConfigError("mem_frames must be >= 1")
        if self.profile is not None and self.profile_path is not None:
            raise ConfigError("give a profile or a profile path, not both")

    @property
    def benefit_params(self) -> BenefitParams:
        if self.benefit is not None:
            return self.benefit
        return BenefitParams(walk_cycles=self.tlb.walk_cycles)

    def load_profile(self) -> Profile | None:
        if self.profile_path is not None:
            return load_profile(self.profile_path)
        return self.profile

    def resolve_vma(self) -> AddrRange:
        if self.vma is not None:
            return self.vma
        if self.workload is not None:
            return self.workload.extent
        lo = hi = None
        for rec in read_trace(self.trace_path):
            lo = rec.vaddr if lo is None else min(lo, rec.vaddr)
            hi = rec.vaddr if hi is None else max(hi, rec.vaddr)
        if lo is None:
            raise ConfigError(f"trace {self.trace_path} is empty and no vma given")
        page = 1 << PAGE_SHIFT
        return AddrRange(lo & ~(page - 1), (hi | (page - 1)) + 1)

    def pages(self) -> Iterator[np.ndarray]:
        if self.workload is not None:
            return gen_pages(self.workload)
        return records_to_pages(read_trace(self.trace_path))


SIZE_ORDER = tuple(PageSize)
REASON_ORDER = tuple(Reason)


def _by_size():
    return {s: 0 for s in SIZE_ORDER}


def _by_reason():
    return {r: 0 for r in REASON_ORDER}


@dataclass
class SimReport:
    policy: str = ""
    accesses: int = 0
    total_cycles: int = 0
    tlb_hits: int = 0
    tlb_misses: int = 0
    hit_cycles: int = 0
    walk_cycles: int = 0
    alloc_cycles: int = 0
    zero_cycles: int = 0
    compaction_cycles: int = 0
    compaction_events: int = 0
    frames_moved: int = 0
    page_faults: int = 0
    oom: bool = False
    faults_by_size: dict[PageSize, int] = field(default_factory=_by_size)
    bytes_mapped_by_size: dict[PageSize, int] = field(default_factory=_by_size)
    decision_reasons: dict[Reason, int] = field(default_factory=_by_reason)

    def ledger_total(self) -> int:
        return (self.hit_cycles + self.walk_cycles + self.alloc_cycles
                + self.zero_cycles + self.compaction_cycles)

    @property
    def huge_bytes(self) -> int:
        return sum(v for s, v in self.bytes_mapped_by_size.items()
                   if s is not PageSize.BASE_4K)

    def rows(self) -> list[tuple[str, object]]:
        out: list[tuple[str, object]] = [
            ("policy", self.policy),
            ("accesses", self.accesses),
            ("total_cycles", self.total_cycles),
            ("tlb_hits", self.tlb_hits),
            ("tlb_misses", self.tlb_misses),
            ("hit_cycles", self.hit_cycles),
            ("walk_cycles", self.walk_cycles),
            ("alloc_cycles", self.alloc_cycles),
            ("zero_cycles", self.zero_cycles),
            ("compaction_cycles", self.compaction_cycles),
            ("compaction_events", self.compaction_events),
            ("frames_moved", self.frames_moved),
            ("page_faults", self.page_faults),
            ("oom", int(self.oom)),
        ]
        out += [(f"faults_{s.label}", self.faults_by_size[s]) for s in SIZE_ORDER]
        out += [(f"bytes_{s.label}", self.bytes_mapped_by_size[s]) for s in SIZE_ORDER]
        out += [(f"reason_{r.value}", self.decision_reasons[r]) for r in REASON_ORDER]
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("key", "value"))
        w.writerows(self.rows())
        return buf.getvalue()

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "SimReport":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["key", "value"]:
            raise ValueError("missing key,value header")
        values = dict(rows[1:])
        rep = cls(policy=values.pop("policy"))
        for s in SIZE_ORDER:
            rep.faults_by_size[s] = int(values.pop(f"faults_{s.label}"))
            rep.bytes_mapped_by_size[s] = int(values.pop(f"bytes_{s.label}"))
        for r in REASON_ORDER:
            rep.decision_reasons[r] = int(values.pop(f"reason_{r.value}"))
        rep.oom = bool(int(values.pop("oom")))
        for key, val in values.items():
            setattr(rep, key, int(val))
        return rep


class Simulation:
    """One simulated process: VMA, page table, TLB, allocator and monitor."""

    def __init__(self, config: SimConfig):
        config.validate()
        self.config = config
        self.vma = config.resolve_vma()
        self.first_page = self.vma.start >> PAGE_SHIFT
        self.profile = config.load_profile()
        self.policy = POLICIES[config.policy]
        self.cost = config.cost
        self.benefit = config.benefit_params

        self.mem = PhysMemory(config.mem_frames)
        frag = config.fragment
        if frag.occupancy > 0:
            self.mem.fragment(frag.occupancy, frag.pattern, frag.movable_fraction,
                              seed=config.rng_seed + FRAGMENT_SEED_OFFSET)
        self.backdrop_pinned = {
            (b, o) for b, o in self.mem.allocated_blocks().items()
            if self.mem.state[b] == PINNED
        }
        self.tlb = Tlb(config.tlb)
        self.monitor = None
        if config.monitor is not None:
            self.monitor = Monitor(self.vma, config.monitor,
                                   seed=config.rng_seed + MONITOR_SEED_OFFSET)
        self.snapshot: Snapshot | None = None
        # aligned vaddr -> (size, frame base)
        self.mappings: dict[int, tuple[PageSize, int]] = {}
        # per-4KiB-page order of the covering mapping, UNMAPPED if none
        self.page_order = bytearray([UNMAPPED]) * self.vma.pages
        self.report = SimReport(policy=config.policy)

    # -- fault path ----------------------------------------------------------

    def fault_context(self, vaddr: int) -> FaultContext:
        return FaultContext(
            vaddr=vaddr,
            vma=self.vma,
            profile=self.profile,
            snapshot=self.snapshot,
            frag_probe=self.mem.has_free_block,
            compaction_estimate=self.mem.compaction_estimate,
            cost_params=self.cost,
            benefit_params=self.benefit,
        )

    def _allocate(self, size: PageSize) -> int | None:
        rep = self.report
        rep.alloc_cycles += self.cost.alloc_fastpath_cycles
        got = self.mem.alloc(size.order, movable=False)
        if got is AllocFailure.NEEDS_COMPACTION:
            outcome = self.mem.compact(size.order)
            rep.compaction_events += 1
            rep.frames_moved += outcome.moved_frames
            rep.compaction_cycles += compaction_cost(outcome.moved_frames, self.cost)
            if outcome.success:
                rep.alloc_cycles += self.cost.alloc_fastpath_cycles
                got = self.mem.alloc(size.order, movable=False)
        if isinstance(got, AllocFailure):
            return None
        return got

    def _extent_unmapped(self, lo: int, hi: int) -> bool:
        i0 = (lo >> PAGE_SHIFT) - self.first_page
        i1 = (hi >> PAGE_SHIFT) - self.first_page
        return self.page_order.count(UNMAPPED, i0, i1) == i1 - i0

    def handle_fault(self, page: int) -> int | None:
        """Map ``page``; return the order of the new mapping, None on OOM."""
        vaddr = page << PAGE_SHIFT
        decision = self.policy(self.fault_context(vaddr))
        size, reason = decision.size, decision.reason
        if size is not PageSize.BASE_4K:
            lo, hi = extent_of(vaddr, size)
            if not self.vma.covers(lo, hi):
                raise SimError(f"policy chose {size.label} extent outside the VMA")
            if not self._extent_unmapped(lo, hi):
                size, reason = PageSize.BASE_4K, Reason.FALLBACK_MAPPED
        frame = self._allocate(size)
        if frame is None and size is not PageSize.BASE_4K:
            size, reason = PageSize.BASE_4K, Reason.FALLBACK_ALLOC
            frame = self._allocate(size)
        if frame is None:
            self.report.oom = True
            return None
        order = int(size)
        frames = 1 << order
        self.mem.zero(frame, order)
        head = (page >> order) << order
        self.mappings[head << PAGE_SHIFT] = (size, frame)
        i0 = head - self.first_page
        self.page_order[i0:i0 + frames] = bytes([order]) * frames
        self.tlb.invalidate_extent(head, order)
        rep = self.report
        rep.zero_cycles += zeroing_cost(size, self.cost)
        rep.page_faults += 1
        rep.faults_by_size[size] += 1
        rep.bytes_mapped_by_size[size] += frames << PAGE_SHIFT
        rep.decision_reasons[reason] += 1
        return order

    # -- main loop -----------------------------------------------------------

    def run(self, chunks: Iterable[np.ndarray] | None = None) -> SimReport:
        if chunks is None:
            chunks = self.config.pages()
        first = self.first_page
        npages = self.vma.pages
        page_order = self.page_order
        fault = self.handle_fault
        tlb = self.tlb
        resident = tlb.resident
        capacity = tlb.config.entries
        misses = 0
        monitor = self.monitor
        watching = monitor is not None
        if watching:
            window = monitor.config.sampling_interval
            touched = bytearray(npages)
            clean = bytes(npages)
            touched_view = np.frombuffer(touched, dtype=np.uint8)
        left = window if watching else 0
        done = 0
        stopped = False
        for chunk in chunks:
            if len(chunk) and (chunk.min() < first or chunk.max() >= first + npages):
                bad = chunk[(chunk < first) | (chunk >= first + npages)][0]
                raise SimError(f"access to {int(bad) << PAGE_SHIFT:#x} outside {self.vma}")
            for page in chunk.tolist():
                i = page - first
                order = page_order[i]
                if order == UNMAPPED:
                    order = fault(page)
                    if order is None:
                        stopped = True
                        break
                # inlined Tlb.access_page; hits are derived from misses below
                key = ((page >> order) << 4) | order
                if key in resident:
                    resident.move_to_end(key)
                else:
                    misses += 1
                    resident[key] = None
                    if len(resident) > capacity:
                        resident.popitem(last=False)
                done += 1
                if watching:
                    touched[i] = 1
                    left -= 1
                    if left == 0:
                        snap = monitor.step(touched_view)
                        if snap is not None:
                            self.snapshot = snap
                        touched[:] = clean
                        left = window
            if stopped:
                break
        tlb.misses += misses
        tlb.hits += done - misses
        return self._finish(done)

    def _finish(self, accesses: int) -> SimReport:
        rep = self.report
        rep.accesses = accesses
        rep.tlb_hits = self.tlb.hits
        rep.tlb_misses = self.tlb.misses
        rep.hit_cycles = self.tlb.hit_cycles_total
        rep.walk_cycles = self.tlb.walk_cycles_total
        rep.total_cycles = rep.ledger_total()
        if rep.oom:
            log.info("%s run stopped on OOM after %d accesses", rep.policy, accesses)
        return rep

    def check_consistency(self) -> None:
        """Mapped blocks must be exactly the pinned blocks the run allocated."""
        pinned = {(b, o) for b, o in self.mem.allocated_blocks().items()
                  if self.mem.state[b] == PINNED}
        mapped = {(frame, size.order) for size, frame in self.mappings.values()}
        assert pinned - self.backdrop_pinned == mapped
        starts = sorted(self.mappings)
        for a, b in zip(starts, starts[1:]):
            assert a + self.mappings[a][0].bytes <= b, "overlapping mappings"


def sim_run(config: SimConfig) -> SimReport:
    report = Simulation(config).run()
    if config.report_path is not None:
        report.write(config.report_path)
    return report


# -- comparisons ---------------------------------------------------------------

RATIO_KEYS = ("total_cycles", "tlb_misses", "page_faults", "huge_bytes")


def _ratio(num: float, den: float) -> float:
    if den == 0:
        return 1.0 if num == 0 else float("inf")
    return num / den


@dataclass
class ComparisonTable:
    reports: list[SimReport]

    def ratios(self, i: int) -> dict[str, float]:
        base, rep = self.reports[0], self.reports[i]
        return {k: _ratio(getattr(rep, k), getattr(base, k)) for k in RATIO_KEYS}

    def header(self) -> list[str]:
        keys = [k for k, _ in self.reports[0].rows()]
        return keys + [f"ratio_{k}" for k in RATIO_KEYS]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        for i, rep in enumerate(self.reports):
            ratios = self.ratios(i)
            w.writerow([v for _, v in rep.rows()]
                       + [f"{ratios[k]:.6f}" for k in RATIO_KEYS])
        return buf.getvalue()

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())


def _shared_key(c: SimConfig):
    return (c.workload, c.trace_path, c.rng_seed, c.mem_frames, c.fragment,
            c.resolve_vma() if c.trace_path is None else c.vma)


def sim_compare(configs: Sequence[SimConfig], jobs: int = 1) -> ComparisonTable:
    """Run configs sharing one workload and memory setup; rows keep input order."""
    if not configs:
        raise ConfigError("nothing to compare")
    key = _shared_key(configs[0])
    for c in configs[1:]:
        if _shared_key(c) != key:
            raise MismatchedWorkloads(
                f"config for {c.policy!r} differs in workload, seed or memory")
    runs = [replace(c, report_path=None) for c in configs]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(sim_run, runs))
    else:
        reports = [sim_run(c) for c in runs]
    return ComparisonTable(reports)


# -- monitoring-only pass -------------------------------------------------------

def monitor_pages(chunks: Iterable[np.ndarray], extent: AddrRange,
                  config: MonitorConfig, seed: int) -> tuple[Monitor, list[Snapshot]]:
    """Feed a trace to a fresh monitor without simulating translation.

    Windows are cut every ``sampling_interval`` accesses across chunk
    boundaries, exactly as :meth:`Simulation.run` does.
    """
    monitor = Monitor(extent, config, seed=seed)
    first = extent.start >> PAGE_SHIFT
    npages = extent.pages
    window = config.sampling_interval
    mask = np.zeros(npages, dtype=bool)
    snapshots = []
    left = window
    for chunk in chunks:
        idx = chunk - first
        if len(idx) and (idx.min() < 0 or idx.max() >= npages):
            raise SimError(f"trace leaves the monitored extent {extent}")
        pos = 0
        while pos < len(idx):
            take = min(left, len(idx) - pos)
            mask[idx[pos:pos + take]] = True
            pos += take
            left -= take
            if left == 0:
                snap = monitor.step(mask)
                if snap is not None:
                    snapshots.append(snap)
                mask[:] = False
                left = window
    return monitor, snapshots


def profile_workload(config: SimConfig, hot_threshold: float,
                     weights: dict[PageSize, float], name: str = "profile"):
    """Monitor ``config``'s workload and turn the last snapshot into a profile.

    Returns ``(profile, snapshot)``. When the trace is too short for a single
    aggregation the partial window counts are used instead.
    """
    if config.monitor is None:
        raise ConfigError("profiling needs a monitor configuration")
    monitor, snaps = monitor_pages(config.pages(), config.resolve_vma(),
                                   config.monitor,
                                   config.rng_seed + MONITOR_SEED_OFFSET)
    snap = snaps[-1] if snaps else monitor.partial_snapshot()
    if snap is None:
        raise SimError("trace shorter than one sampling window")
    return profile_from_snapshot(snap, hot_threshold, weights, name), snap
