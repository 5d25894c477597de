"""Synthetic access-trace generation and the ``seq,vaddr,R|W`` trace format.

Generators work on numpy page-number arrays in fixed-size chunks so that a
10^7 access trace never has to be materialised as Python objects. The
record-level API (:func:`gen_trace`, :func:`read_trace`, :func:`write_trace`)
is built on top of the chunked one.
"""

from __future__ import annotations

import enum
import gzip
import io
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .core import ADDR_LIMIT, BASE_PAGE, PAGE_SHIFT, AddrRange

CHUNK = 1 << 16


class InvalidSpec(ValueError):
    pass


class ParseError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


class AccessKind(enum.Enum):
    READ = "R"
    WRITE = "W"


@dataclass(frozen=True)
class AccessRecord:
    seq: int
    vaddr: int
    kind: AccessKind = AccessKind.READ


class WorkloadKind(enum.Enum):
    SEQUENTIAL = "sequential"
    UNIFORM = "uniform"
    HOTSPOT = "hotspot"
    POINTER_CHASE = "pointer-chase"


@dataclass(frozen=True)
class WorkloadSpec:
    """Parameters for one synthetic workload.

    ``base``/``length_bytes`` bound sequential, uniform and pointer-chase
    traces. Hotspot traces ignore them and draw from ``hot_ranges`` instead.
    ``passes`` applies to sequential scans, ``access_count`` to the rest.
    """

    kind: WorkloadKind
    base: int = 0
    length_bytes: int = 0
    passes: int = 1
    stride: int = BASE_PAGE
    access_count: int = 0
    hot_ranges: tuple[tuple[AddrRange, float], ...] = field(default_factory=tuple)
    rng_seed: int = 0

    def validate(self) -> None:
        if self.kind is WorkloadKind.HOTSPOT:
            if not self.hot_ranges:
                raise InvalidSpec("hotspot workload needs at least one range")
            ranges = sorted(r for r, _ in self.hot_ranges)
            for prev, cur in zip(ranges, ranges[1:]):
                if cur.start < prev.end:
                    raise InvalidSpec(f"hot ranges {prev} and {cur} overlap")
            for r, w in self.hot_ranges:
                if not w > 0:
                    raise InvalidSpec(f"weight of {r} must be positive, got {w}")
            if self.access_count < 0:
                raise InvalidSpec("access_count must be non-negative")
            return
        if self.length_bytes <= 0:
            raise InvalidSpec("length_bytes must be positive")
        if self.base % BASE_PAGE or self.length_bytes % BASE_PAGE:
            raise InvalidSpec("base and length must be 4KiB aligned")
        if self.base + self.length_bytes > ADDR_LIMIT:
            raise InvalidSpec("workload extends past the 48-bit address space")
        if self.kind is WorkloadKind.SEQUENTIAL:
            if self.stride <= 0 or self.stride % BASE_PAGE:
                raise InvalidSpec("stride must be a positive multiple of 4KiB")
            if self.passes < 0:
                raise InvalidSpec("passes must be non-negative")
        elif self.access_count < 0:
            raise InvalidSpec("access_count must be non-negative")

    @property
    def extent(self) -> AddrRange:
        """Smallest range containing every address the workload can emit."""
        if self.kind is WorkloadKind.HOTSPOT:
            return AddrRange(
                min(r.start for r, _ in self.hot_ranges),
                max(r.end for r, _ in self.hot_ranges),
            )
        return AddrRange(self.base, self.base + self.length_bytes)

    @property
    def total_accesses(self) -> int:
        if self.kind is WorkloadKind.SEQUENTIAL:
            return self.passes * len(range(0, self.length_bytes, self.stride))
        return self.access_count


def gen_pages(spec: WorkloadSpec, chunk: int = CHUNK) -> Iterator[np.ndarray]:
    """Yield int64 arrays of 4KiB page numbers (vaddr >> 12) in trace order."""
    spec.validate()
    if spec.kind is WorkloadKind.SEQUENTIAL:
        yield from _sequential(spec, chunk)
    elif spec.kind is WorkloadKind.UNIFORM:
        yield from _uniform(spec, chunk)
    elif spec.kind is WorkloadKind.HOTSPOT:
        yield from _hotspot(spec, chunk)
    else:
        yield from _pointer_chase(spec, chunk)


def _sequential(spec, chunk):
    first = spec.base >> PAGE_SHIFT
    step = spec.stride >> PAGE_SHIFT
    one_pass = np.arange(first, first + (spec.length_bytes >> PAGE_SHIFT), step,
                         dtype=np.int64)
    for _ in range(spec.passes):
        for i in range(0, len(one_pass), chunk):
            yield one_pass[i:i + chunk]


def _uniform(spec, chunk):
    rng = np.random.default_rng(spec.rng_seed)
    first = spec.base >> PAGE_SHIFT
    npages = spec.length_bytes >> PAGE_SHIFT
    for n in _chunk_sizes(spec.access_count, chunk):
        yield first + np.floor(rng.random(n) * npages).astype(np.int64)


def _hotspot(spec, chunk):
    rng = np.random.default_rng(spec.rng_seed)
    weights = np.array([w for _, w in spec.hot_ranges], dtype=np.float64)
    cdf = np.cumsum(weights / weights.sum())
    cdf[-1] = 1.0
    firsts = np.array([r.start >> PAGE_SHIFT for r, _ in spec.hot_ranges],
                      dtype=np.int64)
    sizes = np.array([r.pages for r, _ in spec.hot_ranges], dtype=np.float64)
    for n in _chunk_sizes(spec.access_count, chunk):
        pick = np.searchsorted(cdf, rng.random(n), side="right")
        offset = np.floor(rng.random(n) * sizes[pick]).astype(np.int64)
        yield firsts[pick] + offset


def _pointer_chase(spec, chunk):
    # One random cyclic permutation of the pages, followed from page 0.
    rng = np.random.default_rng(spec.rng_seed)
    first = spec.base >> PAGE_SHIFT
    npages = spec.length_bytes >> PAGE_SHIFT
    order = rng.permutation(npages).astype(np.int64)
    cycle = np.concatenate([[0], order[order != 0]])
    pos = 0
    for n in _chunk_sizes(spec.access_count, chunk):
        idx = (pos + np.arange(n)) % npages
        pos = (pos + n) % npages
        yield first + cycle[idx]


def _chunk_sizes(total, chunk):
    done = 0
    while done < total:
        n = min(chunk, total - done)
        yield n
        done += n


def gen_trace(spec: WorkloadSpec) -> Iterator[AccessRecord]:
    seq = 0
    for pages in gen_pages(spec):
        for page in pages.tolist():
            yield AccessRecord(seq, page << PAGE_SHIFT, AccessKind.READ)
            seq += 1


def records_to_pages(records: Iterable[AccessRecord],
                     chunk: int = CHUNK) -> Iterator[np.ndarray]:
    buf: list[int] = []
    for rec in records:
        buf.append(rec.vaddr >> PAGE_SHIFT)
        if len(buf) == chunk:
            yield np.array(buf, dtype=np.int64)
            buf = []
    if buf:
        yield np.array(buf, dtype=np.int64)


# -- file format -------------------------------------------------------------

_LINE = re.compile(r"^\s*(\d+)\s*,\s*0[xX]([0-9a-fA-F_]+)\s*,\s*([RW])\s*$")


def _open(path, mode: str):
    path = str(path)
    if path.endswith(".gz"):
        # mtime=0 keeps compressed output byte-identical across runs
        raw = gzip.GzipFile(path, mode + "b", mtime=0)
        return io.TextIOWrapper(raw, encoding="utf-8", newline="")
    return open(path, mode, encoding="utf-8", newline="")


def parse_trace(lines: Iterable[str]) -> Iterator[AccessRecord]:
    prev = -1
    for lineno, line in enumerate(lines, 1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        m = _LINE.match(text)
        if m is None:
            raise ParseError(lineno, f"malformed record {text!r}")
        digits = m.group(2)
        if digits.startswith("_") or digits.endswith("_") or "__" in digits:
            raise ParseError(lineno, f"malformed address {digits!r}")
        seq = int(m.group(1))
        vaddr = int(digits.replace("_", ""), 16)
        if vaddr >= ADDR_LIMIT:
            raise ParseError(lineno, f"address {vaddr:#x} beyond 48 bits")
        if seq <= prev:
            raise ParseError(lineno, f"sequence number {seq} not increasing")
        prev = seq
        yield AccessRecord(seq, vaddr, AccessKind(m.group(3)))


def read_trace(path) -> Iterator[AccessRecord]:
    with _open(path, "r") as fh:
        yield from parse_trace(fh)


def format_record(rec: AccessRecord) -> str:
    return f"{rec.seq},{rec.vaddr:#x},{rec.kind.value}\n"


def write_trace(path, records: Iterable[AccessRecord],
                header: Sequence[str] = ()) -> int:
    """Write records to ``path`` and return how many were written."""
    n = 0
    with _open(path, "w") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        out = io.StringIO()
        for rec in records:
            out.write(format_record(rec))
            n += 1
            if n % CHUNK == 0:
                fh.write(out.getvalue())
                out = io.StringIO()
        fh.write(out.getvalue())
    return n
