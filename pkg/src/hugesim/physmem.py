"""Buddy allocator over 4KiB frames, with fragmentation and compaction.

Free blocks live in per-order sets; a lazily-cleaned min-heap per order gives
lowest-address-first selection. ``state`` is a numpy int8 array with one
entry per frame (FREE, PINNED or MOVABLE) so that compaction planning can be
done with vectorised block sums.
"""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass

import numpy as np

from .core import PageSize

MAX_ORDER = 13

FREE = 0
PINNED = 1
MOVABLE = 2


class PhysMemError(Exception):
    pass


class DoubleFree(PhysMemError):
    pass


class BadBlock(PhysMemError):
    pass


class InvalidParam(PhysMemError, ValueError):
    pass


class AllocFailure(enum.Enum):
    NEEDS_COMPACTION = "needs_compaction"
    OUT_OF_MEMORY = "out_of_memory"


class Pattern(enum.Enum):
    SPREAD = "spread"
    CLUSTERED = "clustered"


CLUSTER_FRAMES = 64
# granularity of the incrementally maintained occupancy counts
COUNT_ORDER = 4


@dataclass(frozen=True)
class CostParams:
    zero_cycles_per_4k: int = 500
    compact_cycles_per_moved_frame: int = 2000
    alloc_fastpath_cycles: int = 100

    def __post_init__(self):
        for name in ("zero_cycles_per_4k", "compact_cycles_per_moved_frame",
                     "alloc_fastpath_cycles"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(frozen=True)
class CompactionOutcome:
    moved_frames: int
    success: bool


@dataclass
class PhysStats:
    compactions_run: int = 0
    frames_moved: int = 0
    frames_zeroed: int = 0


def zeroing_cost(size: PageSize, p: CostParams) -> int:
    return p.zero_cycles_per_4k * size.frames


def compaction_cost(moved_frames: int, p: CostParams) -> int:
    return moved_frames * p.compact_cycles_per_moved_frame


def fragment_layout(total_frames: int, occupancy: float, pattern: Pattern,
                    movable_fraction: float, seed: int):
    """Frames to occupy and whether each is movable, as two numpy arrays.

    Spread picks single frames uniformly without replacement. Clustered picks
    64-frame-aligned runs of 64 frames; the last run is truncated so that the
    occupied count is exactly ``round(occupancy * total_frames)``. Exactly
    ``round(movable_fraction * placed_blocks)`` blocks are movable.
    """
    if not 0.0 <= occupancy <= 1.0:
        raise InvalidParam(f"occupancy {occupancy} outside [0, 1]")
    if not 0.0 <= movable_fraction <= 1.0:
        raise InvalidParam(f"movable_fraction {movable_fraction} outside [0, 1]")
    pattern = Pattern(pattern)
    rng = np.random.default_rng(seed)
    count = int(round(occupancy * total_frames))
    if pattern is Pattern.SPREAD:
        frames = np.sort(rng.choice(total_frames, size=count, replace=False))
        block_of = np.arange(count)
        nblocks = count
    else:
        nblocks = -(-count // CLUSTER_FRAMES)
        slots = total_frames // CLUSTER_FRAMES
        if nblocks > slots:
            raise InvalidParam("occupancy too high for clustered placement")
        starts = np.sort(rng.choice(slots, size=nblocks, replace=False))
        starts = starts.astype(np.int64) * CLUSTER_FRAMES
        frames = (starts[:, None] + np.arange(CLUSTER_FRAMES)).ravel()[:count]
        block_of = np.arange(count) // CLUSTER_FRAMES
    n_movable = int(round(movable_fraction * nblocks))
    movable_blocks = np.zeros(nblocks, dtype=bool)
    movable_blocks[rng.permutation(nblocks)[:n_movable]] = True
    return frames.astype(np.int64), movable_blocks[block_of]


class PhysMemory:
    """Buddy allocator over ``total_frames`` 4KiB frames."""

    def __init__(self, total_frames: int):
        if total_frames < 1:
            raise InvalidParam("total_frames must be >= 1")
        self.total_frames = total_frames
        self.state = np.zeros(total_frames, dtype=np.int8)
        self.free_frames = total_frames
        self.stats = PhysStats()
        self._free: list[set[int]] = [set() for _ in range(MAX_ORDER + 1)]
        self._heap: list[list[int]] = [[] for _ in range(MAX_ORDER + 1)]
        self._blocks: dict[int, int] = {}
        nblocks16 = total_frames >> COUNT_ORDER
        self._pinned16 = np.zeros(nblocks16, dtype=np.int64)
        self._movable16 = np.zeros(nblocks16, dtype=np.int64)
        base = 0
        while base < total_frames:
            order = MAX_ORDER
            while base % (1 << order) or base + (1 << order) > total_frames:
                order -= 1
            self._push(order, base)
            base += 1 << order

    # -- free-list primitives ------------------------------------------------

    def _push(self, order, base):
        self._free[order].add(base)
        heap = self._heap[order]
        heapq.heappush(heap, base)
        if len(heap) > 2 * len(self._free[order]) + 64:
            self._heap[order] = sorted(self._free[order])

    def _pop_min(self, order):
        free = self._free[order]
        heap = self._heap[order]
        while True:
            base = heapq.heappop(heap)
            if base in free:
                free.remove(base)
                return base

    def _containing_free_block(self, frame):
        for order in range(MAX_ORDER + 1):
            base = frame & ~((1 << order) - 1)
            if base in self._free[order]:
                return order, base
        return None

    def _mark(self, base, order, value):
        n = 1 << order
        old = int(self.state[base])
        self.state[base:base + n] = value
        # keep per-16-frame pinned/movable counts in step with ``state``
        for kind, counts in ((PINNED, self._pinned16), (MOVABLE, self._movable16)):
            delta = (value == kind) - (old == kind)
            if not delta:
                continue
            if order >= COUNT_ORDER:
                counts[base >> COUNT_ORDER:(base + n) >> COUNT_ORDER] += delta << COUNT_ORDER
            elif base >> COUNT_ORDER < len(counts):
                counts[base >> COUNT_ORDER] += delta * n

    # -- public API ----------------------------------------------------------

    def alloc(self, order: int, movable: bool = False) -> int | AllocFailure:
        """Allocate a block of ``2**order`` frames; return its base frame."""
        if not 0 <= order <= MAX_ORDER:
            raise InvalidParam(f"order {order} outside 0..{MAX_ORDER}")
        for k in range(order, MAX_ORDER + 1):
            if self._free[k]:
                break
        else:
            if self.free_frames >= 1 << order:
                return AllocFailure.NEEDS_COMPACTION
            return AllocFailure.OUT_OF_MEMORY
        base = self._pop_min(k)
        while k > order:
            k -= 1
            self._push(k, base + (1 << k))
        self._take(base, order, movable)
        return base

    def _take(self, base, order, movable):
        self._blocks[base] = order
        # compaction relocates single frames only
        self._mark(base, order, MOVABLE if movable and order == 0 else PINNED)
        self.free_frames -= 1 << order

    def claim(self, frame: int, movable: bool = False) -> None:
        """Allocate the specific order-0 frame ``frame``, splitting as needed."""
        found = self._containing_free_block(frame)
        if found is None:
            raise BadBlock(f"frame {frame} is not free")
        order, base = found
        self._free[order].remove(base)
        while order > 0:
            order -= 1
            half = 1 << order
            if frame >= base + half:
                self._push(order, base)
                base += half
            else:
                self._push(order, base + half)
        self._take(frame, 0, movable)

    def free(self, base: int, order: int) -> None:
        got = self._blocks.get(base)
        if got is None:
            if 0 <= base < self.total_frames and self.state[base] == FREE:
                raise DoubleFree(f"block at frame {base} is already free")
            raise BadBlock(f"no allocated block at frame {base}")
        if got != order:
            raise BadBlock(f"block at frame {base} has order {got}, not {order}")
        del self._blocks[base]
        self._mark(base, order, FREE)
        self.free_frames += 1 << order
        while order < MAX_ORDER:
            buddy = base ^ (1 << order)
            if buddy not in self._free[order]:
                break
            self._free[order].remove(buddy)
            base = min(base, buddy)
            order += 1
        self._push(order, base)

    def has_free_block(self, order: int) -> bool:
        """True when ``alloc(order)`` would succeed without compaction."""
        return any(self._free[k] for k in range(order, MAX_ORDER + 1))

    def block_order(self, base: int) -> int | None:
        return self._blocks.get(base)

    def is_movable(self, base: int) -> bool:
        return self.state[base] == MOVABLE

    def allocated_blocks(self) -> dict[int, int]:
        return dict(self._blocks)

    def free_blocks(self) -> dict[int, list[int]]:
        return {k: sorted(s) for k, s in enumerate(self._free) if s}

    def zero(self, base: int, order: int) -> None:
        self.stats.frames_zeroed += 1 << order

    # -- fragmentation -------------------------------------------------------

    def fragment(self, occupancy: float, pattern: Pattern | str = Pattern.SPREAD,
                 movable_fraction: float = 1.0, seed: int = 0) -> None:
        if self.free_frames != self.total_frames:
            raise PhysMemError("fragment() requires fresh memory")
        frames, movable = fragment_layout(self.total_frames, occupancy,
                                          Pattern(pattern), movable_fraction, seed)
        for frame, mov in zip(frames.tolist(), movable.tolist()):
            self.claim(frame, mov)

    # -- compaction ----------------------------------------------------------

    def _block_counts(self, order):
        """Pinned and movable frame counts of every whole aligned block."""
        nblocks = self.total_frames >> order
        if order >= COUNT_ORDER:
            group = 1 << (order - COUNT_ORDER)
            used = nblocks * group
            return (self._pinned16[:used].reshape(nblocks, group).sum(axis=1),
                    self._movable16[:used].reshape(nblocks, group).sum(axis=1))
        st = self.state[: nblocks << order].reshape(nblocks, 1 << order)
        return (st == PINNED).sum(axis=1), (st == MOVABLE).sum(axis=1)

    def _plan(self, order):
        """Pick the aligned block needing the fewest relocations.

        Returns ``(block_base, frames_to_move)``, ``(None, [])`` when a free
        block already exists, or ``None`` when no block can be emptied using
        movable frames and the free space outside it.
        """
        if self.has_free_block(order):
            return None, []
        n = 1 << order
        if self.total_frames >> order == 0:
            return None
        pinned, movable = self._block_counts(order)
        unpinned = pinned == 0
        free_outside = self.free_frames - (n - pinned - movable)
        ok = unpinned & (free_outside >= movable)
        if not ok.any():
            return None
        idx = int(np.argmin(np.where(ok, movable, n + 1)))
        base = idx * n
        frames = (np.flatnonzero(self.state[base:base + n] == MOVABLE) + base).tolist()
        return base, frames

    def compaction_estimate(self, order: int) -> int | None:
        """Frames ``compact(order)`` would move, or None if it would fail.

        Has no side effects.
        """
        plan = self._plan(order)
        if plan is None:
            return None
        return len(plan[1])

    def compact(self, target_order: int) -> CompactionOutcome:
        """Relocate movable frames until one free ``target_order`` block exists.

        The block chosen is the aligned one with no pinned frames and the
        fewest movable frames (lowest address on ties). Its frames go to the
        lowest-addressed free frames outside it. On failure nothing moves.
        """
        if not 0 <= target_order <= MAX_ORDER:
            raise InvalidParam(f"order {target_order} outside 0..{MAX_ORDER}")
        self.stats.compactions_run += 1
        plan = self._plan(target_order)
        if plan is None:
            return CompactionOutcome(0, False)
        base, frames = plan
        if not frames:
            return CompactionOutcome(0, True)
        n = 1 << target_order
        free_idx = np.flatnonzero(self.state == FREE)
        outside = free_idx[(free_idx < base) | (free_idx >= base + n)]
        for src, dst in zip(frames, outside[: len(frames)].tolist()):
            self.free(src, 0)
            self.claim(dst, movable=True)
        self.stats.frames_moved += len(frames)
        return CompactionOutcome(len(frames), True)

    # -- checking ------------------------------------------------------------

    def validate(self) -> None:
        """Raise AssertionError if any buddy invariant is violated."""
        covered = np.zeros(self.total_frames, dtype=np.int8)
        free_count = 0
        for order, blocks in enumerate(self._free):
            n = 1 << order
            for base in blocks:
                assert base % n == 0, f"free block {base} misaligned for order {order}"
                assert base + n <= self.total_frames, f"free block {base} past end"
                assert not covered[base:base + n].any(), f"free block {base} overlaps"
                assert (self.state[base:base + n] == FREE).all(), \
                    f"free block {base} has allocated frames"
                covered[base:base + n] = 1
                free_count += n
                if order < MAX_ORDER:
                    assert base ^ n not in blocks, \
                        f"buddies {base} and {base ^ n} both free at order {order}"
        alloc_count = 0
        for base, order in self._blocks.items():
            n = 1 << order
            assert base % n == 0, f"allocated block {base} misaligned"
            assert not covered[base:base + n].any(), f"allocated block {base} overlaps"
            assert (self.state[base:base + n] != FREE).all()
            covered[base:base + n] = 1
            alloc_count += n
        st = self.state[: len(self._pinned16) << COUNT_ORDER].reshape(-1, 1 << COUNT_ORDER)
        assert ((st == PINNED).sum(axis=1) == self._pinned16).all(), "stale pinned counts"
        assert ((st == MOVABLE).sum(axis=1) == self._movable16).all(), "stale movable counts"
        assert free_count == self.free_frames
        assert free_count + alloc_count == self.total_frames
        assert covered.all()
