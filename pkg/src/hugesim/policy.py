"""Fault-time page-size policies.

``base4k`` never promotes. ``thp`` promotes to 2MiB whenever the aligned
extent fits in the VMA, whatever it costs. ``ebpfmm`` only acts on faults in
profiled regions, and there picks the size whose expected benefit exceeds
its promotion cost by the most.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

from .core import HUGE_SIZES, AddrRange, PageSize, extent_of
from .monitor import Snapshot, access_frequency
from .physmem import CostParams, compaction_cost, zeroing_cost
from .profile import Profile, ProfiledRegion


class Reason(enum.Enum):
    NO_PROFILE = "NoProfile"
    NO_REGION = "NoRegion"
    NET_NEGATIVE = "NetNegative"
    CHOSEN = "Chosen"
    INELIGIBLE = "Ineligible"
    # assigned by the simulator when a decision cannot be honoured
    FALLBACK_ALLOC = "FallbackAlloc"
    FALLBACK_MAPPED = "FallbackMapped"


@dataclass(frozen=True)
class BenefitParams:
    horizon_accesses: float = 100_000
    walk_cycles: float = 200
    miss_fraction_4k: float = 0.5

    def __post_init__(self):
        if self.horizon_accesses < 0 or self.walk_cycles < 0:
            raise ValueError("benefit parameters must be >= 0")
        if not 0.0 <= self.miss_fraction_4k <= 1.0:
            raise ValueError("miss_fraction_4k must be in [0, 1]")


@dataclass(frozen=True)
class Decision:
    size: PageSize
    reason: Reason
    net: Mapping[PageSize, float] = field(default_factory=dict, compare=False)


def _always_free(order: int) -> bool:
    return True


def _no_moves(order: int) -> int | None:
    return 0


@dataclass(frozen=True)
class FaultContext:
    """Everything a policy may consult when a fault occurs.

    ``frag_probe(order)`` tells whether a free block of that order exists.
    ``compaction_estimate(order)`` gives the frames a compaction would move,
    or None when compaction cannot produce such a block. Both are callables
    so that nothing is computed for faults that never ask.
    """

    vaddr: int
    vma: AddrRange
    profile: Profile | None = None
    snapshot: Snapshot | None = None
    frag_probe: Callable[[int], bool] = _always_free
    compaction_estimate: Callable[[int], int | None] = _no_moves
    cost_params: CostParams = CostParams()
    benefit_params: BenefitParams = BenefitParams()


def fits(ctx: FaultContext, size: PageSize) -> bool:
    return ctx.vma.covers(*extent_of(ctx.vaddr, size))


def policy_base4k(ctx: FaultContext) -> Decision:
    return Decision(PageSize.BASE_4K, Reason.NO_PROFILE)


def policy_thp(ctx: FaultContext) -> Decision:
    if fits(ctx, PageSize.HUGE_2M):
        return Decision(PageSize.HUGE_2M, Reason.CHOSEN)
    return Decision(PageSize.BASE_4K, Reason.INELIGIBLE)


def promotion_cost(size: PageSize, ctx: FaultContext) -> float:
    cost = zeroing_cost(size, ctx.cost_params)
    if ctx.frag_probe(size.order):
        return cost
    moved = ctx.compaction_estimate(size.order)
    if moved is None:
        return math.inf
    return cost + compaction_cost(moved, ctx.cost_params)


def promotion_benefit(size: PageSize, ctx: FaultContext,
                      region: ProfiledRegion | None = None) -> float:
    if region is None:
        region = ctx.profile.lookup(ctx.vaddr) if ctx.profile else None
        if region is None:
            return 0.0
    if ctx.snapshot is not None:
        freq = access_frequency(ctx.snapshot, ctx.vaddr, size)
    else:
        freq = 1.0
    bp = ctx.benefit_params
    return (region.weight(size) * freq * bp.horizon_accesses
            * bp.miss_fraction_4k * bp.walk_cycles)


def policy_ebpfmm(ctx: FaultContext) -> Decision:
    if ctx.profile is None or not ctx.profile.regions:
        return Decision(PageSize.BASE_4K, Reason.NO_PROFILE)
    region = ctx.profile.lookup(ctx.vaddr)
    if region is None:
        return Decision(PageSize.BASE_4K, Reason.NO_REGION)
    net = {}
    for size in HUGE_SIZES:
        if fits(ctx, size):
            net[size] = promotion_benefit(size, ctx, region) - promotion_cost(size, ctx)
    best = None
    for size, value in net.items():
        if value > 0 and (best is None or value > net[best]):
            best = size
    if best is None:
        return Decision(PageSize.BASE_4K, Reason.NET_NEGATIVE, net)
    return Decision(best, Reason.CHOSEN, net)


POLICIES: dict[str, Callable[[FaultContext], Decision]] = {
    "base4k": policy_base4k,
    "thp": policy_thp,
    "ebpfmm": policy_ebpfmm,
}
