import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hugesim.core import MiB, AddrRange, PageSize
from hugesim.tlb import Tlb, TlbConfig
from oracles import LruTlb, lru_misses


def scan(tlb, pages, size):
    return [tlb.access(p << 12, size) for p in pages]


def test_small_loop_hits_second_time():
    tlb = Tlb(TlbConfig(entries=64))
    scan(tlb, list(range(64)) * 2, PageSize.BASE_4K)
    assert (tlb.misses, tlb.hits) == (64, 64)


def test_lru_thrash_on_oversized_loop():
    tlb = Tlb(TlbConfig(entries=64))
    scan(tlb, list(range(128)) * 2, PageSize.BASE_4K)
    assert tlb.misses == 256 and tlb.hits == 0


def test_one_huge_page_covers_loop():
    tlb = Tlb(TlbConfig(entries=64))
    scan(tlb, list(range(128)) * 2, PageSize.HUGE_2M)
    assert (tlb.misses, tlb.hits) == (1, 255)


def test_cycle_totals():
    tlb = Tlb(TlbConfig(entries=4, walk_cycles=300, hit_cycles=2))
    scan(tlb, [0, 1, 0, 1, 5], PageSize.BASE_4K)
    assert tlb.hits + tlb.misses == 5
    assert tlb.walk_cycles_total == 3 * 300
    assert tlb.hit_cycles_total == 2 * 2


@pytest.mark.parametrize("kw", [dict(entries=0), dict(walk_cycles=0),
                                dict(walk_cycles=5, hit_cycles=5),
                                dict(hit_cycles=-1)])
def test_bad_config(kw):
    with pytest.raises(ValueError):
        TlbConfig(**kw)


def test_invalidate_disjoint_range_is_noop():
    tlb = Tlb()
    scan(tlb, [1, 2, 3], PageSize.BASE_4K)
    before = tlb.entries()
    assert tlb.invalidate_range(AddrRange(0x100000, 0x200000)) == 0
    assert tlb.entries() == before


def test_invalidate_drops_covering_and_covered_entries():
    tlb = Tlb()
    tlb.access(0x0, PageSize.HUGE_2M)
    tlb.access(0x20_0000, PageSize.BASE_4K)
    tlb.access(0x20_1000, PageSize.HUGE_64K)
    tlb.access(0x40_0000, PageSize.BASE_4K)
    assert tlb.invalidate_range((0x1000, 0x21_0000)) == 3
    assert tlb.entries() == [(0x40_0000, PageSize.BASE_4K)]


def test_entries_are_lru_ordered():
    tlb = Tlb()
    tlb.access(0x1000, PageSize.BASE_4K)
    tlb.access(0x20_0000, PageSize.HUGE_2M)
    tlb.access(0x1000, PageSize.BASE_4K)
    assert tlb.entries() == [(0x20_0000, PageSize.HUGE_2M), (0x1000, PageSize.BASE_4K)]


def mixed_trace(seed, n, extent_pages=1 << 13):
    rng = random.Random(seed)
    sizes = list(PageSize)
    out = []
    for _ in range(n):
        page = rng.randrange(extent_pages) if rng.random() < 0.3 else rng.randrange(96)
        out.append((page << 12, rng.choice(sizes)))
    return out


@pytest.mark.parametrize("seed", range(2))
def test_matches_lru_list_oracle(seed):
    entries = 16 if seed else 64
    tlb = Tlb(TlbConfig(entries=entries))
    oracle = LruTlb(entries)
    rng = random.Random(seed + 100)
    for i, (vaddr, size) in enumerate(mixed_trace(seed, 100_000)):
        assert tlb.access(vaddr, size) == oracle.access(vaddr, size.order)
        if i % 5000 == 4999:
            lo = rng.randrange(1 << 13) << 12
            hi = lo + (rng.randrange(1, 1 << 10) << 12)
            tlb.invalidate_range((lo, hi))
            oracle.invalidate(lo, hi)
    assert (tlb.hits, tlb.misses) == (oracle.hits, oracle.misses)
    assert [(t, s.order) for t, s in tlb.entries()] == [
        (tag << (12 + order), order) for tag, order in oracle.lru]


@given(st.integers(0, (1 << 13) - 1), st.sampled_from(list(PageSize)),
       st.lists(st.tuples(st.integers(0, (1 << 13) - 1), st.sampled_from(list(PageSize))),
                max_size=80))
def test_invalidate_extent_matches_range_scan(page, size, accesses):
    a, b = Tlb(TlbConfig(entries=32)), Tlb(TlbConfig(entries=32))
    for p, s in accesses:
        a.access_page(p, s.order)
        b.access_page(p, s.order)
    head = (page >> size.order) << size.order
    n_a = a.invalidate_extent(head, size.order)
    n_b = b.invalidate_range((head << 12, (head << 12) + size.bytes))
    assert n_a == n_b and a.entries() == b.entries()


@given(st.lists(st.integers(0, (32 * MiB >> 12) - 1), min_size=1, max_size=3000),
       st.sampled_from([4, 16, 64]))
@settings(max_examples=50)
def test_reach_monotonicity(pages, entries):
    misses = {}
    for size in (PageSize.BASE_4K, PageSize.HUGE_2M, PageSize.HUGE_32M):
        tlb = Tlb(TlbConfig(entries=entries))
        scan(tlb, pages, size)
        assert tlb.hits + tlb.misses == len(pages)
        assert tlb.walk_cycles_total == tlb.misses * tlb.config.walk_cycles
        misses[size] = tlb.misses
        assert tlb.misses == lru_misses([p >> size.order for p in pages], entries)
    assert misses[PageSize.HUGE_32M] <= misses[PageSize.HUGE_2M] <= misses[PageSize.BASE_4K]
