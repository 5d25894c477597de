import pytest
from hypothesis import given
from hypothesis import strategies as st

from hugesim.core import (ADDR_LIMIT, AddrRange, PageSize, align_down, align_up,
                          extent_of, is_aligned, parse_size, range_contains)


@pytest.mark.parametrize("addr,size,want", [
    (0x20_1234, PageSize.HUGE_2M, 0x20_0000),
    (0x0, PageSize.HUGE_32M, 0x0),
    (0x1_003F_F000, PageSize.HUGE_64K, 0x1_003F_0000),
])
def test_align_down_examples(addr, size, want):
    assert align_down(addr, size) == want


@pytest.mark.parametrize("addr,want", [(0x1000, True), (0x3000, False), (0x2FFF, True)])
def test_range_contains_examples(addr, want):
    assert range_contains(AddrRange(0x1000, 0x3000), addr) is want


def test_orders_and_bytes():
    assert [s.order for s in PageSize] == [0, 4, 9, 13]
    for s in PageSize:
        assert s.bytes == 4096 << s.order
        assert s.frames == 1 << s.order
        assert PageSize.from_label(s.label) is s
        assert PageSize.from_order(s.order) is s
    assert PageSize.HUGE_2M.bytes == 2 << 20
    with pytest.raises(ValueError):
        PageSize.from_label("1G")


@given(st.integers(0, ADDR_LIMIT - 1), st.sampled_from(list(PageSize)))
def test_align_down_idempotent(addr, size):
    once = align_down(addr, size)
    assert align_down(once, size) == once
    assert is_aligned(once, size)
    assert once <= addr < once + size.bytes
    assert extent_of(addr, size) == (once, once + size.bytes)


@given(st.integers(0, ADDR_LIMIT - (32 << 20)), st.sampled_from(list(PageSize)))
def test_align_up_bounds(addr, size):
    up = align_up(addr, size)
    assert is_aligned(up, size)
    assert addr <= up < addr + size.bytes


@pytest.mark.parametrize("start,end", [(0, 0), (0x2000, 0x1000), (0x10, 0x1000),
                                       (0, ADDR_LIMIT + 4096), (-4096, 0)])
def test_bad_ranges_rejected(start, end):
    with pytest.raises(ValueError):
        AddrRange(start, end)


def test_range_helpers():
    r = AddrRange(0x1000, 0x5000)
    assert r.size == 0x4000 and r.pages == 4
    assert r.covers(0x1000, 0x5000) and not r.covers(0, 0x2000)
    assert r.intersects(0x4000, 0x9000) and not r.intersects(0x5000, 0x6000)
    assert r.overlap_bytes(0x4000, 0x9000) == 0x1000
    assert r.overlap_bytes(0x9000, 0xA000) == 0


@pytest.mark.parametrize("text,want", [
    ("4096", 4096), ("0x1000", 4096), ("64K", 65536), ("640MiB", 640 << 20),
    ("2M", 2 << 20), ("1G", 1 << 30), ("0x4000_0000", 1 << 30),
])
def test_parse_size(text, want):
    assert parse_size(text) == want
