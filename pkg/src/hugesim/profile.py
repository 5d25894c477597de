"""Application profiles: hot address ranges with per-size benefit weights.

Text format, one directive per line, ``#`` starts a comment::

    name demo
    region 0x10000000 0x20000000 0.2 1.5 0.8

The three weights apply to 64K, 2M and 32M pages respectively.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping

from .core import HUGE_SIZES, AddrRange, PageSize, align_down, align_up
from .monitor import Snapshot


class ProfileError(ValueError):
    pass


class ParseError(ProfileError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


class OverlapError(ProfileError):
    def __init__(self, a: AddrRange, b: AddrRange):
        super().__init__(f"profile regions {a} and {b} overlap")
        self.regions = (a, b)


class NegativeWeightError(ProfileError):
    pass


def iter_lines(text: str) -> Iterator[tuple[int, str]]:
    """Yield ``(lineno, content)`` for non-blank lines, comments removed."""
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


@dataclass(frozen=True)
class ProfiledRegion:
    range: AddrRange
    benefit: Mapping[PageSize, float]

    def __post_init__(self):
        for size in HUGE_SIZES:
            w = self.benefit.get(size, 0.0)
            if not math.isfinite(w):
                raise ProfileError(f"weight for {size.label} in {self.range} is not finite")
            if w < 0:
                raise NegativeWeightError(
                    f"negative {size.label} weight {w} for region {self.range}")

    def weight(self, size: PageSize) -> float:
        return self.benefit.get(size, 0.0)


@dataclass(frozen=True)
class Profile:
    name: str = "profile"
    regions: tuple[ProfiledRegion, ...] = ()
    _starts: tuple[int, ...] = field(default=(), init=False, repr=False, compare=False)

    def __post_init__(self):
        regions = tuple(sorted(self.regions, key=lambda r: r.range.start))
        for a, b in zip(regions, regions[1:]):
            if b.range.start < a.range.end:
                raise OverlapError(a.range, b.range)
        object.__setattr__(self, "regions", regions)
        object.__setattr__(self, "_starts", tuple(r.range.start for r in regions))

    def __len__(self):
        return len(self.regions)

    def lookup(self, addr: int) -> ProfiledRegion | None:
        i = bisect.bisect_right(self._starts, addr) - 1
        if i >= 0 and addr < self.regions[i].range.end:
            return self.regions[i]
        return None


def profile_lookup(p: Profile, addr: int) -> ProfiledRegion | None:
    return p.lookup(addr)


def _parse_addr(tok, lineno):
    if not tok.lower().startswith("0x"):
        raise ParseError(lineno, f"expected hex address, got {tok!r}")
    try:
        return int(tok, 16)
    except ValueError:
        raise ParseError(lineno, f"bad address {tok!r}") from None


def _parse_weight(tok, lineno):
    try:
        w = float(tok)
    except ValueError:
        raise ParseError(lineno, f"bad weight {tok!r}") from None
    if not math.isfinite(w):
        raise ParseError(lineno, f"weight {tok!r} is not finite")
    if w < 0:
        raise NegativeWeightError(f"line {lineno}: negative weight {tok}")
    return w


def profile_parse(text: str) -> Profile:
    name = "profile"
    regions = []
    for lineno, line in iter_lines(text):
        toks = line.split()
        if toks[0] == "name":
            if len(toks) != 2:
                raise ParseError(lineno, "expected 'name <identifier>'")
            name = toks[1]
        elif toks[0] == "region":
            if len(toks) != 6:
                raise ParseError(lineno, "expected 'region <start> <end> <b64k> <b2m> <b32m>'")
            start = _parse_addr(toks[1], lineno)
            end = _parse_addr(toks[2], lineno)
            try:
                rng = AddrRange(start, end)
            except ValueError as exc:
                raise ParseError(lineno, str(exc)) from None
            weights = [_parse_weight(t, lineno) for t in toks[3:]]
            regions.append(ProfiledRegion(rng, dict(zip(HUGE_SIZES, weights))))
        else:
            raise ParseError(lineno, f"unknown directive {toks[0]!r}")
    return Profile(name, tuple(regions))


def profile_serialize(p: Profile) -> str:
    lines = [f"name {p.name}"]
    for r in p.regions:
        ws = " ".join(repr(float(r.weight(s))) for s in HUGE_SIZES)
        lines.append(f"region {r.range.start:#x} {r.range.end:#x} {ws}")
    return "\n".join(lines) + "\n"


def load_profile(path) -> Profile:
    with open(path, encoding="utf-8") as fh:
        return profile_parse(fh.read())


def save_profile(path, p: Profile) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(profile_serialize(p))


def profile_from_snapshot(s: Snapshot, hot_threshold: float,
                          weights: Mapping[PageSize, float],
                          name: str = "profile") -> Profile:
    """Turn the hot runs of a monitor snapshot into profile regions.

    Each maximal run of adjacent regions at or above ``hot_threshold`` becomes
    one region, widened to 64KiB alignment. Runs that overlap after widening
    are joined.
    """
    runs: list[list[int]] = []
    prev_hot = False
    for r in s.regions:
        hot = s.frequency(r) >= hot_threshold
        if hot:
            lo = align_down(r.start, PageSize.HUGE_64K)
            hi = align_up(r.end, PageSize.HUGE_64K)
            if prev_hot or (runs and lo < runs[-1][1]):
                runs[-1][1] = max(runs[-1][1], hi)
            else:
                runs.append([lo, hi])
        prev_hot = hot
    w = {size: float(weights.get(size, 0.0)) for size in HUGE_SIZES}
    return Profile(name, tuple(ProfiledRegion(AddrRange(a, b), dict(w))
                               for a, b in runs))
