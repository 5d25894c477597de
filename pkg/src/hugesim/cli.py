"""Command-line front end.

Subcommands::

    hugesim run         --policy ebpfmm --profile p.txt --workload hotspot --out r.csv
    hugesim compare     --policies base4k,thp,ebpfmm --profile p.txt --out cmp.csv
    hugesim gen-trace   --workload hotspot --accesses 100000 --out t.csv.gz
    hugesim profile-gen --workload hotspot --sampling-interval 50000 --out p.txt

Every flag can also be set in a ``--config`` file of ``key = value`` lines
(key is the flag name without dashes); flags given on the command line win.
Exit status is 0 on success, 1 on usage errors and 2 on runtime errors.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .core import MiB, AddrRange, PageSize, parse_size
from .monitor import MonitorConfig, write_snapshot
from .physmem import CostParams, Pattern
from .policy import POLICIES, BenefitParams
from .profile import ProfileError, iter_lines, save_profile
from .sim import (FragmentParams, SimConfig, SimError, profile_workload,
                  sim_compare, sim_run)
from .tlb import TlbConfig
from .trace import (InvalidSpec, ParseError, WorkloadKind, WorkloadSpec,
                    gen_trace, write_trace)

log = logging.getLogger("hugesim")

DEFAULT_VMA_START = 0x4000_0000
DEFAULT_VMA_SIZE = 640 * MiB


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- argument types -----------------------------------------------------------

def _size(text):
    try:
        value = parse_size(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad size {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"size {text!r} is negative")
    return value


def _count(text):
    try:
        value = int(text, 0)
    except ValueError:
        # allow 1e7 style counts
        try:
            as_float = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad count {text!r}") from None
        if not as_float.is_integer():
            raise argparse.ArgumentTypeError(f"bad count {text!r}") from None
        value = int(as_float)
    if value < 0:
        raise argparse.ArgumentTypeError(f"count {text!r} is negative")
    return value


def _positive(text):
    value = _count(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"{text!r} must be >= 1")
    return value


def _fraction(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad fraction {text!r}") from None
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"{text!r} is outside [0, 1]")
    return value


def _nonneg_float(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad number {text!r}") from None
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"{text!r} must be >= 0")
    return value


def _hot_range(text):
    """``START-END:WEIGHT`` with sizes in any :func:`parse_size` notation."""
    try:
        span, weight = text.rsplit(":", 1)
        start, end = span.split("-", 1)
        return AddrRange(parse_size(start), parse_size(end)), float(weight)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad hot range {text!r}: {exc}") from None


def _policies(text):
    names = [n.strip() for n in text.split(",") if n.strip()]
    for n in names:
        if n not in POLICIES:
            raise argparse.ArgumentTypeError(f"unknown policy {n!r}")
    if not names:
        raise argparse.ArgumentTypeError("no policies given")
    return names


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"bad boolean {text!r}")


# -- parser -------------------------------------------------------------------

def _add_workload(p):
    g = p.add_argument_group("workload")
    g.add_argument("--workload", choices=[k.value for k in WorkloadKind],
                   default="hotspot")
    g.add_argument("--vma-start", type=_size, default=DEFAULT_VMA_START)
    g.add_argument("--vma-size", type=_size, default=DEFAULT_VMA_SIZE)
    g.add_argument("--base", type=_size, default=None,
                   help="workload base address (default: VMA start)")
    g.add_argument("--length", type=_size, default=None,
                   help="workload length in bytes (default: VMA size)")
    g.add_argument("--passes", type=_count, default=1)
    g.add_argument("--stride", type=_size, default=4096)
    g.add_argument("--accesses", type=_count, default=1_000_000)
    g.add_argument("--hot", type=_hot_range, action="append", default=None,
                   metavar="START-END:WEIGHT",
                   help="hotspot range; repeat for several (default: 10%% of the "
                        "VMA gets weight 0.9, the rest 0.1)")
    g.add_argument("--seed", type=int, default=0)


def _add_monitor(p, default_on):
    g = p.add_argument_group("monitor")
    if default_on is not None:
        g.add_argument("--monitor", type=_bool, default=default_on,
                       help="feed a monitor during the run (true/false)")
    g.add_argument("--sampling-interval", type=_positive, default=1000)
    g.add_argument("--aggregation-interval", type=_positive, default=20)
    g.add_argument("--min-regions", type=_positive, default=10)
    g.add_argument("--max-regions", type=_positive, default=500)
    g.add_argument("--merge-threshold", type=_count, default=2)


def _add_sim(p):
    g = p.add_argument_group("memory")
    g.add_argument("--trace", default=None, help="replay a trace file instead")
    g.add_argument("--mem-frames", type=_positive, default=1 << 18)
    g.add_argument("--frag-occupancy", type=_fraction, default=0.0)
    g.add_argument("--frag-pattern", choices=[x.value for x in Pattern],
                   default="spread")
    g.add_argument("--frag-movable", type=_fraction, default=1.0)
    g = p.add_argument_group("tlb")
    g.add_argument("--tlb-entries", type=_positive, default=64)
    g.add_argument("--walk-cycles", type=_count, default=200)
    g.add_argument("--hit-cycles", type=_count, default=0)
    g = p.add_argument_group("costs")
    g.add_argument("--zero-cycles", type=_count, default=500)
    g.add_argument("--compact-cycles", type=_count, default=2000)
    g.add_argument("--alloc-cycles", type=_count, default=100)
    g.add_argument("--horizon", type=_nonneg_float, default=100_000)
    g.add_argument("--miss-fraction", type=_fraction, default=0.5)
    g.add_argument("--benefit-walk-cycles", type=_nonneg_float, default=None,
                   help="cycles saved per avoided miss (default: --walk-cycles)")
    g.add_argument("--profile", default=None)
    _add_monitor(p, default_on=False)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hugesim", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("run", help="simulate one policy")
    p.add_argument("--config", default=None)
    p.add_argument("--policy", choices=sorted(POLICIES), default="base4k")
    _add_workload(p)
    _add_sim(p)
    p.add_argument("--out", default=None)

    p = sub.add_parser("compare", help="simulate several policies")
    p.add_argument("--config", default=None)
    p.add_argument("--policies", type=_policies, default=["base4k", "thp", "ebpfmm"])
    p.add_argument("--jobs", type=_positive, default=1)
    _add_workload(p)
    _add_sim(p)
    p.add_argument("--out", default=None)

    p = sub.add_parser("gen-trace", help="write a synthetic trace")
    p.add_argument("--config", default=None)
    _add_workload(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("profile-gen", help="monitor a workload, write a profile")
    p.add_argument("--config", default=None)
    _add_workload(p)
    p.add_argument("--trace", default=None)
    _add_monitor(p, default_on=None)
    p.add_argument("--hot-threshold", type=_fraction, default=0.5)
    p.add_argument("--b64k", type=_nonneg_float, default=0.25)
    p.add_argument("--b2m", type=_nonneg_float, default=1.0)
    p.add_argument("--b32m", type=_nonneg_float, default=0.5)
    p.add_argument("--name", default="profile")
    p.add_argument("--snapshot-out", default=None,
                   help="also write the snapshot the profile came from")
    p.add_argument("--out", required=True)
    return parser


def _subparser(parser, command):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def read_config_file(path) -> dict[str, str]:
    """``key = value`` lines, ``#`` comments; keys are flag names."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    for lineno, line in iter_lines(text):
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"--config: {path}:{lineno}: expected 'key = value'")
        out[key.strip().replace("_", "-")] = value.strip()
    return out


def _apply_config(sub, path):
    """Turn config-file entries into subparser defaults."""
    try:
        entries = read_config_file(path)
    except OSError as exc:
        raise UsageError(f"--config: cannot read {path}: {exc.strerror}") from None
    by_flag = {}
    for action in sub._actions:
        for opt in action.option_strings:
            if opt.startswith("--"):
                by_flag[opt[2:]] = action
    defaults = {}
    for key, raw in entries.items():
        action = by_flag.get(key)
        if action is None or key in ("config", "help"):
            raise UsageError(f"--config: unknown key {key!r} in {path}")
        try:
            if isinstance(action, argparse._AppendAction):
                items = [s.strip() for s in raw.split(",") if s.strip()]
                value = [action.type(s) if action.type else s for s in items]
            else:
                value = action.type(raw) if action.type else raw
        except (argparse.ArgumentTypeError, ValueError) as exc:
            raise UsageError(f"--config: key {key!r}: {exc}") from None
        if action.choices is not None:
            vals = value if isinstance(value, list) else [value]
            if any(v not in action.choices for v in vals):
                raise UsageError(f"--config: key {key!r}: invalid choice {raw!r}")
        defaults[action.dest] = value
    sub.set_defaults(**defaults)


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        parser = build_parser()
        _apply_config(_subparser(parser, args.command), args.config)
        args = parser.parse_args(argv)
    return args


# -- args -> configs -----------------------------------------------------------

def default_hot_ranges(vma: AddrRange) -> tuple[tuple[AddrRange, float], ...]:
    """One hot range of a tenth of the VMA, 5/16 of the way in, weight 0.9."""
    page = 4096
    offset = (vma.size * 5 // 16) // page * page
    size = max(page, (vma.size // 10) // page * page)
    hot = AddrRange(vma.start + offset, vma.start + offset + size)
    cold = [r for r in (AddrRange(vma.start, hot.start) if hot.start > vma.start else None,
                        AddrRange(hot.end, vma.end) if hot.end < vma.end else None)
            if r is not None]
    if not cold:
        return ((hot, 1.0),)
    cold_bytes = sum(r.size for r in cold)
    ranges = [(hot, 0.9)] + [(r, 0.1 * r.size / cold_bytes) for r in cold]
    return tuple(sorted(ranges, key=lambda x: x[0].start))


def vma_from_args(args) -> AddrRange:
    try:
        return AddrRange(args.vma_start, args.vma_start + args.vma_size)
    except ValueError as exc:
        raise UsageError(f"--vma-start/--vma-size: {exc}") from None


def workload_from_args(args) -> WorkloadSpec:
    vma = vma_from_args(args)
    kind = WorkloadKind(args.workload)
    hot = tuple(args.hot) if args.hot else ()
    if kind is WorkloadKind.HOTSPOT and not hot:
        hot = default_hot_ranges(vma)
    spec = WorkloadSpec(
        kind=kind,
        base=vma.start if args.base is None else args.base,
        length_bytes=vma.size if args.length is None else args.length,
        passes=args.passes,
        stride=args.stride,
        access_count=args.accesses,
        hot_ranges=hot,
        rng_seed=args.seed,
    )
    try:
        spec.validate()
    except InvalidSpec as exc:
        flag = "--hot" if kind is WorkloadKind.HOTSPOT else "--workload"
        raise UsageError(f"{flag}: {exc}") from None
    return spec


def monitor_from_args(args) -> MonitorConfig:
    try:
        return MonitorConfig(
            sampling_interval=args.sampling_interval,
            aggregation_interval=args.aggregation_interval,
            min_regions=args.min_regions,
            max_regions=args.max_regions,
            merge_threshold=args.merge_threshold,
        )
    except ValueError as exc:
        raise UsageError(f"--min-regions/--max-regions: {exc}") from None


def config_from_args(args, policy: str) -> SimConfig:
    try:
        tlb = TlbConfig(args.tlb_entries, args.walk_cycles, args.hit_cycles)
    except ValueError as exc:
        raise UsageError(f"--walk-cycles/--hit-cycles: {exc}") from None
    walk = (args.walk_cycles if args.benefit_walk_cycles is None
            else args.benefit_walk_cycles)
    trace = args.trace
    return SimConfig(
        policy=policy,
        workload=None if trace else workload_from_args(args),
        trace_path=trace,
        vma=vma_from_args(args),
        mem_frames=args.mem_frames,
        fragment=FragmentParams(args.frag_occupancy, Pattern(args.frag_pattern),
                                args.frag_movable),
        tlb=tlb,
        monitor=monitor_from_args(args) if args.monitor else None,
        cost=CostParams(args.zero_cycles, args.compact_cycles, args.alloc_cycles),
        benefit=BenefitParams(args.horizon, walk, args.miss_fraction),
        profile_path=args.profile,
        rng_seed=args.seed,
        report_path=args.out,
    )


# -- commands -------------------------------------------------------------------

def _emit(text, path):
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def cmd_run(args) -> None:
    config = config_from_args(args, args.policy)
    report = sim_run(config)
    if args.out is None:
        sys.stdout.write(report.to_csv())
    log.info("%s: %d cycles, %d faults", args.policy, report.total_cycles,
             report.page_faults)


def cmd_compare(args) -> None:
    configs = [config_from_args(args, name) for name in args.policies]
    table = sim_compare(configs, jobs=args.jobs)
    _emit(table.to_csv(), args.out)


def cmd_gen_trace(args) -> None:
    spec = workload_from_args(args)
    n = write_trace(args.out, gen_trace(spec),
                    header=[f"workload={spec.kind.value} seed={spec.rng_seed}"])
    log.info("wrote %d records to %s", n, args.out)


def cmd_profile_gen(args) -> None:
    config = SimConfig(
        workload=None if args.trace else workload_from_args(args),
        trace_path=args.trace,
        vma=vma_from_args(args),
        monitor=monitor_from_args(args),
        rng_seed=args.seed,
    )
    weights = {PageSize.HUGE_64K: args.b64k, PageSize.HUGE_2M: args.b2m,
               PageSize.HUGE_32M: args.b32m}
    profile, snap = profile_workload(config, args.hot_threshold, weights, args.name)
    save_profile(args.out, profile)
    if args.snapshot_out:
        write_snapshot(args.snapshot_out, snap)
    log.info("profile %s: %d regions", args.name, len(profile))


COMMANDS = {
    "run": cmd_run,
    "compare": cmd_compare,
    "gen-trace": cmd_gen_trace,
    "profile-gen": cmd_profile_gen,
}


def main(argv=None) -> int:
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"hugesim {args.command}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ParseError, ProfileError, SimError, ValueError) as exc:
        print(f"hugesim {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
