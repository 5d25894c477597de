import dataclasses

import pytest

from hugesim import cli
from hugesim.core import MiB, AddrRange
from hugesim.profile import load_profile
from hugesim.sim import SimConfig, SimReport
from hugesim.trace import read_trace

SMALL = ["--vma-size", "64MiB", "--accesses", "20000", "--mem-frames", "32768"]


def run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_bogus_policy_is_usage_error(capsys):
    code, _, err = run(["run", "--policy", "bogus"], capsys)
    assert code == 1 and "--policy" in err


@pytest.mark.parametrize("argv,flag", [
    (["run", "--frag-occupancy", "1.5"], "--frag-occupancy"),
    (["run", "--accesses", "many"], "--accesses"),
    (["compare", "--policies", "thp,nope"], "--policies"),
    (["run", "--hot", "0x1000-0x800:1"], "--hot"),
    (["run", "--tlb-entries", "0"], "--tlb-entries"),
    (["run", "--walk-cycles", "0"], "--walk-cycles"),
    (["gen-trace"], "--out"),
])
def test_usage_errors_name_the_flag(argv, flag, capsys):
    code, _, err = run(argv, capsys)
    assert code == 1 and flag in err


def test_missing_profile_is_runtime_error(tmp_path, capsys):
    code, _, err = run(["run", "--policy", "ebpfmm", "--profile",
                        str(tmp_path / "none.txt")] + SMALL, capsys)
    assert code == 2 and "error" in err


def test_malformed_profile_is_runtime_error(tmp_path, capsys):
    bad = tmp_path / "p.txt"
    bad.write_text("region 0x0 zzz 1 1 1\n")
    code, _, err = run(["run", "--policy", "ebpfmm", "--profile", str(bad)] + SMALL,
                       capsys)
    assert code == 2 and "line 1" in err


def test_run_twice_is_byte_identical(tmp_path, capsys):
    prof = tmp_path / "p.txt"
    prof.write_text("region 0x41000000 0x41800000 0.25 1.0 0.5\n")
    outs = []
    for i in range(2):
        out = tmp_path / f"r{i}.csv"
        code, _, _ = run(["run", "--policy", "ebpfmm", "--profile", str(prof),
                          "--workload", "hotspot", "--seed", "42", "--out", str(out),
                          "--frag-occupancy", "0.3"] + SMALL, capsys)
        assert code == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    rep = SimReport.from_csv(outs[0].decode())
    assert rep.policy == "ebpfmm" and rep.accesses == 20000


def test_run_prints_report_without_out(capsys):
    code, out, _ = run(["run", "--policy", "thp"] + SMALL, capsys)
    assert code == 0
    assert SimReport.from_csv(out).policy == "thp"


def test_compare_table(tmp_path, capsys):
    code, out, _ = run(["compare", "--policies", "base4k,thp,ebpfmm"] + SMALL, capsys)
    assert code == 0
    lines = out.splitlines()
    assert len(lines) == 4
    assert [l.split(",")[0] for l in lines[1:]] == ["base4k", "thp", "ebpfmm"]


def test_gen_trace_and_replay(tmp_path, capsys):
    trace = tmp_path / "t.csv.gz"
    code, _, _ = run(["gen-trace", "--workload", "uniform", "--accesses", "500",
                      "--vma-size", "4MiB", "--out", str(trace)], capsys)
    assert code == 0
    assert len(list(read_trace(trace))) == 500
    code, out, _ = run(["run", "--trace", str(trace), "--vma-size", "4MiB"], capsys)
    assert code == 0 and SimReport.from_csv(out).accesses == 500


def test_profile_gen(tmp_path, capsys):
    prof, snap = tmp_path / "p.txt", tmp_path / "s.csv"
    code, _, _ = run(["profile-gen", "--accesses", "400000", "--vma-size", "64MiB",
                      "--sampling-interval", "5000", "--name", "demo",
                      "--snapshot-out", str(snap), "--out", str(prof)], capsys)
    assert code == 0
    p = load_profile(prof)
    assert p.name == "demo" and len(p) >= 1
    assert snap.read_text().startswith("# taken_at=")


def test_default_hot_ranges():
    vma = AddrRange(0x4000_0000, 0x4000_0000 + 640 * MiB)
    ranges = cli.default_hot_ranges(vma)
    hot = [r for r, w in ranges if w == 0.9]
    assert hot == [AddrRange(vma.start + 200 * MiB, vma.start + 264 * MiB)]
    assert sum(w for _, w in ranges) == pytest.approx(1.0)
    assert ranges[0][0].start == vma.start and ranges[-1][0].end == vma.end


def test_config_file_matches_flags(tmp_path, capsys):
    flags = ["--policy", "thp", "--seed", "3", "--frag-occupancy", "0.2",
             "--tlb-entries", "32", "--hot", "0x40000000-0x40800000:1,0x40800000-0x44000000:1"]
    conf = tmp_path / "c.conf"
    conf.write_text(
        "# same settings as flags\n"
        "policy = thp\nseed = 3\nfrag_occupancy = 0.2\ntlb-entries = 32\n"
        "vma-size = 64MiB\naccesses = 20000\nmem-frames = 32768\n"
        "hot = 0x40000000-0x40800000:1, 0x40800000-0x44000000:1\n")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert cli.main(["run", "--config", str(conf), "--out", str(a)]) == 0
    hot_flags = ["--hot", "0x40000000-0x40800000:1", "--hot", "0x40800000-0x44000000:1"]
    assert cli.main(["run"] + flags[:-2] + hot_flags + SMALL + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_flags_override_config(tmp_path):
    conf = tmp_path / "c.conf"
    conf.write_text("policy = thp\nseed = 3\n")
    args = cli.parse_args(["run", "--config", str(conf), "--seed", "9"])
    assert args.policy == "thp" and args.seed == 9


@pytest.mark.parametrize("text", ["bogus = 1\n", "policy\n", "policy = nope\n",
                                  "frag-occupancy = 2\n"])
def test_bad_config_files(tmp_path, capsys, text):
    conf = tmp_path / "c.conf"
    conf.write_text(text)
    code, _, err = run(["run", "--config", str(conf)], capsys)
    assert code == 1 and "--config" in err


def test_every_config_field_reachable(tmp_path):
    prof = tmp_path / "p.txt"
    prof.write_text("")
    argv = ["run", "--policy", "ebpfmm", "--vma-start", "0x80000000",
            "--vma-size", "128MiB", "--mem-frames", "1000", "--frag-occupancy", "0.1",
            "--frag-pattern", "clustered", "--frag-movable", "0.5",
            "--tlb-entries", "8", "--walk-cycles", "300", "--hit-cycles", "1",
            "--monitor", "true", "--sampling-interval", "7", "--zero-cycles", "1",
            "--compact-cycles", "2", "--alloc-cycles", "3", "--horizon", "10",
            "--miss-fraction", "0.1", "--benefit-walk-cycles", "5",
            "--profile", str(prof), "--seed", "4", "--out", str(tmp_path / "r.csv")]
    cfg = cli.config_from_args(cli.parse_args(argv), "ebpfmm")
    default = SimConfig()
    # profile objects and trace paths are the file-based alternatives of
    # profile_path and workload
    alternatives = {"profile", "trace_path"}
    for f in dataclasses.fields(SimConfig):
        if f.name in alternatives:
            continue
        assert getattr(cfg, f.name) != getattr(default, f.name), f.name
    trace_cfg = cli.config_from_args(cli.parse_args(["run", "--trace", "t.csv"]), "thp")
    assert trace_cfg.trace_path == "t.csv" and trace_cfg.workload is None
