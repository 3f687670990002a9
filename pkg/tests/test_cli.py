import csv
import io
import itertools
import json
import time

import numpy as np
import pytest
from click.testing import CliRunner

from embdispatch.assign import greedy_dispatch, gap_order
from embdispatch.cli import bench_sizes, main, run_experiment, thread_cap
from embdispatch.config import cluster_from_values, load_values, parse_experiment, workload_from_values
from embdispatch.core import ConfigError, ParseError
from embdispatch.cost import CostMatrix, format_matrix
from embdispatch.workload import gen_zipf, read_trace

SMALL = """\
# small cluster for quick runs
cluster.n = 4
cluster.m = 8
cluster.bw = 5e9, 5e9, 5e8, 5e8
workload.total_embeddings = 4000
workload.sample_len = 10
workload.iterations = 25
workload.seed = 3
experiment.mechanisms = ecomix:1, ecomix:0.5, hitgreedy, random
experiment.reference = hitgreedy
experiment.warmup = 5
"""


def invoke(*args, **kw):
    return CliRunner().invoke(main, list(args), catch_exceptions=False, **kw)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def read_csv(path):
    return list(csv.DictReader(open(path)))


def test_generate_is_deterministic_and_round_trips(tmp_path):
    spec = write(tmp_path, "spec.txt", "cluster.n = 2\ncluster.m = 3\nworkload.iterations = 4\n"
                                       "workload.total_embeddings = 900\nworkload.sample_len = 5\n")
    a, b = str(tmp_path / "a.txt"), str(tmp_path / "b.txt")
    assert invoke("generate", "--spec", spec, "--out", a).exit_code == 0
    assert invoke("generate", "--spec", spec, "--out", b).exit_code == 0
    assert open(a, "rb").read() == open(b, "rb").read()
    lines = open(a).read().splitlines()
    assert len(lines) == 4 * 3 * 2
    values = load_values(spec)
    wl = workload_from_values(values)
    cluster = cluster_from_values(values, wl.total_embeddings)
    assert read_trace(a, cluster).batches == list(gen_zipf(wl, cluster))


def test_generate_unwritable_path(tmp_path):
    spec = write(tmp_path, "spec.txt", "workload.iterations = 1\ncluster.m = 1\n")
    r = CliRunner().invoke(main, ["generate", "--spec", spec, "--out", str(tmp_path / "no" / "x.txt")])
    assert r.exit_code == 2 and "cannot write" in r.output


def test_run_writes_outputs_and_is_deterministic(tmp_path):
    cfg = write(tmp_path, "exp.txt", SMALL)
    assert invoke("run", "--config", cfg, "--out-dir", str(tmp_path / "o1")).exit_code == 0
    assert invoke("run", "--config", cfg, "--out-dir", str(tmp_path / "o2")).exit_code == 0
    for name in ("summary.csv",):
        assert (tmp_path / "o1" / name).read_bytes() == (tmp_path / "o2" / name).read_bytes()

    def strip(p):
        return [{k: v for k, v in json.loads(l).items() if k != "decision_s"} for l in open(p)]

    assert strip(tmp_path / "o1" / "reports.jsonl") == strip(tmp_path / "o2" / "reports.jsonl")
    reports = strip(tmp_path / "o1" / "reports.jsonl")
    assert len(reports) == 4 * 25
    assert [r["mech"] for r in reports[::25]] == ["ecomix:1", "ecomix:0.5", "hitgreedy", "random"]
    rows = {r["mechanism"]: r for r in read_csv(tmp_path / "o1" / "summary.csv")}
    assert float(rows["hitgreedy"]["cost_reduction_pct"]) == 0.0
    assert "decision_s_mean" not in rows["hitgreedy"]
    lat = read_csv(tmp_path / "o1" / "latency.csv")
    assert [r["mechanism"] for r in lat] == list(rows)


def test_parallel_runs_match_sequential(tmp_path):
    exp = parse_experiment(SMALL)
    run_experiment(exp, tmp_path / "seq", jobs=1)
    run_experiment(exp, tmp_path / "par", jobs=2)
    assert (tmp_path / "seq" / "summary.csv").read_bytes() == (tmp_path / "par" / "summary.csv").read_bytes()


def test_run_reference_against_itself(tmp_path):
    cfg = write(tmp_path, "exp.txt", SMALL.replace(
        "experiment.mechanisms = ecomix:1, ecomix:0.5, hitgreedy, random", "experiment.mechanisms = random")
        .replace("experiment.reference = hitgreedy", "experiment.reference = random"))
    assert invoke("run", "--config", cfg, "--out-dir", str(tmp_path / "o")).exit_code == 0
    (row,) = read_csv(tmp_path / "o" / "summary.csv")
    assert float(row["cost_reduction_pct"]) == 0.0


def test_default_config_ecomix_beats_hitgreedy(tmp_path):
    cfg = write(tmp_path, "exp.txt", "workload.iterations = 40\n"
                                     "experiment.mechanisms = ecomix:1, hitgreedy\n")
    assert invoke("run", "--config", cfg, "--out-dir", str(tmp_path / "o")).exit_code == 0
    rows = {r["mechanism"]: r for r in read_csv(tmp_path / "o" / "summary.csv")}
    assert float(rows["ecomix:1"]["cost_reduction_pct"]) > 0


def test_budget_violation_exit_status(tmp_path):
    cfg = write(tmp_path, "exp.txt", SMALL + "experiment.training_budget_s = 1e-12\n")
    r = CliRunner().invoke(main, ["run", "--config", cfg, "--out-dir", str(tmp_path / "o")])
    assert r.exit_code == 1
    assert (tmp_path / "o" / "summary.csv").exists()


def test_run_from_trace(tmp_path):
    trace = write(tmp_path, "t.txt", "".join(f"{i % 7} {(i * 3) % 11 + 7}\n" for i in range(8 * 12)))
    cfg = write(tmp_path, "exp.txt", "cluster.n = 2\ncluster.m = 4\ncluster.cache_capacity = 10\n"
                                     "workload.trace = t.txt\nexperiment.mechanisms = roundrobin\n"
                                     "experiment.reference = roundrobin\nexperiment.warmup = 2\n")
    assert invoke("run", "--config", cfg, "--out-dir", str(tmp_path / "o")).exit_code == 0
    assert len(open(tmp_path / "o" / "reports.jsonl").readlines()) == 12


@pytest.mark.parametrize("text, needle", [
    ("cluster.nn = 3\n", "unknown key"),
    ("cluster.n = x\n", "bad value"),
    ("experiment.reference = random\n", "not among mechanisms"),
    ("workload.iterations = 5\nexperiment.warmup = 5\n", "warmup"),
    ("cluster.n = 3\ncluster.bw = 1e9, 2e9\n", "bandwidths"),
    ("cluster.m = 200\n", "cache_capacity"),
    ("cluster.n = 2\ncluster.n = 3\n", "duplicate"),
    ("just words\n", "key = value"),
    ("experiment.mechanisms = lru\n", "unknown mechanism"),
])
def test_config_errors_are_reported(tmp_path, text, needle):
    cfg = write(tmp_path, "exp.txt", text)
    r = CliRunner().invoke(main, ["run", "--config", cfg, "--out-dir", str(tmp_path / "o")])
    assert r.exit_code == 2
    assert needle in r.output


def test_config_defaults():
    exp = parse_experiment("")
    c = exp.cluster
    assert (c.n, c.m, c.d_tran, c.cache_capacity) == (8, 128, 2048, 4000)
    assert c.bandwidths == (5e9,) * 4 + (5e8,) * 4
    assert exp.warmup == 10 and exp.workload.iterations == 200
    assert parse_experiment("cluster.bw = 1e9\n").cluster.bandwidths == (1e9,) * 8


def test_config_parse_error_line_numbers():
    with pytest.raises(ParseError) as info:
        parse_experiment("# hi\ncluster.n = 2\nbogus.key = 1\n")
    assert info.value.lineno == 3


def test_thread_cap(monkeypatch):
    monkeypatch.setenv("EMBDISPATCH_THREADS", "3")
    assert thread_cap() == 3
    monkeypatch.setenv("EMBDISPATCH_THREADS", "0")
    assert thread_cap() >= 1
    monkeypatch.setenv("EMBDISPATCH_THREADS", "many")
    with pytest.raises(ConfigError):
        thread_cap()


def solve(tmp_path, values, n, m, alpha):
    p = write(tmp_path, "m.txt", format_matrix(np.asarray(values, dtype=float)))
    r = invoke("solve", "--matrix", p, "--n", str(n), "--m", str(m), "--alpha", str(alpha))
    assert r.exit_code == 0
    lines = r.output.splitlines()
    assign = [tuple(map(int, l.split())) for l in lines[:-1]]
    key, total = lines[-1].split()
    assert key == "total_expected_cost"
    return assign, float(total)


def test_solve_zero_matrix(tmp_path):
    assign, total = solve(tmp_path, np.zeros((6, 3)), 3, 2, 1.0)
    assert total == 0.0
    assert [i for i, _ in assign] == list(range(6))
    assert np.bincount([w for _, w in assign], minlength=3).tolist() == [2, 2, 2]


def test_solve_two_by_two_optimum(tmp_path):
    c = np.array([[4.0, 1.0], [2.0, 6.0]])
    _, total = solve(tmp_path, c, 2, 1, 1.0)
    best = min(c[0, p[0]] + c[1, p[1]] for p in itertools.permutations(range(2)))
    assert total == best == 3.0


def test_solve_alpha0_is_greedy(tmp_path):
    c = np.random.default_rng(4).random((12, 3))
    assign, _ = solve(tmp_path, c, 3, 4, 0.0)
    mat = CostMatrix.of(c)
    order = gap_order(mat)
    want = np.empty(12, dtype=int)
    want[order] = greedy_dispatch(mat, order, [4, 4, 4])
    assert [w for _, w in assign] == want.tolist()


def test_solve_shape_mismatch(tmp_path):
    p = write(tmp_path, "m.txt", format_matrix(np.zeros((5, 2))))
    r = CliRunner().invoke(main, ["solve", "--matrix", p, "--n", "2", "--m", "2"])
    assert r.exit_code == 2


def test_solve_to_file(tmp_path):
    p = write(tmp_path, "m.txt", format_matrix(np.array([[1.0, 2.0], [2.0, 1.0]])))
    out = tmp_path / "d.txt"
    assert invoke("solve", "--matrix", p, "--n", "2", "--m", "1", "--out", str(out)).exit_code == 0
    assert out.read_text() == "0 0\n1 1\ntotal_expected_cost 2.0\n"


def test_bench_small_sizes():
    t0 = time.perf_counter()
    rows = bench_sizes([8], repeats=1)
    assert time.perf_counter() - t0 < 1.0 or rows[0]["ms"] < 1000
    assert rows[0]["k"] == 8


def test_bench_table_and_monotonicity():
    r = invoke("bench", "--sizes", "64,256,512")
    assert r.exit_code == 0
    lines = r.output.splitlines()
    ks = [int(l.split()[0]) for l in lines[1:4]]
    assert ks == [64, 256, 512]
    rows = bench_sizes([256, 512], repeats=2)
    assert rows[1]["ms"] > rows[0]["ms"]
    assert rows[0]["reference_serial_ms"] == 9 and rows[1]["reference_serial_ms"] == 62
    assert "log-log slope" in r.output
