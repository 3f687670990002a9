"""Command-line front end: generate traces, run experiments, solve matrices, benchmark."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from .assign import SquareCost, decision_cost, ecomix, hungarian, make_mechanism
from .config import (
    ExperimentConfig,
    cluster_from_values,
    load_experiment,
    load_values,
    workload_from_values,
)
from .core import ClusterConfig, ConfigError, EmbDispatchError
from .cost import CostMatrix
from .sim import run, summarize_comparison
from .workload import gen_zipf, read_trace, write_trace

# serial milliseconds per batch-per-worker at n=8, as published for reference
REFERENCE_SERIAL_MS = {32: 9, 64: 62, 128: 528, 256: 3360, 512: 50976, 1024: 134986}

LATENCY_FIELDS = ("mechanism", "decision_s_mean", "decision_s_max", "matrix_s_mean",
                  "budget_s", "budget_violations")


def thread_cap() -> int:
    """Worker processes for mechanism runs, from ``EMBDISPATCH_THREADS`` (0 = one per CPU)."""
    raw = os.environ.get("EMBDISPATCH_THREADS", "0").strip() or "0"
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigError(f"EMBDISPATCH_THREADS must be an integer, got {raw!r}") from None
    if cap < 0:
        raise ConfigError(f"EMBDISPATCH_THREADS must be >= 0, got {cap}")
    return cap or (os.cpu_count() or 1)


def load_workload(exp: ExperimentConfig):
    """Materialize the iteration stream; returns (batches, num_embeddings, cluster config)."""
    cfg = exp.cluster
    if exp.trace is None:
        batches = list(gen_zipf(exp.workload, cfg))
        cfg.check_fits(exp.workload.sample_len)
        return batches, exp.workload.total_embeddings, cfg
    trace = read_trace(exp.trace, cfg, exp.schema)
    if exp.cache_ratio is not None:
        cfg = replace(cfg, cache_capacity=int(exp.cache_ratio * trace.num_embeddings + 1e-9))
    if exp.warmup >= len(trace):
        raise ConfigError(f"warmup ({exp.warmup}) must be < trace iterations ({len(trace)})")
    cfg.check_fits(trace.max_sample_len)
    return trace.batches, trace.num_embeddings, cfg


def run_mechanism(exp: ExperimentConfig, name: str):
    """One mechanism over the experiment's stream; returns (JSONL text, summary)."""
    batches, num_embeddings, cfg = load_workload(exp)
    result = run(batches, make_mechanism(name, exp.seed), cfg, num_embeddings,
                 warmup=exp.warmup, budget_s=exp.training_budget_s)
    lines = "".join(json.dumps(r.to_json_dict()) + "\n" for r in result.reports)
    return lines, result.summary


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_csv(rows: list[dict], fields=None) -> str:
    fields = list(fields or (rows[0] if rows else []))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(fields)
    for row in rows:
        writer.writerow([_cell(row.get(f)) for f in fields])
    return buf.getvalue()


def latency_rows(summaries) -> list[dict]:
    return [
        {
            "mechanism": s.mechanism,
            "decision_s_mean": s.decision_s_mean,
            "decision_s_max": s.decision_s_max,
            "matrix_s_mean": s.matrix_s_mean,
            "budget_s": s.budget_s,
            "budget_violations": len(s.budget_violations),
        }
        for s in summaries
    ]


def run_experiment(exp: ExperimentConfig, out_dir: str | Path, jobs: int | None = None) -> list:
    """Run every mechanism and write reports.jsonl, summary.csv and latency.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = min(jobs or thread_cap(), len(exp.mechanisms))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_mechanism, [exp] * len(exp.mechanisms), exp.mechanisms))
    else:
        results = [run_mechanism(exp, name) for name in exp.mechanisms]
    summaries = [s for _, s in results]
    (out / "reports.jsonl").write_text("".join(text for text, _ in results))
    (out / "summary.csv").write_text(format_csv(summarize_comparison(summaries, exp.reference)))
    (out / "latency.csv").write_text(format_csv(latency_rows(summaries), LATENCY_FIELDS))
    return summaries


def bench_sizes(sizes, n: int = 8, repeats: int = 3, seed: int = 0) -> list[dict]:
    """Best-of-``repeats`` hungarian latency on column-expanded random matrices of order k."""
    rng = np.random.default_rng(seed)
    hungarian(SquareCost.plain(np.ones((2, 2))))  # compile outside the timing
    rows = []
    for k in sizes:
        if k % n == 0:
            sq = SquareCost.expand(rng.random((k, n)), k // n)
        else:
            sq = SquareCost.plain(rng.random((k, k)))
        best = math.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            hungarian(sq)
            best = min(best, time.perf_counter() - t0)
        bpw = k // n if k % n == 0 else None
        rows.append({"k": k, "bpw": bpw, "ms": best * 1e3,
                     "reference_serial_ms": REFERENCE_SERIAL_MS.get(bpw)})
    return rows


def loglog_slope(ks, ms) -> float:
    x, y = np.log(np.asarray(ks, dtype=float)), np.log(np.asarray(ms, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


@click.group()
def main():
    """Heterogeneity-aware embedding dispatch simulator."""


def _fail(exc: Exception):
    click.echo(f"error: {exc}", err=True)
    sys.exit(2)


@main.command()
@click.option("--spec", "spec_path", required=True, type=click.Path(dir_okay=False),
              help="key=value file with workload.* (and cluster.n / cluster.m) keys")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def generate(spec_path, out_path):
    """Write a synthetic Zipf trace."""
    try:
        values = load_values(spec_path)
        spec = workload_from_values(values)
        cfg = cluster_from_values(values, spec.total_embeddings)
        count = write_trace(gen_zipf(spec, cfg), out_path)
    except EmbDispatchError as exc:
        _fail(exc)
    except OSError as exc:
        _fail(f"cannot write {out_path}: {exc.strerror}")
    click.echo(f"wrote {count} samples to {out_path}")


@main.command("run")
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
def run_cmd(config_path, out_dir):
    """Run every configured mechanism over the same stream and compare them."""
    try:
        exp = load_experiment(config_path)
        summaries = run_experiment(exp, out_dir)
    except EmbDispatchError as exc:
        _fail(exc)
    for s in summaries:
        click.echo(f"{s.mechanism:>14}  cost_s={s.cost_s:.6g}  hit_ratio={s.hit_ratio:.4f}  "
                   f"decision_ms_max={s.decision_s_max * 1e3:.3g}")
    late = {s.mechanism: len(s.budget_violations) for s in summaries if s.budget_violations}
    if late:
        click.echo(f"decision latency exceeded the training budget: {late}", err=True)
        sys.exit(1)


@main.command()
@click.option("--matrix", "matrix_path", required=True, type=click.Path(dir_okay=False))
@click.option("--n", type=click.IntRange(min=1), required=True)
@click.option("--m", type=click.IntRange(min=1), required=True)
@click.option("--alpha", type=click.FloatRange(0.0, 1.0), default=1.0, show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None,
              help="decision file (default: stdout)")
def solve(matrix_path, n, m, alpha, out_path):
    """Dispatch the rows of a cost-matrix file with EcoMix."""
    try:
        matrix = CostMatrix.load(matrix_path)
        cfg = ClusterConfig(n=n, m=m, bandwidths=(1.0,) * n, cache_capacity=1, alpha=alpha)
        decision = ecomix(matrix, cfg, alpha)
    except EmbDispatchError as exc:
        _fail(exc)
    except OSError as exc:
        _fail(f"cannot read {matrix_path}: {exc.strerror}")
    text = decision.to_text() + f"total_expected_cost {decision_cost(matrix, decision)!r}\n"
    if out_path:
        Path(out_path).write_text(text)
    else:
        click.echo(text, nl=False)


@main.command()
@click.option("--sizes", default="256,512,1024", show_default=True,
              help="comma-separated matrix orders k")
@click.option("--n", type=click.IntRange(min=1), default=8, show_default=True)
@click.option("--repeats", type=click.IntRange(min=1), default=3, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def bench(sizes, n, repeats, seed):
    """Time the exact solver and check that latency grows superlinearly in k."""
    try:
        ks = sorted({int(t) for t in sizes.split(",") if t.strip()})
    except ValueError:
        _fail(f"bad --sizes {sizes!r}")
    if not ks or ks[0] < 1:
        _fail("--sizes needs positive integers")
    rows = bench_sizes(ks, n, repeats, seed)
    click.echo(f"{'k':>6} {'bpw':>5} {'ms':>12} {'reference_serial_ms':>20}")
    for r in rows:
        click.echo(f"{r['k']:>6} {_cell(r['bpw']):>5} {r['ms']:>12.3f} "
                   f"{_cell(r['reference_serial_ms']):>20}")
    if len(rows) < 2:
        return
    ms = [r["ms"] for r in rows]
    slope = loglog_slope(ks, ms)
    click.echo(f"log-log slope: {slope:.3f}")
    increasing = all(a < b for a, b in zip(ms, ms[1:]))
    if not increasing or slope <= 1.0:
        click.echo("latency does not grow superlinearly in k", err=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
