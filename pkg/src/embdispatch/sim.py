"""Iteration-driven BSP simulation of embedding traffic between workers and the PS.

Per iteration, after a dispatch decision:

1. update push: every embedding some worker needs but lacks the latest copy
   of is pushed by each current owner (once per owner), after which the PS
   holds the latest value;
2. miss pull: each worker pulls every needed embedding it lacks, evicting
   unneeded entries (evict push for owned ones) when its cache is full;
3. training: the workers that trained an embedding become its owners and
   every other cached copy of it is outdated.
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .assign import DispatchDecision, Mechanism, decision_cost
from .cache import WorkerCache, evict_for
from .core import ClusterConfig, EmbeddingState, InputError, SampleBatch
from .cost import Snapshot, build_matrix

OPS = ("miss_pull", "update_push", "evict_push")


def exact_cost(unit_costs: Sequence[float], counts: Sequence[int]) -> float:
    """Correctly rounded sum of ``counts[j]`` transfers at ``unit_costs[j]`` seconds each."""
    return float(sum((Fraction(c) * int(k) for c, k in zip(unit_costs, counts)), Fraction(0)))


@dataclass
class IterationReport:
    iteration: int
    mechanism: str
    miss_pull: np.ndarray
    update_push: np.ndarray
    evict_push: np.ndarray
    cost_s: np.ndarray
    total_cost_s: float
    hits: np.ndarray
    lookups: np.ndarray
    decision_latency: float = 0.0
    matrix_latency: float = 0.0
    expected_cost_s: float | None = None

    @property
    def hit_count(self) -> int:
        return int(self.hits.sum())

    @property
    def lookup_count(self) -> int:
        return int(self.lookups.sum())

    def ops(self) -> np.ndarray:
        return self.miss_pull + self.update_push + self.evict_push

    def to_json_dict(self) -> dict:
        return {
            "iter": self.iteration,
            "mech": self.mechanism,
            "miss_pull": int(self.miss_pull.sum()),
            "update_push": int(self.update_push.sum()),
            "evict_push": int(self.evict_push.sum()),
            "cost_s": self.total_cost_s,
            "hits": self.hit_count,
            "lookups": self.lookup_count,
            "decision_s": self.decision_latency,
            "per_worker": {
                "miss_pull": self.miss_pull.tolist(),
                "update_push": self.update_push.tolist(),
                "evict_push": self.evict_push.tolist(),
                "cost_s": self.cost_s.tolist(),
                "hits": self.hits.tolist(),
                "lookups": self.lookups.tolist(),
            },
        }


class SimState:
    """Caches of all workers plus the global ownership/freshness of every embedding."""

    def __init__(self, cfg: ClusterConfig, num_embeddings: int, cache_order=None):
        self.cfg = cfg
        self.num_embeddings = int(num_embeddings)
        shape = (cfg.n, self.num_embeddings)
        self.caches = [WorkerCache(cfg.cache_capacity, cache_order) for _ in range(cfg.n)]
        self.latest = np.zeros(shape, dtype=np.bool_)
        self.owner = np.zeros(shape, dtype=np.bool_)
        self.resident = np.zeros(shape, dtype=np.bool_)
        self.clock = 0
        self.unit_costs = cfg.unit_costs()

    def snapshot(self) -> Snapshot:
        return Snapshot(self.latest, self.owner, self.resident)

    def embedding_state(self, embedding_id: int) -> EmbeddingState:
        x = int(embedding_id)
        return EmbeddingState(
            frozenset(np.flatnonzero(self.owner[:, x]).tolist()),
            frozenset(np.flatnonzero(self.latest[:, x]).tolist()),
        )

    def check_consistency(self) -> None:
        """Raise AssertionError unless caches and the global state agree."""
        for j, cache in enumerate(self.caches):
            ids = np.array(cache.resident_ids(), dtype=np.int64)
            row = np.zeros(self.num_embeddings, dtype=np.bool_)
            row[ids] = True
            assert np.array_equal(row, self.resident[j]), f"worker {j}: resident set mismatch"
            assert len(cache) <= cache.capacity, f"worker {j}: over capacity"
            flagged = np.zeros(self.num_embeddings, dtype=np.bool_)
            flagged[cache.latest_ids()] = True
            assert np.array_equal(flagged, self.latest[j]), f"worker {j}: version flags mismatch"
        assert not np.any(self.latest & ~self.resident), "latest copy not resident"
        assert not np.any(self.owner & ~self.latest), "owner without latest copy"
        owned = self.owner.any(axis=0)
        assert np.array_equal(self.latest[:, owned], self.owner[:, owned]), \
            "owned embedding has non-owner latest holders"


def step(state: SimState, samples: SampleBatch | Sequence, decision: DispatchDecision,
         cfg: ClusterConfig | None = None, mechanism: str = "") -> IterationReport:
    """Apply one iteration's dispatch decision and account every transmission."""
    cfg = cfg or state.cfg
    batch = SampleBatch.from_samples(samples)
    n = cfg.n
    if decision.n != n or decision.m != cfg.m:
        raise InputError(f"decision is for n={decision.n}, m={decision.m}; config has n={n}, m={cfg.m}")
    if len(batch) != decision.assignment.size:
        raise InputError(f"{len(batch)} samples but decision covers {decision.assignment.size}")
    ids = batch.ids
    if ids.size and ids.max() >= state.num_embeddings:
        raise InputError(f"embedding id {int(ids.max())} >= {state.num_embeddings}")
    workers = decision.assignment[batch.owner_rows()]
    lookups = np.bincount(workers, minlength=n).astype(np.int64)

    need = np.zeros_like(state.latest)
    need[workers, ids] = True
    lack = need & ~state.latest

    # phase 1: on-demand update push
    wanted = lack.any(axis=0)
    pushers = state.owner & wanted
    update_push = pushers.sum(axis=1).astype(np.int64)
    state.owner[pushers] = False

    # phase 2: evict + miss pull
    miss_pull = np.zeros(n, dtype=np.int64)
    evict_push = np.zeros(n, dtype=np.int64)
    for j, cache in enumerate(state.caches):
        needed = np.flatnonzero(need[j])
        missing = np.flatnonzero(lack[j])
        new = missing[~state.resident[j, missing]]
        victims = evict_for(cache, new.size, state.owner[j], protect=need[j])
        if victims:
            gone = np.fromiter((v for v, _ in victims), dtype=np.int64, count=len(victims))
            evict_push[j] = sum(pushed for _, pushed in victims)
            state.owner[j, gone] = False
            state.latest[j, gone] = False
            state.resident[j, gone] = False
        cache.touch_many(needed, now=state.clock, latest=True)
        state.resident[j, new] = True
        state.latest[j, missing] = True
        miss_pull[j] = missing.size

    # phase 3: trainers own their embeddings, other copies go stale
    trained = need.any(axis=0)
    stale = state.latest & ~need
    stale[:, ~trained] = False
    for j, cache in enumerate(state.caches):
        cache.set_outdated(np.flatnonzero(stale[j]))
    state.owner[:, trained] = need[:, trained]
    state.latest[:, trained] = need[:, trained]
    iteration = state.clock
    state.clock += 1

    ops = miss_pull + update_push + evict_push
    unit = state.unit_costs
    return IterationReport(
        iteration=iteration,
        mechanism=mechanism,
        miss_pull=miss_pull,
        update_push=update_push,
        evict_push=evict_push,
        cost_s=unit * ops,
        total_cost_s=exact_cost(unit, ops),
        hits=lookups - miss_pull,
        lookups=lookups,
    )


@dataclass
class RunSummary:
    """Totals over the post-warm-up iterations of one mechanism's run."""

    mechanism: str
    iterations: int
    warmup: int
    bandwidths: tuple[float, ...]
    unit_costs: tuple[float, ...]
    miss_pull: np.ndarray
    update_push: np.ndarray
    evict_push: np.ndarray
    hits: int
    lookups: int
    expected_cost_s: float | None
    decision_s_mean: float
    decision_s_max: float
    matrix_s_mean: float
    budget_s: float | None
    budget_violations: list[int] = field(default_factory=list)
    workload_digest: str = ""

    @property
    def ops(self) -> np.ndarray:
        return self.miss_pull + self.update_push + self.evict_push

    @property
    def total_ops(self) -> int:
        return int(self.ops.sum())

    @property
    def cost_s(self) -> float:
        return exact_cost(self.unit_costs, self.ops)

    @property
    def hit_ratio(self) -> float:
        return self.hits / self.lookups if self.lookups else 0.0

    def op_fraction(self, op: str, workers: Iterable[int] | None = None) -> float:
        total = self.total_ops
        if not total:
            return 0.0
        counts = getattr(self, op)
        idx = list(range(len(counts))) if workers is None else list(workers)
        return float(counts[idx].sum()) / total

    def class_share(self, workers: Iterable[int]) -> float:
        """Fraction of all transmission operations performed by ``workers``."""
        total = self.total_ops
        return float(self.ops[list(workers)].sum()) / total if total else 0.0


@dataclass
class RunResult:
    reports: list[IterationReport]
    summary: RunSummary


def summarize(reports: Sequence[IterationReport], cfg: ClusterConfig, mechanism: str,
              warmup: int = 10, budget_s: float | None = None, digest: str = "") -> RunSummary:
    kept = [r for r in reports if r.iteration >= warmup]
    n = cfg.n

    def total(attr):
        return np.sum([getattr(r, attr) for r in kept], axis=0).astype(np.int64) if kept \
            else np.zeros(n, dtype=np.int64)

    expected = [r.expected_cost_s for r in kept]
    decisions = [r.decision_latency for r in reports]
    violations = [] if not budget_s else [r.iteration for r in reports if r.decision_latency > budget_s]
    return RunSummary(
        mechanism=mechanism,
        iterations=len(kept),
        warmup=warmup,
        bandwidths=cfg.bandwidths,
        unit_costs=tuple(cfg.unit_costs().tolist()),
        miss_pull=total("miss_pull"),
        update_push=total("update_push"),
        evict_push=total("evict_push"),
        hits=int(sum(r.hit_count for r in kept)),
        lookups=int(sum(r.lookup_count for r in kept)),
        expected_cost_s=math.fsum(expected) if kept and None not in expected else None,
        decision_s_mean=float(np.mean(decisions)) if decisions else 0.0,
        decision_s_max=float(np.max(decisions)) if decisions else 0.0,
        matrix_s_mean=float(np.mean([r.matrix_latency for r in reports])) if reports else 0.0,
        budget_s=budget_s,
        budget_violations=violations,
        workload_digest=digest,
    )


def run(
    workload: Iterable[SampleBatch],
    mechanism: Mechanism,
    cfg: ClusterConfig,
    num_embeddings: int,
    *,
    warmup: int = 10,
    budget_s: float | None = None,
    check_invariants: bool = False,
    cache_order=None,
    keep_decisions: bool = False,
) -> RunResult:
    """Simulate ``mechanism`` over every iteration of ``workload``.

    With ``keep_decisions`` the dispatch decisions are attached to the result
    as ``result.decisions`` (used for replay checks).
    """
    mechanism.reset()
    state = SimState(cfg, num_embeddings, cache_order)
    reports: list[IterationReport] = []
    decisions: list[DispatchDecision] = []
    digest = hashlib.sha256()
    for batch in workload:
        if len(batch) != cfg.samples_per_iteration:
            raise InputError(
                f"iteration {state.clock}: workload yielded {len(batch)} samples, "
                f"expected m*n = {cfg.samples_per_iteration}"
            )
        digest.update(batch.offsets.tobytes())
        digest.update(batch.ids.tobytes())
        snap = state.snapshot()
        matrix = None
        matrix_s = 0.0
        if mechanism.uses_matrix:
            t0 = time.perf_counter()
            matrix = build_matrix(batch, snap, cfg)
            matrix_s = time.perf_counter() - t0
        t0 = time.perf_counter()
        decision = mechanism.decide(batch, snap, matrix, cfg)
        decision_s = time.perf_counter() - t0
        report = step(state, batch, decision, cfg, mechanism.name)
        report.decision_latency = decision_s
        report.matrix_latency = matrix_s
        if matrix is not None:
            report.expected_cost_s = decision_cost(matrix, decision)
        if check_invariants:
            state.check_consistency()
        reports.append(report)
        if keep_decisions:
            decisions.append(decision)
    summary = summarize(reports, cfg, mechanism.name, warmup, budget_s, digest.hexdigest())
    result = RunResult(reports, summary)
    if keep_decisions:
        result.decisions = decisions
    return result


def bandwidth_label(bits_per_second: float) -> str:
    return f"{bits_per_second / 1e9:g}Gbps"


def summarize_comparison(summaries: Sequence[RunSummary], reference: str) -> list[dict]:
    """One row per mechanism: totals, cost reduction vs ``reference``, hit ratio, ingredients.

    Ingredient shares are fractions of the mechanism's total operation count,
    split by link-bandwidth class (fastest class first).
    """
    by_name = {s.mechanism: s for s in summaries}
    if reference not in by_name:
        raise InputError(f"reference mechanism {reference!r} not among {list(by_name)}")
    digests = {s.workload_digest for s in summaries}
    configs = {(s.bandwidths, s.unit_costs, s.iterations) for s in summaries}
    if len(digests) > 1 or len(configs) > 1:
        raise InputError("summaries were produced from different workloads or configurations")
    ref_cost = by_name[reference].cost_s
    rows = []
    for s in summaries:
        classes: dict[float, list[int]] = {}
        for j, b in sorted(enumerate(s.bandwidths), key=lambda t: (-t[1], t[0])):
            classes.setdefault(b, []).append(j)
        cost = s.cost_s
        row = {
            "mechanism": s.mechanism,
            "iterations": s.iterations,
            "lookups": s.lookups,
            "hits": s.hits,
            "hit_ratio": s.hit_ratio,
            "miss_pull": int(s.miss_pull.sum()),
            "update_push": int(s.update_push.sum()),
            "evict_push": int(s.evict_push.sum()),
            "total_ops": s.total_ops,
            "cost_s": cost,
            "expected_cost_s": s.expected_cost_s,
            "cost_reduction_pct": 100.0 * (ref_cost - cost) / ref_cost if ref_cost else 0.0,
        }
        for op in OPS:
            row[f"{op}_frac"] = s.op_fraction(op)
        for bw, workers in classes.items():
            label = bandwidth_label(bw)
            row[f"{label}_ops_share"] = s.class_share(workers)
            for op in OPS:
                row[f"{label}_{op}_share"] = s.op_fraction(op, workers)
        rows.append(row)
    return rows
