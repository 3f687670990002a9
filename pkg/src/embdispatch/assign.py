"""Dispatch decision engines.

* ``hungarian``: exact min-cost perfect matching on a square matrix.
* ``greedy_dispatch``: each row to its cheapest worker that still has room.
* ``ecomix``: rows with the largest gap between their two cheapest workers
  are solved exactly, the rest greedily.
* ``baseline_random``, ``baseline_roundrobin``, ``baseline_hitgreedy``:
  comparison dispatchers that ignore transmission cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .core import ClusterConfig, ConfigError, EmbeddingSample, InputError, SampleBatch
from .cost import CostMatrix, Snapshot

# seconds -> integer picoseconds for the exact solvers
COST_SCALE = 1e12


@dataclass(frozen=True)
class DispatchDecision:
    """``assignment[i]`` is the worker that trains sample ``i``; every worker gets exactly ``m``."""

    assignment: np.ndarray
    n: int
    m: int

    def __post_init__(self):
        a = np.array(self.assignment, dtype=np.int64)
        if a.ndim != 1 or a.size != self.n * self.m:
            raise InputError(f"decision must cover m*n = {self.n * self.m} samples, got {a.size}")
        if a.size and (a.min() < 0 or a.max() >= self.n):
            raise InputError("decision assigns a sample to a non-existent worker")
        counts = np.bincount(a, minlength=self.n)
        if np.any(counts != self.m):
            raise InputError(f"unbalanced decision: per-worker counts {counts.tolist()} != {self.m}")
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)

    def per_worker(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.assignment == j) for j in range(self.n)]

    def to_text(self) -> str:
        return "".join(f"{i} {w}\n" for i, w in enumerate(self.assignment.tolist()))


@dataclass(frozen=True)
class SquareCost:
    """Square matrix for the exact solver; column ``c`` stands for worker ``col_to_worker[c]``."""

    values: np.ndarray
    col_to_worker: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise InputError(f"exact solver needs a square matrix, got shape {values.shape}")
        if values.shape[0] < 1:
            raise InputError("exact solver needs order k >= 1")
        if not np.all(np.isfinite(values)):
            raise InputError("cost matrix contains non-finite values")
        if values.min() < 0:
            raise InputError("cost matrix contains negative values")
        cols = np.asarray(self.col_to_worker, dtype=np.int64)
        if cols.shape != (values.shape[1],):
            raise InputError("col_to_worker must map every column")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "col_to_worker", cols)

    @property
    def k(self) -> int:
        return self.values.shape[0]

    @classmethod
    def plain(cls, values) -> "SquareCost":
        values = np.asarray(values, dtype=np.float64)
        return cls(values, np.arange(values.shape[1]) if values.ndim == 2 else np.zeros(0))

    @classmethod
    def expand(cls, block: np.ndarray, per_worker: int) -> "SquareCost":
        """Repeat each worker column ``per_worker`` times (worker-major)."""
        block = np.asarray(block, dtype=np.float64)
        n = block.shape[1]
        return cls(np.repeat(block, per_worker, axis=1), np.repeat(np.arange(n), per_worker))


def to_int_costs(values: np.ndarray) -> np.ndarray:
    """Scale seconds to int64 picoseconds, saturating so path sums cannot overflow."""
    values = np.asarray(values, dtype=np.float64)
    limit = float(2**62 // (4 * (max(values.shape) + 1)))
    return np.minimum(np.rint(values * COST_SCALE), limit).astype(np.int64)


def hungarian(sq: SquareCost) -> tuple[np.ndarray, float]:
    """Exact min-cost perfect matching; returns (row -> column, total seconds)."""
    if not isinstance(sq, SquareCost):
        sq = SquareCost.plain(sq)
    cols = _kernels.hungarian_square(to_int_costs(sq.values))
    return cols, float(sq.values[np.arange(sq.k), cols].sum())


def solve_exact_block(block: np.ndarray, per_worker: int, method: str = "capacitated") -> np.ndarray:
    """Optimal rows -> worker for ``block`` (rows x n) with ``per_worker`` slots each.

    ``method="hungarian"`` expands the columns and runs the square solver;
    ``"capacitated"`` solves the same problem directly on the n worker columns.
    Both return an optimum of the expanded problem.
    """
    block = np.asarray(block, dtype=np.float64)
    rows, n = block.shape
    if rows != n * per_worker:
        raise InputError(f"exact block has {rows} rows, expected n * per_worker = {n * per_worker}")
    if rows == 0:
        return np.zeros(0, dtype=np.int64)
    if method == "hungarian":
        sq = SquareCost.expand(block, per_worker)
        cols, _ = hungarian(sq)
        return sq.col_to_worker[cols]
    if method == "capacitated":
        if not np.all(np.isfinite(block)) or block.min() < 0:
            raise InputError("cost matrix entries must be finite and non-negative")
        caps = np.full(n, per_worker, dtype=np.int64)
        return _kernels.capacitated_assignment(to_int_costs(block), caps)
    raise ConfigError(f"unknown exact method {method!r}")


def greedy_dispatch(matrix: CostMatrix, rows: Sequence[int], capacity: Sequence[int]) -> np.ndarray:
    """Send each row, in the given order, to its cheapest worker that still has room.

    Equal costs go to the lower worker index. Returns the chosen worker for
    each entry of ``rows``; ``capacity`` is not modified.
    """
    rows = np.asarray(rows, dtype=np.int64)
    left = np.array(capacity, dtype=np.int64)
    if left.shape != (matrix.cols,):
        raise InputError(f"need one capacity per worker ({matrix.cols}), got {left.shape}")
    if left.sum() < rows.size:
        raise InputError(f"total capacity {left.sum()} < {rows.size} rows")
    prefs = np.argsort(matrix.values[rows], axis=1, kind="stable")
    out = np.empty(rows.size, dtype=np.int64)
    for t, pref in enumerate(prefs.tolist()):
        for j in pref:
            if left[j] > 0:
                left[j] -= 1
                out[t] = j
                break
        else:
            raise InputError("capacities exhausted before all rows were dispatched")
    return out


def gap_order(matrix: CostMatrix) -> np.ndarray:
    """Row positions sorted by descending (second-min - min); ties keep row order."""
    return np.argsort(-matrix.gap_keys(), kind="stable")


def exact_slots(m: int, alpha: float) -> int:
    """Per-worker exact-solver slots, floor(m * alpha)."""
    return min(m, math.floor(m * alpha + 1e-9))


def ecomix(matrix: CostMatrix, cfg: ClusterConfig, alpha: float | None = None,
           exact: str = "capacitated") -> DispatchDecision:
    alpha = cfg.alpha if alpha is None else alpha
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    n, m = cfg.n, cfg.m
    if matrix.rows != n * m or matrix.cols != n:
        raise InputError(f"cost matrix is {matrix.rows}x{matrix.cols}, expected {n * m}x{n}")
    order = gap_order(matrix)
    q = exact_slots(m, alpha)
    top, rest = order[: n * q], order[n * q:]
    chosen = np.empty(matrix.rows, dtype=np.int64)
    chosen[top] = solve_exact_block(matrix.values[top], q, method=exact)
    chosen[rest] = greedy_dispatch(matrix, rest, np.full(n, m - q))
    assignment = np.empty(matrix.rows, dtype=np.int64)
    assignment[matrix.row_ids] = chosen
    return DispatchDecision(assignment, n, m)


def decision_cost(matrix: CostMatrix, decision: DispatchDecision) -> float:
    """Expected total of a decision under ``matrix`` (rows matched through ``row_ids``)."""
    return float(matrix.values[np.arange(matrix.rows), decision.assignment[matrix.row_ids]].sum())


def baseline_random(samples, cfg: ClusterConfig, rng: int | np.random.Generator = 0) -> DispatchDecision:
    """Uniformly random balanced decision."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    _check_count(samples, cfg)
    slots = np.repeat(np.arange(cfg.n, dtype=np.int64), cfg.m)
    return DispatchDecision(rng.permutation(slots), cfg.n, cfg.m)


def baseline_roundrobin(samples, cfg: ClusterConfig) -> DispatchDecision:
    _check_count(samples, cfg)
    return DispatchDecision(np.arange(cfg.samples_per_iteration) % cfg.n, cfg.n, cfg.m)


def hit_scores(batch: SampleBatch, snap: Snapshot) -> np.ndarray:
    """``scores[i, j]``: how many of sample ``i``'s embeddings worker ``j`` holds at the latest version."""
    ids = batch.ids
    known = ids < snap.num_embeddings
    hit = snap.latest[:, np.where(known, ids, 0)] & known
    return np.add.reduceat(hit.astype(np.int64), batch.offsets[:-1], axis=1).T


def baseline_hitgreedy(samples, snap: Snapshot, cfg: ClusterConfig) -> DispatchDecision:
    """Capacity-bounded greedy on the hit-count relevance score.

    Samples go in order of descending best score; each takes the open worker
    with the highest score. Score ties prefer worker ``i mod n`` and then the
    following workers cyclically, so an all-zero score matrix yields a
    round-robin decision.
    """
    batch = SampleBatch.from_samples(samples)
    _check_count(batch, cfg)
    n, m = cfg.n, cfg.m
    scores = hit_scores(batch, snap)
    order = np.argsort(-scores.max(axis=1), kind="stable")
    left = np.full(n, m, dtype=np.int64)
    assignment = np.empty(len(batch), dtype=np.int64)
    for i in order.tolist():
        row = scores[i]
        best, best_key = -1, None
        for j in range(n):
            if left[j] == 0:
                continue
            key = (-row[j], (j - i) % n)
            if best_key is None or key < best_key:
                best, best_key = j, key
        assignment[i] = best
        left[best] -= 1
    return DispatchDecision(assignment, n, m)


def _check_count(samples, cfg: ClusterConfig) -> None:
    count = len(samples)
    if count != cfg.samples_per_iteration:
        raise InputError(f"expected m*n = {cfg.samples_per_iteration} samples, got {count}")


class Mechanism:
    """A dispatcher as used by the simulator; ``uses_matrix`` says whether it needs the cost matrix."""

    name: str = "mechanism"
    uses_matrix = False

    def reset(self) -> None:
        """Restore the initial state (e.g. RNG) before a fresh run."""

    def decide(self, batch: SampleBatch, snap: Snapshot, matrix: CostMatrix | None,
               cfg: ClusterConfig) -> DispatchDecision:
        raise NotImplementedError


class EcoMix(Mechanism):
    uses_matrix = True

    def __init__(self, alpha: float, exact: str = "capacitated"):
        if not 0.0 <= alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
        self.alpha = float(alpha)
        self.exact = exact
        self.name = f"ecomix:{self.alpha:g}"

    def reset(self):
        # load the compiled kernels now so the first decision's latency excludes it
        solve_exact_block(np.zeros((2, 2)), 1, method=self.exact)

    def decide(self, batch, snap, matrix, cfg):
        return ecomix(matrix, cfg, self.alpha, exact=self.exact)


class RandomDispatch(Mechanism):
    name = "random"

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.reset()

    def reset(self):
        self._rng = np.random.default_rng(self.seed)

    def decide(self, batch, snap, matrix, cfg):
        return baseline_random(batch, cfg, self._rng)


class RoundRobin(Mechanism):
    name = "roundrobin"

    def decide(self, batch, snap, matrix, cfg):
        return baseline_roundrobin(batch, cfg)


class HitGreedy(Mechanism):
    name = "hitgreedy"

    def decide(self, batch, snap, matrix, cfg):
        return baseline_hitgreedy(batch, snap, cfg)


def make_mechanism(spec: str, seed: int = 0) -> Mechanism:
    """Parse ``ecomix:<alpha>``, ``random``, ``roundrobin`` or ``hitgreedy``."""
    name, _, arg = spec.strip().partition(":")
    name = name.lower()
    if name == "ecomix":
        try:
            alpha = float(arg) if arg else 1.0
        except ValueError:
            raise ConfigError(f"bad ecomix alpha in {spec!r}") from None
        return EcoMix(alpha)
    if arg:
        raise ConfigError(f"mechanism {name!r} takes no argument")
    if name == "random":
        return RandomDispatch(seed)
    if name == "roundrobin":
        return RoundRobin()
    if name == "hitgreedy":
        return HitGreedy()
    raise ConfigError(f"unknown mechanism {spec!r}")
