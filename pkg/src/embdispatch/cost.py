"""Expected transmission cost of dispatching each sample to each worker."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import (
    ClusterConfig,
    ConfigError,
    EmbeddingSample,
    EmbeddingState,
    InputError,
    ParseError,
    SampleBatch,
)


class Snapshot:
    """Read-only view of every worker's cache and every embedding's ownership.

    Stored densely as ``(n, num_embeddings)`` boolean arrays. Ids at or beyond
    ``num_embeddings`` are unknown: the parameter server holds their latest
    value and no worker caches them.
    """

    def __init__(self, latest: np.ndarray, owner: np.ndarray, resident: np.ndarray | None = None):
        latest = np.array(latest, dtype=np.bool_)
        owner = np.array(owner, dtype=np.bool_)
        if resident is None:
            resident = latest.copy()
        else:
            resident = np.array(resident, dtype=np.bool_)
        if latest.ndim != 2 or latest.shape != owner.shape or latest.shape != resident.shape:
            raise InputError("latest, owner and resident must be equal-shape 2-D arrays")
        if np.any(owner & ~latest):
            raise InputError("an owner must hold the latest copy")
        if np.any(latest & ~resident):
            raise InputError("a latest copy must be resident")
        has_owner = owner.any(axis=0)
        if np.any(latest[:, has_owner] != owner[:, has_owner]):
            raise InputError("while owners exist, the latest holders must be exactly the owners")
        for a in (latest, owner, resident):
            a.setflags(write=False)
        self.latest = latest
        self.owner = owner
        self.resident = resident

    @property
    def n(self) -> int:
        return self.latest.shape[0]

    @property
    def num_embeddings(self) -> int:
        return self.latest.shape[1]

    @classmethod
    def empty(cls, n: int, num_embeddings: int) -> "Snapshot":
        z = np.zeros((n, num_embeddings), dtype=np.bool_)
        return cls(z, z, z)

    @classmethod
    def from_states(
        cls,
        n: int,
        states: Mapping[int, EmbeddingState],
        resident: Mapping[int, Sequence[int]] | None = None,
        num_embeddings: int | None = None,
    ) -> "Snapshot":
        """Build from per-embedding states, plus extra (possibly outdated) resident ids per worker."""
        size = 1 + max([*states, *(x for ids in (resident or {}).values() for x in ids)], default=-1)
        num_embeddings = size if num_embeddings is None else num_embeddings
        latest = np.zeros((n, num_embeddings), dtype=np.bool_)
        owner = np.zeros_like(latest)
        res = np.zeros_like(latest)
        for x, st in states.items():
            for j in st.latest_holders:
                latest[j, x] = True
            for j in st.owners:
                owner[j, x] = True
        for j, ids in (resident or {}).items():
            res[j, list(ids)] = True
        return cls(latest, owner, res | latest)

    def state(self, embedding_id: int) -> EmbeddingState:
        x = int(embedding_id)
        if x >= self.num_embeddings:
            return EmbeddingState()
        return EmbeddingState(
            frozenset(np.flatnonzero(self.owner[:, x]).tolist()),
            frozenset(np.flatnonzero(self.latest[:, x]).tolist()),
        )

    def resident_ids(self, worker: int) -> frozenset[int]:
        return frozenset(np.flatnonzero(self.resident[worker]).tolist())


@dataclass(frozen=True)
class CostMatrix:
    """``values[i, j]`` is the expected seconds of training sample ``row_ids[i]`` on worker ``j``."""

    values: np.ndarray
    row_ids: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        row_ids = np.array(self.row_ids, dtype=np.int64)
        if values.ndim != 2 or values.shape[0] != row_ids.size:
            raise InputError(f"cost matrix shape {values.shape} does not match {row_ids.size} row ids")
        if values.size and (not np.all(np.isfinite(values)) or values.min() < 0):
            raise InputError("cost matrix entries must be finite and non-negative")
        values.setflags(write=False)
        row_ids.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "row_ids", row_ids)

    @classmethod
    def of(cls, values) -> "CostMatrix":
        values = np.asarray(values, dtype=np.float64)
        return cls(values, np.arange(values.shape[0]))

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    def total(self, assignment: np.ndarray) -> float:
        """Expected total of a row -> worker assignment (indexed by matrix row)."""
        assignment = np.asarray(assignment, dtype=np.int64)
        return float(np.sum(self.values[np.arange(self.rows), assignment]))

    def gap_keys(self) -> np.ndarray:
        """Second-smallest minus smallest cost, per row."""
        if self.cols < 2:
            return np.zeros(self.rows)
        two = np.partition(self.values, 1, axis=1)[:, :2]
        return two[:, 1] - two[:, 0]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(format_matrix(self.values))

    @classmethod
    def load(cls, path: str | Path) -> "CostMatrix":
        return cls.of(parse_matrix(Path(path).read_text(), path=str(path)))


def format_matrix(values: np.ndarray) -> str:
    values = np.asarray(values, dtype=np.float64)
    lines = [f"{values.shape[0]} {values.shape[1]}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in values]
    return "\n".join(lines) + "\n"


def parse_matrix(text: str, path: str | None = None) -> np.ndarray:
    lines = [(i, ln.split()) for i, ln in enumerate(text.splitlines(), start=1) if ln.strip()]
    if not lines:
        raise ParseError("empty matrix file", path=path)
    lineno, head = lines[0]
    try:
        rows, cols = (int(t) for t in head)
    except ValueError:
        raise ParseError(f"expected 'rows cols' header, got {' '.join(head)!r}", lineno, path) from None
    if rows < 0 or cols < 1:
        raise ParseError(f"bad matrix dimensions {rows}x{cols}", lineno, path)
    body = lines[1:]
    if len(body) != rows:
        raise ParseError(f"header declares {rows} rows, found {len(body)}", lineno, path)
    out = np.empty((rows, cols))
    for r, (lineno, toks) in enumerate(body):
        if len(toks) != cols:
            raise ParseError(f"expected {cols} values, found {len(toks)}", lineno, path)
        try:
            out[r] = [float(t) for t in toks]
        except ValueError as exc:
            raise ParseError(str(exc), lineno, path) from None
    return out


def _size_of(x: int, cfg: ClusterConfig, sizes) -> float:
    return float(cfg.d_tran if sizes is None else sizes[x])


def expected_cost(
    sample: EmbeddingSample | Sequence[int],
    worker: int,
    snap: Snapshot,
    cfg: ClusterConfig,
    sizes: Sequence[float] | np.ndarray | None = None,
) -> float:
    """Expected seconds of moving ``sample``'s embeddings if ``worker`` trains it.

    Each embedding ``worker`` lacks the latest copy of costs one pull over
    ``worker``'s link plus one push by every other worker that owns an
    unsynchronized copy. ``sizes`` optionally gives per-embedding byte sizes.
    """
    if not 0 <= worker < cfg.n:
        raise ConfigError(f"worker {worker} out of range for n={cfg.n}")
    ids = sample.ids if isinstance(sample, EmbeddingSample) else tuple(sample)
    total = 0.0
    for x in ids:
        st = snap.state(x)
        if worker in st.latest_holders:
            continue
        bits = _size_of(x, cfg, sizes) * 8
        total += bits / cfg.bandwidths[worker]
        for other in sorted(st.owners):
            if other != worker:
                total += bits / cfg.bandwidths[other]
    return total


def build_matrix(
    samples: Sequence[EmbeddingSample] | SampleBatch,
    snap: Snapshot,
    cfg: ClusterConfig,
    sizes: Sequence[float] | np.ndarray | None = None,
) -> CostMatrix:
    batch = SampleBatch.from_samples(samples)
    if len(batch) != cfg.samples_per_iteration:
        raise InputError(f"expected m*n = {cfg.samples_per_iteration} samples, got {len(batch)}")
    if snap.n != cfg.n:
        raise InputError(f"snapshot has {snap.n} workers, config has {cfg.n}")
    ids = batch.ids
    known = ids < snap.num_embeddings
    safe = np.where(known, ids, 0)
    miss = ~(snap.latest[:, safe] & known)
    owned = snap.owner[:, safe] & known
    if sizes is None:
        bits = np.full(ids.size, cfg.d_tran * 8.0)
    else:
        bits = np.asarray(sizes, dtype=np.float64)[ids] * 8.0
    inv_bw = 1.0 / np.asarray(cfg.bandwidths)
    # a worker lacking x pays its own pull plus one push by each owner; owners never lack x
    push_s = bits * (inv_bw @ owned)
    per_elem = np.where(miss, bits * inv_bw[:, None] + push_s, 0.0)
    costs = np.add.reduceat(per_elem, batch.offsets[:-1], axis=1)
    return CostMatrix(costs.T, np.arange(len(batch)))


def row_gap_key(matrix: CostMatrix, row: int) -> float:
    values = matrix.values[row]
    if values.size == 0:
        raise InputError("empty cost row")
    if values.size == 1:
        return 0.0
    a, b = np.partition(values, 1)[:2]
    return float(b - a)
