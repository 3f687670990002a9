"""Iteration streams of embedding samples: synthetic Zipf and categorical trace files."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .core import ClusterConfig, InputError, ParseError, SampleBatch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WorkloadSpec:
    total_embeddings: int = 50_000
    sample_len: int = 26
    zipf_s: float = 1.05
    iterations: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.sample_len < 1:
            raise InputError(f"sample_len must be >= 1, got {self.sample_len}")
        if not self.zipf_s > 0:
            raise InputError(f"zipf_s must be > 0, got {self.zipf_s}")
        if self.total_embeddings < self.sample_len:
            raise InputError(
                f"sample_len {self.sample_len} exceeds total_embeddings {self.total_embeddings}"
            )
        if self.iterations < 0:
            raise InputError(f"iterations must be >= 0, got {self.iterations}")


class ZipfSampler:
    """Truncated Zipf over ``[0, size)``: P(k) proportional to (k + 1) ** -s; id 0 is the most popular."""

    def __init__(self, size: int, s: float):
        if size < 1 or not s > 0:
            raise InputError(f"need size >= 1 and s > 0, got size={size}, s={s}")
        weights = np.arange(1, size + 1, dtype=np.float64) ** -float(s)
        self.pmf = weights / weights.sum()
        self._cdf = np.cumsum(self.pmf)
        self._cdf[-1] = 1.0

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        u = rng.random(size)
        return np.searchsorted(self._cdf, u, side="right").astype(np.int64)


def zipf_batch(sampler: ZipfSampler, rng: np.random.Generator, count: int, length: int) -> np.ndarray:
    """``count`` rows of ``length`` distinct Zipf ids; duplicate positions are redrawn."""
    rows = sampler.draw(rng, (count, length))
    while True:
        order = np.argsort(rows, axis=1, kind="stable")
        sorted_rows = np.take_along_axis(rows, order, axis=1)
        dup_sorted = np.zeros_like(rows, dtype=np.bool_)
        dup_sorted[:, 1:] = sorted_rows[:, 1:] == sorted_rows[:, :-1]
        if not dup_sorted.any():
            return rows
        dup = np.zeros_like(dup_sorted)
        np.put_along_axis(dup, order, dup_sorted, axis=1)
        rows[dup] = sampler.draw(rng, int(dup.sum()))


def gen_zipf(spec: WorkloadSpec, cfg: ClusterConfig) -> Iterator[SampleBatch]:
    """Yield ``spec.iterations`` batches of ``m * n`` fixed-length Zipf samples."""
    rng = np.random.default_rng(spec.seed)
    sampler = ZipfSampler(spec.total_embeddings, spec.zipf_s)
    for _ in range(spec.iterations):
        yield SampleBatch.from_matrix(
            zipf_batch(sampler, rng, cfg.samples_per_iteration, spec.sample_len)
        )


def read_schema(path: str | Path) -> list[tuple[str, int]]:
    """Parse ``table_name size`` lines."""
    tables = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(f"expected 'table_name size', got {line!r}", lineno, str(path))
        try:
            size = int(parts[1])
        except ValueError:
            raise ParseError(f"bad table size {parts[1]!r}", lineno, str(path)) from None
        if size < 1:
            raise ParseError(f"table size must be positive, got {size}", lineno, str(path))
        tables.append((parts[0], size))
    if not tables:
        raise InputError(f"schema file {path} declares no tables")
    return tables


@dataclass
class Trace:
    batches: list[SampleBatch]
    num_embeddings: int
    max_sample_len: int
    dropped: int = 0

    def __iter__(self) -> Iterator[SampleBatch]:
        return iter(self.batches)

    def __len__(self) -> int:
        return len(self.batches)


def read_trace(path: str | Path, cfg: ClusterConfig,
               schema: Sequence[tuple[str, int]] | str | Path | None = None) -> Trace:
    """Group trace lines into iterations of ``m * n`` samples.

    With a schema, field ``k`` of every line is an id local to table ``k`` and
    is shifted by the cumulative size of the preceding tables. Duplicate ids
    within a line are dropped; a trailing partial iteration is discarded.
    """
    if isinstance(schema, (str, Path)):
        schema = read_schema(schema)
    offsets = sizes = None
    if schema is not None:
        sizes = np.array([size for _, size in schema], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    rows: list[list[int]] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            toks = line.split()
            if not toks:
                continue
            try:
                ids = [int(t) for t in toks]
            except ValueError:
                raise ParseError(f"non-integer id in {line.strip()!r}", lineno, str(path)) from None
            if any(x < 0 for x in ids):
                raise ParseError("ids must be non-negative", lineno, str(path))
            if schema is not None:
                if len(ids) != len(sizes):
                    raise ParseError(f"expected {len(sizes)} fields, got {len(ids)}", lineno, str(path))
                bad = [k for k, x in enumerate(ids) if x >= sizes[k]]
                if bad:
                    k = bad[0]
                    raise ParseError(f"id {ids[k]} out of range for table {schema[k][0]!r}",
                                     lineno, str(path))
                ids = [x + int(o) for x, o in zip(ids, offsets)]
            rows.append(list(dict.fromkeys(ids)))
    if not rows:
        raise InputError(f"trace file {path} contains no samples")
    per_iter = cfg.samples_per_iteration
    whole = len(rows) // per_iter * per_iter
    dropped = len(rows) - whole
    if dropped:
        log.warning("dropping %d trailing samples that do not fill an iteration of %d", dropped, per_iter)
    batches = [SampleBatch.from_samples(rows[i:i + per_iter]) for i in range(0, whole, per_iter)]
    if schema is not None:
        num_embeddings = int(sizes.sum())
    else:
        num_embeddings = 1 + max(max(r) for r in rows)
    max_len = max((len(r) for r in rows[:whole]), default=0)
    return Trace(batches, num_embeddings, max_len, dropped)


def write_trace(batches, path: str | Path) -> int:
    """Write one sample per line; returns the number of lines."""
    count = 0
    with open(path, "w") as fh:
        for batch in batches:
            ids, offs = batch.ids, batch.offsets
            for i in range(len(batch)):
                fh.write(" ".join(map(str, ids[offs[i]:offs[i + 1]].tolist())))
                fh.write("\n")
                count += 1
    return count
