"""Shared domain types: cluster configuration, samples, per-embedding state."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class EmbDispatchError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(EmbDispatchError, ValueError):
    """Invalid cluster / experiment configuration."""


class InputError(EmbDispatchError, ValueError):
    """Malformed input to an operation (wrong shapes, counts, ranges)."""


class CapacityError(EmbDispatchError, RuntimeError):
    """A cache was asked to hold more entries than it can."""


class ParseError(InputError):
    """A text file could not be parsed."""

    def __init__(self, message: str, lineno: int | None = None, path: str | None = None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if lineno is not None:
            where += f"{lineno}:"
        super().__init__(f"{where} {message}" if where else message)
        self.lineno = lineno
        self.path = path


DEFAULT_EMBEDDING_DIM = 512
BYTES_PER_FLOAT = 4


@dataclass(frozen=True)
class EmbeddingSample:
    """One training sample: an ordered, duplicate-free collection of embedding ids."""

    ids: tuple[int, ...]

    def __post_init__(self):
        ids = tuple(int(x) for x in self.ids)
        if not ids:
            raise InputError("an embedding sample must contain at least one id")
        if any(x < 0 for x in ids):
            raise InputError(f"embedding ids must be non-negative: {ids}")
        if len(set(ids)) != len(ids):
            raise InputError(f"embedding sample contains duplicate ids: {ids}")
        object.__setattr__(self, "ids", ids)

    @classmethod
    def dedup(cls, ids: Iterable[int]) -> "EmbeddingSample":
        """Build a sample keeping the first occurrence of each id."""
        return cls(tuple(dict.fromkeys(int(x) for x in ids)))

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)


class SampleBatch:
    """The samples of one iteration in a flat (CSR) layout.

    ``ids[offsets[i]:offsets[i + 1]]`` are the ids of sample ``i``.
    """

    __slots__ = ("ids", "offsets")

    def __init__(self, ids: np.ndarray, offsets: np.ndarray):
        self.ids = np.ascontiguousarray(ids, dtype=np.int64)
        self.offsets = np.ascontiguousarray(offsets, dtype=np.int64)
        if self.offsets.ndim != 1 or self.offsets.size < 1 or self.offsets[0] != 0:
            raise InputError("offsets must start at 0")
        if self.offsets[-1] != self.ids.size or np.any(np.diff(self.offsets) <= 0):
            raise InputError("every sample must be non-empty and offsets must cover ids")

    @classmethod
    def from_samples(cls, samples: Sequence[EmbeddingSample | Sequence[int]]) -> "SampleBatch":
        if isinstance(samples, SampleBatch):
            return samples
        rows = [s.ids if isinstance(s, EmbeddingSample) else EmbeddingSample(tuple(s)).ids
                for s in samples]
        lengths = np.fromiter((len(r) for r in rows), dtype=np.int64, count=len(rows))
        offsets = np.zeros(len(rows) + 1, dtype=np.int64)
        np.cumsum(lengths, out=offsets[1:])
        if rows:
            ids = np.fromiter((x for r in rows for x in r), dtype=np.int64, count=int(offsets[-1]))
        else:
            ids = np.zeros(0, dtype=np.int64)
        return cls(ids, offsets)

    @classmethod
    def from_matrix(cls, rows: np.ndarray) -> "SampleBatch":
        """Fixed-length samples given as a 2-D array (one sample per row)."""
        rows = np.asarray(rows, dtype=np.int64)
        count, length = rows.shape
        return cls(rows.reshape(-1), np.arange(count + 1, dtype=np.int64) * length)

    def __len__(self) -> int:
        return self.offsets.size - 1

    def lengths(self) -> np.ndarray:
        return np.diff(self.offsets)

    def sample(self, i: int) -> EmbeddingSample:
        return EmbeddingSample(tuple(self.ids[self.offsets[i]:self.offsets[i + 1]].tolist()))

    def samples(self) -> list[EmbeddingSample]:
        return [self.sample(i) for i in range(len(self))]

    def owner_rows(self) -> np.ndarray:
        """Sample index of every element of ``ids``."""
        return np.repeat(np.arange(len(self), dtype=np.int64), self.lengths())

    def __eq__(self, other) -> bool:
        if not isinstance(other, SampleBatch):
            return NotImplemented
        return np.array_equal(self.ids, other.ids) and np.array_equal(self.offsets, other.offsets)

    def __repr__(self) -> str:
        return f"SampleBatch(samples={len(self)}, ids={self.ids.size})"


@dataclass(frozen=True)
class ClusterConfig:
    """Workers, their links to the parameter server, and per-worker limits.

    ``bandwidths`` are in bits per second, ``d_tran`` in bytes.
    """

    n: int
    m: int
    bandwidths: tuple[float, ...]
    d_tran: int = DEFAULT_EMBEDDING_DIM * BYTES_PER_FLOAT
    cache_capacity: int = 0
    alpha: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "bandwidths", tuple(float(b) for b in self.bandwidths))
        if self.n < 1:
            raise ConfigError(f"worker count n must be >= 1, got {self.n}")
        if self.m < 1:
            raise ConfigError(f"batch size per worker m must be >= 1, got {self.m}")
        if len(self.bandwidths) != self.n:
            raise ConfigError(f"expected {self.n} bandwidths, got {len(self.bandwidths)}")
        if not all(np.isfinite(b) and b > 0 for b in self.bandwidths):
            raise ConfigError(f"bandwidths must be positive and finite: {self.bandwidths}")
        if self.d_tran < 0:
            raise ConfigError(f"d_tran must be non-negative, got {self.d_tran}")
        if self.cache_capacity < 0:
            raise ConfigError(f"cache_capacity must be non-negative, got {self.cache_capacity}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")

    @classmethod
    def build(
        cls,
        n: int,
        m: int,
        bandwidths: float | Sequence[float],
        *,
        embedding_dim: int = DEFAULT_EMBEDDING_DIM,
        d_tran: int | None = None,
        cache_ratio: float | None = None,
        total_embeddings: int | None = None,
        cache_capacity: int | None = None,
        alpha: float = 1.0,
    ) -> "ClusterConfig":
        """Convenience constructor deriving ``d_tran`` and the cache capacity."""
        if isinstance(bandwidths, (int, float)):
            bandwidths = [float(bandwidths)] * n
        if d_tran is None:
            d_tran = embedding_dim * BYTES_PER_FLOAT
        if cache_capacity is None:
            if cache_ratio is None or total_embeddings is None:
                raise ConfigError("need cache_capacity, or cache_ratio with total_embeddings")
            if not 0.0 < cache_ratio <= 1.0:
                raise ConfigError(f"cache_ratio must lie in (0, 1], got {cache_ratio}")
            cache_capacity = int(cache_ratio * total_embeddings + 1e-9)
        return cls(n=n, m=m, bandwidths=tuple(bandwidths), d_tran=d_tran,
                   cache_capacity=cache_capacity, alpha=alpha)

    @property
    def samples_per_iteration(self) -> int:
        return self.n * self.m

    def unit_costs(self) -> np.ndarray:
        """Per-worker seconds to move one embedding over its link."""
        return np.array([unit_cost(self, j).seconds for j in range(self.n)])

    def check_fits(self, max_sample_len: int) -> None:
        """Reject configs where one worker's micro-batch cannot fit in its cache."""
        need = self.m * max_sample_len
        if self.cache_capacity < need:
            raise ConfigError(
                f"cache_capacity {self.cache_capacity} < m * max sample length = {need}; "
                "a micro-batch would not fit in the cache"
            )

    def bandwidth_classes(self) -> dict[float, list[int]]:
        """Workers grouped by link bandwidth, fastest class first."""
        classes: dict[float, list[int]] = {}
        for j, b in sorted(enumerate(self.bandwidths), key=lambda t: (-t[1], t[0])):
            classes.setdefault(b, []).append(j)
        return classes

    def with_alpha(self, alpha: float) -> "ClusterConfig":
        return ClusterConfig(self.n, self.m, self.bandwidths, self.d_tran, self.cache_capacity, alpha)


@dataclass(frozen=True)
class TransmitCost:
    """Seconds to move one embedding in one direction over a worker's link."""

    seconds: float

    def __post_init__(self):
        if not self.seconds >= 0:
            raise InputError(f"transmit cost must be non-negative, got {self.seconds}")

    def __float__(self) -> float:
        return self.seconds


def unit_cost(cfg: ClusterConfig, worker: int) -> TransmitCost:
    if not 0 <= worker < cfg.n:
        raise ConfigError(f"worker {worker} out of range for n={cfg.n}")
    return TransmitCost(cfg.d_tran * 8 / cfg.bandwidths[worker])


@dataclass(frozen=True)
class EmbeddingState:
    """Ownership and freshness of one embedding across the cluster.

    ``owners`` hold a trained, not-yet-pushed copy; ``latest_holders`` hold a
    copy equal to the global latest value. While any owner exists the
    parameter server is stale and the owners are exactly the latest holders.
    """

    owners: frozenset[int] = field(default_factory=frozenset)
    latest_holders: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "owners", frozenset(self.owners))
        object.__setattr__(self, "latest_holders", frozenset(self.latest_holders))
        if self.owners and self.latest_holders != self.owners:
            raise InputError(
                f"owners {set(self.owners)} must equal latest_holders {set(self.latest_holders)}"
            )

    @classmethod
    def owned_by(cls, *workers: int) -> "EmbeddingState":
        return cls(frozenset(workers), frozenset(workers))

    @classmethod
    def synced(cls, *workers: int) -> "EmbeddingState":
        """Parameter server holds the latest value; ``workers`` cache an identical copy."""
        return cls(frozenset(), frozenset(workers))
