"""Per-worker embedding cache with mark-based replacement.

Every access stamps the entry with the cache's current mark. The mark
advances once the cache is full and every entry carries it, so marks act as
coarse recency generations. Victims are chosen outdated-first, then by
smallest mark, then by lowest access frequency; last access time and id
break the remaining ties.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Container, Iterable, Sequence

import numpy as np

from .core import CapacityError, InputError


@dataclass
class CacheEntry:
    id: int
    version_latest: bool
    mark: int
    frequency: int
    last_access: int

    def key(self) -> tuple[int, int, int, int, int]:
        return (int(self.version_latest), self.mark, self.frequency, self.last_access, self.id)


class MarkOrder:
    """Default victim order: (version_latest, mark, frequency, last_access, id) ascending."""

    name = "mark"

    def lexsort_keys(self, cache: "WorkerCache", slots: np.ndarray) -> tuple[np.ndarray, ...]:
        # np.lexsort treats the last key as primary
        return (
            cache._ids[slots],
            cache._last[slots],
            cache._freq[slots],
            cache._mark[slots],
            cache._latest[slots],
        )


class PriorityRatio:
    """Victim order for non-uniform embedding sizes.

    Priority is ``(1 + version_latest) * mark * frequency / size_bytes``;
    the lowest priority is evicted first, ties broken by last access then id.
    """

    name = "priority"

    def __init__(self, sizes: Sequence[float] | np.ndarray | Callable[[np.ndarray], np.ndarray]):
        if callable(sizes):
            self._size_of = sizes
        else:
            table = np.asarray(sizes, dtype=np.float64)
            if np.any(table <= 0):
                raise InputError("embedding sizes must be positive")
            self._size_of = lambda ids: table[ids]

    def priority(self, cache: "WorkerCache", slots: np.ndarray) -> np.ndarray:
        numer = (1.0 + cache._latest[slots]) * cache._mark[slots] * cache._freq[slots]
        return numer / self._size_of(cache._ids[slots])

    def lexsort_keys(self, cache: "WorkerCache", slots: np.ndarray) -> tuple[np.ndarray, ...]:
        return (cache._ids[slots], cache._last[slots], self.priority(cache, slots))


class WorkerCache:
    """Fixed-capacity cache of one worker, counted in embeddings.

    Entries live in parallel slot arrays; ``_pos`` maps an embedding id to its
    slot (-1 when absent) and grows on demand.
    """

    def __init__(self, capacity: int, order: MarkOrder | PriorityRatio | None = None):
        if capacity < 0:
            raise InputError(f"capacity must be non-negative, got {capacity}")
        self.capacity = int(capacity)
        self.order = order or MarkOrder()
        self.current_mark = 1
        self._pos = np.full(1024, -1, dtype=np.int64)
        self._ids = np.full(self.capacity, -1, dtype=np.int64)
        self._latest = np.zeros(self.capacity, dtype=np.bool_)
        self._mark = np.zeros(self.capacity, dtype=np.int64)
        self._freq = np.zeros(self.capacity, dtype=np.int64)
        self._last = np.zeros(self.capacity, dtype=np.int64)
        self._size = 0
        self._n_current = 0

    def _grow(self, max_id: int) -> None:
        if max_id >= self._pos.size:
            pos = np.full(max(max_id + 1, 2 * self._pos.size), -1, dtype=np.int64)
            pos[: self._pos.size] = self._pos
            self._pos = pos

    def _slots_of(self, ids: np.ndarray) -> np.ndarray:
        """Slot per id, -1 for ids not resident."""
        out = np.full(ids.size, -1, dtype=np.int64)
        inside = ids < self._pos.size
        out[inside] = self._pos[ids[inside]]
        return out

    def __len__(self) -> int:
        return self._size

    def __contains__(self, embedding_id: int) -> bool:
        x = int(embedding_id)
        return 0 <= x < self._pos.size and self._pos[x] >= 0

    @property
    def size(self) -> int:
        return self._size

    @property
    def free(self) -> int:
        return self.capacity - self._size

    def is_full(self) -> bool:
        return self._size >= self.capacity

    def resident_ids(self) -> list[int]:
        return np.sort(self._ids[self._ids >= 0]).tolist()

    def latest_ids(self) -> np.ndarray:
        """Sorted ids whose resident copy is flagged latest."""
        live = self._ids >= 0
        return np.sort(self._ids[live & self._latest])

    def entry(self, embedding_id: int) -> CacheEntry:
        if embedding_id not in self:
            raise KeyError(embedding_id)
        s = self._pos[int(embedding_id)]
        return CacheEntry(int(self._ids[s]), bool(self._latest[s]), int(self._mark[s]),
                          int(self._freq[s]), int(self._last[s]))

    @property
    def entries(self) -> dict[int, CacheEntry]:
        return {x: self.entry(x) for x in self.resident_ids()}

    def is_latest(self, embedding_id: int) -> bool:
        return embedding_id in self and bool(self._latest[self._pos[int(embedding_id)]])

    def touch(self, embedding_id: int, latest: bool, now: int) -> None:
        x = int(embedding_id)
        if x not in self and self.is_full():
            raise CapacityError(f"cache full ({self.capacity}); evict before inserting {x}")
        self.touch_many([x], now, latest)

    def touch_many(self, embedding_ids: Iterable[int], now: int, latest: bool = True) -> None:
        """Touch several distinct ids at once; same effect as calling ``touch`` on each."""
        ids = np.asarray(list(embedding_ids) if not isinstance(embedding_ids, np.ndarray)
                         else embedding_ids, dtype=np.int64)
        if ids.size == 0:
            return
        if ids.min() < 0:
            raise InputError("embedding ids must be non-negative")
        if np.unique(ids).size != ids.size:
            raise InputError("touch_many requires distinct ids")
        slots = self._slots_of(ids)
        fresh = slots < 0
        n_new = int(np.count_nonzero(fresh))
        if n_new > self.free:
            raise CapacityError(f"cache has {self.free} free slots, cannot insert {n_new} entries")
        old = slots[~fresh]
        self._n_current += int(np.count_nonzero(self._mark[old] != self.current_mark))
        self._freq[old] += 1
        if n_new:
            new_ids = ids[fresh]
            new_slots = np.flatnonzero(self._ids < 0)[:n_new]
            self._grow(int(new_ids.max()))
            self._pos[new_ids] = new_slots
            self._ids[new_slots] = new_ids
            self._freq[new_slots] = 1
            self._size += n_new
            self._n_current += n_new
            slots[fresh] = new_slots
        self._mark[slots] = self.current_mark
        self._last[slots] = now
        self._latest[slots] = latest

    def set_outdated(self, embedding_ids: Iterable[int]) -> None:
        ids = np.asarray(list(embedding_ids) if not isinstance(embedding_ids, np.ndarray)
                         else embedding_ids, dtype=np.int64)
        slots = self._slots_of(ids)
        self._latest[slots[slots >= 0]] = False

    def set_latest(self, embedding_id: int, latest: bool) -> None:
        if embedding_id not in self:
            raise KeyError(embedding_id)
        self._latest[self._pos[int(embedding_id)]] = bool(latest)

    def remove(self, embedding_id: int) -> None:
        self.remove_many([embedding_id])

    def remove_many(self, embedding_ids: Iterable[int]) -> None:
        ids = np.asarray(list(embedding_ids) if not isinstance(embedding_ids, np.ndarray)
                         else embedding_ids, dtype=np.int64)
        if ids.size == 0:
            return
        slots = self._slots_of(ids)
        if np.any(slots < 0):
            raise KeyError(int(ids[np.flatnonzero(slots < 0)[0]]))
        self._n_current -= int(np.count_nonzero(self._mark[slots] == self.current_mark))
        self._pos[ids] = -1
        self._ids[slots] = -1
        self._size -= slots.size

    def maybe_advance_mark(self) -> bool:
        """Advance the mark if the cache is full and every entry carries the current mark."""
        if self.capacity and self.is_full() and self._n_current == self._size:
            self.current_mark += 1
            self._n_current = 0
            return True
        return False

    def victim_order(self, protect: Container[int] | np.ndarray = ()) -> list[int]:
        """Resident ids not in ``protect``, best eviction candidate first.

        ``protect`` may be a container of ids or a boolean mask indexed by id.
        """
        slots = np.flatnonzero(self._ids >= 0)
        ids = self._ids[slots]
        if isinstance(protect, np.ndarray):
            inside = ids < protect.size
            blocked = np.zeros(ids.size, dtype=np.bool_)
            blocked[inside] = protect[ids[inside]]
        else:
            blocked = np.fromiter((x in protect for x in ids.tolist()), dtype=np.bool_, count=ids.size)
        slots = slots[~blocked]
        if slots.size == 0:
            return []
        order = np.lexsort(self.order.lexsort_keys(self, slots))
        return self._ids[slots[order]].tolist()


def select_victim(cache: WorkerCache, protect: Container[int] = ()) -> int:
    if not cache.is_full():
        raise InputError("select_victim requires a full cache")
    order = cache.victim_order(protect)
    if not order:
        raise CapacityError("every resident entry is protected; nothing can be evicted")
    return order[0]


def evict_for(
    cache: WorkerCache,
    needed: int,
    owns: Callable[[int], bool] | Container[int] | np.ndarray,
    protect: Container[int] | np.ndarray = (),
) -> list[tuple[int, bool]]:
    """Free ``needed`` slots, returning ``(victim, needs_evict_push)`` in eviction order.

    ``owns`` tells whether this cache's worker owns an unsynchronized copy of
    an embedding (a predicate, a container of ids, or a boolean mask indexed
    by id); evicting such an entry requires an evict push. Ownership
    bookkeeping is left to the caller. Ids in ``protect`` are never evicted.
    """
    if needed > cache.capacity:
        raise CapacityError(f"cannot free {needed} slots in a cache of capacity {cache.capacity}")
    cache.maybe_advance_mark()
    shortfall = needed - cache.free
    if shortfall <= 0:
        return []
    victims = cache.victim_order(protect)[:shortfall]
    if len(victims) < shortfall:
        raise CapacityError(
            f"need {shortfall} evictions but only {len(victims)} unprotected entries are resident"
        )
    if isinstance(owns, np.ndarray):
        pushed = owns[victims].tolist()
    else:
        owned = owns if callable(owns) else owns.__contains__
        pushed = [bool(owned(x)) for x in victims]
    cache.remove_many(victims)
    return list(zip(victims, pushed))
