import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from embdispatch.cache import PriorityRatio, WorkerCache, evict_for, select_victim
from embdispatch.core import CapacityError, InputError


def test_first_insertion():
    c = WorkerCache(4)
    c.touch(3, latest=True, now=0)
    e = c.entry(3)
    assert (e.mark, e.frequency, e.version_latest, e.last_access) == (1, 1, True, 0)


def test_touch_twice():
    c = WorkerCache(4)
    c.touch(3, True, now=1)
    c.touch(3, True, now=2)
    e = c.entry(3)
    assert e.frequency == 2 and e.last_access == 2


def test_insert_into_full_cache_is_an_error():
    c = WorkerCache(1)
    c.touch(1, True, 0)
    with pytest.raises(CapacityError):
        c.touch(2, True, 0)
    c.touch(1, False, 1)  # re-touching a resident id is fine


def test_mark_advances_when_full_and_uniform():
    c = WorkerCache(2)
    c.touch(1, True, 0)
    c.touch(2, True, 0)
    assert c.current_mark == 1
    evict_for(c, 1, ())
    assert c.current_mark == 2
    c.touch(3, True, 1)
    assert c.entry(3).mark == 2


def test_mark_stays_when_marks_are_mixed():
    c = WorkerCache(2)
    c.touch(1, True, 0)
    c.touch(2, True, 0)
    evict_for(c, 1, ())          # mark -> 2, evicts one of them
    c.touch(3, True, 1)
    assert c.current_mark == 2
    assert not c.maybe_advance_mark()
    assert c.current_mark >= max(e.mark for e in c.entries.values())


def _fill(entries):
    """entries: id -> (latest, mark, freq, last)."""
    c = WorkerCache(len(entries))
    for x, (latest, mark, freq, last) in entries.items():
        c.touch(x, latest, last)
        s = c._pos[x]
        c._mark[s] = mark
        c._freq[s] = freq
    c.current_mark = max(v[1] for v in entries.values())
    c._n_current = sum(v[1] == c.current_mark for v in entries.values())
    return c


def test_outdated_evicted_first():
    assert select_victim(_fill({10: (False, 3, 9, 5), 11: (True, 1, 1, 0)})) == 10


def test_smaller_mark_first():
    assert select_victim(_fill({10: (True, 1, 9, 5), 11: (True, 2, 1, 0)})) == 10


def test_lower_frequency_first():
    assert select_victim(_fill({10: (True, 1, 5, 0), 11: (True, 1, 2, 0)})) == 11


def test_then_oldest_access_then_smallest_id():
    assert select_victim(_fill({10: (True, 1, 1, 4), 11: (True, 1, 1, 3)})) == 11
    assert select_victim(_fill({12: (True, 1, 1, 3), 11: (True, 1, 1, 3)})) == 11


def test_select_victim_needs_full_cache():
    c = WorkerCache(3)
    c.touch(1, True, 0)
    with pytest.raises(InputError):
        select_victim(c)


entry = st.tuples(st.booleans(), st.integers(1, 3), st.integers(1, 3), st.integers(0, 3))


@given(st.dictionaries(st.integers(0, 20), entry, min_size=1, max_size=5))
def test_victim_order_matches_brute_force(entries):
    c = _fill(entries)

    def key(x):
        latest, mark, freq, last = entries[x]
        return (int(latest), mark, freq, last, x)

    # the chosen victim beats every other resident entry, whatever the insertion order
    v = select_victim(c)
    assert all(key(v) <= key(x) for x in entries)
    for perm in itertools.permutations(entries):
        assert select_victim(_fill({x: entries[x] for x in perm})) == v
    if any(not e[0] for e in entries.values()):
        assert not entries[v][0]
    assert c.victim_order() == sorted(entries, key=key)


def test_evict_for_with_free_space():
    c = WorkerCache(4)
    c.touch(1, True, 0)
    assert evict_for(c, 3, ()) == []


def test_evict_for_owned_victim_needs_push():
    c = WorkerCache(1)
    c.touch(7, True, 0)
    assert evict_for(c, 1, {7}) == [(7, True)]
    assert 7 not in c


def test_evict_for_synced_or_outdated_victim():
    c = WorkerCache(1)
    c.touch(7, False, 0)
    assert evict_for(c, 1, lambda x: False) == [(7, False)]


def test_evict_for_respects_protection_and_capacity():
    c = WorkerCache(2)
    c.touch(1, True, 0)
    c.touch(2, True, 0)
    assert evict_for(c, 1, (), protect={1}) == [(2, False)]
    with pytest.raises(CapacityError):
        evict_for(c, 3, ())
    with pytest.raises(CapacityError):
        evict_for(c, 2, (), protect={1})


def test_evict_for_mask_arguments():
    c = WorkerCache(3)
    for x in (0, 1, 2):
        c.touch(x, True, x)
    owns = np.array([False, True, False])
    protect = np.array([True, False, False])
    assert evict_for(c, 2, owns, protect=protect) == [(1, True), (2, False)]


ops = st.lists(st.tuples(st.sampled_from(["touch", "evict", "stale"]), st.integers(0, 15),
                         st.integers(1, 4)), max_size=60)


@given(st.integers(1, 6), ops)
def test_size_never_exceeds_capacity(cap, seq):
    c = WorkerCache(cap)
    owned = set()
    for now, (op, x, k) in enumerate(seq):
        if op == "touch":
            if x not in c:
                for v, pushed in evict_for(c, 1, owned, protect={x}):
                    assert pushed == (v in owned)
                    owned.discard(v)
            c.touch(x, True, now)
            if k == 1:
                owned.add(x)
        elif op == "evict":
            evict_for(c, min(k, cap), owned)
        else:
            c.set_outdated([x])
        assert len(c) <= cap
        assert c.current_mark >= max([e.mark for e in c.entries.values()], default=1)
        assert all(e.mark >= 1 and e.frequency >= 1 for e in c.entries.values())


def test_priority_ratio_prefers_large_cold_entries():
    sizes = np.array([1.0, 100.0, 1.0])
    c = WorkerCache(3, PriorityRatio(sizes))
    for x in range(3):
        c.touch(x, True, 0)
    assert select_victim(c) == 1


def test_touch_many_rejects_duplicates_without_mutation():
    c = WorkerCache(4)
    with pytest.raises(InputError):
        c.touch_many([1, 1], now=0)
    assert len(c) == 0
