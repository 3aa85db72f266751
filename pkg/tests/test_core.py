"""Domain type and constraint checker tests."""

from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coopcache.core import (
    EMPTY_SLOT,
    NOOP,
    BsAction,
    CacheState,
    FeasibilityError,
    JointAction,
    StructuralError,
    action_space_counts,
    apply,
    check_transition,
    feasible_actions,
    hit_rate,
    request_slot,
)
from coopcache.traffic import AssociationGraph

from conftest import random_scenario


def brute_force_hit_rate(rows, coverage, pairs) -> float:
    """Independent oracle: direct double loop with list membership."""
    if not pairs:
        return 0.0
    hits = 0
    for u, f in pairs:
        served = False
        for b in coverage[u]:
            if f in list(rows[b - 1]):
                served = True
        if served:
            hits += 1
    return hits / len(pairs)


def test_hit_rate_neighborhood_example():
    # u0 -> BS1 wants 3 (cached at BS1), u1 -> both wants 7 (cached at BS2),
    # u2 -> BS2 wants 9 (uncached anywhere): two of three requests served.
    graph = AssociationGraph.synthetic(((1,), (1, 2), (2,)), 2)
    cache = CacheState(((3, 0, 0), (7, 0, 0)))
    requests = request_slot(((0, 3), (1, 7), (2, 9)), graph)
    assert hit_rate(cache, requests, graph) == pytest.approx(2 / 3)


def test_hit_rate_empty_cache_and_full_coverage():
    graph = AssociationGraph.synthetic(((1,), (2,)), 2)
    requests = request_slot(((0, 1), (1, 2)), graph)
    assert hit_rate(CacheState.empty((2, 2)), requests, graph) == 0.0
    everything = CacheState(((1, 2), (1, 2)))
    assert hit_rate(everything, requests, graph) == 1.0


def test_hit_rate_empty_requests_is_zero():
    graph = AssociationGraph.synthetic(((1,),), 1)
    requests = request_slot((), graph)
    assert hit_rate(CacheState(((1, 2),)), requests, graph) == 0.0


def test_hit_rate_dimension_mismatch():
    graph = AssociationGraph.synthetic(((1,),), 1)
    requests = request_slot(((0, 1),), graph)
    with pytest.raises(StructuralError):
        hit_rate(CacheState(((1,), (2,))), requests, graph)


def test_hit_rate_matches_brute_force():
    rng = random.Random(7)
    for _ in range(300):
        cache, graph, requests = random_scenario(rng)
        expected = brute_force_hit_rate(cache.slots, graph.coverage, requests.pairs)
        assert hit_rate(cache, requests, graph) == expected


def test_hit_rate_monotone_under_enlargement():
    rng = random.Random(21)
    for _ in range(200):
        cache, graph, requests = random_scenario(rng)
        b = rng.randint(1, cache.bs_count)
        # enlarge BS b by one extra slot holding a new file
        extra = rng.randint(1, 12)
        if extra in cache.files_at(b):
            continue
        rows = list(cache.slots)
        rows[b - 1] = rows[b - 1] + (extra,)
        bigger = CacheState(tuple(rows))
        assert hit_rate(bigger, requests, graph) >= hit_rate(cache, requests, graph)


def _single_bs_requests(files, graph=None):
    graph = graph or AssociationGraph.synthetic(tuple((1,) for _ in files), 1)
    return graph, request_slot(tuple((u, f) for u, f in enumerate(files)), graph)


def test_apply_single_swap():
    graph, requests = _single_bs_requests((5,))
    cache = CacheState(((4, 7, 9),))
    action = JointAction.valid([BsAction(2, 5, 7)])
    assert apply(cache, action, requests).slots == ((4, 5, 9),)


def test_apply_all_noop_is_identity():
    graph, requests = _single_bs_requests((5,))
    cache = CacheState(((4, 7, 9),))
    assert apply(cache, JointAction.valid([NOOP]), requests) == cache


def test_apply_consistency_violation():
    graph, requests = _single_bs_requests((5,))
    cache = CacheState(((4, 7, 9),))
    with pytest.raises(FeasibilityError) as err:
        apply(cache, JointAction.valid([BsAction(2, 5, 8)]), requests)
    assert err.value.rule == "consistency"
    assert err.value.bs == 1


def test_apply_admissibility_and_duplication():
    graph, requests = _single_bs_requests((5,))
    cache = CacheState(((4, 5, 9),))
    with pytest.raises(FeasibilityError) as err:
        apply(cache, JointAction.valid([BsAction(1, 6, 4)]), requests)
    assert err.value.rule == "admissibility"
    with pytest.raises(FeasibilityError) as err:
        apply(cache, JointAction.valid([BsAction(1, 5, 4)]), requests)
    assert err.value.rule == "duplication"


def test_apply_rejects_invalid_joint_action():
    graph, requests = _single_bs_requests((5,))
    with pytest.raises(StructuralError):
        apply(CacheState(((4,),)), JointAction.invalid("syntax"), requests)


def test_apply_leaves_noop_rows_untouched():
    graph = AssociationGraph.synthetic(((1,), (2,)), 2)
    requests = request_slot(((0, 6), (1, 6)), graph)
    cache = CacheState(((4, 7), (1, 2)))
    out = apply(cache, JointAction.valid([NOOP, BsAction(1, 6, 1)]), requests)
    assert out.slots[0] == (4, 7)
    assert out.slots[1] == (6, 2)


def test_feasible_actions_counts():
    # 10 slots, 4 requested files none cached: 41 actions
    graph = AssociationGraph.synthetic(tuple((1,) for _ in range(4)), 1)
    requests = request_slot(((0, 11), (1, 12), (2, 13), (3, 14)), graph)
    cache = CacheState((tuple(range(1, 11)),))
    actions = feasible_actions(cache, 1, requests)
    assert len(actions) == 41
    assert actions[0] == NOOP
    assert action_space_counts(cache, 1, requests) == (41, 41)


def test_feasible_actions_all_requested_cached():
    graph = AssociationGraph.synthetic(((1,), (1,)), 1)
    requests = request_slot(((0, 1), (1, 2)), graph)
    cache = CacheState(((1, 2, 3),))
    assert feasible_actions(cache, 1, requests) == [NOOP]
    assert action_space_counts(cache, 1, requests) == (1, 7)


def test_feasible_actions_enumeration_order():
    graph = AssociationGraph.synthetic(((1,), (1,)), 1)
    requests = request_slot(((0, 2), (1, 3)), graph)
    cache = CacheState(((1, 2),))
    actions = feasible_actions(cache, 1, requests)
    assert actions == [NOOP, BsAction(1, 3, 1), BsAction(2, 3, 2)]


def test_feasible_actions_not_full_is_noop_only():
    graph = AssociationGraph.synthetic(((1,),), 1)
    requests = request_slot(((0, 5),), graph)
    cache = CacheState(((1, EMPTY_SLOT),))
    assert feasible_actions(cache, 1, requests) == [NOOP]


def test_feasible_actions_closure():
    """Enumerated actions always apply cleanly and obey the swap budget."""
    rng = random.Random(99)
    for _ in range(150):
        cache, graph, requests = random_scenario(rng)
        for b in range(1, cache.bs_count + 1):
            for act in feasible_actions(cache, b, requests):
                joint = [NOOP] * cache.bs_count
                joint[b - 1] = act
                after = apply(cache, JointAction.valid(joint), requests)
                assert check_transition(cache, after)


def test_check_transition_cases():
    prev = CacheState(((1, 2), (3, 4)))
    assert check_transition(prev, prev)
    one_swap = CacheState(((1, 5), (3, 4)))
    assert check_transition(prev, one_swap)
    two_swaps = CacheState(((5, 6), (3, 4)))
    assert not check_transition(prev, two_swaps)
    with pytest.raises(StructuralError):
        check_transition(prev, CacheState(((1, 2),)))


def test_cache_state_validation():
    with pytest.raises(StructuralError):
        CacheState(((1, 1),))
    with pytest.raises(StructuralError):
        CacheState(((-3, 1),))
    cache = CacheState(((1, EMPTY_SLOT),))
    assert cache.files_at(1) == frozenset({1})
    assert not cache.is_full(1)


def test_bs_action_validation():
    with pytest.raises(StructuralError):
        BsAction(1, 5, 5)
    with pytest.raises(StructuralError):
        BsAction(0, 5, 0)
    with pytest.raises(StructuralError):
        BsAction(1, 0, 5)
    assert BsAction().is_noop


def test_request_slot_invariants():
    graph = AssociationGraph.synthetic(((1,), (1, 2)), 2)
    requests = request_slot(((1, 7), (0, 7)), graph)
    assert requests.pairs == ((0, 7), (1, 7))
    assert requests.counts[0] == {7: 2}
    assert requests.counts[1] == {7: 1}
    # n > 0 exactly for admissible files
    for b in range(2):
        assert set(requests.counts[b]) == set(requests.admissible[b])
    with pytest.raises(StructuralError):
        request_slot(((0, 1), (0, 2)), graph)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_random_transitions_stay_binary_and_capped(seed):
    """Reachable states keep per-BS occupancy within capacity, no duplicates."""
    rng = random.Random(seed)
    cache, graph, requests = random_scenario(rng)
    for b in range(1, cache.bs_count + 1):
        options = feasible_actions(cache, b, requests)
        act = rng.choice(options)
        joint = [NOOP] * cache.bs_count
        joint[b - 1] = act
        cache = apply(cache, JointAction.valid(joint), requests)
        files = cache.files_at(b)
        assert len(files) <= cache.capacity(b)
        row = [f for f in cache.slots[b - 1] if f != EMPTY_SLOT]
        assert len(set(row)) == len(row)
