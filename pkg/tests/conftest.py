"""Shared fixtures and scenario builders."""

from __future__ import annotations

import random

import pytest

from coopcache.core import CacheState, request_slot
from coopcache.interface import SlotObservation
from coopcache.traffic import AssociationGraph, InstanceConfig, build_instance


def small_config(**overrides) -> InstanceConfig:
    """A tiny two-BS setup that keeps unit tests fast."""
    base = dict(
        bs_count=2,
        users=6,
        library=12,
        cache_size=3,
        groups=2,
        alpha=1.2,
        windows=(5, 10),
        warm_slots=12,
        rollout_slots=30,
        horizon_reserve=4,
    )
    base.update(overrides)
    return InstanceConfig(**base)


def random_scenario(rng: random.Random, max_bs=3, max_files=10, max_users=8):
    """A random (cache, graph, requests) triple for oracle-style checks.

    Caches are full so the swap interface is live.
    """
    bs_count = rng.randint(1, max_bs)
    library = rng.randint(4, max_files)
    users = rng.randint(1, max_users)
    capacity = rng.randint(1, max(1, library // 2))
    coverage = []
    for _ in range(users):
        k = rng.randint(1, bs_count)
        coverage.append(tuple(sorted(rng.sample(range(1, bs_count + 1), k))))
    graph = AssociationGraph.synthetic(coverage, bs_count)
    rows = tuple(
        tuple(rng.sample(range(1, library + 1), capacity)) for _ in range(bs_count)
    )
    cache = CacheState(rows)
    pairs = tuple((u, rng.randint(1, library)) for u in range(users))
    requests = request_slot(pairs, graph)
    return cache, graph, requests


def golden_observation() -> SlotObservation:
    """The fixed two-BS observation behind the golden prompt file."""
    cache = CacheState(((4, 7, 9), (2, 5, 0)))
    graph = AssociationGraph.synthetic(
        ((1,), (1, 2), (1,), (2,)), bs_count=2
    )
    requests = request_slot(((0, 5), (1, 5), (2, 7), (3, 9)), graph)
    freq = (
        {
            10: {4: 0.0, 5: 0.1, 7: 0.8, 9: 0.3},
            100: {4: 0.0, 5: 0.02, 7: 0.35, 9: 0.12},
        },
        {
            10: {2: 0.2, 5: 0.1, 9: 0.4},
            100: {2: 0.05, 5: 0.01, 9: 0.2},
        },
    )
    return SlotObservation(101, cache, requests, freq)


@pytest.fixture(scope="session")
def small_instance():
    return build_instance(small_config(), 1)


@pytest.fixture(scope="session")
def golden_obs():
    return golden_observation()
