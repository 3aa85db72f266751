"""Shaped reward machinery.

The training signal for a completion is the change in discounted future
hit rate caused by the parsed action, plus a static penalty for malformed
output and a dynamic penalty for passing on a known-beneficial swap,
clipped to a fixed band. ``verify_pbrs`` turns the shaping guarantees
(argmax invariance, order preservation among swaps, strict demotion of the
penalized no-op) into an executable audit, and ``joint_space_size`` checks
the exponential growth of the joint action space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .core import (
    JointAction,
    NOOP,
    StructuralError,
    action_space_counts,
    apply,
    check_transition,
    feasible_actions,
    hit_rate,
)
from .interface import SlotObservation, parse, serialize
from .policies import oracle_best_action
from .traffic import Instance, advance_tracker, observe, warm_start

CLASS_INVALID = "invalid"
CLASS_VALID_NOOP = "valid-noop"
CLASS_VALID_WRITE = "valid-write"

_ARGMAX_TOL = 1e-12


@dataclass(frozen=True)
class RewardConfig:
    """Scoring knobs: look-ahead depth, discount, penalties, clip band."""

    horizon: int = 10
    gamma: float = 0.9
    lambda_fmt: float = -1.0
    lambda_opp: float = -0.2
    clip_lo: float = -1.0
    clip_hi: float = 1.0
    epsilon: float = 1e-4

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise StructuralError("horizon must be >= 1")
        if not 0.0 < self.gamma <= 1.0:
            raise StructuralError("gamma must be in (0, 1]")
        if self.epsilon <= 0:
            raise StructuralError("epsilon must be > 0")
        # Penalties must not reward bad output; exact zero is representable
        # so the degraded-demotion case can be constructed and flagged.
        if self.lambda_fmt > 0 or self.lambda_opp > 0:
            raise StructuralError("penalties must be <= 0")
        if self.clip_lo >= self.clip_hi:
            raise StructuralError("clip band must be non-empty")


@dataclass(frozen=True)
class RewardBreakdown:
    """One completion's score, decomposed."""

    gain: float
    penalty: float
    total: float
    classification: str
    expert_acted: bool
    action: JointAction

    @property
    def unclipped(self) -> float:
        return self.gain + self.penalty


def lookahead_value(cache, peek, graph, horizon: int, gamma: float) -> float:
    """Discount-weighted mean of hit rates over the next ``horizon`` slots.

    Normalized by the weight mass, so the value always lands in [0, 1].
    """
    if horizon < 1:
        raise StructuralError("horizon must be >= 1")
    if len(peek) < horizon:
        raise StructuralError(f"peek holds {len(peek)} slots, horizon needs {horizon}")
    num = 0.0
    den = 0.0
    weight = 1.0
    for k in range(horizon):
        num += weight * hit_rate(cache, peek[k], graph)
        den += weight
        weight *= gamma
    return num / den


def delta_perf(before, after, peek, graph, cfg: RewardConfig) -> float:
    """Future-potential difference caused by one cache transition.

    Keeping the cache unchanged scores exactly 0.0.
    """
    if not check_transition(before, after):
        raise StructuralError("transition exceeds the per-BS single-swap budget")
    if after == before:
        return 0.0
    return lookahead_value(after, peek, graph, cfg.horizon, cfg.gamma) - lookahead_value(
        before, peek, graph, cfg.horizon, cfg.gamma
    )


def score_completion(text: str, obs: SlotObservation, peek, expert: JointAction,
                     cfg: RewardConfig, graph) -> RewardBreakdown:
    """Score one completion against the frozen future and the expert witness.

    Invalid output gets the format penalty and zero gain (no cache update
    is executed). A valid all-no-op is penalized only when the stored
    expert action proves a beneficial swap existed. Totals are clipped to
    the configured band.
    """
    expert_acted = expert.is_valid and not expert.is_all_noop
    action = parse(text, obs)
    if not action.is_valid:
        gain, penalty, classification = 0.0, cfg.lambda_fmt, CLASS_INVALID
    else:
        after = apply(obs.cache, action, obs.requests)
        gain = delta_perf(obs.cache, after, peek, graph, cfg)
        if action.is_all_noop:
            classification = CLASS_VALID_NOOP
            penalty = cfg.lambda_opp if expert_acted else 0.0
        else:
            classification = CLASS_VALID_WRITE
            penalty = 0.0
    total = min(max(gain + penalty, cfg.clip_lo), cfg.clip_hi)
    return RewardBreakdown(gain, penalty, total, classification, expert_acted, action)


def group_advantage(rewards, epsilon: float) -> list[float]:
    """Within-group z-scores: population deviation plus a stability floor."""
    values = [float(r) for r in rewards]
    if not values:
        raise StructuralError("advantage needs at least one reward")
    mean = sum(values) / len(values)
    variance = sum((v - mean) ** 2 for v in values) / len(values)
    std = math.sqrt(variance)
    return [(v - mean) / (std + epsilon) for v in values]


@dataclass(frozen=True)
class JointSpaceSize:
    """Joint action-space cardinality with per-BS factors.

    ``factors`` honor the non-duplication rule; ``nominal_factors`` use the
    capacity * |pool| + 1 count that skips it. Both are reported because
    they differ whenever a requested file is already cached.
    """

    factors: tuple[int, ...]
    product: int
    nominal_factors: tuple[int, ...]
    nominal_product: int

    @property
    def exponential_bound_applies(self) -> bool:
        return all(f >= 2 for f in self.factors)

    @property
    def exponential_bound_holds(self) -> bool:
        return self.product >= 2 ** len(self.factors)


def joint_space_size(obs: SlotObservation) -> JointSpaceSize:
    """Per-BS feasible action counts and their product."""
    factors = []
    nominal = []
    for b in range(1, obs.bs_count + 1):
        fe, no = action_space_counts(obs.cache, b, obs.requests)
        factors.append(fe)
        nominal.append(no)
    size = JointSpaceSize(
        tuple(factors), math.prod(factors), tuple(nominal), math.prod(nominal)
    )
    if size.exponential_bound_applies:
        assert size.exponential_bound_holds
    return size


@dataclass(frozen=True)
class ShapingReport:
    """Outcome of the shaping audit over sampled full-cache slots."""

    seed: int
    slots_checked: int
    actions_checked: int
    argmax_mismatches: tuple[str, ...]
    order_violations: tuple[str, ...]
    demotion_violations: tuple[str, ...]
    flags: tuple[str, ...]
    spaces: tuple[JointSpaceSize, ...]

    @property
    def ok(self) -> bool:
        return not (
            self.argmax_mismatches or self.order_violations or self.demotion_violations
        )

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "slots_checked": self.slots_checked,
            "actions_checked": self.actions_checked,
            "argmax_mismatches": list(self.argmax_mismatches),
            "order_violations": list(self.order_violations),
            "demotion_violations": list(self.demotion_violations),
            "flags": list(self.flags),
            "joint_space_products": [s.product for s in self.spaces],
            "ok": self.ok,
        }


def _embed(action, b, bs_count) -> JointAction:
    parts = [NOOP] * bs_count
    parts[b - 1] = action
    return JointAction.valid(parts)


def verify_pbrs(instance: Instance, sample_slots: int, cfg: RewardConfig) -> ShapingReport:
    """Exhaustive per-BS shaping audit along the expert trajectory.

    Walks the expert trajectory from the warm state; at each of the first
    ``sample_slots`` full-cache decision slots it embeds every feasible
    per-BS action in an otherwise no-op joint action and checks that

    * the gain argmax coincides with the post-action potential argmax,
    * shaped scores rank swaps exactly as their gains do, and
    * every positive-gain swap strictly dominates the penalized no-op
      whenever the expert witnessed a beneficial swap.

    Gains here go through the slow scoring route (full look-ahead value
    evaluation), independent of the tallying search the oracle itself uses.
    """
    config = instance.config
    graph = instance.graph
    flags = []
    if cfg.lambda_opp >= 0:
        flags.append("lambda_opp >= 0: no-op demotion is no longer strict")
    if cfg.lambda_fmt >= 0:
        flags.append("lambda_fmt >= 0: malformed output is not penalized")
    warm = warm_start(instance, cfg.horizon, cfg.gamma)
    cache, tracker = warm.cache, warm.tracker
    argmax_bad: list[str] = []
    order_bad: list[str] = []
    demote_bad: list[str] = []
    spaces: list[JointSpaceSize] = []
    slots_checked = 0
    actions_checked = 0
    t = config.warm_slots + 1
    while slots_checked < sample_slots and t + cfg.horizon <= instance.trace_len:
        requests = instance.request_slot(t)
        tracker = advance_tracker(tracker, requests)
        obs = observe(t, cache, requests, tracker)
        peek = instance.peek(t, cfg.horizon)
        expert = JointAction.valid(
            [
                oracle_best_action(cache, b, requests, peek, graph, cfg.horizon, cfg.gamma)
                for b in range(1, config.bs_count + 1)
            ]
        )
        if all(cache.is_full(b) for b in range(1, config.bs_count + 1)):
            slots_checked += 1
            spaces.append(joint_space_size(obs))
            for b in range(1, config.bs_count + 1):
                rows = []
                for act in feasible_actions(cache, b, requests):
                    joint = _embed(act, b, config.bs_count)
                    after = apply(cache, joint, requests)
                    potential = lookahead_value(after, peek, graph, cfg.horizon, cfg.gamma)
                    gain = delta_perf(cache, after, peek, graph, cfg)
                    shaped = score_completion(serialize(joint), obs, peek, expert, cfg, graph)
                    rows.append((act, gain, potential, shaped))
                actions_checked += len(rows)
                where = f"seed {instance.seed} slot {t} BS {b}"
                gains = [g for _, g, _, _ in rows]
                potentials = [p for _, _, p, _ in rows]
                top_g, top_p = max(gains), max(potentials)
                by_gain = {i for i, g in enumerate(gains) if g >= top_g - _ARGMAX_TOL}
                by_potential = {
                    i for i, p in enumerate(potentials) if p >= top_p - _ARGMAX_TOL
                }
                if by_gain != by_potential:
                    argmax_bad.append(f"{where}: gain argmax != potential argmax")
                writes = [(g, s) for act, g, _, s in rows if not act.is_noop]
                for i, (g_i, s_i) in enumerate(writes):
                    for g_j, s_j in writes[i + 1 :]:
                        if g_i > g_j + _ARGMAX_TOL and not s_i.unclipped > s_j.unclipped:
                            order_bad.append(f"{where}: swap ranking not preserved")
                        if g_j > g_i + _ARGMAX_TOL and not s_j.unclipped > s_i.unclipped:
                            order_bad.append(f"{where}: swap ranking not preserved")
                if expert.is_valid and not expert.is_all_noop:
                    noop_shaped = next(
                        s for act, _, _, s in rows if act.is_noop
                    )
                    for act, g, _, s in rows:
                        if act.is_noop or g <= 0.0:
                            continue
                        if not (s.unclipped > 0.0 > noop_shaped.unclipped):
                            demote_bad.append(
                                f"{where}: positive-gain swap does not dominate no-op"
                            )
        cache = apply(cache, expert, requests)
        t += 1
    return ShapingReport(
        instance.seed,
        slots_checked,
        actions_checked,
        tuple(argmax_bad),
        tuple(order_bad),
        tuple(demote_bad),
        tuple(flags),
        tuple(spaces),
    )
