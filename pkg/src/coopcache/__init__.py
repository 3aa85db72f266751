"""Deterministic multi-BS cooperative edge-caching benchmark.

A frozen-trajectory environment with a strict text-to-action control
interface, classical and look-ahead reference policies, shaped-reward
machinery, a demonstration exporter, and an evaluation harness.
"""

from .core import (
    EMPTY_SLOT,
    NOOP,
    BsAction,
    CacheState,
    FeasibilityError,
    JointAction,
    RequestSlot,
    StructuralError,
    apply,
    check_transition,
    feasible_actions,
    hit_rate,
    request_slot,
)
from .dataset import audit_dataset, generate_grpo_states, generate_sft
from .harness import EvalReport, RunConfig, rollout, run, sweep
from .interface import SlotObservation, decode_prompt, encode, parse, serialize
from .policies import (
    ExternPolicy,
    HeuristicBooks,
    Policy,
    lookahead_oracle,
    make_policy,
    oracle_best_action,
)
from .reward import (
    RewardConfig,
    delta_perf,
    group_advantage,
    joint_space_size,
    lookahead_value,
    score_completion,
    verify_pbrs,
)
from .traffic import (
    AssociationGraph,
    FrequencyTracker,
    Instance,
    InstanceConfig,
    advance_tracker,
    build_instance,
    load_instance,
    observe,
    save_instance,
    warm_start,
    zipf_pmf,
)

__version__ = "0.1.0"
