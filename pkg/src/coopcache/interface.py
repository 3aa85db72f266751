"""Prompt rendering and the strict text-to-action grammar.

The decision grammar (ASCII, case-sensitive, one line per BS, ascending):

    BS <b>: NOOP
    BS <b>: SWAP slot=<z> out=<f_out> in=<f_in>

Integers are plain decimals without sign or leading zeros, at most nine
digits. Leading/trailing whitespace around each line is tolerated; any
other non-empty text anywhere in a completion invalidates the whole
output. ``parse`` never raises on completion text: every deviation maps
to the invalid joint action with a machine-readable reason.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .core import (
    EMPTY_SLOT,
    NOOP,
    RULE_ADMISSIBILITY,
    RULE_CONSISTENCY,
    RULE_DUPLICATION,
    BsAction,
    CacheState,
    JointAction,
    RequestSlot,
    StructuralError,
)

REASON_SYNTAX = "syntax"
REASON_COUNT = "count"
REASON_ORDER = "order"

#: All reasons ``parse`` can attach to an invalid joint action.
PARSE_REASONS = (
    REASON_SYNTAX,
    REASON_COUNT,
    REASON_ORDER,
    RULE_ADMISSIBILITY,
    RULE_DUPLICATION,
    RULE_CONSISTENCY,
)

_INT = r"[1-9][0-9]{0,8}"
_NOOP_LINE = re.compile(rf"BS ({_INT}): NOOP")
_SWAP_LINE = re.compile(
    rf"BS ({_INT}): SWAP slot=({_INT}) out=({_INT}) in=({_INT})"
)

INSTRUCTION_BLOCK = (
    "INSTRUCTIONS:\n"
    "Reply with exactly one decision line per BS, in ascending BS order, and no other text.\n"
    "Allowed line formats:\n"
    "BS <b>: NOOP\n"
    "BS <b>: SWAP slot=<z> out=<f_out> in=<f_in>\n"
    "Feasibility rules:\n"
    "1. The file named by in= must be requested at that BS in the current slot.\n"
    "2. The file named by in= must not already be cached at that BS.\n"
    "3. The file named by out= must be the file currently stored at slot z of that BS.\n"
)


@dataclass(frozen=True)
class SlotObservation:
    """Immutable snapshot handed to policies at one decision slot.

    ``freq[b-1]`` maps window length to ``{file: appearance rate}`` for the
    files that are cached or requested at BS b. The nested dicts are built
    once and must be treated as read-only.
    """

    slot: int
    cache: CacheState
    requests: RequestSlot
    freq: tuple[dict, ...]

    @property
    def bs_count(self) -> int:
        return self.cache.bs_count


def encode(obs: SlotObservation) -> str:
    """Render the canonical prompt; byte-identical for equal observations.

    Layout: a SLOT header, then per BS the cache row in slot order, the
    deduplicated request counts sorted by descending count then file id,
    and one FREQ line per window (rates to three decimals, ties-to-even),
    followed by the fixed instruction block.
    """
    lines = [f"SLOT {obs.slot}"]
    for b in range(1, obs.bs_count + 1):
        row = obs.cache.slots[b - 1]
        cells = " ".join("-" if f == EMPTY_SLOT else str(f) for f in row)
        lines.append(f"BS {b} CACHE: {cells}")
        counts = obs.requests.counts[b - 1]
        ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        body = " ".join(f"{f}:{c}" for f, c in ordered)
        lines.append(f"BS {b} REQUESTS: {body}" if body else f"BS {b} REQUESTS:")
        for w in sorted(obs.freq[b - 1]):
            rates = obs.freq[b - 1][w]
            body = " ".join(f"{f}:{rates[f]:.3f}" for f in sorted(rates))
            lines.append(f"BS {b} FREQ w={w}: {body}" if body else f"BS {b} FREQ w={w}:")
    lines.append(INSTRUCTION_BLOCK)
    return "\n".join(lines)


def parse(text: str, obs: SlotObservation) -> JointAction:
    """Decode a completion into a joint action, else the invalid value.

    Valid output requires exactly one grammar line per BS, in ascending BS
    order, with every swap passing the three feasibility rules against the
    observation. Never raises; the attached reason is one of
    ``PARSE_REASONS``.
    """
    entries: list[tuple[int, tuple[int, int, int] | None]] = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        m = _NOOP_LINE.fullmatch(line)
        if m:
            entries.append((int(m.group(1)), None))
            continue
        m = _SWAP_LINE.fullmatch(line)
        if m:
            b, z, f_out, f_in = (int(g) for g in m.groups())
            entries.append((b, (z, f_in, f_out)))
            continue
        return JointAction.invalid(REASON_SYNTAX)
    ids = [b for b, _ in entries]
    if sorted(ids) != list(range(1, obs.bs_count + 1)):
        return JointAction.invalid(REASON_COUNT)
    if ids != sorted(ids):
        return JointAction.invalid(REASON_ORDER)
    actions = []
    for b, swap in entries:
        if swap is None:
            actions.append(NOOP)
            continue
        z, f_in, f_out = swap
        if f_in not in obs.requests.admissible[b - 1]:
            return JointAction.invalid(RULE_ADMISSIBILITY)
        if f_in in obs.cache.files_at(b):
            return JointAction.invalid(RULE_DUPLICATION)
        row = obs.cache.slots[b - 1]
        if z > len(row) or row[z - 1] != f_out:
            return JointAction.invalid(RULE_CONSISTENCY)
        actions.append(BsAction(z, f_in, f_out))
    return JointAction.valid(actions)


def parse_bytes(data: bytes, obs: SlotObservation) -> JointAction:
    """Parse raw bytes; undecodable sequences are replaced, never raised."""
    return parse(data.decode("utf-8", errors="replace"), obs)


def serialize(action: JointAction) -> str:
    """Render a valid joint action as grammar lines in ascending BS order."""
    if not action.is_valid:
        raise StructuralError("cannot serialize the invalid joint action")
    lines = []
    for b, act in enumerate(action.actions, start=1):
        if act.is_noop:
            lines.append(f"BS {b}: NOOP")
        else:
            lines.append(
                f"BS {b}: SWAP slot={act.slot} out={act.file_out} in={act.file_in}"
            )
    return "\n".join(lines)


_PROMPT_SLOT = re.compile(r"SLOT ([0-9]+)")
_PROMPT_CACHE = re.compile(r"BS ([0-9]+) CACHE: (.*)")
_PROMPT_REQ = re.compile(r"BS ([0-9]+) REQUESTS:(.*)")
_PROMPT_FREQ = re.compile(r"BS ([0-9]+) FREQ w=([0-9]+):(.*)")


def decode_prompt(text: str) -> SlotObservation:
    """Rebuild the observation fields a prompt renders.

    The result carries no user-level request pairs (prompts store per-BS
    aggregates only), so it supports parsing and feasibility auditing but
    not hit-rate evaluation. Raises StructuralError on malformed prompts.
    """
    lines = text.splitlines()
    if not lines:
        raise StructuralError("empty prompt")
    m = _PROMPT_SLOT.fullmatch(lines[0])
    if not m:
        raise StructuralError("prompt must open with a SLOT header")
    slot = int(m.group(1))
    rows: dict[int, tuple[int, ...]] = {}
    counts: dict[int, dict] = {}
    freq: dict[int, dict] = {}
    try:
        for line in lines[1:]:
            if line == "INSTRUCTIONS:":
                break
            if m := _PROMPT_CACHE.fullmatch(line):
                b = int(m.group(1))
                cells = m.group(2).split(" ")
                rows[b] = tuple(
                    EMPTY_SLOT if c == "-" else int(c) for c in cells
                )
            elif m := _PROMPT_REQ.fullmatch(line):
                b = int(m.group(1))
                body = m.group(2).strip()
                d = {}
                for tok in body.split(" ") if body else ():
                    f, c = tok.split(":")
                    d[int(f)] = int(c)
                counts[b] = d
            elif m := _PROMPT_FREQ.fullmatch(line):
                b, w = int(m.group(1)), int(m.group(2))
                body = m.group(3).strip()
                d = freq.setdefault(b, {}).setdefault(w, {})
                for tok in body.split(" ") if body else ():
                    f, r = tok.split(":")
                    d[int(f)] = float(r)
            else:
                raise StructuralError(f"unrecognized prompt line: {line!r}")
    except ValueError as exc:
        raise StructuralError(f"malformed prompt field: {exc}") from exc
    b_count = len(rows)
    if sorted(rows) != list(range(1, b_count + 1)) or sorted(counts) != sorted(rows):
        raise StructuralError("prompt must describe BS 1..B exactly once")
    cache = CacheState(tuple(rows[b] for b in range(1, b_count + 1)))
    requests = RequestSlot(
        (),
        tuple(counts[b] for b in range(1, b_count + 1)),
        tuple(frozenset(counts[b]) for b in range(1, b_count + 1)),
    )
    return SlotObservation(
        slot, cache, requests, tuple(freq.get(b, {}) for b in range(1, b_count + 1))
    )
