"""Controllers behind one uniform contract.

Every policy consumes a :class:`~coopcache.interface.SlotObservation` and
answers with completion text in the decision grammar. Built-in policies are
deterministic given (instance, slot); only oracle-class policies receive a
peek at the frozen future trace. The extern adapter delegates decisions to
a child process speaking length-prefixed frames.
"""

from __future__ import annotations

import logging
import queue
import shlex
import subprocess
import threading
from dataclasses import dataclass

from .core import NOOP, BsAction, JointAction, RequestSlot, StructuralError
from .interface import serialize

logger = logging.getLogger(__name__)

#: The frozen future request slots an oracle-class policy may inspect.
LookaheadWindow = tuple[RequestSlot, ...]


class AdapterError(Exception):
    """The external adapter process could not be started."""


@dataclass
class HeuristicBooks:
    """Per-BS bookkeeping the eviction heuristics run on.

    ``last_request`` holds the most recent slot each file was requested,
    ``request_totals`` the cumulative request counts, and ``inserted_at``
    the slot each cached file entered the cache. Updated once per slot.
    """

    last_request: list[dict]
    request_totals: list[dict]
    inserted_at: list[dict]

    @classmethod
    def empty(cls, bs_count: int) -> "HeuristicBooks":
        return cls(
            [{} for _ in range(bs_count)],
            [{} for _ in range(bs_count)],
            [{} for _ in range(bs_count)],
        )

    def copy(self) -> "HeuristicBooks":
        return HeuristicBooks(
            [dict(d) for d in self.last_request],
            [dict(d) for d in self.request_totals],
            [dict(d) for d in self.inserted_at],
        )

    def record_requests(self, slot, requests) -> None:
        for b, counts in enumerate(requests.counts):
            for f, c in counts.items():
                self.last_request[b][f] = slot
                self.request_totals[b][f] = self.request_totals[b].get(f, 0) + c

    def record_swap(self, b, file_in, file_out, slot) -> None:
        self.inserted_at[b - 1].pop(file_out, None)
        self.inserted_at[b - 1][file_in] = slot

    def record_fill(self, b, file_in, slot) -> None:
        self.inserted_at[b - 1][file_in] = slot


def _hottest_candidate(obs, b):
    """Hottest uncached requested file; ties go to the lower file id."""
    pool = obs.requests.admissible[b - 1] - obs.cache.files_at(b)
    if not pool:
        return None
    counts = obs.requests.counts[b - 1]
    return min(pool, key=lambda f: (-counts[f], f))


def _first_missed_candidate(obs, b):
    """Earliest missed insertable request in arrival (user) order.

    The queue policy processes requests as they arrive instead of peeking
    at slot-level popularity, mirroring classical insert-on-miss caches.
    """
    cached = obs.cache.files_at(b)
    admissible = obs.requests.admissible[b - 1]
    for _u, f in obs.requests.pairs:
        if f in admissible and f not in cached:
            return f
    return None


def _eviction_actions(obs, victim_key, candidate_fn) -> list[BsAction]:
    actions = []
    for b in range(1, obs.bs_count + 1):
        f_in = candidate_fn(obs, b)
        if f_in is None or not obs.cache.is_full(b):
            actions.append(NOOP)
            continue
        victim = min(obs.cache.files_at(b), key=lambda f: victim_key(b, f))
        z = obs.cache.slots[b - 1].index(victim) + 1
        actions.append(BsAction(z, f_in, victim))
    return actions


def lru_decide(obs, books: HeuristicBooks) -> str:
    """Swap in the hottest uncached request; evict the least recently requested file."""
    key = lambda b, f: (books.last_request[b - 1].get(f, 0), f)
    return serialize(JointAction.valid(_eviction_actions(obs, key, _hottest_candidate)))


def lfu_decide(obs, books: HeuristicBooks) -> str:
    """Like lru_decide, but the victim is the file with the lowest cumulative count."""
    key = lambda b, f: (books.request_totals[b - 1].get(f, 0), f)
    return serialize(JointAction.valid(_eviction_actions(obs, key, _hottest_candidate)))


def fifo_decide(obs, books: HeuristicBooks) -> str:
    """Strict queue semantics on both ends of the cache.

    Inserts the earliest missed insertable request in arrival order and
    evicts the file with the earliest insertion slot (ties to the lower
    file id).
    """
    key = lambda b, f: (books.inserted_at[b - 1].get(f, 0), f)
    return serialize(
        JointAction.valid(_eviction_actions(obs, key, _first_missed_candidate))
    )


def oracle_best_action(cache, b, requests, peek, graph, horizon, gamma) -> BsAction:
    """Best single-BS action by discounted future-hit gain over ``peek``.

    Each candidate swap is scored by the change it causes to cooperative
    hits over the next ``horizon`` frozen request slots, holding the other
    BS rows fixed. Only users covered by this BS whose requested file is
    the inserted or evicted one can flip, so the score reduces to weighted
    per-file gain/loss tallies. The no-op scores exactly zero; a swap wins
    only when strictly better, and ties between swaps resolve to the
    smallest (slot, file_in).
    """
    if horizon < 1:
        raise StructuralError("horizon must be >= 1")
    if len(peek) < horizon:
        raise StructuralError(f"peek holds {len(peek)} slots, horizon needs {horizon}")
    if not cache.is_full(b):
        return NOOP
    cached_here = cache.files_at(b)
    candidates = sorted(requests.admissible[b - 1] - cached_here)
    if not candidates:
        return NOOP
    gain: dict = {}
    loss: dict = {}
    weight = 1.0
    for k in range(horizon):
        slot_requests = peek[k]
        if slot_requests.pairs:
            scale = weight / len(slot_requests.pairs)
            for u, f in slot_requests.pairs:
                covered_here = False
                holders = 0
                for bb in graph.covering(u):
                    if bb == b:
                        covered_here = True
                    if f in cache.files_at(bb):
                        holders += 1
                if not covered_here:
                    continue
                if holders == 0:
                    gain[f] = gain.get(f, 0.0) + scale
                elif holders == 1 and f in cached_here:
                    loss[f] = loss.get(f, 0.0) + scale
        weight *= gamma
    winners = [f for f in candidates if gain.get(f, 0.0) > 0.0]
    if not winners:
        return NOOP
    best = NOOP
    best_score = 0.0
    for z, f_out in enumerate(cache.slots[b - 1], start=1):
        lose = loss.get(f_out, 0.0)
        for f_in in winners:
            score = gain[f_in] - lose
            if score > best_score:
                best, best_score = BsAction(z, f_in, f_out), score
    assert best_score >= 0.0  # the no-op floor: never worse than keeping the cache
    return best


def lookahead_oracle(obs, peek, horizon, gamma, graph) -> str:
    """Decoupled per-BS search; emits one grammar line per BS."""
    actions = [
        oracle_best_action(obs.cache, b, obs.requests, peek, graph, horizon, gamma)
        for b in range(1, obs.bs_count + 1)
    ]
    return serialize(JointAction.valid(actions))


class Policy:
    """Uniform controller contract.

    ``decide`` must return completion text for the current observation;
    built-in policies are deterministic given (instance, slot). Policies
    with ``wants_peek`` receive the next ``peek_len`` frozen request slots.
    """

    name = "policy"
    wants_peek = False
    peek_len = 0

    def reset(self, instance, warm=None) -> None:
        """Bind instance metadata (and optionally the shared warm state)."""

    def decide(self, obs, peek=None) -> str:
        raise NotImplementedError

    def close(self) -> None:
        """Release external resources, if any."""


class NoopPolicy(Policy):
    """Always keeps every cache unchanged; useful as a frozen baseline."""

    name = "noop"

    def decide(self, obs, peek=None) -> str:
        return serialize(JointAction.valid([NOOP] * obs.bs_count))


class _BookPolicy(Policy):
    _victim_book = ""
    _candidate = staticmethod(_hottest_candidate)

    def __init__(self) -> None:
        self._books: HeuristicBooks | None = None

    def reset(self, instance, warm=None) -> None:
        if warm is not None:
            self._books = warm.books.copy()
        else:
            self._books = HeuristicBooks.empty(instance.config.bs_count)

    def _victim_key(self, b, f):
        book = getattr(self._books, self._victim_book)
        return (book[b - 1].get(f, 0), f)

    def decide(self, obs, peek=None) -> str:
        books = self._books
        books.record_requests(obs.slot, obs.requests)
        actions = _eviction_actions(obs, self._victim_key, self._candidate)
        for b, act in enumerate(actions, start=1):
            if not act.is_noop:
                books.record_swap(b, act.file_in, act.file_out, obs.slot)
        return serialize(JointAction.valid(actions))


class LruPolicy(_BookPolicy):
    name = "lru"
    _victim_book = "last_request"


class LfuPolicy(_BookPolicy):
    name = "lfu"
    _victim_book = "request_totals"


class FifoPolicy(_BookPolicy):
    name = "fifo"
    _victim_book = "inserted_at"
    _candidate = staticmethod(_first_missed_candidate)


class OraclePolicy(Policy):
    """Look-ahead exhaustive search over the frozen future trace.

    horizon=1 is the myopic next-slot reference; horizon=10 with the
    default discount is the demonstration expert.
    """

    wants_peek = True

    def __init__(self, horizon: int, gamma: float = 0.9) -> None:
        if horizon < 1:
            raise StructuralError("oracle horizon must be >= 1")
        self.horizon = int(horizon)
        self.gamma = float(gamma)
        self.name = f"oracle:{self.horizon}"
        self.peek_len = self.horizon
        self._graph = None

    def reset(self, instance, warm=None) -> None:
        self._graph = instance.graph

    def decide(self, obs, peek=None) -> str:
        if peek is None:
            raise StructuralError("oracle policy needs a peek window")
        return lookahead_oracle(obs, peek, self.horizon, self.gamma, self._graph)


FRAME_LIMIT = 16 * 1024 * 1024  # refuse absurd frame sizes from adapters


def write_frame(stream, payload: str) -> None:
    """Emit one ``LEN <n>`` header line plus n bytes of UTF-8 payload."""
    data = payload.encode("utf-8")
    stream.write(b"LEN %d\n" % len(data))
    stream.write(data)
    stream.flush()


def read_frame(stream) -> str | None:
    """Read one frame; None on EOF, a bad header, or a truncated payload."""
    header = stream.readline()
    if not header or not header.startswith(b"LEN "):
        return None
    try:
        n = int(header[4:].strip())
    except ValueError:
        return None
    if n < 0 or n > FRAME_LIMIT:
        return None
    data = stream.read(n)
    if data is None or len(data) != n:
        return None
    return data.decode("utf-8", errors="replace")


class ExternPolicy(Policy):
    """Delegates decisions to a persistent child process.

    Wire protocol, both directions: ``LEN <n>\\n`` followed by exactly n
    bytes of UTF-8 payload. One prompt frame out, one completion frame
    back per slot. A timeout or a closed pipe yields an empty completion
    (which parses invalid); late frames from a timed-out slot are drained
    before the next prompt is sent.
    """

    wants_peek = False

    def __init__(self, command: str, timeout: float = 30.0) -> None:
        if not command.strip():
            raise AdapterError("empty adapter command")
        self.name = "extern"
        self._command = command
        self._timeout = float(timeout)
        self._proc: subprocess.Popen | None = None
        self._frames: queue.Queue | None = None
        self._stale = 0

    def reset(self, instance, warm=None) -> None:
        if self._proc is None or self._proc.poll() is not None:
            self._spawn()

    def _spawn(self) -> None:
        try:
            self._proc = subprocess.Popen(
                shlex.split(self._command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
            )
        except OSError as exc:
            raise AdapterError(f"cannot start adapter {self._command!r}: {exc}") from exc
        self._frames = queue.Queue()
        self._stale = 0
        threading.Thread(
            target=_pump_frames, args=(self._proc.stdout, self._frames), daemon=True
        ).start()

    def decide(self, obs, peek=None) -> str:
        from .interface import encode  # local import avoids a cycle

        if self._proc is None or self._proc.poll() is not None:
            logger.warning("adapter process is gone; scoring an empty completion")
            return ""
        while self._stale:
            try:
                if self._frames.get_nowait() is None:
                    return ""
            except queue.Empty:
                break
            self._stale -= 1
        try:
            write_frame(self._proc.stdin, encode(obs))
        except (BrokenPipeError, OSError):
            logger.warning("adapter pipe closed at slot %d", obs.slot)
            return ""
        try:
            reply = self._frames.get(timeout=self._timeout)
        except queue.Empty:
            self._stale += 1
            logger.warning(
                "adapter timed out after %.1fs at slot %d", self._timeout, obs.slot
            )
            return ""
        return reply if reply is not None else ""

    def close(self) -> None:
        if self._proc is not None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
            self._proc = None


def _pump_frames(stream, frames: queue.Queue) -> None:
    while True:
        frame = read_frame(stream)
        frames.put(frame)
        if frame is None:
            return


def make_policy(spec: str, gamma: float = 0.9, extern_timeout: float = 30.0) -> Policy:
    """Build a controller from its textual spec.

    Accepted specs: ``lru`` | ``lfu`` | ``fifo`` | ``noop`` |
    ``oracle:<horizon>`` | ``extern:<command>``.
    """
    if spec == "lru":
        return LruPolicy()
    if spec == "lfu":
        return LfuPolicy()
    if spec == "fifo":
        return FifoPolicy()
    if spec == "noop":
        return NoopPolicy()
    if spec.startswith("oracle:"):
        try:
            horizon = int(spec.split(":", 1)[1])
        except ValueError as exc:
            raise StructuralError(f"bad oracle horizon in {spec!r}") from exc
        return OraclePolicy(horizon, gamma)
    if spec.startswith("extern:"):
        return ExternPolicy(spec.split(":", 1)[1], timeout=extern_timeout)
    raise StructuralError(f"unknown policy spec {spec!r}")
