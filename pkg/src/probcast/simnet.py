"""Deterministic discrete-event harness for the broadcast stack.

A :class:`SimWorld` hosts one protocol stack per correct process, a queue of
in-flight link messages and an adversary.  Byzantine processes have no stack:
every message addressed to them is handed to the adversary, and they speak
only through :class:`AdversaryApi`.

Scheduling follows the "adversary acts, network drains" pattern: after each
adversary step all consequent correct traffic is delivered before the
adversary acts again.  Within a drain the order is FIFO by default, or a
seeded random interleaving for fairness experiments.
"""

from __future__ import annotations

import gc
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, TextIO

import numpy as np

from .contagion import ContagionState
from .core import (
    ConfigError, Message, ProcessId, ProtocolParams, SignatureAuthority, SignedPayload,
    SystemConfig, derive_rng,
)
from .murmur import ECHO, ECHO_SUBSCRIBE, READY, RECORD_NAMES, MurmurState, gossip_graph_components
from .sieve import SieveState

PROTOCOLS = ("murmur", "sieve", "contagion")
LAYER_OF = {"murmur": "pb", "sieve": "pcb", "contagion": "prb"}

# Sub-stream identifiers for derive_rng(seed, run, stream).
STREAM_GOSSIP, STREAM_ECHO, STREAM_READY, STREAM_DELIVERY, STREAM_SCHEDULE = range(5)


class SimulatedExecutionFailure(RuntimeError):
    """The adversary misused its interface; the execution is void."""


class BudgetExceeded(RuntimeError):
    """The run did not reach quiescence within the step budget."""


def _drop(src, payload, out) -> None:
    return None


# ---------------------------------------------------------------------------
# Block sampling: every process's samples come from one array row, so the
# draws of process i depend only on (seed, run, stream, i).
# ---------------------------------------------------------------------------

def draw_gossip_samples(n: int, mean: float, rng: np.random.Generator) -> list[set[int]]:
    """Poisson(mean)-sized sets of distinct uniform processes, one per process."""
    if mean <= 0:
        return [set() for _ in range(n)]
    sizes = np.minimum(rng.poisson(mean, size=n), n)
    width = int(sizes.max()) * 3 + 8 if n else 0
    block = rng.integers(0, n, size=(n, width))
    samples = []
    for i in range(n):
        k = int(sizes[i])
        chosen: set[int] = set()
        if k:
            for q in block[i].tolist():
                chosen.add(q)
                if len(chosen) == k:
                    break
            while len(chosen) < k:  # rare: the row ran out of fresh candidates
                chosen.add(int(rng.integers(0, n)))
        samples.append(chosen)
    return samples


def draw_multiset_samples(n: int, size: int, rng: np.random.Generator) -> list[list[int]]:
    """``size`` draws with replacement per process."""
    if size == 0:
        return [[] for _ in range(n)]
    return rng.integers(0, n, size=(n, size)).tolist()


@dataclass(frozen=True)
class PropertyReport:
    """Which broadcast properties held on a finished execution."""

    no_duplication: bool = True
    integrity: bool = True
    validity: bool = True
    totality: bool = True
    consistency: bool = True

    def all_hold(self) -> bool:
        return self.no_duplication and self.integrity and self.validity and self.totality and self.consistency


@dataclass
class TraceSummary:
    """Outcome of a run: per-layer deliveries plus context for property checks."""

    n: int
    correct: frozenset
    sender: ProcessId
    sender_correct: bool
    broadcast_message: Message | None
    layer: str
    deliveries: dict[str, dict[ProcessId, list[Message]]] = field(default_factory=dict)
    events: int = 0
    gossip_components: int | None = None
    trace: list | None = None

    def delivered(self, layer: str | None = None) -> dict[ProcessId, list[Message]]:
        return self.deliveries.get(layer or self.layer, {})

    def report(self, layer: str | None = None) -> PropertyReport:
        return check_properties(self, layer)

    @property
    def consistency_violated(self) -> bool:
        return not self.report().consistency

    @property
    def totality_violated(self) -> bool:
        return not self.report().totality

    @property
    def validity_violated(self) -> bool:
        return not self.report().validity

    @property
    def gossip_connected(self) -> bool | None:
        return None if self.gossip_components is None else self.gossip_components <= 1


def check_properties(summary: TraceSummary, layer: str | None = None) -> PropertyReport:
    """Evaluate the broadcast properties on the deliveries of ``layer``.

    Validity means "the sender delivers" for the pb and prb layers and "every
    correct process delivers" (total validity) for the pcb layer.
    """
    layer = layer or summary.layer
    log = summary.deliveries.get(layer, {})
    correct = summary.correct
    per_process = {p: msgs for p, msgs in log.items() if p in correct and msgs}
    no_dup = all(len(msgs) == 1 for msgs in per_process.values())
    integrity = True
    validity = True
    if summary.sender_correct:
        m = summary.broadcast_message
        integrity = all(x == m for msgs in per_process.values() for x in msgs)
        if m is not None:
            if layer == "pcb":
                validity = all(m in log.get(p, ()) for p in correct)
            else:
                validity = m in log.get(summary.sender, ())
    distinct = {x for msgs in per_process.values() for x in msgs}
    consistency = len(distinct) <= 1
    totality = len(per_process) == 0 or len(per_process) == len(correct)
    return PropertyReport(no_dup, integrity, validity, totality, consistency)


class Adversary:
    """Base adversary: Byzantine processes stay silent and the run ends at once."""

    def setup(self, api: "AdversaryApi") -> None:
        """Called once after the world is built, before any message moves."""

    def on_message(self, api: "AdversaryApi", src: ProcessId, dst: ProcessId, kind: int, payload) -> None:
        """A link message reached Byzantine process ``dst``."""

    def step(self, api: "AdversaryApi") -> None:
        """One adversary action; call ``api.end()`` when finished."""
        api.end()


class AdversaryApi:
    """The only window the adversary has on a world.

    It never exposes the samples of correct processes; the adversary sees the
    messages sent to Byzantine processes and the set of deliveries so far.
    """

    def __init__(self, world: "SimWorld") -> None:
        self._w = world

    def byzantine_ids(self) -> list[ProcessId]:
        return sorted(self._w.config.byzantine_set)

    def correct_ids(self) -> list[ProcessId]:
        return self._w.config.correct_ids()

    @property
    def sender(self) -> ProcessId:
        return self._w.sender

    def sign(self, signer: ProcessId, message: Message) -> SignedPayload:
        if not self._w.config.is_byzantine(signer):
            raise SimulatedExecutionFailure("the adversary holds only Byzantine keys")
        return self._w.authority.sign(signer, message)

    def forge(self, sender: ProcessId, message: Message) -> SignedPayload:
        """A payload with a fabricated tag; correct processes will reject it."""
        return SignedPayload(sender, message, object())

    def send(self, src: ProcessId, dst: ProcessId, kind: int, payload=None) -> None:
        if not self._w.config.is_byzantine(src):
            raise SimulatedExecutionFailure("the adversary speaks only for Byzantine processes")
        self._w._enqueue((src, dst, kind, payload))

    def state(self, layer: str | None = None) -> set[tuple[ProcessId, Message]]:
        """Delivered ``(process, message)`` pairs at ``layer``."""
        log = self._w._deliveries[layer or self._w.layer]
        return {(p, m) for p, msgs in log.items() for m in msgs}

    def force_pb_deliver(self, pid: ProcessId, payload: SignedPayload) -> None:
        """Make correct ``pid`` deliver ``payload`` from the gossip layer (pb arenas)."""
        self._w._force_deliver(pid, payload, "pb")

    def force_pcb_deliver(self, pid: ProcessId, payload: SignedPayload) -> None:
        """Make correct ``pid`` deliver ``payload`` from the consistent layer (pcb arenas)."""
        self._w._force_deliver(pid, payload, "pcb")

    def pcb_oracle_payload(self, message: Message) -> SignedPayload:
        """The sender's signed ``message`` as the replaced consistent layer outputs it.

        The oracle is consistent: it produces a payload for one message only,
        so asking for a second message is a misuse.
        """
        w = self._w
        if w._oracle_payload is None:
            w._oracle_payload = w.authority.sign(w.sender, message)
        elif w._oracle_payload.message != message:
            raise SimulatedExecutionFailure("the consistent-layer oracle outputs a single message")
        return w._oracle_payload

    def inspect_contagion(self, pid: ProcessId):
        """Read-only view of a correct process's reliable-layer state.

        Only worst-case arenas use this: an adversary that sees samples is
        strictly stronger than the one the protocols are designed against.
        """
        return self._w.contagion[pid]

    def end(self) -> None:
        self._w._ended = True


class SimWorld:
    """N protocol stacks, a link-message queue and an adversary.

    ``protocol`` selects the top layer ("murmur", "sieve" or "contagion").
    With ``lower_layers=False`` only the top layer is instantiated and the
    layer below it is an oracle driven by the adversary through
    ``force_pb_deliver``/``force_pcb_deliver``.
    """

    def __init__(
        self,
        config: SystemConfig,
        params: ProtocolParams,
        seed: int = 0,
        adversary: Adversary | None = None,
        *,
        protocol: str = "contagion",
        run: int = 0,
        sender: ProcessId = 0,
        scheduler: str = "fifo",
        record_trace: bool = False,
        lower_layers: bool = True,
        step_budget: int | None = None,
    ) -> None:
        if protocol not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {protocol!r}")
        if scheduler not in ("fifo", "random"):
            raise ConfigError(f"unknown scheduler {scheduler!r}")
        if not 0 <= sender < config.n:
            raise ConfigError("sender must be a process id")
        params.validate(require_feedback_order=(protocol == "contagion"))
        self.config = config
        self.params = params
        self.seed = int(seed)
        self.run = int(run)
        self.protocol = protocol
        self.layer = LAYER_OF[protocol]
        self.sender = sender
        self.scheduler = scheduler
        self.authority = SignatureAuthority()
        self.adversary = adversary or Adversary()
        self.api = AdversaryApi(self)
        self.step_budget = step_budget if step_budget is not None else 10 * config.n * config.c
        self.steps = 0
        self._ended = False
        self.broadcast_message: Message | None = None
        self._oracle_payload: SignedPayload | None = None
        self.trace: list | None = [] if record_trace else None
        self._deliveries: dict[str, dict[ProcessId, list[Message]]] = {"pb": {}, "pcb": {}, "prb": {}}
        self._queue: deque | list = deque() if scheduler == "fifo" else []
        self._sched_rng = derive_rng(self.seed, self.run, STREAM_SCHEDULE) if scheduler == "random" else None
        self.gossip_samples: list[set[int]] | None = None
        self._build(lower_layers)
        self.adversary.setup(self.api)

    # -- construction ----------------------------------------------------
    def _stream(self, stream: int) -> np.random.Generator:
        return derive_rng(self.seed, self.run, stream)

    def _build(self, lower_layers: bool) -> None:
        n, p = self.config.n, self.params
        top = PROTOCOLS.index(self.protocol)
        bottom = 0 if lower_layers else top
        use = [bottom <= i <= top for i in range(3)]
        gossip = draw_gossip_samples(n, p.g, self._stream(STREAM_GOSSIP)) if use[0] else None
        echo = draw_multiset_samples(n, p.e, self._stream(STREAM_ECHO)) if use[1] else None
        ready = draw_multiset_samples(n, p.r, self._stream(STREAM_READY)) if use[2] else None
        deliv = draw_multiset_samples(n, p.d, self._stream(STREAM_DELIVERY)) if use[2] else None
        self.gossip_samples = gossip
        self.murmur: list[MurmurState | None] = [None] * n
        self.sieve: list[SieveState | None] = [None] * n
        self.contagion: list[ContagionState | None] = [None] * n
        self._handlers: list = [None] * n
        byz = self.config.byzantine_set
        out = self._queue
        for pid in range(n):
            if pid in byz:
                continue
            handlers = [_drop] * 6
            upper_hook = self._recorder(pid, "prb", None)
            if use[2]:
                c = ContagionState(pid, self.sender, self.authority, ready[pid], deliv[pid], p.r_hat, p.d_hat, upper_hook)
                self.contagion[pid] = c
                handlers[4], handlers[5] = c.on_ready_subscribe, c.on_ready
                upper_hook = c.on_pcb_deliver
            if use[1]:
                s = SieveState(pid, self.sender, self.authority, echo[pid], p.e_hat,
                               self._recorder(pid, "pcb", upper_hook if use[2] else None))
                self.sieve[pid] = s
                handlers[2], handlers[3] = s.on_echo_subscribe, s.on_echo
                upper_hook = s.on_pb_deliver
            if use[0]:
                m = MurmurState(pid, self.sender, self.authority, gossip[pid],
                                self._recorder(pid, "pb", upper_hook if use[1] else None))
                self.murmur[pid] = m
                handlers[0], handlers[1] = m.on_subscribe, m.on_gossip
            self._handlers[pid] = handlers
            if use[0]:
                self.murmur[pid].start(out)
            if use[1]:
                self.sieve[pid].start(out)
            if use[2]:
                self.contagion[pid].start(out)

    def _recorder(self, pid: ProcessId, layer: str, then):
        log = self._deliveries[layer]
        trace = self.trace

        def hook(payload: SignedPayload, out) -> None:
            log.setdefault(pid, []).append(payload.message)
            if trace is not None:
                trace.append({"step": self.steps, "src": pid, "dst": pid,
                              "record_kind": f"{layer}.Deliver", "message": payload.message})
            if then is not None:
                then(payload, out)

        return hook

    # -- driving -----------------------------------------------------------
    def _enqueue(self, item: tuple) -> None:
        self._queue.append(item)

    def broadcast(self, message: Message = 1) -> None:
        """The (correct) sender broadcasts ``message`` through the full stack."""
        if self.config.is_byzantine(self.sender):
            raise ConfigError("a Byzantine sender is driven by the adversary")
        if self.murmur[self.sender] is None:
            raise ConfigError("broadcast needs the gossip layer")
        self.broadcast_message = message
        if self.trace is not None:
            self.trace.append({"step": self.steps, "src": self.sender, "dst": self.sender,
                               "record_kind": "Broadcast", "message": message})
        self.murmur[self.sender].broadcast(message, self._queue)

    def _force_deliver(self, pid: ProcessId, payload: SignedPayload, layer: str) -> None:
        if self.config.is_byzantine(pid):
            raise SimulatedExecutionFailure("forced deliveries target correct processes")
        if layer == "pb":
            target = self.sieve[pid]
            if target is None or self.murmur[pid] is not None:
                raise SimulatedExecutionFailure("the gossip layer is not adversary-controlled here")
            if pid in self._deliveries["pb"]:
                raise SimulatedExecutionFailure("a correct process pb-delivers at most once")
            self._deliveries["pb"][pid] = [payload.message]
            target.on_pb_deliver(payload, self._queue)
        else:
            target = self.contagion[pid]
            if target is None or self.sieve[pid] is not None:
                raise SimulatedExecutionFailure("the consistent layer is not adversary-controlled here")
            if pid in self._deliveries["pcb"]:
                raise SimulatedExecutionFailure("a correct process pcb-delivers at most once")
            self._deliveries["pcb"][pid] = [payload.message]
            target.on_pcb_deliver(payload, self._queue)

    def drain(self) -> int:
        """Deliver queued messages until none is left; returns the number handled."""
        q = self._queue
        handlers = self._handlers
        adversary, api = self.adversary, self.api
        trace = self.trace
        budget = self.step_budget
        steps = self.steps
        start = steps
        if self.scheduler == "fifo":
            pop = q.popleft
            while q:
                src, dst, kind, payload = pop()
                steps += 1
                if steps > budget:
                    self.steps = steps
                    raise BudgetExceeded(f"step budget {budget} exhausted")
                if trace is not None:
                    self.steps = steps
                    trace.append({"step": steps, "src": src, "dst": dst, "record_kind": RECORD_NAMES[kind],
                                  "message": None if payload is None else payload.message})
                h = handlers[dst]
                if h is None:
                    self.steps = steps
                    adversary.on_message(api, src, dst, kind, payload)
                else:
                    h[kind](src, payload, q)
        else:
            rng = self._sched_rng
            while q:
                i = int(rng.integers(len(q)))
                q[i], q[-1] = q[-1], q[i]
                src, dst, kind, payload = q.pop()
                steps += 1
                if steps > budget:
                    self.steps = steps
                    raise BudgetExceeded(f"step budget {budget} exhausted")
                self.steps = steps
                if trace is not None:
                    trace.append({"step": steps, "src": src, "dst": dst, "record_kind": RECORD_NAMES[kind],
                                  "message": None if payload is None else payload.message})
                h = handlers[dst]
                if h is None:
                    adversary.on_message(api, src, dst, kind, payload)
                else:
                    h[kind](src, payload, q)
        self.steps = steps
        return steps - start

    def pending(self) -> int:
        return len(self._queue)

    def summary(self) -> TraceSummary:
        correct = frozenset(self.config.correct_ids())
        components = None
        if self.gossip_samples is not None:
            components = gossip_graph_components(self.gossip_samples, sorted(correct))
        return TraceSummary(
            n=self.config.n,
            correct=correct,
            sender=self.sender,
            sender_correct=not self.config.is_byzantine(self.sender),
            broadcast_message=self.broadcast_message,
            layer=self.layer,
            deliveries={k: {p: list(v) for p, v in log.items()} for k, log in self._deliveries.items()},
            events=self.steps,
            gossip_components=components,
            trace=self.trace,
        )


def world_new(
    config: SystemConfig,
    params: ProtocolParams,
    seed: int = 0,
    adversary: Adversary | None = None,
    **options,
) -> SimWorld:
    """Build a world with every correct stack initialized and subscriptions queued."""
    return SimWorld(config, params, seed, adversary, **options)


def run_to_quiescence(world: SimWorld, max_adversary_steps: int | None = None) -> TraceSummary:
    """Alternate adversary steps and full drains until the adversary ends.

    The adversary gets at most ``max_adversary_steps`` actions (default: the
    step budget); exceeding it raises :class:`BudgetExceeded`.
    """
    limit = world.step_budget if max_adversary_steps is None else max_adversary_steps
    world.drain()
    actions = 0
    while not world._ended:
        if actions >= limit:
            raise BudgetExceeded("adversary never ended the execution")
        world.adversary.step(world.api)
        actions += 1
        world.drain()
    world.drain()
    return world.summary()


def run_honest(
    config: SystemConfig,
    params: ProtocolParams,
    seed: int,
    run: int = 0,
    protocol: str = "contagion",
    message: Message = 1,
    **options,
) -> TraceSummary:
    """One broadcast by correct process 0 with silent Byzantine processes."""
    world = SimWorld(config, params, seed, protocol=protocol, run=run, **options)
    world.drain()
    world.broadcast(message)
    return run_to_quiescence(world)


def run_honest_batch(
    config: SystemConfig,
    params: ProtocolParams,
    seed: int,
    runs: int,
    first_run: int = 0,
    collect_every: int = 64,
    **options,
) -> Iterator[TraceSummary]:
    """Summaries of runs ``first_run .. first_run + runs - 1`` of :func:`run_honest`.

    A world is a dense graph of small objects, so the cyclic garbage
    collector spends much of a run re-scanning live state.  The batch keeps
    it paused and instead collects once every ``collect_every`` runs, which
    bounds memory while leaving results unchanged.
    """
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        for i in range(runs):
            yield run_honest(config, params, seed, run=first_run + i, **options)
            if collect_every and (i + 1) % collect_every == 0:
                gc.collect()
    finally:
        if was_enabled:
            gc.enable()


# ---------------------------------------------------------------------------
# Trace export / replay
# ---------------------------------------------------------------------------

def export_trace(trace: Iterable[dict], stream: TextIO) -> None:
    """Write trace records as line-delimited JSON."""
    for rec in trace:
        stream.write(json.dumps(rec, sort_keys=True) + "\n")


def load_trace(stream: TextIO) -> list[dict]:
    return [json.loads(line) for line in stream if line.strip()]


def replay(world: SimWorld, records: Iterable[dict]) -> TraceSummary:
    """Re-execute a recorded run by delivering link messages in the recorded order.

    ``world`` must be freshly built with the recorded seed and parameters; the
    sender's broadcast is re-issued at its ``Broadcast`` record.  Raises ``ValueError`` when a recorded message is not pending.
    """
    kinds = {name: i for i, name in enumerate(RECORD_NAMES)}
    pool: dict[tuple, deque] = {}

    def absorb() -> None:
        q = world._queue
        while q:
            item = q.pop() if isinstance(q, list) else q.popleft()
            src, dst, kind, payload = item
            key = (src, dst, kind, None if payload is None else payload.message)
            pool.setdefault(key, deque()).append(item)

    absorb()
    for rec in records:
        if rec["record_kind"] == "Broadcast":
            world.broadcast(rec["message"])
            absorb()
            continue
        kind = kinds.get(rec["record_kind"])
        if kind is None:
            continue
        key = (rec["src"], rec["dst"], kind, rec["message"])
        bucket = pool.get(key)
        if not bucket:
            raise ValueError(f"recorded message {key} is not pending")
        src, dst, kind, payload = bucket.popleft()
        world.steps += 1
        if world.trace is not None:
            world.trace.append({"step": world.steps, "src": src, "dst": dst, "record_kind": RECORD_NAMES[kind],
                                "message": None if payload is None else payload.message})
        h = world._handlers[dst]
        if h is None:
            world.adversary.on_message(world.api, src, dst, kind, payload)
        else:
            h[kind](src, payload, world._queue)
        absorb()
    return world.summary()


__all__ = [
    "Adversary", "AdversaryApi", "BudgetExceeded", "PropertyReport", "SimWorld",
    "SimulatedExecutionFailure", "TraceSummary", "check_properties", "draw_gossip_samples",
    "draw_multiset_samples", "export_trace", "load_trace", "replay", "run_honest", "run_honest_batch",
    "run_to_quiescence", "world_new", "ECHO", "ECHO_SUBSCRIBE", "READY",
]
