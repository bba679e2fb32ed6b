"""Concrete adversaries and the analysis arenas they play in.

* :func:`passive_adversary` keeps every Byzantine process silent.
* The two-phase echo attack runs on the simplified consistent-broadcast arena
  (:func:`run_simplified_sieve_game`), where each correct process keeps one
  echo sample per message and all of them share the same Byzantine slots.
* :func:`contagion_consistency_adversary` and
  :func:`contagion_totality_adversary` drive the reliable layer of a
  :class:`~probcast.simnet.SimWorld` whose consistent layer is an oracle.

Every arena has a fast path (``*_outcome``/``*_frequency`` functions) that
computes the same per-seed outcome directly from the sampled samples; tests
check the two paths against each other seed by seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
import numpy as np

from .core import ConfigError, Message, ProcessId, ProtocolParams, SystemConfig, derive_rng
from .epidemics import MISSING, Multigraph, epidemic_run
from .murmur import READY, READY_SUBSCRIBE
from .simnet import (
    STREAM_DELIVERY, STREAM_ECHO, STREAM_READY, Adversary, AdversaryApi, SimWorld, TraceSummary, draw_multiset_samples, run_to_quiescence,
)


def passive_adversary() -> Adversary:
    """Byzantine processes never send anything; the run ends immediately."""
    return Adversary()


# ---------------------------------------------------------------------------
# Two-phase attack on the simplified consistent broadcast
# ---------------------------------------------------------------------------

@dataclass
class TwoPhaseTable:
    """Scheduled gossip deliveries of a two-phase attacker.

    ``first[i]`` is the message the ``(i+1)``-th correct process (in id order)
    gossip-delivers while no correct process has delivered anything.
    ``second[n]`` lists the messages gossip-delivered by the remaining
    processes once the first consistent delivery happened after ``n`` gossip
    deliveries.
    Tables here do not depend on the Byzantine population.
    """

    first: list[Message]
    second: dict[int, list[Message]] = field(default_factory=dict)

    @classmethod
    def default(cls, c: int) -> "TwoPhaseTable":
        """Message 1 until somebody delivers, then message 2 for everybody left.

        With a single correct process there is no second message to push.
        """
        first = [1] * c
        other = 2 if c >= 2 else 1
        second = {n: [other] * (c - n) for n in range(c + 1)}
        return cls(first, second)

    def validate(self, c: int) -> None:
        if len(self.first) != c:
            raise ConfigError("first phase must name one message per correct process")
        for n in range(c + 1):
            seq = self.second.get(n)
            if seq is None or len(seq) != c - n:
                raise ConfigError(f"second phase for n={n} must have {c - n} entries")
        msgs = list(self.first) + [m for seq in self.second.values() for m in seq]
        if any(not 1 <= m <= c for m in msgs):
            raise ConfigError("messages must lie in 1..C")

    def to_json(self) -> dict:
        return {"first": [list(self.first)], "second": {str(n): list(v) for n, v in sorted(self.second.items())}}

    @classmethod
    def from_json(cls, data: dict | str) -> "TwoPhaseTable":
        if isinstance(data, str):
            data = json.loads(data)
        first = data["first"]
        if first and isinstance(first[0], list):
            first = first[0]  # a single population class applies to every population
        return cls([int(m) for m in first], {int(n): [int(m) for m in v] for n, v in data["second"].items()})


@dataclass
class ArenaSamples:
    """Echo samples of the simplified arena.

    ``byzantine_slots[p]`` counts the Byzantine slots shared by every sample of
    correct process ``p``; ``correct_slots[m][p]`` lists the correct members
    of ``p``'s sample for message ``m``.
    """

    byzantine_slots: np.ndarray
    correct_slots: dict[int, np.ndarray]


def arena_samples(config: SystemConfig, e: int, seed: int, messages) -> ArenaSamples:
    """Draw the reference sample and the mimicked per-message samples.

    The reference sample (message 1) is ``E`` uniform draws; every other
    message keeps the Byzantine slots and redraws each correct slot uniformly
    among correct processes.  Message ``m`` uses its own stream, so any subset
    of messages can be drawn consistently.
    """
    c, n = config.c, config.n
    if config.byzantine_set != frozenset(range(c, n)):
        raise ConfigError("the arena assumes Byzantine processes occupy the highest ids")
    ref = derive_rng(seed, 0, STREAM_ECHO).integers(0, n, size=(c, e))
    byz_mask = ref >= c
    byz = byz_mask.sum(axis=1)
    slots: dict[int, np.ndarray] = {}
    for m in messages:
        if m == 1:
            slots[1] = np.where(byz_mask, -1, ref)
        else:
            fresh = derive_rng(seed, m, STREAM_ECHO).integers(0, c, size=(c, e))
            slots[m] = np.where(byz_mask, -1, fresh)
    return ArenaSamples(byz, slots)


def run_simplified_sieve_game(
    config: SystemConfig, params: ProtocolParams, table: TwoPhaseTable | None = None, seed: int = 0,
) -> dict:
    """Play a two-phase table step by step; returns ``consistency_violated`` and ``N_H``.

    Byzantine processes echo every message in its own context from the start
    (auto-echo), so a process with ``Ê`` Byzantine slots delivers everything
    at once.  ``N_H`` is the number of gossip deliveries that preceded the
    first consistent delivery (``None`` when nothing is ever delivered).
    """
    c, e_hat = config.c, params.e_hat
    table = table or TwoPhaseTable.default(c)
    table.validate(c)
    samples = arena_samples(config, params.e, seed, range(1, c + 1))
    pb: dict[ProcessId, Message] = {}
    delivered: set[Message] = set()

    def poll() -> set[Message]:
        found = set()
        for m in range(1, c + 1):
            if m in delivered:
                continue
            holders = np.array([pb.get(q) == m for q in range(c)] + [False])
            slots = samples.correct_slots[m]
            count = samples.byzantine_slots + holders[slots].sum(axis=1)
            if (count >= e_hat).any():
                found.add(m)
        return found

    first_hit = poll()
    if first_hit:
        return {"consistency_violated": len(first_hit) >= 2, "N_H": 0}
    n_h = None
    schedule = list(table.first)
    i = 0
    while i < c:
        pb[i] = schedule[i]
        i += 1
        new = poll()
        delivered |= new
        if n_h is None and new:
            n_h = i
            schedule = list(table.first[:i]) + list(table.second[i])
            if len(new) >= 2:
                break
    return {"consistency_violated": len(delivered) >= 2, "N_H": n_h}


def simplified_sieve_outcome(config: SystemConfig, params: ProtocolParams, seed: int) -> dict:
    """Fast evaluation of the default table (message 1, then message 2)."""
    c, e_hat = config.c, params.e_hat
    s = arena_samples(config, params.e, seed, (1, 2) if c >= 2 else (1,))
    need = e_hat - s.byzantine_slots
    if (need <= 0).any():
        return {"consistency_violated": c >= 2, "N_H": 0}
    # Position of each correct slot in the delivery order (ids are the order).
    pos = np.where(s.correct_slots[1] >= 0, s.correct_slots[1] + 1, np.iinfo(np.int64).max)
    pos = np.sort(pos, axis=1)
    times = pos[np.arange(c), need - 1]
    n_h = int(times.min())
    if n_h > c:
        return {"consistency_violated": False, "N_H": None}
    if c < 2:
        return {"consistency_violated": False, "N_H": n_h}
    late = (s.correct_slots[2] >= n_h).sum(axis=1)
    violated = bool((s.byzantine_slots + late >= e_hat).any())
    return {"consistency_violated": violated, "N_H": n_h}


def simplified_sieve_attack_frequency(config: SystemConfig, params: ProtocolParams, trials: int, seed: int = 0) -> float:
    """Fraction of seeds ``seed .. seed+trials-1`` on which the default attack succeeds."""
    wins = sum(simplified_sieve_outcome(config, params, seed + t)["consistency_violated"] for t in range(trials))
    return wins / trials if trials else 0.0


# ---------------------------------------------------------------------------
# Reliable-layer attackers (consistent layer replaced by an oracle)
# ---------------------------------------------------------------------------

def _arena_sender(config: SystemConfig) -> ProcessId:
    """Byzantine sender when there is one (it can sign conflicting messages)."""
    byz = sorted(config.byzantine_set)
    return byz[-1] if byz else 0


def reliable_arena(config: SystemConfig, params: ProtocolParams, seed: int, adversary: Adversary) -> SimWorld:
    """Reliable layer only; the consistent layer is driven by ``adversary``."""
    return SimWorld(
        config, params, seed, adversary, protocol="contagion", lower_layers=False,
        sender=_arena_sender(config),
    )


class ContagionConsistencyAdversary(Adversary):
    """Every Byzantine process answers each ReadySubscribe with ``Ready(m_alt)``.

    Afterwards the consistent layer delivers ``m_star`` to every correct
    process.  ``succeeded`` records whether some correct process delivered
    ``m_alt``.
    """

    def __init__(self, m_star: Message, m_alt: Message) -> None:
        if m_alt == m_star:
            raise ConfigError("the conflicting message must differ")
        self.m_star = m_star
        self.m_alt = m_alt
        self.alt_payload = None
        self.succeeded = False
        self._done = False

    def setup(self, api: AdversaryApi) -> None:
        byz = api.byzantine_ids()
        if api.sender in byz:
            self.alt_payload = api.sign(api.sender, self.m_alt)

    def on_message(self, api, src, dst, kind, payload) -> None:
        if kind == READY_SUBSCRIBE and self.alt_payload is not None:
            api.send(dst, src, READY, self.alt_payload)

    def step(self, api: AdversaryApi) -> None:
        if not self._done:
            self._done = True
            payload = api.pcb_oracle_payload(self.m_star)
            for p in api.correct_ids():
                api.force_pcb_deliver(p, payload)
            return
        self.succeeded = any(m == self.m_alt for _, m in api.state("prb"))
        api.end()


def contagion_consistency_adversary(m_star: Message = 1, m_alt: Message = 2) -> ContagionConsistencyAdversary:
    return ContagionConsistencyAdversary(m_star, m_alt)


def run_contagion_consistency_attack(config: SystemConfig, params: ProtocolParams, seed: int) -> TraceSummary:
    adv = contagion_consistency_adversary()
    world = reliable_arena(config, params, seed, adv)
    summary = run_to_quiescence(world)
    summary.attack_succeeded = adv.succeeded  # type: ignore[attr-defined]
    return summary


def _ready_graph(config: SystemConfig, params: ProtocolParams, seed: int) -> tuple[Multigraph, np.ndarray]:
    """Ready samples as a predecessor multigraph, plus the delivery samples (same streams as the world)."""
    n = config.n
    ready = np.asarray(draw_multiset_samples(n, params.r, derive_rng(seed, 0, STREAM_READY)), dtype=np.int64).reshape(n, params.r)
    deliv = np.asarray(draw_multiset_samples(n, params.d, derive_rng(seed, 0, STREAM_DELIVERY)), dtype=np.int64).reshape(n, params.d)
    return Multigraph(n, ready), deliv


def contagion_consistency_outcome(config: SystemConfig, params: ProtocolParams, seed: int) -> bool:
    """Fast path: does ``Ready(m_alt)`` from every Byzantine process reach ``D̂`` somewhere?"""
    byz = np.zeros(config.n, dtype=bool)
    byz[list(config.byzantine_set)] = True
    if not byz.any():
        return False
    graph, deliv = _ready_graph(config, params, seed)
    ready = epidemic_run(graph, byz, params.r_hat)
    support = ready[deliv].sum(axis=1) if params.d else np.zeros(config.n, dtype=int)
    correct = ~byz
    return bool((support[correct] >= params.d_hat).any())


class ContagionTotalityAdversary(Adversary):
    """One more correct process receives ``m*`` per round until a split is reachable.

    After each round has drained, a partial delivery is already a split.  If
    nobody has delivered yet, the Byzantine members of some process's
    delivery sample send it ``Ready(m*)`` when that suffices for it to
    deliver, and the attack stops there.  Once every correct process has
    delivered the attack has failed.
    """

    def __init__(self, m_star: Message = 1) -> None:
        self.m_star = m_star
        self.payload = None
        self.subscribers: dict[ProcessId, set[ProcessId]] = {}
        self.round = 0
        self.pushed = False
        self.finished = False

    def setup(self, api: AdversaryApi) -> None:
        self.payload = api.pcb_oracle_payload(self.m_star)

    def on_message(self, api, src, dst, kind, payload) -> None:
        if kind == READY_SUBSCRIBE:
            self.subscribers.setdefault(dst, set()).add(src)

    def step(self, api: AdversaryApi) -> None:
        correct = api.correct_ids()
        delivered = {p for p, _ in api.state("prb")}
        if self.pushed or 0 < len(delivered) < len(correct) or len(delivered) == len(correct):
            api.end()
            return
        target = self._pushable(api, correct)
        if target is not None:
            for b in api.byzantine_ids():
                if target in self.subscribers.get(b, ()):
                    api.send(b, target, READY, self.payload)
            self.pushed = True
            return
        if self.round >= len(correct):
            api.end()
            return
        api.force_pcb_deliver(correct[self.round], self.payload)
        self.round += 1

    def _pushable(self, api: AdversaryApi, correct: list[ProcessId]) -> ProcessId | None:
        byz = set(api.byzantine_ids())
        for p in correct:
            st = api.inspect_contagion(p)
            have = st.delivery_tally.get(self.m_star, 0)
            extra = sum(k for q, k in st.delivery_slots.items() if q in byz)
            if have + extra >= st.d_hat:
                return p
        return None


def contagion_totality_adversary(m_star: Message = 1) -> ContagionTotalityAdversary:
    return ContagionTotalityAdversary(m_star)


def run_contagion_totality_attack(config: SystemConfig, params: ProtocolParams, seed: int) -> TraceSummary:
    world = reliable_arena(config, params, seed, contagion_totality_adversary())
    return run_to_quiescence(world)


def contagion_totality_outcome(config: SystemConfig, params: ProtocolParams, seed: int) -> bool:
    """Fast path of :class:`ContagionTotalityAdversary` on the same samples."""
    n, c = config.n, config.c
    byz = np.zeros(n, dtype=bool)
    byz[list(config.byzantine_set)] = True
    correct = np.flatnonzero(~byz)
    graph, deliv = _ready_graph(config, params, seed)
    # Byzantine processes stay silent: they never count as ready.
    pred = np.where(byz[graph.predecessors], MISSING, graph.predecessors)
    pred[byz] = MISSING
    honest = Multigraph(n, pred)
    byz_ready = byz[graph.predecessors].sum(axis=1)
    byz_deliv = byz[deliv].sum(axis=1)
    d_hat = params.d_hat

    def support(mask: np.ndarray) -> np.ndarray:
        return mask[deliv].sum(axis=1)

    ready = np.zeros(n, dtype=bool)
    for rnd in range(c + 1):
        ready = epidemic_run(honest, ready, params.r_hat)
        got = support(ready)[correct]
        done = int((got >= d_hat).sum())
        if done:
            return done < c
        pushable = np.flatnonzero(got + byz_deliv[correct] >= d_hat)
        if pushable.size:
            target = correct[pushable[0]]
            # The targeted Readys also count towards the target's own readiness.
            if (ready[graph.predecessors[target]].sum() + byz_ready[target]) >= params.r_hat:
                ready[target] = True
                ready = epidemic_run(honest, ready, params.r_hat)
            got = support(ready)[correct]
            got[pushable[0]] += byz_deliv[target]
            done = int((got >= d_hat).sum())
            return 0 < done < c
        if rnd < c:
            ready[correct[rnd]] = True
    return False
