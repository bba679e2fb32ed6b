"""Gossip-based probabilistic broadcast.

Every process picks a Poisson-sized gossip sample, subscribes to its members
and forwards the first correctly signed message it receives to the whole
sample.  Subscriptions are reciprocated, so the gossip links form an
undirected graph.

All handlers share the signature ``handler(src, payload, out)`` and append
outgoing link messages to ``out`` as ``(src, dst, kind, payload)`` tuples.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .core import Message, ProcessId, ProtocolParams, SignatureAuthority, SignedPayload, sample_poisson_distinct

# Wire record kinds shared by the whole stack (small ints keep dispatch cheap).
GOSSIP_SUBSCRIBE = 0
GOSSIP = 1
ECHO_SUBSCRIBE = 2
ECHO = 3
READY_SUBSCRIBE = 4
READY = 5

RECORD_NAMES = ("GossipSubscribe", "Gossip", "EchoSubscribe", "Echo", "ReadySubscribe", "Ready")

DeliverHook = Callable[[SignedPayload, list], None]


def _no_hook(payload: SignedPayload, out: list) -> None:
    return None


class MurmurState:
    """Per-process state of one gossip broadcast instance."""

    __slots__ = ("pid", "sender", "authority", "gossip_sample", "delivered", "on_deliver")

    def __init__(
        self,
        pid: ProcessId,
        sender: ProcessId,
        authority: SignatureAuthority,
        gossip_sample: Iterable[ProcessId],
        on_deliver: DeliverHook | None = None,
    ) -> None:
        self.pid = pid
        self.sender = sender
        self.authority = authority
        self.gossip_sample = set(gossip_sample)
        self.delivered: SignedPayload | None = None
        self.on_deliver = on_deliver or _no_hook

    def start(self, out: list) -> None:
        """Subscribe to every member of the initial gossip sample."""
        pid = self.pid
        out.extend([(pid, q, GOSSIP_SUBSCRIBE, None) for q in sorted(self.gossip_sample)])

    def on_subscribe(self, src: ProcessId, payload, out: list) -> None:
        self.gossip_sample.add(src)
        if self.delivered is not None:
            out.append((self.pid, src, GOSSIP, self.delivered))

    def broadcast(self, message: Message, out: list) -> None:
        """Sign and disseminate ``message``; only the designated sender may call this."""
        if self.pid != self.sender:
            raise PermissionError("only the designated sender broadcasts")
        if self.delivered is not None:
            return
        self._dispatch(self.authority.sign(self.pid, message), out)

    def on_gossip(self, src: ProcessId, payload: SignedPayload, out: list) -> None:
        if self.delivered is not None:
            return
        if payload is None or not self.authority.verify(payload, self.sender):
            return
        self._dispatch(payload, out)

    def _dispatch(self, payload: SignedPayload, out: list) -> None:
        self.delivered = payload
        pid = self.pid
        for q in self.gossip_sample:
            out.append((pid, q, GOSSIP, payload))
        self.on_deliver(payload, out)


def murmur_init(
    pid: ProcessId,
    universe_size: int,
    params: ProtocolParams,
    rng: np.random.Generator,
    sender: ProcessId = 0,
    authority: SignatureAuthority | None = None,
) -> tuple[MurmurState, list]:
    """Fresh state with a Poisson(G) gossip sample and its subscription messages."""
    sample = sample_poisson_distinct(universe_size, params.g, rng)
    state = MurmurState(pid, sender, authority or SignatureAuthority(), sample)
    out: list = []
    state.start(out)
    return state, out


def gossip_graph_components(samples: list[Iterable[ProcessId]], members: Iterable[ProcessId]) -> int:
    """Number of connected components of the reciprocated gossip graph on ``members``.

    ``samples[i]`` is process ``i``'s initial gossip sample; links to processes
    outside ``members`` are ignored.
    """
    members = list(members)
    index = {p: i for i, p in enumerate(members)}
    parent = list(range(len(members)))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    components = len(members)
    for p in members:
        a = index[p]
        for q in samples[p]:
            b = index.get(q)
            if b is None:
                continue
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[ra] = rb
                components -= 1
    return components


def gossip_link_probability(n: int, g: float) -> float:
    """Probability that two given processes end up linked, ``1 - (1 - G/N)^2``."""
    q = min(1.0, g / n)
    return 1.0 - (1.0 - q) ** 2
