"""Consistent broadcast by echo-sample confirmation on top of gossip broadcast.

A process echoes the first message it receives from the gossip layer to the
processes that subscribed to it, and delivers that message once at least
``e_hat`` slots of its own echo sample confirmed the same message.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .core import ProcessId, ProtocolParams, SignatureAuthority, SignedPayload, multiplicities, sample_with_replacement
from .murmur import ECHO, ECHO_SUBSCRIBE, DeliverHook, _no_hook


class SieveState:
    """Per-process state of one consistent broadcast instance.

    ``echo_sample`` is a multiset: a process drawn ``k`` times owns ``k``
    slots, and its single Echo fills all of them.
    """

    __slots__ = (
        "pid", "sender", "authority", "e_hat", "echo", "echo_sample", "slot_counts",
        "echo_subscribers", "replies", "tally", "delivered", "on_deliver",
    )

    def __init__(
        self,
        pid: ProcessId,
        sender: ProcessId,
        authority: SignatureAuthority,
        echo_sample: Iterable[ProcessId],
        e_hat: int,
        on_deliver: DeliverHook | None = None,
    ) -> None:
        self.pid = pid
        self.sender = sender
        self.authority = authority
        self.e_hat = e_hat
        self.echo: SignedPayload | None = None
        self.echo_sample = list(echo_sample)
        self.slot_counts = multiplicities(self.echo_sample)
        self.echo_subscribers: set[ProcessId] = set()
        self.replies: dict[ProcessId, SignedPayload] = {}
        self.tally: dict[int, int] = {}
        self.delivered = False
        self.on_deliver = on_deliver or _no_hook

    def start(self, out: list) -> None:
        """One EchoSubscribe per distinct sample member."""
        pid = self.pid
        out.extend([(pid, q, ECHO_SUBSCRIBE, None) for q in sorted(self.slot_counts)])

    def on_echo_subscribe(self, src: ProcessId, payload, out: list) -> None:
        self.echo_subscribers.add(src)
        if self.echo is not None:
            out.append((self.pid, src, ECHO, self.echo))

    def on_pb_deliver(self, payload: SignedPayload, out: list) -> None:
        if self.echo is not None or not self.authority.verify(payload, self.sender):
            return
        self.echo = payload
        pid = self.pid
        for q in self.echo_subscribers:
            out.append((pid, q, ECHO, payload))
        self.try_deliver(out)

    def on_echo(self, src: ProcessId, payload: SignedPayload, out: list) -> None:
        slots = self.slot_counts.get(src)
        if slots is None or src in self.replies:
            return
        if payload is None or not self.authority.verify(payload, self.sender):
            return
        self.replies[src] = payload
        self.tally[payload.message] = self.tally.get(payload.message, 0) + slots
        self.try_deliver(out)

    def matching_slots(self) -> int:
        """Echo-sample slots whose reply matches this process's own echo."""
        if self.echo is None:
            return 0
        return self.tally.get(self.echo.message, 0)

    def try_deliver(self, out: list) -> bool:
        if self.delivered or self.echo is None:
            return False
        if self.tally.get(self.echo.message, 0) < self.e_hat:
            return False
        self.delivered = True
        self.on_deliver(self.echo, out)
        return True


def sieve_init(
    pid: ProcessId,
    universe_size: int,
    params: ProtocolParams,
    rng: np.random.Generator,
    sender: ProcessId = 0,
    authority: SignatureAuthority | None = None,
) -> tuple[SieveState, list]:
    """Fresh state with an ``E``-slot echo sample and its subscription messages."""
    sample = sample_with_replacement(universe_size, params.e, rng)
    state = SieveState(pid, sender, authority or SignatureAuthority(), sample, params.e_hat)
    out: list = []
    state.start(out)
    return state, out
