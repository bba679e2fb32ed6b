"""Reliable broadcast by Ready feedback on top of consistent broadcast.

A process becomes *ready* for a message when the consistent-broadcast layer
delivers it or when at least ``r_hat`` slots of its ready sample report being
ready for it.  It delivers the first message reported ready by at least
``d_hat`` slots of its delivery sample.  Ready sets may grow to several
messages (under a Byzantine sender), but each process delivers once.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .core import ProcessId, ProtocolParams, SignatureAuthority, SignedPayload, sample_with_replacement
from .murmur import READY, READY_SUBSCRIBE, DeliverHook, _no_hook


class ContagionState:
    """Per-process state of one reliable broadcast instance."""

    __slots__ = (
        "pid", "sender", "authority", "r_hat", "d_hat", "ready", "ready_sample",
        "delivery_sample", "slots", "ready_subscribers",
        "replied", "ready_tally", "delivery_tally", "delivered", "on_deliver", "_verified",
    )

    def __init__(
        self,
        pid: ProcessId,
        sender: ProcessId,
        authority: SignatureAuthority,
        ready_sample: Iterable[ProcessId],
        delivery_sample: Iterable[ProcessId],
        r_hat: int,
        d_hat: int,
        on_deliver: DeliverHook | None = None,
    ) -> None:
        self.pid = pid
        self.sender = sender
        self.authority = authority
        self.r_hat = r_hat
        self.d_hat = d_hat
        # message id -> signed payload, in the order readiness was reached
        self.ready: dict[int, SignedPayload] = {}
        self.ready_sample = list(ready_sample)
        self.delivery_sample = list(delivery_sample)
        # member -> [ready slots, delivery slots]
        slots: dict[ProcessId, list[int]] = {}
        for q in self.ready_sample:
            entry = slots.get(q)
            if entry is None:
                slots[q] = [1, 0]
            else:
                entry[0] += 1
        for q in self.delivery_sample:
            entry = slots.get(q)
            if entry is None:
                slots[q] = [0, 1]
            else:
                entry[1] += 1
        self.slots = slots
        self.ready_subscribers: set[ProcessId] = set()
        # (member, message) pairs already counted
        self.replied: set[tuple[ProcessId, int]] = set()
        self.ready_tally: dict[int, int] = {}
        self.delivery_tally: dict[int, int] = {}
        self.delivered: SignedPayload | None = None
        self.on_deliver = on_deliver or _no_hook
        # last payload that passed verification; Readys mostly repeat it
        self._verified: SignedPayload | None = None

    @property
    def ready_slots(self) -> dict[ProcessId, int]:
        """Slot count per member of the ready sample."""
        return {q: k for q, (k, _) in self.slots.items() if k}

    @property
    def delivery_slots(self) -> dict[ProcessId, int]:
        """Slot count per member of the delivery sample."""
        return {q: k for q, (_, k) in self.slots.items() if k}

    def start(self, out: list) -> None:
        """One ReadySubscribe per distinct member of the two samples."""
        pid = self.pid
        out.extend([(pid, q, READY_SUBSCRIBE, None) for q in sorted(self.slots)])

    def on_ready_subscribe(self, src: ProcessId, payload, out: list) -> None:
        self.ready_subscribers.add(src)
        pid = self.pid
        for stored in self.ready.values():
            out.append((pid, src, READY, stored))

    def on_pcb_deliver(self, payload: SignedPayload, out: list) -> None:
        if not self.authority.verify(payload, self.sender):
            return
        self._become_ready(payload, out)

    def _become_ready(self, payload: SignedPayload, out: list) -> None:
        if payload.message in self.ready:
            return
        self.ready[payload.message] = payload
        pid = self.pid
        for q in self.ready_subscribers:
            out.append((pid, q, READY, payload))

    def on_ready(self, src: ProcessId, payload: SignedPayload, out: list) -> None:
        slots = self.slots.get(src)
        # A Ready from outside both samples matters only under a zero threshold.
        if slots is None:
            if self.r_hat and self.d_hat:
                return
            slots = (0, 0)
        if payload is not self._verified:
            if payload is None or not self.authority.verify(payload, self.sender):
                return
            self._verified = payload
        m = payload.message
        rs, ds = slots
        key = (src, m)
        if key not in self.replied:
            self.replied.add(key)
            if rs:
                self.ready_tally[m] = self.ready_tally.get(m, 0) + rs
            if ds:
                self.delivery_tally[m] = self.delivery_tally.get(m, 0) + ds
        if m not in self.ready and self.ready_tally.get(m, 0) >= self.r_hat:
            self._become_ready(payload, out)
        if self.delivered is None and self.delivery_tally.get(m, 0) >= self.d_hat:
            self.delivered = payload
            self.on_deliver(payload, out)


def contagion_init(
    pid: ProcessId,
    universe_size: int,
    params: ProtocolParams,
    rng: np.random.Generator,
    sender: ProcessId = 0,
    authority: SignatureAuthority | None = None,
) -> tuple[ContagionState, list]:
    """Fresh state with ready and delivery samples and their subscription messages."""
    ready_sample = sample_with_replacement(universe_size, params.r, rng)
    delivery_sample = sample_with_replacement(universe_size, params.d, rng)
    state = ContagionState(
        pid, sender, authority or SignatureAuthority(), ready_sample, delivery_sample,
        params.r_hat, params.d_hat,
    )
    out: list = []
    state.start(out)
    return state, out
