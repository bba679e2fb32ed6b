"""Shared vocabulary: identifiers, configuration records, sampling and signatures."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

# Processes are identified by their index 0..N-1 and messages by 1..C.  Plain
# ints keep the simulator's hot loop cheap; the aliases document intent.
ProcessId = int
Message = int


class ConfigError(ValueError):
    """Inconsistent system or protocol configuration."""


class InvalidUniverseError(ValueError):
    """Sampling from an empty process universe."""


def derive_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the stochastic entity identified by ``key``.

    Streams for different keys are statistically independent and do not
    depend on the order in which they are created.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def sample_with_replacement(universe_size: int, count: int, rng: np.random.Generator) -> list[ProcessId]:
    """``count`` independent uniform draws from ``0..universe_size-1`` (a multiset)."""
    if universe_size < 1:
        raise InvalidUniverseError("universe must contain at least one process")
    if count < 0:
        raise ValueError("count must be non-negative")
    if count == 0:
        return []
    return rng.integers(0, universe_size, size=count).tolist()


def sample_poisson_distinct(universe_size: int, mean: float, rng: np.random.Generator) -> set[ProcessId]:
    """Poisson(mean)-many distinct uniform processes, truncated at the universe size."""
    if universe_size < 1:
        raise InvalidUniverseError("universe must contain at least one process")
    if mean < 0:
        raise ValueError("mean must be non-negative")
    k = min(int(rng.poisson(mean)), universe_size)
    if k == 0:
        return set()
    return set(rng.choice(universe_size, size=k, replace=False).tolist())


@dataclass(frozen=True)
class SystemConfig:
    """N processes of which ``floor(f*N)`` are Byzantine.

    Byzantine processes occupy the highest indices unless an explicit set is
    given, so process 0 is correct whenever any process is.
    """

    n: int
    f: float = 0.0
    byzantine_set: frozenset[ProcessId] | None = None

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ConfigError("need at least one process")
        if not 0.0 <= self.f < 1.0:
            raise ConfigError("f must lie in [0, 1)")
        count = math.floor(self.f * self.n + 1e-9)
        if self.byzantine_set is None:
            object.__setattr__(self, "byzantine_set", frozenset(range(self.n - count, self.n)))
        else:
            bad = frozenset(self.byzantine_set)
            if len(bad) != count or any(not 0 <= b < self.n for b in bad):
                raise ConfigError("byzantine_set must hold floor(f*N) valid ids")
            object.__setattr__(self, "byzantine_set", bad)
        if self.c < 1:
            raise ConfigError("at least one process must be correct")

    @property
    def c(self) -> int:
        """Number of correct processes."""
        return self.n - len(self.byzantine_set)

    @property
    def byzantine_count(self) -> int:
        return len(self.byzantine_set)

    def correct_ids(self) -> list[ProcessId]:
        return [p for p in range(self.n) if p not in self.byzantine_set]

    def is_byzantine(self, pid: ProcessId) -> bool:
        return pid in self.byzantine_set


@dataclass(frozen=True)
class ProtocolParams:
    """Sample sizes and thresholds of the three layers.

    ``g`` is the expected gossip sample size; ``e``/``e_hat`` the echo sample
    and its delivery threshold; ``r``/``r_hat`` the ready sample and its
    contagion threshold; ``d``/``d_hat`` the delivery sample and its threshold.
    """

    g: float = 4
    e: int = 6
    e_hat: int = 4
    r: int = 6
    r_hat: int = 2
    d: int = 6
    d_hat: int = 4

    def validate(self, require_feedback_order: bool = True) -> "ProtocolParams":
        if self.g < 0 or min(self.e, self.r, self.d) < 0:
            raise ConfigError("sample sizes must be non-negative")
        if min(self.e_hat, self.r_hat, self.d_hat) < 0:
            raise ConfigError("thresholds must be non-negative")
        if self.e_hat > self.e or self.r_hat > self.r or self.d_hat > self.d:
            raise ConfigError("a threshold exceeds its sample size")
        if require_feedback_order and self.r > 0 and self.d > 0:
            # r_hat / r < d_hat / d, compared without division.
            if not self.r_hat * self.d < self.d_hat * self.r:
                raise ConfigError("need r_hat/r < d_hat/d")
        return self

    def as_dict(self) -> dict:
        return {
            "G": self.g, "E": self.e, "E_hat": self.e_hat, "R": self.r,
            "R_hat": self.r_hat, "D": self.d, "D_hat": self.d_hat,
        }


class SignedPayload(NamedTuple):
    """A message together with the tag that authenticates its sender."""

    sender: ProcessId
    message: Message
    tag: object


@dataclass
class SignatureAuthority:
    """Idealized signatures: tags are opaque tokens only the authority can mint.

    ``sign`` is handed to the party that owns a key; anybody can ``verify``.
    A token fabricated elsewhere is never accepted, which models
    unforgeability without any cryptography.
    """

    _issued: dict[tuple[ProcessId, Message], object] = field(default_factory=dict)

    def sign(self, sender: ProcessId, message: Message) -> SignedPayload:
        tag = self._issued.get((sender, message))
        if tag is None:
            tag = object()
            self._issued[(sender, message)] = tag
        return SignedPayload(sender, message, tag)

    def verify(self, payload: SignedPayload, sender: ProcessId | None = None) -> bool:
        if sender is not None and payload.sender != sender:
            return False
        return self._issued.get((payload.sender, payload.message)) is payload.tag


def multiplicities(sample: Iterable[ProcessId]) -> dict[ProcessId, int]:
    """Slot count per member of a multiset sample."""
    counts: dict[ProcessId, int] = {}
    for p in sample:
        counts[p] = counts.get(p, 0) + 1
    return counts
