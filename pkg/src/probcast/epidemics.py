"""Threshold contagion on random predecessor multigraphs.

Every node owns ``R`` predecessor slots; each slot independently points to a
uniform node with probability ``l`` and is empty otherwise.  A healthy node
becomes infected once at least ``r_hat`` of its slots point to infected nodes.
In the K-round game a player infects ``S`` healthy nodes per round and the
contagion then runs to its fixed point.

The distribution of the infected count at the end of each round does not
depend on the player's policy and is computed exactly by a Markov chain on
``(infected, newly infected)`` pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from .numerics import LOG_HALF, NEG_INF, log1mexp, log_binom_pmf_table, log_tails_from_table

MISSING = -1

# Contributions to the chain below this probability are dropped and tallied
# as truncated mass (see GammaDistribution.truncated).
DEFAULT_FLOOR = 1e-30


class PolicyError(ValueError):
    """A player policy chose an infected, duplicate or out-of-range node."""


@dataclass(frozen=True)
class GameParams:
    """Threshold contagion game: nodes, slots, link probability, rounds, batch, threshold."""

    n: int
    r: int
    l: float
    k: int
    s: int
    r_hat: int

    def __post_init__(self) -> None:
        if self.n < 1 or self.r < 0 or self.k < 0 or self.s < 0 or self.r_hat < 0:
            raise ValueError("game sizes must be non-negative (and n >= 1)")
        if not 0.0 <= self.l <= 1.0:
            raise ValueError("link probability must lie in [0, 1]")
        if self.s > self.n:
            raise ValueError("batch size exceeds node count")


@dataclass
class Multigraph:
    """``predecessors[j]`` lists the ``R`` slots of node ``j`` (``MISSING`` for an empty slot)."""

    n: int
    predecessors: np.ndarray  # shape (n, R), int

    @property
    def r(self) -> int:
        return self.predecessors.shape[1]


def random_multigraph(n: int, r: int, l: float, rng: np.random.Generator) -> Multigraph:
    """Independent slots: empty with probability ``1 - l``, else a uniform node."""
    targets = rng.integers(0, n, size=(n, r))
    present = rng.random(size=(n, r)) < l
    return Multigraph(n, np.where(present, targets, MISSING))


def epidemic_run(graph: Multigraph, infected: np.ndarray | set, r_hat: int) -> np.ndarray:
    """Fixed point of the contagion rule, starting from ``infected``.

    ``infected`` is a boolean mask or a set of node ids; a new boolean mask is
    returned.  Nodes are never healed, so the iteration stops after at most
    ``n`` synchronous steps.
    """
    mask = np.zeros(graph.n, dtype=bool)
    if isinstance(infected, np.ndarray) and infected.dtype == bool:
        mask |= infected
    else:
        mask[list(infected)] = True
    pred = graph.predecessors
    present = pred != MISSING
    safe = np.where(present, pred, 0)
    while True:
        counts = (mask[safe] & present).sum(axis=1)
        new = (~mask) & (counts >= r_hat)
        if not new.any():
            return mask
        mask |= new


Policy = Callable[[np.ndarray, int, np.random.Generator], Sequence[int]]


def uniform_policy(infected: np.ndarray, s: int, rng: np.random.Generator) -> list[int]:
    """Infect ``s`` healthy nodes chosen uniformly at random."""
    healthy = np.flatnonzero(~infected)
    return rng.choice(healthy, size=s, replace=False).tolist()


def lowest_index_policy(infected: np.ndarray, s: int, rng: np.random.Generator) -> list[int]:
    """Infect the ``s`` healthy nodes with the smallest ids."""
    return np.flatnonzero(~infected)[:s].tolist()


def highest_index_policy(infected: np.ndarray, s: int, rng: np.random.Generator) -> list[int]:
    """Infect the ``s`` healthy nodes with the largest ids."""
    return np.flatnonzero(~infected)[::-1][:s].tolist()


def play_threshold_contagion(
    params: GameParams,
    policy: Policy,
    rng: np.random.Generator,
    graph: Multigraph | None = None,
    per_round: bool = False,
):
    """Play the K-round game; returns the final infected count (or all round counts).

    The policy only sees the infection mask, never the graph.  A round with
    fewer than ``S`` healthy nodes infects nobody.
    """
    if graph is None:
        graph = random_multigraph(params.n, params.r, params.l, rng)
    infected = np.zeros(params.n, dtype=bool)
    counts = []
    for _ in range(params.k):
        healthy = params.n - int(infected.sum())
        if healthy >= params.s and params.s > 0:
            choice = list(policy(infected.copy(), params.s, rng))
            if len(choice) != params.s or len(set(choice)) != params.s:
                raise PolicyError("policy must return S distinct nodes")
            for j in choice:
                if not 0 <= j < params.n or infected[j]:
                    raise PolicyError(f"node {j} is not a healthy node")
            infected[choice] = True
        infected = epidemic_run(graph, infected, params.r_hat)
        counts.append(int(infected.sum()))
    if per_round:
        return counts
    return counts[-1] if counts else 0


# ---------------------------------------------------------------------------
# Exact Markov chain
# ---------------------------------------------------------------------------

@dataclass
class GammaDistribution:
    """Per-round log-pmfs of the infected count at the end of each round.

    ``truncated[k]`` is the probability mass dropped below the floor up to and
    including round ``k``; the round-``k`` pmf sums to ``1 - truncated[k]``.
    Bounds that consume the distribution add it back conservatively.
    """

    params: GameParams
    rounds: list[np.ndarray] = field(default_factory=list)
    truncated: list[float] = field(default_factory=list)

    def pmf(self, k: int) -> np.ndarray:
        """Linear-space pmf of round ``k`` (1-based)."""
        return np.exp(self.rounds[k - 1])

    def to_json(self) -> dict:
        p = self.params
        return {
            "params": {"N": p.n, "R": p.r, "l": p.l, "K": p.k, "S": p.s, "R_hat": p.r_hat},
            "rounds": [[None if v == NEG_INF else float(v) for v in r] for r in self.rounds],
            "truncated": list(self.truncated),
        }


class _ChainKernel:
    """Per-game tables shared by every transition of the chain."""

    def __init__(self, params: GameParams) -> None:
        self.params = params
        n = params.n
        self.log_fact = gammaln(np.arange(n + 2, dtype=float) + 1.0)
        x = np.arange(n + 1, dtype=float)
        p = np.clip(params.l * x / n, 0.0, 1.0)
        with np.errstate(divide="ignore"):
            logp = np.log(p)
            logq = np.log1p(-p)
        table = log_binom_pmf_table(params.r, logp, logq)
        # tail[x]: a healthy node has >= r_hat infected predecessors when x nodes are infected
        self.log_tail = np.asarray(log_tails_from_table(table, params.r_hat), dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            self.log_head = np.where(
                self.log_tail <= LOG_HALF,
                log1mexp(np.minimum(self.log_tail, 0.0)),
                logsumexp(table[..., : params.r_hat], axis=-1) if params.r_hat > 0 else NEG_INF,
            )

    def infection_logs(self, m: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``(log p, log(1-p))`` that a node healthy with ``m`` infected catches it at ``m+u``."""
        params = self.params
        m = np.asarray(m)
        u = np.asarray(u)
        nn = m + u
        if params.r_hat == 0:
            return np.zeros(m.shape), np.full(m.shape, NEG_INF)
        t_prev, t_now = self.log_tail[m], self.log_tail[nn]
        s_prev, s_now = self.log_head[m], self.log_head[nn]
        with np.errstate(divide="ignore", invalid="ignore"):
            log_q = np.minimum(s_now - s_prev, 0.0)
            small = t_prev <= LOG_HALF
            # T(b) - T(a) evaluated on the smaller side of the distribution
            diff_t = t_now + log1mexp(np.minimum(t_prev - t_now, 0.0))
            log_p_small = diff_t - s_prev
            log_p_big = log1mexp(log_q)
            log_p = np.where(small, log_p_small, log_p_big)
        dead = ~np.isfinite(s_prev)  # no healthy node can be in this state
        log_p = np.where(dead | (u == 0), np.where(dead, 0.0, NEG_INF), log_p)
        log_q = np.where(dead, NEG_INF, np.where(u == 0, 0.0, log_q))
        log_p = np.where(np.isnan(log_p), NEG_INF, log_p)
        return log_p, log_q

    def spread_log_pmf(self, healthy: np.ndarray, log_p: np.ndarray, log_q: np.ndarray, width: int) -> np.ndarray:
        """Rows of ``log Bin(healthy_i, p_i)`` over ``0..width-1``."""
        # -inf logs become a huge finite negative so that 0 * log stays 0.
        lp = np.maximum(log_p, -1e300)[:, None]
        lq = np.maximum(log_q, -1e300)[:, None]
        h = healthy[:, None]
        k = np.arange(width)[None, :]
        kk = np.minimum(k, h)
        lf = self.log_fact
        out = lf[h] - lf[kk]
        out -= lf[h - kk]
        out += kk * lp
        out += (h - kk) * lq
        out[k > h] = NEG_INF
        return out


@lru_cache(maxsize=64)
def _kernel(params: GameParams) -> _ChainKernel:
    return _ChainKernel(params)


def markov_contagion_transition(n_bar: int, u_bar: int, params: GameParams) -> np.ndarray:
    """Distribution of the next newly-infected count from state ``(n_bar, u_bar)``.

    Returns a linear pmf over ``u' = 0..N - n_bar``; the next state is
    ``(n_bar + u', u')``.
    """
    if not 0 <= u_bar <= n_bar <= params.n:
        raise ValueError("need 0 <= u_bar <= n_bar <= N")
    healthy = params.n - n_bar
    if u_bar == 0 or healthy == 0:
        out = np.zeros(healthy + 1)
        out[0] = 1.0
        return out
    kern = _kernel(params)
    log_p, log_q = kern.infection_logs(np.array([n_bar - u_bar]), np.array([u_bar]))
    row = kern.spread_log_pmf(np.array([healthy]), log_p, log_q, healthy + 1)[0]
    return np.exp(row)


def round_start_transition(pmf: np.ndarray, params: GameParams) -> dict[tuple[int, int], float]:
    """Joint ``(infected, newly infected)`` mass after the player's move.

    Mass at ``n`` moves to ``(n + S, S)`` when at least ``S`` nodes are healthy
    and otherwise stays at ``(n, 0)``.
    """
    out: dict[tuple[int, int], float] = {}
    s = params.s
    for n, mass in enumerate(np.asarray(pmf, dtype=float)):
        if mass == 0.0:
            continue
        key = (n + s, s) if n <= params.n - s else (n, 0)
        out[key] = out.get(key, 0.0) + float(mass)
    return out


def _sweep(grid: np.ndarray, params: GameParams, floor: float, reenter: bool) -> tuple[np.ndarray, float]:
    """Absorb the joint mass ``grid[m, u]`` (``m`` = previously infected).

    A step from ``(m, u)`` always lands on previously-infected count
    ``m + u > m``, so one ascending pass over ``m`` absorbs all mass exactly.
    With ``reenter`` the absorbed mass at ``m`` immediately starts a new
    round (the player infects ``S`` more), so the returned vector counts
    round-end visits instead of one round's final distribution.
    """
    n_total = params.n
    s = params.s
    kern = _kernel(params)
    width_all = n_total + 1
    final = np.zeros(width_all)
    lost = 0.0
    active = grid.any(axis=1)
    for m in range(width_all):
        if not active[m]:
            continue
        row = grid[m]
        if row[0] != 0.0:
            final[m] += row[0]
            if reenter and s > 0 and m <= n_total - s:
                row[s] += row[0]
        us = np.flatnonzero(row[1:]) + 1
        if us.size == 0:
            continue
        masses = row[us]
        log_p, log_q = kern.infection_logs(np.full(us.size, m), us)
        healthy = n_total - m - us
        log_mass = np.log(masses)
        width = int(healthy.max()) + 1
        contrib, tail = _windowed_spread(kern, healthy, log_p, log_q, log_mass, width, floor)
        lost += tail
        small = contrib < floor
        if small.any():
            lost += float(contrib[small].sum())
            contrib[small] = 0.0
        # state (m, u) -> (m + u, k)
        grid[m + us, : contrib.shape[1]] += contrib
        active[m + us] = True
    return final, lost


_WINDOW = 64


def _windowed_spread(kern, healthy, log_p, log_q, log_mass, width, floor):
    """Mass-weighted binomial rows, evaluated on a short prefix when that suffices.

    The ratio ``r(k) = pmf(k+1)/pmf(k)`` decreases in ``k``, so once
    ``r(w) < 1`` the mass beyond column ``w`` is at most
    ``pmf(w) * r(w) / (1 - r(w))``.  Rows whose bound is below ``floor`` keep
    columns ``0..w`` and the bound is reported as truncated mass; the other
    rows are evaluated over the full width.
    """
    w = _WINDOW
    if width <= w + 1:
        return np.exp(kern.spread_log_pmf(healthy, log_p, log_q, width) + log_mass[:, None]), 0.0
    head = kern.spread_log_pmf(healthy, log_p, log_q, w + 1) + log_mass[:, None]
    edge = head[:, w]
    short = healthy <= w
    with np.errstate(divide="ignore", invalid="ignore"):
        log_ratio = np.log(np.maximum(healthy - w, 1)) - math.log(w + 1) + log_p - log_q
        log_bound = edge + log_ratio - np.log1p(-np.exp(np.minimum(log_ratio, 0.0)))
    ok = short | ((log_ratio < 0) & (log_bound < math.log(floor)))
    tail_rows = ok & ~short & ~np.isnan(log_bound)
    tail = float(np.exp(log_bound[tail_rows]).sum()) if tail_rows.any() else 0.0
    if ok.all():
        return np.exp(head), tail
    out = np.zeros((healthy.size, width))
    out[ok, : w + 1] = np.exp(head[ok])
    rest = ~ok
    out[rest] = np.exp(kern.spread_log_pmf(healthy[rest], log_p[rest], log_q[rest], width) + log_mass[rest][:, None])
    return out, tail


def absorb_round(start: dict[tuple[int, int], float], params: GameParams, floor: float = DEFAULT_FLOOR) -> tuple[np.ndarray, float]:
    """Run the within-round chain from joint mass ``start`` until nobody is newly infected.

    ``start`` maps ``(infected, newly infected)`` to probability.  Returns the
    final pmf over ``0..N`` and the mass dropped below ``floor``.
    """
    n_total = params.n
    if params.r_hat == 0:
        # Every healthy node meets a zero threshold, seeded or not.
        final = np.zeros(n_total + 1)
        final[n_total] = sum(start.values())
        return final, 0.0
    grid = np.zeros((n_total + 1, n_total + 1))  # grid[m, u]
    for (n, u), mass in start.items():
        grid[n - u, u] += mass
    return _sweep(grid, params, floor, reenter=False)


def round_visit_distribution(params: GameParams, floor: float = DEFAULT_FLOOR) -> tuple[np.ndarray, float]:
    """``sum_{k=0..K} P[infected count after round k = x]`` for every ``x``, with round 0 = no play.

    Requires ``S = 1`` and ``K >= N``: the count then grows by at least one
    per round until everybody is infected, so every count below ``N`` is seen
    at most once and the sum is a visit probability.  The remaining rounds
    all sit at ``N``.  One sweep of the chain replaces ``K`` separate rounds.
    Returns the visit vector and the truncated mass.
    """
    if params.s != 1 or params.k < params.n:
        raise ValueError("visit distribution needs S = 1 and K >= N")
    n_total = params.n
    visits = np.zeros(n_total + 1)
    if params.r_hat == 0:
        visits[0] = 1.0
        visits[n_total] = params.k
        return visits, 0.0
    grid = np.zeros((n_total + 1, n_total + 1))
    grid[0, 0] = 1.0
    visits, lost = _sweep(grid, params, floor, reenter=True)
    visits[n_total] = (params.k + 1) - visits[:n_total].sum()
    return visits, lost


def gamma_distribution(params: GameParams, floor: float = DEFAULT_FLOOR) -> GammaDistribution:
    """Exact per-round distribution of the infected count in the K-round game."""
    return _gamma_cached(params, floor)


@lru_cache(maxsize=256)
def _gamma_cached(params: GameParams, floor: float) -> GammaDistribution:
    pmf = np.zeros(params.n + 1)
    pmf[0] = 1.0
    out = GammaDistribution(params)
    lost_total = 0.0
    for _ in range(params.k):
        start = round_start_transition(pmf, params)
        pmf, lost = absorb_round(start, params, floor)
        lost_total += lost
        with np.errstate(divide="ignore"):
            out.rounds.append(np.log(pmf))
        out.truncated.append(lost_total)
    return out


def monte_carlo_gamma(params: GameParams, trials: int, rng: np.random.Generator, policy: Policy = uniform_policy) -> np.ndarray:
    """Empirical per-round distribution, shape ``(K, N + 1)``, from repeated games."""
    counts = np.zeros((params.k, params.n + 1))
    for _ in range(trials):
        for i, c in enumerate(play_threshold_contagion(params, policy, rng, per_round=True)):
            counts[i, c] += 1
    return counts / max(trials, 1)


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())
