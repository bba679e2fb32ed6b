"""Closed numerical procedures for the security bounds of the three layers.

Every function returns a natural-log probability (``0.0`` means "probability
one", ``-inf`` means exactly zero) and caps its result at ``log(1)``.
Probabilities are combined through complements (``1 - (1-a)(1-b)``) rather
than by plain addition wherever the algebra allows it, so that values around
``1e-30`` survive intact.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp
from scipy.stats import binom

from .core import ProtocolParams, SystemConfig
from .murmur import gossip_link_probability
from .epidemics import DEFAULT_FLOOR, GameParams, gamma_distribution, round_visit_distribution
from .numerics import LOG_HALF, NEG_INF, DomainError, log1mexp, log_binom_coeff, log_binom_tail, log_one_minus_pow

LOG10_E = 1.0 / math.log(10.0)


# ---------------------------------------------------------------------------
# Small log-space helpers
# ---------------------------------------------------------------------------

def _cap(x: float) -> float:
    return min(float(x), 0.0)


def _log_complement(log_x):
    """``log(1 - x)`` from ``log x`` (elementwise, inputs capped at 0)."""
    return log1mexp(np.minimum(log_x, 0.0))


def log_union(*log_probs: float) -> float:
    """``log(1 - prod(1 - x_i))``: probability that any of independent events occurs."""
    total = 0.0
    for lp in log_probs:
        if lp >= 0.0:
            return 0.0
        total += float(_log_complement(lp))
    return _cap(float(log1mexp(total)))


def log_add_capped(*log_probs: float) -> float:
    """``log(min(1, sum x_i))``: union bound over arbitrary events."""
    return _cap(float(logsumexp(np.asarray(log_probs, dtype=float))))


def _log_diff_array(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise ``log(exp(a) - exp(b))``, clamped to ``-inf`` where ``b >= a``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    with np.errstate(invalid="ignore"):
        gap = np.minimum(b - a, 0.0)
        out = a + log1mexp(np.where(np.isnan(gap), -np.inf, gap))
    out = np.where(np.isneginf(b), a, out)
    out = np.where(np.isneginf(a) | (b >= a), NEG_INF, out)
    return out


def _log_precise(log_x, log_one_minus_x):
    """``log x`` taken from whichever of ``x`` and ``1 - x`` is smaller.

    Powers such as ``x**C`` with ``x`` close to one lose all relative accuracy
    when ``log x`` is read off a value rounded near one; going through the
    complement keeps ``1 - x**C`` exact to working precision.
    """
    log_x = np.asarray(log_x, dtype=float)
    with np.errstate(invalid="ignore"):
        via_complement = log1mexp(np.minimum(log_one_minus_x, 0.0))
    return np.where(log_x > LOG_HALF, via_complement, log_x)


def _log_tail_grid(n, p, k0) -> np.ndarray:
    """``log P[Bin(n, p) >= k0]`` broadcast over arrays (``k0 <= 0`` gives 0)."""
    n, p, k0 = np.broadcast_arrays(np.asarray(n), np.asarray(p, dtype=float), np.asarray(k0))
    with np.errstate(divide="ignore"):
        out = binom.logsf(k0 - 1, n, p)
    out = np.where(k0 <= 0, 0.0, out)
    out = np.where(k0 > n, NEG_INF, out)
    return np.minimum(out, 0.0)


def _log_head_grid(n, p, k) -> np.ndarray:
    """``log P[Bin(n, p) <= k]`` broadcast over arrays."""
    n, p, k = np.broadcast_arrays(np.asarray(n), np.asarray(p, dtype=float), np.asarray(k))
    with np.errstate(divide="ignore"):
        out = binom.logcdf(k, n, p)
    out = np.where(k < 0, NEG_INF, out)
    out = np.where(k >= n, 0.0, out)
    return np.minimum(out, 0.0)


def _log_chernoff_grid(n: np.ndarray, k: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Vectorised union-Chernoff form: ``(e n h / k)^k exp(-n h)`` inside its domain, else 1."""
    n, k, h = np.broadcast_arrays(np.asarray(n, dtype=float), np.asarray(k, dtype=float), np.asarray(h, dtype=float))
    limit = (k - np.sqrt(k)) / np.where(n > 0, n, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = k * (1.0 + np.log(n) + np.log(h) - np.log(k)) - n * h
    out = np.where(h <= limit, val, 0.0)
    out = np.where(h == 0, NEG_INF, out)
    out = np.where(k <= 0, 0.0, out)
    return np.minimum(out, 0.0)


# ---------------------------------------------------------------------------
# Gossip layer
# ---------------------------------------------------------------------------

def murmur_totality_bound(c: int, p: float) -> float:
    """Log bound on the probability that the correct gossip subgraph is disconnected.

    ``sum_{k=1}^{floor(C/2)} binom(C, k) (1 - p)^{k (C - k)}`` with ``p`` the
    probability that two correct processes are linked.
    """
    if c < 1 or not 0.0 <= p <= 1.0:
        raise DomainError("need C >= 1 and p in [0, 1]")
    half = c // 2
    if half == 0:
        return NEG_INF
    if p == 1.0:
        return NEG_INF
    k = np.arange(1, half + 1, dtype=float)
    terms = log_binom_coeff(c, k) + k * (c - k) * math.log1p(-p)
    return _cap(float(logsumexp(terms)))


def murmur_latency(c: int, f: float, g: float) -> float:
    """Expected gossip depth ``log C / (log(2 - 2f) + log G)`` in message delays."""
    denom = math.log(2.0 - 2.0 * f) + math.log(g) if g > 0 and f < 1 else -math.inf
    if denom <= 0:
        raise DomainError("latency needs (2 - 2f) * G > 1")
    return math.log(c) / denom


# ---------------------------------------------------------------------------
# Consistent broadcast layer
# ---------------------------------------------------------------------------

def sieve_total_validity_bound(c: int, f: float, e: int, e_hat: int, log_eps_pb_t: float) -> float:
    """Log bound on some correct process missing an honest sender's message.

    A process misses when more than ``E - Ê`` of its echo slots are Byzantine;
    the gossip layer failing totality is accounted for separately.
    """
    if not 0 <= e_hat <= e:
        raise DomainError("need 0 <= Ê <= E")
    log_o = log_binom_tail(e, f, e - e_hat + 1)
    keep = float(_log_complement(log_eps_pb_t)) + c * float(_log_complement(log_o))
    return _cap(float(log1mexp(min(keep, 0.0))))


def poisoned_probability(c: int, f: float, e: int, e_hat: int) -> float:
    """Log probability that some correct process has at least ``Ê`` Byzantine echo slots."""
    return log_one_minus_pow(log_binom_tail(e, f, e_hat), c)


@dataclass
class SieveConsistencyTerms:
    """Intermediate curves of the consistency bound, all as natural logs over ``L = 1..C``."""

    log_eps_p: float
    log_psi: np.ndarray
    log_psi_mass: np.ndarray
    log_phi: np.ndarray
    log_phi_envelope: np.ndarray
    log_eps_c: float


def sieve_consistency_terms(c: int, f: float, e: int, e_hat: int) -> SieveConsistencyTerms:
    """Evaluate the two-phase consistency bound and return every intermediate curve.

    ``L`` is the number of correct processes that had gossip-delivered the
    first correctly delivered message when its first delivery happened.
    The first-phase curve bounds ``P[L <= x]``; the second-phase curve bounds
    the probability of a conflicting delivery given ``L``.
    """
    if not 0 <= e_hat <= e:
        raise DomainError("need 0 <= Ê <= E")
    if c < 1:
        raise DomainError("need C >= 1")
    log_eps_p = _cap(poisoned_probability(c, f, e, e_hat))
    empty = np.full(c, NEG_INF)
    if log_eps_p == 0.0 or e_hat == 0:
        return SieveConsistencyTerms(0.0, empty, empty, empty, empty, 0.0)

    # Byzantine echo-slot count of a non-poisoned process: Bin(E, f) given F < Ê.
    fs = np.arange(e_hat)
    with np.errstate(divide="ignore"):
        log_prior = binom.logpmf(fs, e, f)
    log_prior = log_prior - logsumexp(log_prior)
    alive = np.isfinite(log_prior)
    fs, log_prior = fs[alive], log_prior[alive]
    n_f = (e - fs)[None, :]  # correct slots
    k_f = (e_hat - fs)[None, :]  # correct confirmations still needed

    ls = np.arange(1, c + 1)[:, None]

    # First phase: P[some message reaches some process within L deliveries].
    log_psi_lf = _log_chernoff_grid(n_f, k_f, ls / c)
    log_psi_rest = _log_chernoff_grid(n_f, k_f, (c % ls) / c)
    with np.errstate(invalid="ignore"):
        keep = (c // ls) * _log_complement(log_psi_lf) + _log_complement(log_psi_rest)
    keep = np.where(np.isnan(keep), NEG_INF, keep)
    log_psi = np.minimum(logsumexp(log1mexp(np.minimum(keep, 0.0)) + log_prior[None, :], axis=1), 0.0)
    log_h = log1mexp(np.minimum(c * _log_complement(log_psi), 0.0))
    log_h = np.maximum.accumulate(log_h)  # cumulative bounds may be taken monotone
    log_h_prev = np.concatenate(([NEG_INF], log_h[:-1]))
    log_psi_mass = _log_diff_array(log_h, log_h_prev)
    log_psi_mass[-1] = float(_log_complement(log_h_prev[-1]))

    # Second phase: conflicting delivery given L, mixed over the Bayes posterior of F.
    log_phi_lf = _log_chernoff_grid(n_f, k_f, (c - ls) / c)
    log_deliver_now = _log_tail_grid(n_f, ls / c, k_f)
    log_deliver_before = _log_tail_grid(n_f, (ls - 1) / c, k_f)
    log_miss_before = _log_head_grid(n_f, (ls - 1) / c, k_f - 1)
    log_miss_now = _log_head_grid(n_f, ls / c, k_f - 1)
    # P[deliver at L] - P[deliver at L-1], taken on whichever side is small.
    log_step = np.where(
        log_deliver_before <= LOG_HALF,
        _log_diff_array(log_deliver_now, log_deliver_before),
        _log_diff_array(log_miss_before, log_miss_now),
    )
    w_plus = log_step + log_prior[None, :]
    w_minus = log_miss_before + log_prior[None, :]
    worst = log_phi_lf.max(axis=1)
    log_phi_plus = _posterior_mean(log_phi_lf, w_plus, worst)
    log_phi_minus = _posterior_mean(log_phi_lf, w_minus, worst)
    keep2 = _log_complement(log_phi_plus) + (c - 1) * _log_complement(log_phi_minus)
    log_phi = log1mexp(np.minimum(keep2, 0.0))
    # Summation by parts needs a non-increasing conditional curve.
    log_phi_env = np.maximum.accumulate(log_phi[::-1])[::-1]

    log_w = logsumexp(log_psi_mass + log_phi_env) if c else NEG_INF
    log_eps_c = log_add_capped(log_eps_p, float(log_w))
    return SieveConsistencyTerms(log_eps_p, log_psi, log_psi_mass, log_phi, log_phi_env, log_eps_c)


def _posterior_mean(log_values: np.ndarray, log_weights: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    """Row-wise weighted mean in log space; rows with no weight fall back to ``fallback``."""
    z = logsumexp(log_weights, axis=1)
    with np.errstate(invalid="ignore"):
        num = logsumexp(log_weights + log_values, axis=1)
        out = np.minimum(num - z, 0.0)
    return np.where(np.isfinite(z), np.where(np.isnan(out), NEG_INF, out), fallback)


def sieve_consistency_bound(c: int, f: float, e: int, e_hat: int) -> float:
    """Log bound on two correct processes delivering different messages."""
    return sieve_consistency_terms(c, f, e, e_hat).log_eps_c


# ---------------------------------------------------------------------------
# Reliable broadcast layer
# ---------------------------------------------------------------------------

def contagion_validity_bound(d: int, d_hat: int, f: float, log_eps_pcb_v: float) -> float:
    """Log bound on an honest sender's message not being delivered by everyone correct.

    ``ε_o`` is the chance that a delivery sample holds more than ``D - D̂``
    Byzantine slots, so that the honest message can never gather ``D̂`` Readys.
    """
    if not 0 <= d_hat <= d:
        raise DomainError("need 0 <= D̂ <= D")
    log_o = log_binom_tail(d, f, d - d_hat + 1)
    return log_union(log_eps_pcb_v, log_o)


def _delivery_tails(n: int, d: int, d_hat: int, counts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(log P[Bin(D, x/N) >= D̂], log P[Bin(D, x/N) < D̂])`` for every ``x`` in ``counts``."""
    p = np.clip(counts / n, 0.0, 1.0)
    return _log_tail_grid(d, p, d_hat), _log_head_grid(d, p, d_hat - 1)


def conflicting_ready_distribution(n: int, c: int, r: int, r_hat: int, link_probability: float = 1.0, floor: float = DEFAULT_FLOOR):
    """Distribution of the number of processes ever ready for a conflicting message.

    All ``N - C`` Byzantine processes start ready; readiness then spreads
    through ready samples.  ``link_probability`` is the chance that a ready
    slot points into the process population at all.
    """
    params = GameParams(n=n, r=r, l=link_probability, k=1, s=n - c, r_hat=r_hat)
    dist = gamma_distribution(params, floor)
    return dist.rounds[0], dist.truncated[0]


def contagion_consistency_bound(
    n: int, c: int, f: float, r: int, r_hat: int, d: int, d_hat: int, log_eps_pcb_c: float,
    link_probability: float = 1.0, floor: float = DEFAULT_FLOOR,
) -> tuple[float, float]:
    """``(log ε_c, log μ)`` for the reliable layer.

    ``μ`` bounds the probability that some correct process gathers ``D̂``
    Readys for a message other than the honest one.  Mass dropped by the
    chain truncation is charged at the worst count ``N``.
    """
    if not (0 <= r_hat <= r and 0 <= d_hat <= d):
        raise DomainError("thresholds must not exceed sample sizes")
    log_pmf, lost = conflicting_ready_distribution(n, c, r, r_hat, link_probability, floor)
    counts = np.arange(n + 1)
    log_tail, log_head = _delivery_tails(n, d, d_hat, counts)
    log_any = log1mexp(np.minimum(c * _log_precise(log_head, log_tail), 0.0))
    terms = (log_any + log_pmf)[n - c:]
    extra = [math.log(lost) + float(log_any[n])] if lost > 0 else []
    log_mu = log_add_capped(*terms, *extra)
    return log_union(log_eps_pcb_c, log_mu), log_mu


def totality_split_probability(n: int, c: int, d: int, d_hat: int, counts: np.ndarray) -> np.ndarray:
    """Log of ``1 - (α⁻)^C - (1 - α⁺)^C`` (capped at 0 from below) for each ready count.

    ``α⁻``/``α⁺`` are the delivery probabilities of one correct process with
    only the ``x`` correct ready processes, or with every Byzantine process
    added on top.
    """
    counts = np.asarray(counts)
    lo_tail, lo_head = _delivery_tails(n, d, d_hat, counts)
    hi_tail, hi_head = _delivery_tails(n, d, d_hat, counts + (n - c))
    log_not_all = log1mexp(np.minimum(c * _log_precise(lo_tail, lo_head), 0.0))  # 1 - (α⁻)^C
    log_none = c * _log_precise(hi_head, hi_tail)  # (1 - α⁺)^C
    return _log_diff_array(log_not_all, log_none)


def contagion_totality_bound(
    n: int, c: int, f: float, r: int, r_hat: int, d: int, d_hat: int,
    log_eps_pcb_c: float, log_mu: float, floor: float = DEFAULT_FLOOR, per_round: bool = False,
) -> float:
    """Log bound on some but not all correct processes delivering.

    The split term charges, for every ready count the one-at-a-time honest
    spreading game on the ``C`` correct processes can pass through, the
    probability that the Byzantine processes can push the delivery count to a
    partial outcome.
    """
    split = totality_split_term(n, c, f, r, r_hat, d, d_hat, floor, per_round)
    return log_add_capped(log_eps_pcb_c, log_mu, split)


def totality_split_term(
    n: int, c: int, f: float, r: int, r_hat: int, d: int, d_hat: int,
    floor: float = DEFAULT_FLOOR, per_round: bool = False,
) -> float:
    """Log of the split term of the totality bound.

    The ready count grows by at least one per round until all ``C`` correct
    processes are ready, so every count below ``C`` is visited at most once.
    By default the saturated count ``C`` is charged once (the split event
    only depends on the count); ``per_round=True`` charges it once per
    remaining round instead.
    """
    if not (0 <= r_hat <= r and 0 <= d_hat <= d):
        raise DomainError("thresholds must not exceed sample sizes")
    visits, lost = _honest_visits(c, r, 1.0 - f, r_hat, floor)
    if not per_round:
        visits = visits.copy()
        visits[c] = 1.0
    log_alpha = totality_split_probability(n, c, d, d_hat, np.arange(c + 1))
    with np.errstate(divide="ignore"):
        terms = np.log(np.maximum(visits, 0.0)) + log_alpha
    extra = [math.log(lost)] if lost > 0 else []  # dropped mass charged as a certain split
    return log_add_capped(*terms, *extra)


@lru_cache(maxsize=512)
def _honest_visits(c: int, r: int, l: float, r_hat: int, floor: float) -> tuple[np.ndarray, float]:
    params = GameParams(n=c, r=r, l=l, k=c, s=1, r_hat=r_hat)
    return round_visit_distribution(params, floor)


# ---------------------------------------------------------------------------
# End-to-end report
# ---------------------------------------------------------------------------

@dataclass
class BoundReport:
    """All component bounds (natural logs) for one configuration and parameter set."""

    n: int
    f: float
    params: ProtocolParams
    eps_pb_totality: float
    eps_sieve_validity: float
    eps_sieve_consistency: float
    eps_contagion_validity: float
    eps_contagion_consistency: float
    eps_contagion_totality: float
    eps_combined: float
    latency_estimate: float | None = None
    extras: dict = field(default_factory=dict)

    def log10(self, name: str) -> float:
        return getattr(self, name) * LOG10_E

    def to_json(self) -> dict:
        names = [
            "eps_pb_totality", "eps_sieve_validity", "eps_sieve_consistency",
            "eps_contagion_validity", "eps_contagion_consistency",
            "eps_contagion_totality", "eps_combined",
        ]
        return {
            "params": {"N": self.n, "f": self.f, **self.params.as_dict()},
            "eps": {name: _json_float(self.log10(name)) for name in names},
            "latency": self.latency_estimate,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def _json_float(x: float):
    return None if x == NEG_INF else float(x)


def combined_security(
    config: SystemConfig, params: ProtocolParams, link_probability: float = 1.0, floor: float = DEFAULT_FLOOR,
) -> BoundReport:
    """Evaluate every layer bottom-up and aggregate with a union bound.

    The gossip totality bound feeds the consistent layer's validity, and the
    consistent layer's consistency (joined with gossip totality, on which its
    analysis relies) feeds both reliable-layer safety bounds.
    """
    n, f, c = config.n, config.f, config.c
    p = params
    if not (p.e_hat <= p.e and p.r_hat <= p.r and p.d_hat <= p.d):
        raise DomainError("thresholds must not exceed sample sizes")
    eps_pb = murmur_totality_bound(c, gossip_link_probability(n, p.g))
    eps_sv = sieve_total_validity_bound(c, f, p.e, p.e_hat, eps_pb)
    eps_sc = sieve_consistency_bound(c, f, p.e, p.e_hat)
    eps_pcb_c = log_union(eps_sc, eps_pb)
    eps_cv = contagion_validity_bound(p.d, p.d_hat, f, eps_sv)
    eps_cc, log_mu = contagion_consistency_bound(n, c, f, p.r, p.r_hat, p.d, p.d_hat, eps_pcb_c, link_probability, floor)
    eps_ct = contagion_totality_bound(n, c, f, p.r, p.r_hat, p.d, p.d_hat, eps_pcb_c, log_mu, floor)
    eps = log_add_capped(eps_cv, eps_cc, eps_ct)
    try:
        latency = murmur_latency(c, f, p.g)
    except DomainError:
        latency = None
    return BoundReport(
        n, f, p, eps_pb, eps_sv, eps_sc, eps_cv, eps_cc, eps_ct, eps, latency,
        extras={"log_mu": log_mu, "eps_pcb_consistency": eps_pcb_c},
    )
