"""Parameter search for the combined security bound at a fixed sample budget.

The four sample sizes ``G + E + R + D`` add up to ``4 S``.  Thresholds are
chosen per layer: the echo threshold only affects the consistent layer, and
the ready/delivery thresholds only affect the reliable layer's own terms, so
each is searched separately and the end-to-end bound is evaluated once for
the winner.  Searches over an integer threshold use a coarse grid followed by
local refinement; ties go to the smallest value.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from .bounds import (
    BoundReport,
    LOG10_E,
    _honest_visits,
    _log_diff_array,
    _log_head_grid,
    _log_precise,
    _log_tail_grid,
    combined_security,
    conflicting_ready_distribution,
    log_add_capped,
    murmur_totality_bound,
    sieve_consistency_bound,
    sieve_total_validity_bound,
)
from .core import ConfigError, ProtocolParams, SystemConfig
from .epidemics import DEFAULT_FLOOR
from .murmur import gossip_link_probability
from .numerics import NEG_INF, log1mexp

CSV_HEADER = ["axis", "G", "E", "E_hat", "R", "R_hat", "D", "D_hat",
              "log10_eps_v", "log10_eps_c", "log10_eps_t", "log10_eps"]


class InfeasibleError(ConfigError):
    """No parameter set satisfies the constraints."""


def scan_integer(fn: Callable[[int], float], lo: int, hi: int, coarse: int = 16) -> tuple[int, float]:
    """Minimise ``fn`` over ``lo..hi`` with a coarse grid and local refinement.

    Exhaustive when the range has at most ``2 * coarse`` points.  Returns the
    smallest argument attaining the best value found.
    """
    if hi < lo:
        raise InfeasibleError(f"empty range {lo}..{hi}")
    cache: dict[int, float] = {}

    def value(x: int) -> float:
        if x not in cache:
            cache[x] = fn(x)
        return cache[x]

    if hi - lo + 1 <= 2 * coarse:
        points = range(lo, hi + 1)
        step = 1
    else:
        step = max(1, (hi - lo) // coarse)
        points = sorted(set(range(lo, hi + 1, step)) | {hi})
    best = min(points, key=lambda x: (value(x), x))
    while step > 1:
        step = max(1, step // 2)
        for x in (best - step, best + step):
            if lo <= x <= hi:
                value(x)
        best = min(cache, key=lambda x: (cache[x], x))
    # Final exhaustive polish around the winner.
    for x in range(max(lo, best - 2), min(hi, best + 2) + 1):
        value(x)
    best = min(cache, key=lambda x: (cache[x], x))
    return best, cache[best]


# ---------------------------------------------------------------------------
# Per-layer threshold searches
# ---------------------------------------------------------------------------

@lru_cache(maxsize=1024)
def best_echo_threshold(c: int, f: float, e: int, log_eps_pb: float) -> tuple[int, float, float, float]:
    """``(Ê, objective, log ε_v, log ε_c)`` minimising the consistent layer's share."""

    def objective(e_hat: int) -> float:
        v = sieve_total_validity_bound(c, f, e, e_hat, log_eps_pb)
        cons = sieve_consistency_bound(c, f, e, e_hat)
        return log_add_capped(v, cons, cons)

    # Below E/2 two disjoint halves of the correct processes can each confirm
    # a different message, so the consistency bound is vacuous there.
    e_hat, val = scan_integer(objective, max(1, (e + 1) // 2) if e else 0, e, coarse=32)
    return (
        e_hat, val,
        sieve_total_validity_bound(c, f, e, e_hat, log_eps_pb),
        sieve_consistency_bound(c, f, e, e_hat),
    )


@lru_cache(maxsize=64)
def _delivery_grids(n: int, c: int, f: float, d: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Threshold-independent pieces of the reliable-layer terms for every ``D̂``.

    Returns ``(log o, log any-delivery by conflicting count, log split by
    honest count)``; only the ready-threshold distributions are combined
    with them afterwards.
    """
    d_hats = np.arange(d + 1)[None, :]
    # Honest message starved of Readys: more than D - D̂ Byzantine delivery slots.
    log_o = _log_tail_grid(d, f, d - d_hats + 1)[0]

    counts = np.arange(n + 1)[:, None]
    head = _log_head_grid(d, np.clip(counts / n, 0, 1), d_hats - 1)
    tail = _log_tail_grid(d, np.clip(counts / n, 0, 1), d_hats)
    log_any = log1mexp(np.minimum(c * _log_precise(head, tail), 0.0))

    xs = np.arange(c + 1)[:, None]
    lo_tail = _log_tail_grid(d, xs / n, d_hats)
    lo_head = _log_head_grid(d, xs / n, d_hats - 1)
    hi_tail = _log_tail_grid(d, (xs + n - c) / n, d_hats)
    hi_head = _log_head_grid(d, (xs + n - c) / n, d_hats - 1)
    log_alpha = _log_diff_array(log1mexp(np.minimum(c * _log_precise(lo_tail, lo_head), 0.0)),
                                c * _log_precise(hi_head, hi_tail))
    return log_o, log_any, log_alpha


def _contagion_terms_all_dhat(n: int, c: int, f: float, r: int, r_hat: int, d: int, floor: float) -> dict[str, np.ndarray]:
    """Reliable-layer own terms for every ``D̂`` in ``0..D`` at once (natural logs)."""
    log_o, log_any, log_alpha = _delivery_grids(n, c, f, d)

    log_pmf, lost = conflicting_ready_distribution(n, c, r, r_hat, 1.0, floor)
    tail_terms = (log_any + log_pmf[:, None])[n - c:]
    parts = [tail_terms]
    if lost > 0:
        parts.append(math.log(lost) + log_any[n][None, :])
    log_mu = np.minimum(logsumexp(np.vstack(parts), axis=0), 0.0)

    visits, lost_v = _honest_visits(c, r, 1.0 - f, r_hat, floor)
    visits = visits.copy()
    visits[c] = 1.0
    with np.errstate(divide="ignore"):
        split_terms = np.log(visits)[:, None] + log_alpha
    parts = [split_terms]
    if lost_v > 0:
        parts.append(np.full((1, d + 1), math.log(lost_v)))
    log_split = np.minimum(logsumexp(np.vstack(parts), axis=0), 0.0)
    return {"o": log_o, "mu": log_mu, "split": log_split}


@lru_cache(maxsize=1024)
def best_ready_thresholds(n: int, c: int, f: float, r: int, d: int, floor: float = DEFAULT_FLOOR) -> tuple[int, int, float]:
    """``(R̂, D̂, objective)`` minimising the reliable layer's own terms.

    Only pairs with ``R̂ / R < D̂ / D`` are admissible.
    """
    chosen: dict[int, int] = {}

    def objective(r_hat: int) -> float:
        terms = _contagion_terms_all_dhat(n, c, f, r, r_hat, d, floor)
        total = logsumexp(np.vstack([terms["o"], terms["mu"], terms["mu"], terms["split"]]), axis=0)
        total = np.minimum(total, 0.0)
        d_hats = np.arange(d + 1)
        total = np.where(r_hat * d < d_hats * r, total, np.inf)
        if np.all(total == np.inf):
            chosen[r_hat] = d
            return math.inf
        best = int(np.argmin(total))
        chosen[r_hat] = best
        return float(total[best])

    r_hat, val = scan_integer(objective, 0, max(r - 1, 0), coarse=8)
    if val == math.inf:
        raise InfeasibleError("no admissible threshold pair")
    return r_hat, chosen[r_hat], val


# ---------------------------------------------------------------------------
# Size search
# ---------------------------------------------------------------------------

@dataclass
class OptimizationResult:
    params: ProtocolParams
    report: BoundReport
    evaluated: int


def _tune(config: SystemConfig, g: int, e: int, r: int, d: int, floor: float) -> tuple[ProtocolParams, float]:
    n, f, c = config.n, config.f, config.c
    log_pb = murmur_totality_bound(c, gossip_link_probability(n, g))
    e_hat, sieve_val, _, _ = best_echo_threshold(c, f, e, log_pb)
    r_hat, d_hat, own_val = best_ready_thresholds(n, c, f, r, d, floor)
    params = ProtocolParams(g=g, e=e, e_hat=e_hat, r=r, r_hat=r_hat, d=d, d_hat=d_hat)
    return params, log_add_capped(log_pb, sieve_val, own_val)


def optimize_params(
    n: int, f: float, s: int, budget: int = 24, mode: str = "equal", floor: float = DEFAULT_FLOOR,
) -> OptimizationResult:
    """Best parameters for average sample size ``s`` (``G + E + R + D = 4 s``).

    ``mode="equal"`` fixes ``G = E = R = D = s`` and only searches thresholds.
    ``mode="unequal"`` additionally moves sample budget between layers by
    coordinate descent started from the best of the equal split and a few
    echo-heavy splits, evaluating at most ``budget`` size vectors; it is
    therefore never worse than the equal split.
    """
    if s < 1:
        raise InfeasibleError("average sample size must be at least 1")
    if mode not in ("equal", "unequal"):
        raise ConfigError(f"unknown mode {mode!r}")
    config = SystemConfig(n, f)
    if config.c < 1:
        raise InfeasibleError("no correct process")

    total = 4 * s
    starts = [(s, s, s, s)]
    if mode == "unequal":
        # The echo layer usually needs the largest share; seed a few such splits
        # so that the descent does not start on a flat, vacuous region.
        for share in (0.4, 0.55, 0.7):
            g = max(1, round(0.08 * total))
            e = max(1, round(share * total))
            r = max(1, (total - g - e) // 2)
            d = total - g - e - r
            if d >= 1:
                starts.append((g, e, r, d))
    scored = []
    for cand in dict.fromkeys(starts):
        p2, sc2 = _tune(config, *cand, floor)
        scored.append((sc2, cand, p2))
    score, sizes, params = min(scored, key=lambda t: (t[0], t[1]))
    evaluated = len(scored)
    if mode == "unequal":
        step = max(1, s // 2)
        while step >= 1 and evaluated < budget:
            improved = False
            for i in range(4):
                for j in range(4):
                    if i == j or evaluated >= budget:
                        continue
                    cand = list(sizes)
                    cand[i] += step
                    cand[j] -= step
                    if cand[j] < 1:
                        continue
                    p2, sc2 = _tune(config, *cand, floor)
                    evaluated += 1
                    if sc2 < score:
                        sizes, params, score = tuple(cand), p2, sc2
                        improved = True
            if not improved:
                step //= 2
    report = combined_security(config, params, floor=floor)
    return OptimizationResult(params, report, evaluated)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

def _row(axis_value, report: BoundReport) -> list:
    p = report.params

    def l10(x: float):
        return "-inf" if x == NEG_INF else f"{x * LOG10_E:.6f}"

    return [axis_value, p.g, p.e, p.e_hat, p.r, p.r_hat, p.d, p.d_hat,
            l10(report.eps_contagion_validity), l10(report.eps_contagion_consistency),
            l10(report.eps_contagion_totality), l10(report.eps_combined)]


def sweep(axis: str, grid: Sequence, fixed: dict, mode: str = "equal", params: ProtocolParams | None = None) -> list[list]:
    """Rows ``(axis value, parameters, component bounds)`` for each grid point.

    ``axis`` is ``"S"``, ``"N"`` or ``"f"``; ``fixed`` supplies the other two
    of ``n``, ``f``, ``s``.  With ``params`` given, those parameters are
    evaluated as-is at each point instead of being optimised.
    """
    if axis not in ("S", "N", "f"):
        raise ConfigError(f"unknown axis {axis!r}")
    rows = []
    for value in grid:
        point = {"n": fixed.get("n"), "f": fixed.get("f"), "s": fixed.get("s")}
        point[{"S": "s", "N": "n", "f": "f"}[axis]] = value
        if params is not None:
            report = combined_security(SystemConfig(int(point["n"]), float(point["f"])), params)
        else:
            report = optimize_params(int(point["n"]), float(point["f"]), int(point["s"]), mode=mode).report
        rows.append(_row(value, report))
    return rows


def rows_to_csv(rows: Iterable[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    writer.writerows(rows)
    return buf.getvalue()
