"""Log-space binomial kernels and the supporting inequalities used by the bounds.

Everything here works with natural logarithms.  Probabilities that are close
to one are handled through their complement so that values such as
``1 - 1e-25`` keep their information instead of rounding to ``0.0`` in log
space.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

NEG_INF = -math.inf
LOG_HALF = math.log(0.5)


class DomainError(ValueError):
    """Raised when a kernel is called outside its mathematical domain."""


def log1mexp(x):
    """Return ``log(1 - exp(x))`` for ``x <= 0`` without cancellation.

    Uses the two-branch evaluation (``log(-expm1(x))`` near zero and
    ``log1p(-exp(x))`` further out).  Works elementwise on arrays.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x > 0):
        raise DomainError("log1mexp is only defined for x <= 0")
    with np.errstate(divide="ignore"):
        out = np.where(
            x > -math.log(2.0),
            np.log(-np.expm1(np.minimum(x, -1e-300))),
            np.log1p(-np.exp(x)),
        )
    out = np.where(x == 0.0, NEG_INF, out)
    return out.item() if out.ndim == 0 else out


def _check_p(p: float) -> None:
    if not (0.0 <= p <= 1.0) or math.isnan(p):
        raise DomainError(f"probability out of range: {p!r}")


def _logs(p: float) -> tuple[float, float]:
    _check_p(p)
    logp = math.log(p) if p > 0 else NEG_INF
    logq = math.log1p(-p) if p < 1 else NEG_INF
    return logp, logq


def log_binom_coeff(n, k):
    """``log(n choose k)`` via log-gamma; elementwise."""
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    return gammaln(n + 1.0) - gammaln(k + 1.0) - gammaln(n - k + 1.0)


def _pmf_from_logs(n, k, logp, logq):
    """Binomial log-pmf from ``log p`` and ``log(1-p)``; all arguments broadcast."""
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    logp = np.asarray(logp, dtype=float)
    logq = np.asarray(logq, dtype=float)
    with np.errstate(invalid="ignore"):
        a = np.where(k == 0, 0.0, k * logp)
        b = np.where(n - k == 0, 0.0, (n - k) * logq)
    out = log_binom_coeff(n, k) + a + b
    valid = (k >= 0) & (k <= n)
    return np.where(valid, out, NEG_INF)


def log_binom_pmf(n: int, p: float, k: int) -> float:
    """``log P[X = k]`` for ``X ~ Bin(n, p)``."""
    if n < 0:
        raise DomainError("n must be non-negative")
    if not 0 <= k <= n:
        raise DomainError(f"k={k} outside 0..{n}")
    logp, logq = _logs(p)
    return float(_pmf_from_logs(n, k, logp, logq))


def log_binom_pmf_table(n: int, logp, logq) -> np.ndarray:
    """Log-pmf of ``Bin(n, p)`` over ``0..n`` for every ``(logp, logq)`` pair.

    ``logp``/``logq`` may be arrays of equal shape ``S``; the result has shape
    ``S + (n + 1,)``.
    """
    logp = np.asarray(logp, dtype=float)[..., None]
    logq = np.asarray(logq, dtype=float)[..., None]
    k = np.arange(n + 1, dtype=float)
    return _pmf_from_logs(float(n), k, logp, logq)


def log_tails_from_table(table: np.ndarray, k0: int) -> np.ndarray:
    """``log P[X >= k0]`` from a pmf table (last axis indexes the outcome).

    The smaller of the two sides is summed directly and the other one is
    obtained by complement, which keeps both tiny tails and tails that are
    nearly one accurate.
    """
    n = table.shape[-1] - 1
    if k0 <= 0:
        return np.zeros(table.shape[:-1])
    if k0 > n:
        return np.full(table.shape[:-1], NEG_INF)
    upper = logsumexp(table[..., k0:], axis=-1)
    lower = logsumexp(table[..., :k0], axis=-1)
    use_upper = upper <= LOG_HALF
    with np.errstate(divide="ignore", invalid="ignore"):
        comp = log1mexp(np.minimum(lower, 0.0))
    out = np.where(use_upper, upper, comp)
    return np.asarray(out)


def log_heads_from_table(table: np.ndarray, k: int) -> np.ndarray:
    """``log P[X <= k]`` from a pmf table, complement-aware."""
    n = table.shape[-1] - 1
    if k < 0:
        return np.full(table.shape[:-1], NEG_INF)
    if k >= n:
        return np.zeros(table.shape[:-1])
    return np.asarray(log_tails_from_table(table[..., ::-1], n - k))


def log_binom_tail(n: int, p: float, k0: int) -> float:
    """``log P[X >= k0]`` for ``X ~ Bin(n, p)``; ``k0 <= 0`` gives exactly 0."""
    if n < 0:
        raise DomainError("n must be non-negative")
    logp, logq = _logs(p)
    if k0 <= 0:
        return 0.0
    if k0 > n:
        return NEG_INF
    table = log_binom_pmf_table(n, logp, logq)
    return float(log_tails_from_table(table, k0))


def log_binom_cdf(n: int, p: float, k: int) -> float:
    """``log P[X <= k]`` for ``X ~ Bin(n, p)``."""
    if n < 0:
        raise DomainError("n must be non-negative")
    logp, logq = _logs(p)
    table = log_binom_pmf_table(n, logp, logq)
    return float(log_heads_from_table(table, k))


def log_sum(values: Sequence[float]) -> float:
    """Numerically stable ``log(sum(exp(values)))``; empty input gives -inf."""
    arr = np.asarray(list(values), dtype=float)
    if arr.size == 0:
        return NEG_INF
    return float(logsumexp(arr))


def log_diff(a: float, b: float) -> float:
    """``log(exp(a) - exp(b))`` for ``a >= b``."""
    if b > a:
        raise DomainError("log_diff requires a >= b")
    if b == NEG_INF:
        return a
    return a + float(log1mexp(b - a))


def log_one_minus_pow(log_x: float, power: float) -> float:
    """``log(1 - (1 - x)**power)`` given ``log x``.

    This is the "at least one of ``power`` independent trials succeeds"
    probability, evaluated so that tiny ``x`` is not lost to rounding.
    """
    if log_x == NEG_INF or power == 0:
        return NEG_INF
    if log_x >= 0.0:
        return 0.0
    log_one_minus_x = float(log1mexp(log_x))
    return float(log1mexp(power * log_one_minus_x))


def binomial_merge_check(A: int, B: int, x: int, y: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact pmf of ``X + Y`` next to the merged binomial it should equal.

    ``X ~ Bin(A, x/B)`` and ``Y | X ~ Bin(A - X, y/(B - x))``.  Returns the pair
    ``(pmf of X + Y by convolution, pmf of Bin(A, (x + y)/B))`` over ``0..A``.
    """
    if x + y > B or min(A, B, x, y) < 0 or B == 0:
        raise DomainError("need 0 <= x + y <= B and B > 0")
    px = x / B
    py = y / (B - x) if B > x else 0.0
    merged = np.zeros(A + 1)
    for i in range(A + 1):
        weight = math.comb(A, i) * px**i * (1 - px) ** (A - i)
        rest = A - i
        for j in range(rest + 1):
            merged[i + j] += weight * math.comb(rest, j) * py**j * (1 - py) ** (rest - j)
    q = (x + y) / B
    reference = np.array([math.comb(A, k) * q**k * (1 - q) ** (A - k) for k in range(A + 1)])
    return merged, reference


def chernoff_domain_limit(n: int, k: int) -> float:
    """Largest total success mass ``h`` for which the union Chernoff form applies."""
    if k <= 0 or n <= 0:
        return NEG_INF
    return (k - math.sqrt(k)) / n


def chernoff_union_bound(n: int, k: int, h: float) -> float:
    """Log of ``(e*n*h/k)**k * exp(-n*h)``, or 0.0 (probability one) outside the domain.

    Bounds ``P[any X_i >= k]`` for independent ``X_i ~ Bin(n, p_i)`` with
    ``sum p_i = h``, valid while ``h <= (k - sqrt k)/n``.
    """
    if h < 0:
        raise DomainError("h must be non-negative")
    if k <= 0:
        return 0.0
    if n <= 0:
        return NEG_INF
    if h > chernoff_domain_limit(n, k):
        return 0.0
    if h == 0:
        return NEG_INF
    return k * (1.0 + math.log(n) + math.log(h) - math.log(k)) - n * h


def exact_union_tail(n: int, k: int, ps: Sequence[float]) -> float:
    """Exact ``P[any X_i >= k]`` for independent ``X_i ~ Bin(n, p_i)`` (linear space)."""
    miss = 1.0
    for p in ps:
        miss *= sum(math.comb(n, j) * p**j * (1 - p) ** (n - j) for j in range(min(k, n + 1)))
    return 1.0 - miss


def shifted_tail_sequence(A: int, B: int, p: float) -> list[float]:
    """``[P[Bin(A - i, p) >= B - i] for i in 0..B]`` (linear space), for ``A >= B``."""
    if A < B:
        raise DomainError("need A >= B")
    return [math.exp(log_binom_tail(A - i, p, B - i)) for i in range(B + 1)]
