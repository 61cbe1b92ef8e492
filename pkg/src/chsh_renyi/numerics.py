"""Scalar special functions and small numerical utilities.

All logarithms are base 2. Infinity is represented by ``math.inf`` and is
propagated rather than clipped.
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, special, stats

INF = math.inf
SLACK = 1e-12
DEEP_TAIL = 1e-250


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of an operation."""


def _check_prob(x: float, name: str = "p") -> float:
    x = float(x)
    if not (-SLACK <= x <= 1 + SLACK) or math.isnan(x):
        raise DomainError(f"{name}={x} is not a probability")
    return min(max(x, 0.0), 1.0)


def binary_entropy(x):
    """Binary entropy in bits.

    Parameters
    ----------
    x : float or array_like
        Probability in [0, 1]. Values within 1e-12 outside the interval are
        clamped.

    Returns
    -------
    float or ndarray
        ``-x log2 x - (1-x) log2 (1-x)`` with ``0 log 0 = 0``.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < -SLACK) or np.any(arr > 1 + SLACK):
        raise DomainError("binary entropy argument outside [0, 1]")
    arr = np.clip(arr, 0.0, 1.0)
    out = (special.entr(arr) + special.entr(1.0 - arr)) / math.log(2)
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def validate_distribution(q: Sequence[float], size: int | None = 3) -> np.ndarray:
    """Return ``q`` as an array after checking it is a probability vector."""
    q = np.asarray(q, dtype=float)
    if q.ndim != 1 or (size is not None and q.size != size):
        raise DomainError(f"expected a distribution of length {size}")
    if np.any(np.isnan(q)) or np.any(q < -SLACK) or np.any(q > 1 + SLACK):
        raise DomainError("entries must lie in [0, 1]")
    if abs(q.sum() - 1.0) > SLACK * max(1, q.size):
        raise DomainError("entries must sum to 1")
    return np.clip(q, 0.0, 1.0)


def kl_divergence(q: Sequence[float], p: Sequence[float]) -> float:
    """Kullback-Leibler divergence ``D(q||p)`` in bits.

    Returns ``inf`` when ``q`` puts mass where ``p`` has none.
    """
    q = validate_distribution(q, None)
    p = validate_distribution(p, q.size)
    if np.any((q > 0) & (p == 0)):
        return INF
    mask = q > 0
    val = float(np.sum(special.rel_entr(q[mask], p[mask]))) / math.log(2)
    return max(val, 0.0)


def _check_count(v, name: str) -> int:
    if isinstance(v, (bool, np.bool_)):
        raise DomainError(f"{name} must be an integer")
    if isinstance(v, (float, np.floating)):
        if not float(v).is_integer():
            raise DomainError(f"{name}={v} must be an integer")
    iv = int(v)
    if iv < 0:
        raise DomainError(f"{name}={v} must be nonnegative")
    return iv


def binomial_tail(k: int, n: int, p: float, side: str = "lower") -> float:
    """Binomial tail probability.

    Parameters
    ----------
    k, n : int
        Threshold and number of trials, ``0 <= k <= n``.
    p : float
        Success probability.
    side : {"lower", "upper"}
        ``lower`` gives ``Pr[X <= k]``, ``upper`` gives ``Pr[X >= k]``.

    Notes
    -----
    Evaluated through the regularized incomplete beta function so the cost is
    independent of ``n``. ``p`` is passed unmodified (never as ``1 - p``) to
    avoid a rounding step.
    """
    k = _check_count(k, "k")
    n = _check_count(n, "n")
    if k > n:
        raise DomainError(f"k={k} exceeds n={n}")
    p = _check_prob(p)
    if side == "lower":
        if k == n:
            return 1.0
        # Pr[X <= k] = 1 - I_p(k+1, n-k)
        val = float(special.betaincc(k + 1, n - k, p))
    elif side == "upper":
        if k == 0:
            return 1.0
        # Pr[X >= k] = I_p(k, n-k+1)
        val = float(special.betainc(k, n - k + 1, p))
    else:
        raise DomainError(f"unknown side {side!r}")
    if val < DEEP_TAIL and 0.0 < p < 1.0:
        # the incomplete beta loses relative accuracy close to underflow
        return _log_series_tail(k, n, p, side)
    return val


def _log_series_tail(k: int, n: int, p: float, side: str) -> float:
    """Deep-tail probability as pmf(k) times a geometric-like series.

    Only used far from the mode, where the term ratios stay below one.
    """
    pmf = float(stats.binom.pmf(k, n, p))
    # the direct pmf is more accurate than logpmf whenever it is representable
    log_pmf = math.log(pmf) if pmf > 1e-300 else float(stats.binom.logpmf(k, n, p))
    log_odds = math.log(p) - math.log1p(-p)
    total = 1.0
    log_term = 0.0
    j = k
    while True:
        if side == "upper":
            idx = np.arange(j, min(j + 4096, n))
            step = np.log((n - idx) / (idx + 1.0)) + log_odds
        else:
            idx = np.arange(j, max(j - 4096, 0), -1)
            step = np.log(idx / (n - idx + 1.0)) - log_odds
        if idx.size == 0:
            break
        terms = np.exp(log_term + np.cumsum(step))
        total += float(terms.sum())
        log_term += float(step.sum())
        j = int(idx[-1]) + (1 if side == "upper" else -1)
        if terms[-1] < 1e-18 * total:
            break
    return math.exp(log_pmf + math.log(total))


def _bisect_int(pred: Callable[[int], bool], lo: int, hi: int) -> int:
    """Smallest integer in [lo, hi] with ``pred`` true; pred must be monotone
    (false then true) and ``pred(hi)`` true."""
    while lo < hi:
        mid = (lo + hi) // 2
        if pred(mid):
            hi = mid
        else:
            lo = mid + 1
    return lo


def binomial_quantile_count(n: int, p: float, eps: float, side: str = "lower") -> int:
    """Integer threshold behind :func:`binomial_quantile_delta`.

    For ``lower`` returns the largest ``k`` with ``Pr[X < k] <= eps``; for
    ``upper`` the smallest ``k`` with ``Pr[X > k] <= eps``.
    """
    n = _check_count(n, "n")
    if n < 1:
        raise DomainError("n must be at least 1")
    p = _check_prob(p)
    if not 0 < eps < 1:
        raise DomainError("eps must lie in (0, 1)")
    if side == "lower":
        # Pr[X <= k-1] is nondecreasing in k; find the first k where it exceeds eps
        first_bad = _bisect_int(
            lambda k: k > n or binomial_tail(k - 1, n, p, "lower") > eps, 1, n + 1
        )
        return first_bad - 1
    if side == "upper":
        return _bisect_int(
            lambda k: k >= n or binomial_tail(k + 1, n, p, "upper") <= eps, 0, n
        )
    raise DomainError(f"unknown side {side!r}")


def binomial_quantile_delta(n: int, p: float, eps: float, side: str = "lower") -> float:
    """Smallest frequency offset with one-sided tail probability at most ``eps``.

    ``lower``: smallest ``delta >= 0`` with ``Pr[X/n < p - delta] <= eps``.
    ``upper``: smallest ``delta >= 0`` with ``Pr[X/n > p + delta] <= eps``.
    """
    k = binomial_quantile_count(n, p, eps, side)
    if side == "lower":
        return max((n * p - k) / n, 0.0)
    return max((k - n * p) / n, 0.0)


def concave_envelope(x: Sequence[float], y: Sequence[float]) -> np.ndarray:
    """Smallest concave majorant of sampled data, evaluated on the same grid.

    Computed from the upper convex hull of the points (monotone chain).

    Parameters
    ----------
    x : array_like
        Strictly increasing abscissae, at least two.
    y : array_like
        Finite ordinates.

    Returns
    -------
    ndarray
        Envelope values at ``x``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or x.shape != y.shape or x.size < 2:
        raise DomainError("need matching 1-D grids with at least two points")
    if np.any(np.diff(x) <= 0):
        raise DomainError("abscissae must be strictly increasing")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DomainError("samples must be finite")
    hull = [0]
    for i in range(1, x.size):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            # drop b if it lies on or below the chord a -> i
            cross = (x[b] - x[a]) * (y[i] - y[a]) - (y[b] - y[a]) * (x[i] - x[a])
            if cross >= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    env = np.interp(x, x[hull], y[hull])
    return np.maximum(env, y)


def convex_envelope(x: Sequence[float], y: Sequence[float]) -> np.ndarray:
    """Largest convex minorant of sampled data on the same grid."""
    return -concave_envelope(x, -np.asarray(y, dtype=float))


def minimize_scalar(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    tol: float = 1e-10,
    n_scan: int = 512,
) -> tuple[float, float]:
    """Global-ish minimization of a scalar function on an interval.

    A dense scan locates the best grid cell; a bounded Brent search then
    refines inside the neighbouring cells. Non-finite values count as ``inf``.

    Returns
    -------
    (float, float)
        Argmin and minimum. The minimum never exceeds the best scan value.
    """
    if not lo < hi:
        raise DomainError("need lo < hi")
    if tol <= 0:
        raise DomainError("tol must be positive")

    def g(t):
        v = float(f(t))
        return v if math.isfinite(v) else INF

    xs = np.linspace(lo, hi, max(int(n_scan), 512))
    vals = np.array([g(t) for t in xs])
    i = int(np.argmin(vals))
    best_x, best_v = float(xs[i]), float(vals[i])
    a = xs[max(i - 1, 0)]
    b = xs[min(i + 1, xs.size - 1)]
    if math.isfinite(best_v) and b > a:
        res = optimize.minimize_scalar(
            g, bounds=(a, b), method="bounded", options={"xatol": tol}
        )
        if res.fun < best_v:
            best_x, best_v = float(res.x), float(res.fun)
    return best_x, best_v
