"""Closed-form conditional-entropy rate functions of the (asymmetric) CHSH score.

The score is ``S_beta = beta<A0B0> + beta<A0B1> + <A1B0> - <A1B1>``. For
``|beta| >= 1`` every rate is a function of the overlap
``g = sqrt(S^2/4 - beta^2)`` only. For ``0 < |beta| < 1`` the overlap is
replaced by a two-branch expression and a numerical envelope restores the
bound on the whole score interval.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

from .numerics import DomainError, binary_entropy, concave_envelope, convex_envelope

ENVELOPE_POINTS = 2001
VN_CUTOFF = 1e-9
SCORE_TOL = 1e-12
# largest log2 dynamic range of a scaled bracket kept on envelope grids
SCALED_RANGE = 1000.0
LN2 = math.log(2.0)


class Family(str, Enum):
    SANDWICHED_DOWN = "sandwiched-down"
    SANDWICHED_UP = "sandwiched-up"
    PETZ_DOWN = "petz-down"
    PETZ_UP = "petz-up"
    VON_NEUMANN = "von-neumann"
    MIN_ENTROPY = "min-entropy"

    @property
    def is_renyi(self) -> bool:
        return self in RENYI_FAMILIES

    @property
    def is_petz(self) -> bool:
        return self in (Family.PETZ_DOWN, Family.PETZ_UP)


RENYI_FAMILIES = (
    Family.SANDWICHED_DOWN,
    Family.SANDWICHED_UP,
    Family.PETZ_DOWN,
    Family.PETZ_UP,
)
NPP_FAMILIES = (Family.SANDWICHED_DOWN, Family.PETZ_DOWN, Family.PETZ_UP)


def as_family(family) -> Family:
    try:
        return Family(family)
    except ValueError:
        raise DomainError(f"unknown entropy family {family!r}") from None


def check_alpha(family: Family, alpha) -> float:
    """Validate the Renyi order for a family and return it as a float."""
    if not family.is_renyi:
        return math.nan
    if alpha is None:
        raise DomainError(f"{family.value} requires alpha")
    alpha = float(alpha)
    upper = 2.0 if family.is_petz else math.inf
    if not (1.0 < alpha <= upper):
        raise DomainError(f"alpha={alpha} outside the range of {family.value}")
    return alpha


@dataclass(frozen=True)
class BellScore:
    """Asymmetric CHSH score with its weight."""

    score: float
    beta: float = 1.0

    @property
    def g(self) -> float:
        return float(overlap_g(self.score, self.beta))


def score_range(beta: float) -> tuple[float, float]:
    """Classical bound and quantum maximum of the asymmetric score."""
    b = abs(float(beta))
    if b == 0:
        raise DomainError("beta must be nonzero")
    return 2.0 * max(b, 1.0), 2.0 * math.sqrt(1.0 + b * b)


def _check_scores(score, beta):
    s = np.asarray(score, dtype=float)
    lo, hi = score_range(beta)
    if np.any(np.isnan(s)) or np.any(s > hi * (1 + SCORE_TOL)):
        raise DomainError(f"score exceeds the quantum maximum {hi}")
    return s, lo, hi


def overlap_g(score, beta: float = 1.0):
    """Overlap parameter in [0, 1] for an asymmetric CHSH score.

    Scores at or below the classical bound map to 0.
    """
    s, lo, hi = _check_scores(score, beta)
    s = np.minimum(s, hi)
    b = abs(float(beta))
    quarter = np.maximum(s * s / 4.0, 0.0)
    if b >= 1.0:
        g = np.sqrt(np.clip(quarter - b * b, 0.0, 1.0))
    else:
        b2 = b * b
        upper = np.sqrt(np.clip(quarter - b2, 0.0, 1.0))
        inner = 1.0 - np.sqrt(np.clip((1.0 - b2) * (quarter - 1.0), 0.0, None)) / b
        lower = np.sqrt(np.clip(1.0 - inner * inner, 0.0, 1.0))
        g = np.where(s >= 2.0 * math.sqrt(1.0 + b2 - b2 * b2), upper, lower)
    g = np.where(s <= lo, 0.0, g)
    return float(g) if g.ndim == 0 else g


def phi(mu: float, g):
    """Two-term power sum ``((1-g)/2)^mu + ((1+g)/2)^mu``."""
    if mu <= 0:
        raise DomainError("mu must be positive")
    g = np.asarray(g, dtype=float)
    out = ((1.0 - g) / 2.0) ** mu + ((1.0 + g) / 2.0) ** mu
    return float(out) if out.ndim == 0 else out


def bracket(family, alpha: float, g):
    """Pre-log quantity ``h(g)`` with ``rate = 1 + prefactor * log2 h``.

    Sandwiched-up is mapped to sandwiched-down at ``2 - 1/alpha``. For large
    orders this overflows; the rates themselves use :func:`log2_power_mean`.
    """
    family = as_family(family)
    g = np.asarray(g, dtype=float)
    if family is Family.SANDWICHED_UP:
        return bracket(Family.SANDWICHED_DOWN, 2.0 - 1.0 / alpha, g)
    if family is Family.SANDWICHED_DOWN:
        return phi(1.0 / alpha, g) ** alpha
    if family is Family.PETZ_DOWN:
        return phi(2.0 - alpha, g)
    if family is Family.PETZ_UP:
        return phi(1.0 / alpha, g)
    raise DomainError(f"{family.value} has no Renyi bracket")


def prefactor(family, alpha: float) -> float:
    """Coefficient multiplying ``log2 h`` in the rate."""
    family = as_family(family)
    if family is Family.SANDWICHED_UP:
        return prefactor(Family.SANDWICHED_DOWN, 2.0 - 1.0 / alpha)
    if family is Family.PETZ_UP:
        return alpha / (1.0 - alpha)
    return 1.0 / (1.0 - alpha)


def log2_power_mean(mu: float, g):
    """``log2(((1-g)^mu + (1+g)^mu) / 2)``.

    Since ``phi(mu, g) = 2^(1-mu)`` times this mean, every Renyi rate equals
    ``c * log2_power_mean(mu, g)`` exactly, with no cancellation against 1.
    """
    return _log2_mean(mu - 1.0, g)


def _log2_mean(e: float, g):
    # written with e = mu - 1 so that the result is O(e) without cancellation
    g = np.asarray(g, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        lo = np.where(g < 1.0, (1.0 - g) * np.expm1(e * np.log1p(-g)), 0.0)
    hi = (1.0 + g) * np.expm1(e * np.log1p(g))
    return np.log1p(0.5 * (lo + hi)) / LN2


def _exponents(family: Family, alpha: float):
    # (mu - 1, c, k): rate = c * m and log2 h = log2 h(0) + k * m, m = log2 of the power mean
    if family is Family.SANDWICHED_UP:
        if math.isinf(alpha):
            return -0.5, -2.0, 2.0
        return (1.0 - alpha) / (2.0 * alpha - 1.0), (2.0 * alpha - 1.0) / (1.0 - alpha), (2.0 * alpha - 1.0) / alpha
    if family is Family.SANDWICHED_DOWN:
        return (1.0 - alpha) / alpha, alpha / (1.0 - alpha), alpha
    if family is Family.PETZ_DOWN:
        return 1.0 - alpha, 1.0 / (1.0 - alpha), 1.0
    return (1.0 - alpha) / alpha, alpha / (1.0 - alpha), 1.0


def _vn(g):
    return 1.0 - binary_entropy(0.5 + 0.5 * np.asarray(g, dtype=float))


def _min_entropy(g):
    g = np.asarray(g, dtype=float)
    return np.clip(1.0 - np.log2(1.0 + np.sqrt(np.clip(1.0 - g * g, 0.0, 1.0))), 0.0, 1.0)


def _renyi(family: Family, alpha: float, g):
    e, c, _ = _exponents(family, alpha)
    return np.clip(c * _log2_mean(e, g), 0.0, 1.0) + 0.0


def _sandwiched_up(alpha: float, g):
    # direct form; the infinite-order limit has exponent 1/2 and coefficient -2
    return _renyi(Family.SANDWICHED_UP, alpha, g)


def _rate_of_g(family: Family, alpha: float, g):
    if family is Family.VON_NEUMANN or (family.is_renyi and abs(alpha - 1.0) < VN_CUTOFF):
        return _vn(g)
    if family is Family.MIN_ENTROPY:
        return _min_entropy(g)
    return _renyi(family, alpha, g)


def _is_edge(family: Family, alpha: float) -> bool:
    return (family is Family.SANDWICHED_DOWN and math.isinf(alpha)) or (
        family is Family.PETZ_DOWN and alpha == 2.0
    )


def _inner_quantity(family: Family, alpha: float, g):
    # the quantity whose envelope is taken for 0 < |beta| < 1, and the
    # direction of the envelope (+1 concave, -1 convex)
    if family is Family.VON_NEUMANN or (family.is_renyi and abs(alpha - 1.0) < VN_CUTOFF):
        return _vn(g), -1
    if family is Family.MIN_ENTROPY:
        return (1.0 + np.sqrt(np.clip(1.0 - g * g, 0.0, 1.0))) / 2.0, 1
    # the bracket divided by its value at g = 0, which stays in (0, 1]
    e, _, k = _exponents(family, alpha)
    return 2.0 ** (k * _log2_mean(e, g)), 1


def _outer(family: Family, alpha: float, v):
    if family is Family.VON_NEUMANN or (family.is_renyi and abs(alpha - 1.0) < VN_CUTOFF):
        return v
    if family is Family.MIN_ENTROPY:
        return np.clip(-np.log2(v), 0.0, 1.0) + 0.0
    _, c, k = _exponents(family, alpha)
    return np.clip(c / k * np.log2(v), 0.0, 1.0) + 0.0


@lru_cache(maxsize=256)
def _small_beta_envelope(family: Family, alpha: float, beta: float):
    if family.is_renyi and not family.is_petz and (_exponents(family, alpha)[2] - 1.0) > SCALED_RANGE:
        raise DomainError(f"alpha={alpha} is too large for the |beta| < 1 envelope")
    lo, hi = score_range(beta)
    s = np.linspace(lo, hi, ENVELOPE_POINTS)
    v, sign = _inner_quantity(family, alpha, overlap_g(s, beta))
    env = sign * concave_envelope(s, sign * v)
    s.flags.writeable = False
    env.flags.writeable = False
    return s, env, sign


def _small_beta_rate(family: Family, alpha: float, beta: float, score):
    grid, env, sign = _small_beta_envelope(family, alpha, beta)
    s = np.clip(score, grid[0], grid[-1])
    v, _ = _inner_quantity(family, alpha, overlap_g(s, beta))
    # the envelope lies on the far side of both its chords and the exact value
    inner = sign * np.maximum(sign * np.interp(s, grid, env), sign * v)
    return _outer(family, alpha, inner)


def rate(score, family, alpha: float | None = None, beta: float = 1.0, npp_q: float = 0.0):
    """Rate function ``f(S)`` in bits for the given entropy family.

    Parameters
    ----------
    score : float or array_like
        Asymmetric CHSH score. Values below the classical bound give 0.
    family : str or Family
        One of ``sandwiched-down``, ``sandwiched-up``, ``petz-down``,
        ``petz-up``, ``von-neumann``, ``min-entropy``.
    alpha : float, optional
        Renyi order: ``(1, inf]`` for sandwiched families, ``(1, 2]`` for Petz
        families. Ignored for von Neumann and min-entropy.
    beta : float
        Weight of Alice's first setting in the score.
    npp_q : float
        Noisy-preprocessing flip probability; values above 0 are forwarded to
        :func:`chsh_renyi.noisy_preprocessing.npp_rate`.

    Returns
    -------
    float or ndarray
        Rate in [0, 1].
    """
    family = as_family(family)
    alpha = check_alpha(family, alpha)
    npp_q = float(npp_q)
    if not 0.0 <= npp_q <= 1.0:
        raise DomainError(f"npp_q={npp_q} is not a probability")
    if npp_q > 0.0:
        from .noisy_preprocessing import npp_rate

        return npp_rate(score, family, alpha, npp_q, beta)
    if family.is_renyi and _is_edge(family, alpha):
        return rate_edge(score, family, beta)
    s, _, _ = _check_scores(score, beta)
    if abs(float(beta)) >= 1.0:
        out = _rate_of_g(family, alpha, overlap_g(s, beta))
    else:
        out = _small_beta_rate(family, alpha, abs(float(beta)), s)
    out = np.asarray(out, dtype=float)
    return float(out) if out.ndim == 0 else out


def rate_edge(score, family="sandwiched-down", beta: float = 1.0):
    """Discontinuous limits: sandwiched-down at infinite order and Petz-down at
    order 2 equal 1 at the quantum maximum and 0 elsewhere."""
    family = as_family(family)
    if family not in (Family.SANDWICHED_DOWN, Family.PETZ_DOWN):
        raise DomainError("edge case exists only for sandwiched-down and petz-down")
    s, _, hi = _check_scores(score, beta)
    out = np.where(np.abs(s - hi) <= SCORE_TOL * hi, 1.0, 0.0)
    return float(out) if out.ndim == 0 else out


def duality_gap(score, alpha: float, beta: float = 1.0):
    """``rate(sandwiched-up, alpha) - rate(sandwiched-down, 2 - 1/alpha)``."""
    alpha = float(alpha)
    if not 1.0 < alpha < math.inf:
        raise DomainError("alpha must lie in (1, inf)")
    g = overlap_g(score, beta)
    up = _sandwiched_up(alpha, g)
    down = _rate_of_g(Family.SANDWICHED_DOWN, 2.0 - 1.0 / alpha, g)
    out = np.asarray(up - down)
    return float(out) if out.ndim == 0 else out
