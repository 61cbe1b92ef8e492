"""Rate functions with noisy preprocessing.

Alice flips her key bit with probability ``q`` before the key is formed. The
pre-log quantities ``h(g)`` are no longer known to be concave in the score,
so the rate uses their concave envelope on a fixed score grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .numerics import DomainError, concave_envelope
from .rate_functions import (
    ENVELOPE_POINTS,
    LN2,
    SCALED_RANGE,
    NPP_FAMILIES,
    Family,
    _check_scores,
    _exponents,
    _log2_mean,
    as_family,
    bracket,
    overlap_g,
    score_range,
)


def _check(family, alpha, q):
    family = as_family(family)
    if family not in NPP_FAMILIES:
        raise DomainError(f"noisy preprocessing is not available for {family.value}")
    alpha = float(alpha)
    upper = 2.0 if family.is_petz else math.inf
    if not (1.0 < alpha <= upper) or math.isinf(alpha):
        raise DomainError(f"alpha={alpha} outside the range of {family.value}")
    q = float(q)
    if not 0.0 <= q <= 1.0:
        raise DomainError(f"q={q} is not a probability")
    # q and 1-q give the same state up to relabelling
    return family, alpha, min(q, 1.0 - q)


def prefactor(family, alpha: float) -> float:
    """Coefficient of ``log2 h``: ``alpha/(1-alpha)`` for Petz-up, else ``1/(1-alpha)``."""
    family = as_family(family)
    return alpha / (1.0 - alpha) if family is Family.PETZ_UP else 1.0 / (1.0 - alpha)


def _eigen_data(g, q):
    """Eigen-decomposition data of the flipped conditional states.

    Returns ``r`` (eigenvalues are ``(1 +- r)/2``), ``1 - r`` computed without
    cancellation, and the squared overlap ``w`` between eigenvectors of the
    flipped and unflipped blocks.
    """
    D = (1.0 - 2.0 * q) ** 2 * (1.0 - g * g)
    r = np.sqrt(g * g + D)
    one_minus_r = 4.0 * q * (1.0 - q) * (1.0 - g * g) / (1.0 + r)
    denom = (g + r) ** 2 + D
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(denom > 0, D / np.where(denom > 0, denom, 1.0), 0.5)
    return r, one_minus_r, denom, w


def npp_log2_bracket(family, alpha: float, q: float, g):
    """``log2`` of :func:`npp_bracket`, finite for every order.

    Parameters
    ----------
    family : {"sandwiched-down", "petz-down", "petz-up"}
    alpha : float
        Renyi order, ``(1, inf)`` for sandwiched-down, ``(1, 2]`` for Petz.
    q : float
        Flip probability; values above 1/2 are reflected.
    g : float or array_like
        Overlap parameter in [0, 1].
    """
    family, alpha, q = _check(family, alpha, q)
    g = np.asarray(g, dtype=float)
    if np.any(g < 0) or np.any(g > 1):
        raise DomainError("g must lie in [0, 1]")
    if family is Family.SANDWICHED_DOWN:
        if q == 0.0:
            e, _, k = _exponents(family, alpha)
            out = (alpha - 1.0) + k * _log2_mean(e, g)
        else:
            t = (1.0 - g) ** (1.0 / alpha) + (1.0 + g) ** (1.0 / alpha)
            c = 16.0 * (1.0 - g * g) ** (1.0 / alpha) * (q - q * q)
            big = t + np.sqrt(np.maximum(t * t - c, 0.0))
            small = c / big
            out = -alpha - 1.0 + alpha * np.log2(big) + np.log1p((small / big) ** alpha) / LN2
    else:
        out = np.log2(_petz_bracket(family, alpha, q, g))
    out = np.asarray(out, dtype=float)
    return float(out) if out.ndim == 0 else out


def _petz_bracket(family, alpha, q, g):
    if q == 0.0:
        if family is Family.PETZ_DOWN and alpha == 2.0:
            # exponent 0: two unit terms, one of them without support at g = 1
            return np.where(g < 1.0, 2.0, 1.0)
        return bracket(family, alpha, g)
    r, omr, denom, w = _eigen_data(g, q)
    lam_p, lam_m = (1.0 + r) / 2.0, omr / 2.0
    if family is Family.PETZ_UP:
        mu1 = lam_p**alpha * w + lam_m**alpha * (1.0 - w)
        mu2 = lam_p**alpha * (1.0 - w) + lam_m**alpha * w
        return mu1 ** (1.0 / alpha) + mu2 ** (1.0 / alpha)
    # (1-g)^(1-alpha) * w, rewritten to stay finite as g -> 1
    with np.errstate(invalid="ignore", divide="ignore"):
        low_w = np.where(
            denom > 0,
            (1.0 - 2.0 * q) ** 2 * (1.0 + g) * (1.0 - g) ** (2.0 - alpha)
            / np.where(denom > 0, denom, 1.0),
            0.5,
        )
        low_c = np.where(g < 1.0, (1.0 - g) ** (1.0 - alpha) * (1.0 - w), 0.0)
    # at g = 0 the closed form for w is 0/0 only when q = 1/2
    low_w = np.where(denom > 0, low_w, w)
    # the (1-g) block has no support at g = 1
    low_w = np.where(g < 1.0, low_w, 0.0)
    high = (1.0 + g) ** (1.0 - alpha)
    return 0.5 * (
        (1.0 + r) ** alpha * low_w
        + omr**alpha * low_c
        + (1.0 + r) ** alpha * high * (1.0 - w)
        + omr**alpha * high * w
    )


def npp_bracket(family, alpha: float, q: float, g):
    """Pre-log quantity ``h(g)`` for a noisy-preprocessing family.

    Overflows to ``inf`` for sandwiched-down at very large orders; use
    :func:`npp_log2_bracket` there.
    """
    with np.errstate(over="ignore"):
        out = np.exp2(npp_log2_bracket(family, alpha, q, g))
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class NppBracket:
    """Sampled pre-log quantity and its concave envelope over the score.

    ``grid`` and ``envelope`` hold ``h / 2**log2_scale``; the scale is an
    integer so the division is exact.
    """

    family: Family
    alpha: float
    q: float
    beta: float
    scores: np.ndarray
    grid: np.ndarray
    envelope: np.ndarray
    log2_scale: float = 0.0

    def _scaled(self, score):
        # the envelope dominates both its chords and h itself; taking the larger
        # keeps the value exact wherever h is already concave
        chord = np.interp(score, self.scores, self.envelope)
        lh = npp_log2_bracket(self.family, self.alpha, self.q, overlap_g(score, self.beta))
        return np.maximum(chord, np.exp2(lh - self.log2_scale))

    def __call__(self, score):
        """Enveloped ``h`` at the given scores."""
        return np.exp2(self.log2_scale) * self._scaled(score)

    def log2(self, score):
        """``log2`` of the enveloped ``h``, without overflow."""
        return np.log2(self._scaled(score)) + self.log2_scale


@lru_cache(maxsize=512)
def _cached_bracket(family: Family, alpha: float, q: float, beta: float, points: int) -> NppBracket:
    lo, hi = score_range(beta)
    s = np.linspace(lo, hi, points)
    lh = np.asarray(npp_log2_bracket(family, alpha, q, overlap_g(s, beta)), dtype=float)
    if lh.max() - lh.min() > SCALED_RANGE:
        raise DomainError(f"alpha={alpha} is too large for the noisy-preprocessing envelope")
    scale = float(math.floor(lh.max()))
    h = np.exp2(lh - scale)
    env = concave_envelope(s, h)
    for arr in (s, h, env):
        arr.flags.writeable = False
    return NppBracket(family, alpha, q, beta, s, h, env, scale)


def build_bracket(family, alpha: float, q: float, beta: float = 1.0, points: int = ENVELOPE_POINTS) -> NppBracket:
    """Grid of ``h`` over the score interval and its concave envelope (cached)."""
    family, alpha, q = _check(family, alpha, q)
    if abs(float(beta)) < 1.0:
        raise DomainError("noisy preprocessing requires |beta| >= 1")
    return _cached_bracket(family, alpha, q, abs(float(beta)), int(points))


def npp_rate(score, family, alpha: float, q: float, beta: float = 1.0):
    """Rate in bits with noisy preprocessing, from the enveloped bracket.

    Returns
    -------
    float or ndarray
        ``1 + c log2 h_env(S)`` clipped to [0, 1], where ``c`` is the family
        prefactor.
    """
    br = build_bracket(family, alpha, q, beta)
    s, lo, _ = _check_scores(score, beta)
    lh = br.log2(np.maximum(s, lo))
    out = np.clip(1.0 + prefactor(br.family, br.alpha) * lh, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out
