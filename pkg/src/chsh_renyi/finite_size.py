"""Finite-size key length for a CHSH-based DIQKD protocol.

Test rounds produce a symbol in ``(0, 1, ⊥)``: ``1`` when the CHSH game is
won, ``0`` when it is lost and ``⊥`` for key-generation rounds. The entropy
bound uses the single-round quantity

    h_alpha = inf_{omega, q in S_acc} D(q || p_omega) / (alpha - 1) + q(⊥) f(alpha, 8 omega - 4)

with ``f`` the sandwiched-down rate function.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import optimize, special

from .numerics import DomainError, binary_entropy, binomial_quantile_delta
from .rate_functions import rate

log = logging.getLogger(__name__)

OMEGA_MAX = (2.0 + math.sqrt(2.0)) / 4.0
GRID_POINTS = 2048
RANK_POINTS = 256
ALPHA_GRID = 1.0 + 10.0 ** np.linspace(-6.0, 1.0, 60)
GAMMA_UNIT = 1.0 / 256.0
LN2 = math.log(2.0)


@dataclass(frozen=True)
class HonestModel:
    """Honest device behaviour: CHSH winning probability, generation-round
    error rate and testing probability."""

    omega_hon: float = 0.83
    qerr_hon: float = 0.018
    gamma: float = 13 / 256

    def __post_init__(self):
        for name in ("omega_hon", "qerr_hon", "gamma"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DomainError(f"{name}={v} is not a probability")


def honest_distribution(h: HonestModel) -> np.ndarray:
    """Single-round distribution over ``(0, 1, ⊥)``."""
    return np.array([h.gamma * (1.0 - h.omega_hon), h.gamma * h.omega_hon, 1.0 - h.gamma])


def score_from_omega(omega):
    """CHSH score of a winning probability, ``S = 8 omega - 4``."""
    return 8.0 * np.asarray(omega, dtype=float) - 4.0


@dataclass(frozen=True)
class AcceptanceSet:
    """Box ``center - delta_low <= q <= center + delta_upp`` (per symbol)."""

    center: np.ndarray
    delta_low: np.ndarray
    delta_upp: np.ndarray

    @classmethod
    def everything(cls, center=(1 / 3, 1 / 3, 1 / 3)) -> "AcceptanceSet":
        return cls(np.asarray(center, float), np.ones(3), np.ones(3))

    @property
    def lower(self) -> np.ndarray:
        return np.clip(self.center - self.delta_low, 0.0, 1.0)

    @property
    def upper(self) -> np.ndarray:
        return np.clip(self.center + self.delta_upp, 0.0, 1.0)

    def contains(self, freq, slack: float = 1e-12) -> np.ndarray:
        freq = np.asarray(freq, dtype=float)
        lo = self.center - self.delta_low - slack
        hi = self.center + self.delta_upp + slack
        return np.all((freq >= lo) & (freq <= hi), axis=-1)


def build_acceptance(h: HonestModel, n: int, eps_com_at: float = 1e-3) -> AcceptanceSet:
    """Minimal per-symbol tolerances, each one-sided tail at most ``eps_com_at / 6``."""
    if n < 1:
        raise DomainError("n must be at least 1")
    p = honest_distribution(h)
    eps = eps_com_at / 6.0
    low = np.array([binomial_quantile_delta(n, x, eps, "lower") for x in p])
    upp = np.array([binomial_quantile_delta(n, x, eps, "upper") for x in p])
    return AcceptanceSet(p, low, upp)


def solve_inner(p, lower, upper, weight):
    """Minimize ``sum q log(q/p) - sum q log(weight)`` over the box and simplex.

    The minimizer is ``q(x) = clip(c p(x) weight(x), lower(x), upper(x))``
    with ``c`` fixed by normalization; ``c`` is found exactly by walking the
    breakpoints of the piecewise-linear normalization function.

    Parameters
    ----------
    p, weight : ndarray, shape (..., 3)
    lower, upper : ndarray, shape (3,) or (..., 3)

    Returns
    -------
    q : ndarray, shape (..., 3)
        Optimal distribution; rows without a feasible point are NaN.
    """
    p = np.asarray(p, dtype=float)
    t = p * np.asarray(weight, dtype=float)
    lower = np.broadcast_to(np.asarray(lower, dtype=float), t.shape)
    upper = np.broadcast_to(np.asarray(upper, dtype=float), t.shape)
    pos = t > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        bl = np.where(pos, lower / np.where(pos, t, 1.0), np.inf)
        bu = np.where(pos, upper / np.where(pos, t, 1.0), np.inf)
    brk = np.sort(np.concatenate([np.zeros(t.shape[:-1] + (1,)), bl, bu], axis=-1), axis=-1)
    brk_f = np.where(np.isfinite(brk), brk, 0.0)

    def total(c):
        return np.clip(c[..., :, None] * t[..., None, :], lower[..., None, :], upper[..., None, :]).sum(-1)

    s = total(brk_f)
    s = np.where(np.isfinite(brk), s, -np.inf)
    # first breakpoint where the sum reaches 1
    hit = s >= 1.0
    feasible = hit.any(-1) & np.all(pos | (lower <= 0.0), axis=-1)
    feasible &= lower.sum(-1) <= 1.0 + 1e-15
    j = np.argmax(hit, axis=-1)
    jm = np.maximum(j - 1, 0)
    c_hi = np.take_along_axis(brk_f, j[..., None], -1)[..., 0]
    c_lo = np.take_along_axis(brk_f, jm[..., None], -1)[..., 0]
    s_hi = np.take_along_axis(s, j[..., None], -1)[..., 0]
    s_lo = np.take_along_axis(s, jm[..., None], -1)[..., 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(s_hi > s_lo, (1.0 - s_lo) / (s_hi - s_lo), 1.0)
    c = np.where(j > 0, c_lo + np.clip(frac, 0.0, 1.0) * (c_hi - c_lo), c_hi)
    q = np.clip(c[..., None] * t, lower, upper)
    # absorb rounding in a free coordinate so rows sum to one
    free = (q > lower) & (q < upper)
    resid = 1.0 - q.sum(-1)
    k = np.argmax(free, axis=-1)
    has_free = free.any(-1)
    adj = np.zeros_like(q)
    np.put_along_axis(adj, k[..., None], np.where(has_free, resid, 0.0)[..., None], -1)
    q = q + adj
    return np.where(feasible[..., None], q, np.nan)


def _kl_rows(q, p):
    # each term q log(q/p) - q + p is nonnegative, which keeps small values accurate
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = special.kl_div(q, p)
    return terms.sum(-1) / LN2


def inner_objective(q, p, f, alpha):
    return _kl_rows(q, p) / (alpha - 1.0) + q[..., 2] * f


def _p_omega(omega, gamma):
    omega = np.asarray(omega, dtype=float)
    return np.stack(
        [gamma * (1.0 - omega), gamma * omega, np.full_like(omega, 1.0 - gamma)], axis=-1
    )


def _f(alpha, omega, beta, npp_q):
    s = np.minimum(score_from_omega(omega), 2.0 * math.sqrt(2.0))
    return np.asarray(rate(s, "sandwiched-down", alpha, beta, npp_q), dtype=float)


def tradeoff_objective(omega, alpha, gamma, acc: AcceptanceSet, beta=1.0, npp_q=0.0):
    """Inner infimum over ``q`` at each ``omega`` (vectorized)."""
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    p = _p_omega(omega, gamma)
    f = _f(alpha, omega, beta, npp_q)
    w = np.ones_like(p)
    w[:, 2] = 2.0 ** (-(alpha - 1.0) * f)
    q = solve_inner(p, acc.lower, acc.upper, w)
    val = inner_objective(q, p, f, alpha)
    return np.where(np.isnan(val), np.inf, val)


def _check_tradeoff_args(alpha, beta):
    if not 1.0 < alpha < math.inf:
        raise DomainError("alpha must lie in (1, inf)")
    if beta != 1.0:
        raise DomainError("the winning-probability map is only defined for beta = 1")


def single_round_tradeoff(
    alpha: float,
    h: HonestModel,
    acc: AcceptanceSet,
    beta: float = 1.0,
    npp_q: float = 0.0,
    grid_points: int = GRID_POINTS,
    refine: bool = True,
) -> float:
    """Single-round quantity ``h_alpha`` in bits.

    A vectorized scan over ``omega`` is followed by a bounded Brent search in
    the best cell. The result never exceeds the objective on the scan grid.
    """
    alpha = float(alpha)
    _check_tradeoff_args(alpha, beta)
    grid = np.linspace(0.0, OMEGA_MAX, grid_points)
    vals = tradeoff_objective(grid, alpha, h.gamma, acc, beta, npp_q)
    i = int(np.argmin(vals))
    best = float(vals[i])
    if refine and math.isfinite(best):
        a, b = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
        res = optimize.minimize_scalar(
            lambda x: float(tradeoff_objective(x, alpha, h.gamma, acc, beta, npp_q)[0]),
            bounds=(a, b),
            method="bounded",
            options={"xatol": 1e-10},
        )
        if res.fun < best:
            best = float(res.fun)
    if not math.isfinite(best):
        raise DomainError("acceptance set is incompatible with every strategy")
    return max(best, 0.0)


def ec_length(h: HonestModel, n: int) -> float:
    """Bits of error-correction data."""
    return n * (
        (1.0 - h.gamma) * binary_entropy(h.qerr_hon) + h.gamma * binary_entropy(1.0 - h.omega_hon)
    ) + 50.0 * math.sqrt(n)


@dataclass(frozen=True)
class ProtocolParams:
    """Inputs of the key-length computation.

    ``alpha`` and ``gamma`` are used as given unless the matching
    ``optimize_*`` flag is set.
    """

    n: int = 1_500_000
    honest: HonestModel = field(default_factory=HonestModel)
    eps_sound: float = 1e-10
    eps_corr: float = 2.0**-61
    eps_com_at: float = 1e-3
    ell_ev: float = 64.0
    alpha: float = 1.0005
    optimize_alpha: bool = False
    optimize_gamma: bool = False
    gamma_max: float = 0.25
    beta: float = 1.0
    npp_q: float = 0.0

    def __post_init__(self):
        if self.n < 1:
            raise DomainError("n must be at least 1")
        for name in ("eps_sound", "eps_corr", "eps_com_at"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise DomainError(f"{name} must lie in (0, 1)")
        if self.eps_corr >= self.eps_sound:
            raise DomainError("eps_corr must be smaller than eps_sound")
        if not 1.0 < self.alpha < math.inf:
            raise DomainError("alpha must lie in (1, inf)")
        if not 0.0 < self.gamma_max <= 1.0:
            raise DomainError("gamma_max must lie in (0, 1]")
        if self.beta != 1.0:
            raise DomainError("finite-size analysis supports beta = 1 only")

    @property
    def log2_inv_eps_secret(self) -> float:
        eps = Fraction(self.eps_sound) - Fraction(self.eps_corr)
        # log2 of an exact rational: split off the binary exponent first
        num, den = eps.numerator, eps.denominator
        shift = num.bit_length() - den.bit_length()
        frac = Fraction(num, den) / Fraction(2) ** shift
        return -(shift + math.log2(float(frac)))


@dataclass(frozen=True)
class KeyRateResult:
    n: int
    gamma: float
    alpha: float
    h_alpha: float
    delta_low_perp: float
    ell_ec: float
    ell_key: float
    rate: float
    asymptotic_rate: float


def asymptotic_rate(h: HonestModel) -> float:
    """``f_H(8 omega_hon - 4) - h2(qerr_hon)`` in bits per round."""
    s = float(score_from_omega(h.omega_hon))
    return float(rate(min(s, 2 * math.sqrt(2)), "von-neumann")) - binary_entropy(h.qerr_hon)


def _ell_key(p: ProtocolParams, h: HonestModel, alpha, h_alpha, d_perp, ell_ec):
    return (
        p.n * h_alpha
        - p.n * (h.gamma + d_perp)
        - ell_ec
        - p.ell_ev
        - alpha / (alpha - 1.0) * p.log2_inv_eps_secret
        + 2.0
    )


def _grid_tradeoffs(alphas, h, acc, p: ProtocolParams, grid_points=RANK_POINTS):
    """Grid-only ``h_alpha`` for many orders at once (upper estimates)."""
    grid = np.linspace(0.0, OMEGA_MAX, grid_points)
    pw = _p_omega(grid, h.gamma)
    out = np.empty(len(alphas))
    for i, a in enumerate(alphas):
        f = _f(a, grid, p.beta, p.npp_q)
        w = np.ones_like(pw)
        w[:, 2] = 2.0 ** (-(a - 1.0) * f)
        q = solve_inner(pw, acc.lower, acc.upper, w)
        v = inner_objective(q, pw, f, a)
        out[i] = np.nanmin(np.where(np.isnan(v), np.inf, v))
    return out


def _evaluate(p: ProtocolParams, gamma: float, alpha: float, acc=None) -> KeyRateResult:
    h = replace(p.honest, gamma=gamma)
    if acc is None:
        acc = build_acceptance(h, p.n, p.eps_com_at)
    try:
        h_alpha = single_round_tradeoff(alpha, h, acc, p.beta, p.npp_q)
    except DomainError:
        h_alpha = 0.0
    ell_ec = ec_length(h, p.n)
    d_perp = float(acc.delta_low[2])
    ell = _ell_key(p, h, alpha, h_alpha, d_perp, ell_ec)
    return KeyRateResult(
        n=p.n,
        gamma=gamma,
        alpha=alpha,
        h_alpha=h_alpha,
        delta_low_perp=d_perp,
        ell_ec=ell_ec,
        ell_key=ell,
        rate=max(ell, 0.0) / p.n,
        asymptotic_rate=asymptotic_rate(h),
    )


def key_length(p: ProtocolParams, refine_top: int = 4) -> KeyRateResult:
    """Key length and rate, optionally optimized over ``alpha`` and ``gamma``.

    With optimization, every candidate pair is ranked with values of
    ``h_alpha`` from a coarse omega grid; the best ``refine_top`` pairs are then
    recomputed on the full grid with refinement and the best is returned.
    """
    alphas = ALPHA_GRID if p.optimize_alpha else np.array([p.alpha])
    if p.optimize_gamma:
        kmax = int(math.floor(p.gamma_max / GAMMA_UNIT + 1e-9))
        gammas = [k * GAMMA_UNIT for k in range(1, kmax + 1)]
    else:
        gammas = [p.honest.gamma]
    if len(alphas) == 1 and len(gammas) == 1:
        return _evaluate(p, gammas[0], float(alphas[0]))

    ranked = []
    accs = {}
    for g in gammas:
        h = replace(p.honest, gamma=g)
        acc = build_acceptance(h, p.n, p.eps_com_at)
        accs[g] = acc
        hs = _grid_tradeoffs(alphas, h, acc, p)
        ell_ec = ec_length(h, p.n)
        for a, ha in zip(alphas, hs):
            if not math.isfinite(ha):
                continue
            ranked.append((_ell_key(p, h, a, max(ha, 0.0), acc.delta_low[2], ell_ec), g, float(a)))
    ranked.sort(reverse=True)
    if not ranked:
        return _evaluate(p, gammas[0], float(alphas[0]))
    results = [_evaluate(p, g, a, accs[g]) for _, g, a in ranked[:refine_top]]
    return max(results, key=lambda r: r.ell_key)


def _sweep_one(args):
    p, n = args
    return key_length(replace(p, n=int(n)))


def sweep(p: ProtocolParams, n_values: Sequence[int], workers: int = 1) -> list:
    """Key rates for several block sizes, in input order."""
    n_values = [int(n) for n in n_values]
    if not n_values:
        raise DomainError("need at least one n")
    if any(b <= a for a, b in zip(n_values, n_values[1:])):
        raise DomainError("n values must be increasing")
    jobs = [(p, n) for n in n_values]
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as ex:
            out = list(ex.map(_sweep_one, jobs))
    else:
        out = [_sweep_one(j) for j in jobs]
    if p.optimize_alpha and p.optimize_gamma:
        for a, b in zip(out, out[1:]):
            if b.rate < a.rate - 1e-9:
                log.warning("rate decreased from n=%d to n=%d", a.n, b.n)
    return out


def positivity_threshold(p: ProtocolParams, n_lo: int = 1_000, n_hi: int = 10**10) -> int:
    """Smallest ``n`` (to within bisection on integers) with a positive rate.

    Returns ``n_hi`` if the rate is not positive there.
    """
    def positive(n):
        return key_length(replace(p, n=int(n))).ell_key > 0

    if not positive(n_hi):
        return n_hi
    lo, hi = n_lo, n_hi
    if positive(lo):
        return lo
    while hi - lo > max(1, lo // 1000):
        mid = int(math.sqrt(lo * hi)) if hi > 4 * lo else (lo + hi) // 2
        if positive(mid):
            hi = mid
        else:
            lo = mid
    return hi


def simulate_completeness(
    h: HonestModel, n: int, acc: AcceptanceSet, trials: int, seed: int = 0
) -> float:
    """Fraction of simulated honest runs whose frequencies leave the box."""
    if trials < 1:
        raise DomainError("trials must be at least 1")
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(n, honest_distribution(h), size=trials)
    # compare on the count scale; thresholds sit on integers up to rounding
    lo = n * (acc.center - acc.delta_low) - 1e-7
    hi = n * (acc.center + acc.delta_upp) + 1e-7
    ok = np.all((counts >= lo) & (counts <= hi), axis=-1)
    return np.count_nonzero(~ok) / trials
