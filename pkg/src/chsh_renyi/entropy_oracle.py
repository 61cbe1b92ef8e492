"""Matrix-level ground truth for the analytic rate functions.

Builds the optimal attack on the CHSH game as explicit qubit matrices, reads
out classical-quantum states and evaluates conditional Renyi entropies by
eigendecomposition. Nothing here uses the closed-form rate expressions, so
the two can be compared.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import optimize

from .numerics import DomainError
from .rate_functions import Family, as_family, check_alpha, overlap_g, score_range

EIG_FLOOR = -1e-10
SUPPORT_TOL = 1e-14
LN2 = math.log(2.0)

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
I2 = np.eye(2, dtype=complex)


def _logsumexp(x: np.ndarray) -> float:
    m = float(np.max(x))
    return m + math.log(float(np.sum(np.exp(x - m))))


class NumericalDegeneracyError(ArithmeticError):
    """A matrix expected to be positive semidefinite has a clearly negative eigenvalue."""


def psd_eigh(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a PSD matrix with small negative eigenvalues clipped."""
    m = np.asarray(m, dtype=complex)
    w, v = np.linalg.eigh((m + m.conj().T) / 2)
    if w.size and w.min() < EIG_FLOOR:
        raise NumericalDegeneracyError(f"eigenvalue {w.min():.3e} below {EIG_FLOOR}")
    return np.clip(w, 0.0, None), v


def _support(w: np.ndarray) -> np.ndarray:
    scale = max(1.0, float(w.max())) if w.size else 1.0
    return w > SUPPORT_TOL * scale


def mpow(m: np.ndarray, p: float) -> np.ndarray:
    """Power of a PSD matrix taken on its support (zero on the kernel)."""
    w, v = psd_eigh(m)
    keep = _support(w)
    vals = np.zeros_like(w)
    vals[keep] = w[keep] ** p
    return (v * vals) @ v.conj().T


def log_eigs(m: np.ndarray) -> np.ndarray:
    """Natural logarithms of the nonzero eigenvalues of a PSD matrix."""
    w, _ = psd_eigh(m)
    return np.log(w[_support(w)])


def _vn(m: np.ndarray) -> float:
    w, _ = psd_eigh(m)
    w = w[_support(w)]
    return float(-np.sum(w * np.log2(w)))


def _in_support(rho: np.ndarray, sigma: np.ndarray) -> bool:
    w, v = psd_eigh(sigma)
    ker = v[:, ~_support(w)]
    if ker.shape[1] == 0:
        return True
    leak = np.real(np.trace(ker.conj().T @ rho @ ker))
    return leak <= 1e-12 * max(1.0, float(np.real(np.trace(rho))))


@dataclass
class CqState:
    """Classical-quantum state ``sum_a p_a |a><a| (x) rho_a``.

    Parameters
    ----------
    weights : sequence of float
        Label probabilities, summing to one.
    blocks : sequence of ndarray
        Normalized conditional states of a common dimension.
    """

    weights: np.ndarray
    blocks: list

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.blocks = [np.asarray(b, dtype=complex) for b in self.blocks]
        if self.weights.ndim != 1 or len(self.blocks) != self.weights.size:
            raise DomainError("one block per label is required")
        if np.any(self.weights < -1e-12) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise DomainError("label weights must form a distribution")
        d = self.blocks[0].shape[0]
        if d > 8:
            raise DomainError("conditioning dimension above 8 is not supported")
        for b in self.blocks:
            if b.shape != (d, d):
                raise DomainError("blocks must be square with a common dimension")
            if np.abs(b - b.conj().T).max() > 1e-12:
                raise DomainError("blocks must be Hermitian")
            if abs(np.trace(b).real - 1.0) > 1e-10:
                raise DomainError("blocks must have unit trace")
            psd_eigh(b)

    @classmethod
    def from_subnormalized(cls, blocks: Sequence[np.ndarray]) -> "CqState":
        blocks = [np.asarray(b, dtype=complex) for b in blocks]
        weights = np.array([np.trace(b).real for b in blocks])
        total = weights.sum()
        d = blocks[0].shape[0]
        normed = [b / w if w > 0 else np.eye(d) / d for b, w in zip(blocks, weights)]
        return cls(weights / total, normed)

    @property
    def dim(self) -> int:
        return self.blocks[0].shape[0]

    def subnormalized(self) -> list:
        return [p * b for p, b in zip(self.weights, self.blocks)]

    def marginal(self) -> np.ndarray:
        return sum(self.subnormalized())

    def trace_out_e(self) -> "CqState":
        """Same label distribution with a trivial (one-dimensional) E."""
        return CqState(self.weights, [np.eye(1)] * self.weights.size)

    def relabel(self, perm: Sequence[int]) -> "CqState":
        return CqState(self.weights[list(perm)], [self.blocks[i] for i in perm])


def flagged_mixture(states: Sequence[CqState], probs: Sequence[float]) -> CqState:
    """Mixture with the component index stored in a classical flag held by E."""
    probs = np.asarray(probs, dtype=float)
    n_labels = states[0].weights.size
    dims = [s.dim for s in states]
    total = sum(dims)
    subs = []
    for a in range(n_labels):
        blk = np.zeros((total, total), dtype=complex)
        off = 0
        for p, s, d in zip(probs, states, dims):
            blk[off:off + d, off:off + d] = p * s.weights[a] * s.blocks[a]
            off += d
        subs.append(blk)
    return CqState.from_subnormalized(subs)


@dataclass
class QubitStrategy:
    """Pure state on Alice's qubit, Bob's qubit and E, plus +-1 observables."""

    psi: np.ndarray
    alice: tuple
    bob: tuple
    d_e: int = field(init=False)

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=complex).ravel()
        if self.psi.size % 4:
            raise DomainError("state dimension must be a multiple of 4")
        self.d_e = self.psi.size // 4
        if abs(np.vdot(self.psi, self.psi).real - 1.0) > 1e-10:
            raise DomainError("state must be normalized")
        self.alice = tuple(np.asarray(o, dtype=complex) for o in self.alice)
        self.bob = tuple(np.asarray(o, dtype=complex) for o in self.bob)
        for o in self.alice + self.bob:
            if o.shape != (2, 2) or np.abs(o @ o - I2).max() > 1e-10:
                raise DomainError("observables must be 2x2 and square to identity")

    def rho_ab(self) -> np.ndarray:
        t = self.psi.reshape(4, self.d_e)
        return t @ t.conj().T

    def correlator(self, x: int, y: int) -> float:
        return float(np.trace(self.rho_ab() @ np.kron(self.alice[x], self.bob[y])).real)


def chsh_score(strategy: QubitStrategy, beta: float = 1.0) -> float:
    """``beta<A0B0> + beta<A0B1> + <A1B0> - <A1B1>`` on the strategy."""
    c = strategy.correlator
    return beta * c(0, 0) + beta * c(0, 1) + c(1, 0) - c(1, 1)


def winning_probability(strategy: QubitStrategy) -> float:
    """Probability that ``a xor b = x*y`` for uniform inputs."""
    total = 0.0
    for x in (0, 1):
        for y in (0, 1):
            total += (1 + (-1) ** (x * y) * strategy.correlator(x, y)) / 2
    return total / 4


def build_attack(score: float, beta: float = 1.0) -> QubitStrategy:
    """Optimal attack reproducing a given asymmetric score (``|beta| >= 1``)."""
    beta = float(beta)
    if abs(beta) < 1:
        raise DomainError("the attack construction needs |beta| >= 1")
    lo, hi = score_range(beta)
    if not lo - 1e-12 <= score <= hi * (1 + 1e-12):
        raise DomainError(f"score {score} outside [{lo}, {hi}]")
    g = float(overlap_g(score, beta))
    pp, pm = (1 + g) / 2, (1 - g) / 2
    phi_p = np.array([1, 0, 0, 1], dtype=complex) / math.sqrt(2)
    phi_m = np.array([1, 0, 0, -1], dtype=complex) / math.sqrt(2)
    e0, e1 = np.array([1, 0], dtype=complex), np.array([0, 1], dtype=complex)
    psi = math.sqrt(pp) * np.kron(phi_p, e0) + math.sqrt(pm) * np.kron(phi_m, e1)
    norm = math.hypot(beta, g)
    b0 = (beta * SZ + g * SX) / norm
    b1 = (beta * SZ - g * SX) / norm
    return QubitStrategy(psi, (SZ, SX), (b0, b1))


def measure_keygen(strategy: QubitStrategy, npp_q: float = 0.0) -> CqState:
    """State of Alice's key bit (from ``A0``) and E, after optional bit flips.

    Label 0 is the +1 outcome of ``A0``.
    """
    q = float(npp_q)
    if not 0 <= q <= 1:
        raise DomainError("npp_q must be a probability")
    w, v = np.linalg.eigh(strategy.alice[0])
    vecs = [v[:, np.argmax(w)], v[:, np.argmin(w)]]
    t = strategy.psi.reshape(2, 2, strategy.d_e)
    subs = []
    for vec in vecs:
        phi = np.tensordot(vec.conj(), t, axes=(0, 0))  # (B, E)
        subs.append(phi.T @ phi.conj())
    flipped = [(1 - q) * subs[0] + q * subs[1], (1 - q) * subs[1] + q * subs[0]]
    return CqState.from_subnormalized(flipped)


def _log2_sandwiched_sum(subs, sigma, alpha) -> float:
    # log2 sum_a Tr[(sigma^g rho_a sigma^g)^alpha], g = (1-alpha)/(2 alpha)
    s = mpow(sigma, (1 - alpha) / (2 * alpha))
    stack = s @ np.asarray(subs) @ s
    w = np.linalg.eigvalsh((stack + np.swapaxes(stack, -1, -2).conj()) / 2).ravel()
    if w.min() < EIG_FLOOR:
        raise NumericalDegeneracyError(f"eigenvalue {w.min():.3e} below {EIG_FLOOR}")
    w = w[_support(w)]
    return float(_logsumexp(alpha * np.log(w))) / LN2


def _check_order(family: Family, alpha):
    if family is Family.VON_NEUMANN or family is Family.MIN_ENTROPY:
        return math.nan
    alpha = float(alpha)
    if alpha == 1.0:
        return alpha
    return check_alpha(family, alpha)


def sandwiched_up_sup(state: CqState, alpha: float, starts: int = 5, seed: int = 0) -> float:
    """Numerical supremum over the conditioning state for the sandwiched-up entropy."""
    subs = state.subnormalized()
    d = state.dim
    rho_e = state.marginal()
    pref = 1.0 / (1.0 - alpha)

    def value(sigma):
        if not all(_in_support(r, sigma) for r in subs):
            return -math.inf
        return pref * _log2_sandwiched_sum(subs, sigma, alpha)

    cands = []
    if math.isfinite(alpha):
        c = mpow(rho_e, alpha / (2 * alpha - 1))
        cands.append(c / np.trace(c).real)
    cands.append(rho_e)
    best = max(value(c) for c in cands)
    if d == 1:
        return best

    # sigma = exp(X) / Tr exp(X) with X Hermitian: always full rank
    iu = np.triu_indices(d, 1)

    # the first diagonal entry is fixed at 0 since the trace is normalized away
    def unpack(x):
        h = np.zeros((d, d), dtype=complex)
        h[np.diag_indices(d)] = np.concatenate([[0.0], x[:d - 1]])
        h[iu] = x[d - 1:d - 1 + iu[0].size] + 1j * x[d - 1 + iu[0].size:]
        h = h + np.triu(h, 1).conj().T
        w, v = np.linalg.eigh(h)
        w = np.exp(w - w.max())
        return (v * (w / w.sum())) @ v.conj().T

    def pack(sigma):
        w, v = np.linalg.eigh(sigma)
        h = (v * np.log(np.clip(w, 1e-12, None))) @ v.conj().T
        diag = h[np.diag_indices(d)].real
        return np.concatenate([diag[1:] - diag[0], h[iu].real, h[iu].imag])

    def objective(x):
        sig = unpack(x)
        return -pref * _log2_sandwiched_sum(subs, sig, alpha)

    rng = np.random.default_rng(seed)
    inits = [pack(c) for c in cands] + [pack(np.eye(d) / d)]
    while len(inits) < starts:
        g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        m = g @ g.conj().T
        inits.append(pack(m / np.trace(m).real))
    for x0 in inits[:max(starts, 1)]:
        res = optimize.minimize(objective, x0, method="BFGS", options={"gtol": 1e-9})
        if np.isfinite(res.fun):
            best = max(best, -float(res.fun))
    return best


def renyi_entropy(state: CqState, family, alpha: float | None = None, seed: int = 0) -> float:
    """Conditional entropy ``H(A|E)`` of a cq state, in bits.

    Parameters
    ----------
    state : CqState
    family : str or Family
        Renyi family, ``von-neumann`` or ``min-entropy``. ``alpha = 1`` on a
        Renyi family also returns the von Neumann value, and ``alpha = inf``
        on a sandwiched family the min-entropy.
    alpha : float, optional
        Renyi order.
    seed : int
        Seed for the random restarts of the sandwiched-up search.
    """
    family = as_family(family)
    alpha = _check_order(family, alpha)
    subs = state.subnormalized()
    rho_e = state.marginal()
    if family is Family.VON_NEUMANN or alpha == 1.0:
        return sum(_vn(r) for r in subs) - _vn(rho_e)
    if family is Family.MIN_ENTROPY or (math.isinf(alpha) and family is Family.SANDWICHED_UP):
        return _min_entropy(subs)
    if family is Family.SANDWICHED_DOWN:
        if math.isinf(alpha):
            # limit of the fixed-sigma sandwiched entropy: max-relative entropy with sigma = rho_E
            s = mpow(rho_e, -0.5)
            return -math.log2(max(np.linalg.eigvalsh(s @ r @ s).max() for r in subs))
        return _log2_sandwiched_sum(subs, rho_e, alpha) / (1.0 - alpha)
    if family is Family.PETZ_DOWN:
        s = mpow(rho_e, 1.0 - alpha)
        tr = sum(np.trace(mpow(r, alpha) @ s).real for r in subs)
        return math.log2(tr) / (1.0 - alpha)
    if family is Family.PETZ_UP:
        logs = log_eigs(sum(mpow(r, alpha) for r in subs)) / alpha
        return alpha / (1.0 - alpha) * float(_logsumexp(logs)) / LN2
    return sandwiched_up_sup(state, alpha, seed=seed)


def _min_entropy(subs) -> float:
    if len(subs) == 1:
        return 0.0
    if len(subs) != 2:
        raise DomainError("min-entropy is implemented for two labels only")
    w = np.linalg.eigvalsh(subs[0] - subs[1])
    p_guess = 0.5 * (1.0 + np.abs(w).sum())
    return -math.log2(min(p_guess, 1.0))


@dataclass(frozen=True)
class GridPoint:
    family: str
    alpha: float
    score: float
    beta: float
    q: float


@dataclass
class TightnessRow:
    point: GridPoint
    analytic: float
    oracle: float

    @property
    def abs_dev(self) -> float:
        return abs(self.analytic - self.oracle)

    def csv(self) -> str:
        p = self.point
        return ",".join(
            [p.family]
            + [repr(float(v)) for v in (p.alpha, p.score, p.beta, p.q, self.analytic, self.oracle, self.abs_dev)]
        )


@dataclass
class TightnessReport:
    rows: list
    tolerance: float = 1e-9

    @property
    def max_dev(self) -> float:
        return max((r.abs_dev for r in self.rows), default=0.0)

    @property
    def worst(self) -> TightnessRow | None:
        return max(self.rows, key=lambda r: r.abs_dev, default=None)

    @property
    def ok(self) -> bool:
        return self.max_dev <= self.tolerance

    def lines(self) -> list:
        out = ["family,alpha,score,beta,q,analytic,oracle,abs_dev"]
        out += [r.csv() for r in self.rows]
        w = self.worst
        where = "" if w is None else (
            f" at family={w.point.family} alpha={w.point.alpha} score={w.point.score!r}"
            f" beta={w.point.beta} q={w.point.q}"
        )
        status = "PASS" if self.ok else "FAIL"
        out.append(f"# {status} points={len(self.rows)} max_abs_dev={self.max_dev:.3e}{where}")
        return out


def default_grid(
    alphas: Iterable[float] = (1.1, 1.5, 2.0, 3.0, 10.0),
    betas: Iterable[float] = (1.0, 1.2, 2.0),
    qs: Iterable[float] = (0.0, 0.05, 0.25),
    n_scores: int = 11,
) -> list:
    """Grid of tightness checks; Petz orders above 2 are dropped and ``q > 0``
    is used only for the noisy-preprocessing families."""
    from .rate_functions import NPP_FAMILIES, RENYI_FAMILIES

    pts = []
    for beta in betas:
        lo, hi = score_range(beta)
        for s in np.linspace(lo, hi, n_scores):
            for fam in RENYI_FAMILIES:
                for a in alphas:
                    if fam.is_petz and a > 2:
                        continue
                    for q in qs:
                        if q > 0 and fam not in NPP_FAMILIES:
                            continue
                        pts.append(GridPoint(fam.value, float(a), float(s), float(beta), float(q)))
    return pts


def analytic_value(p: GridPoint) -> float:
    """Closed-form value compared against the oracle at a grid point.

    For ``q > 0`` this is the pre-envelope quantity, which the attack state
    saturates exactly.
    """
    from . import noisy_preprocessing as npp
    from .rate_functions import rate

    if p.q == 0:
        return float(rate(p.score, p.family, p.alpha, p.beta))
    h = npp.npp_bracket(p.family, p.alpha, p.q, overlap_g(p.score, p.beta))
    return float(1.0 + npp.prefactor(p.family, p.alpha) * math.log2(h))


def oracle_value(p: GridPoint, seed: int = 0) -> float:
    state = measure_keygen(build_attack(p.score, p.beta), p.q)
    return renyi_entropy(state, p.family, p.alpha, seed=seed)


def verify_tightness(
    points: Iterable[GridPoint], tolerance: float = 1e-9, analytic=None, seed: int = 0
) -> TightnessReport:
    """Compare closed forms with oracle entropies of the attack states.

    Failures are reported, not raised.
    """
    analytic = analytic or analytic_value
    rows = [TightnessRow(p, analytic(p), oracle_value(p, seed)) for p in points]
    return TightnessReport(rows, tolerance)


def mixture_bracket(family, alpha: float, q: float, scores: Sequence[float], probs: Sequence[float], beta: float = 1.0):
    """Pre-log quantity of a flagged mixture of attack states.

    Returns
    -------
    (float, float)
        Mixed score and ``h`` recovered from the oracle entropy via
        ``h = 2**((H - 1)/c)`` with the family prefactor ``c``.
    """
    from .noisy_preprocessing import prefactor

    family = as_family(family)
    states = [measure_keygen(build_attack(s, beta), q) for s in scores]
    H = renyi_entropy(flagged_mixture(states, probs), family, alpha)
    score = float(np.dot(probs, scores))
    return score, 2.0 ** ((H - 1.0) / prefactor(family, alpha))
