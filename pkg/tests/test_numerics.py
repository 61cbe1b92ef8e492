import itertools
import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chsh_renyi.numerics import (
    DomainError,
    binary_entropy,
    binomial_quantile_count,
    binomial_quantile_delta,
    binomial_tail,
    concave_envelope,
    kl_divergence,
    minimize_scalar,
)

# 40-digit evaluation of the defining formula
H_0018 = 0.13005884617909683274


def exact_lower_tail(k, n, p):
    """Pr[X <= k] by 50-digit summation of the pmf."""
    with mpmath.workdps(50):
        pf = mpmath.mpf(p)
        qf = 1 - pf
        return sum(math.comb(n, j) * pf**j * qf ** (n - j) for j in range(k + 1))


class TestBinaryEntropy:
    def test_known_values(self):
        assert binary_entropy(0.5) == 1.0
        assert binary_entropy(0.0) == 0.0
        assert binary_entropy(1.0) == 0.0
        np.testing.assert_allclose(binary_entropy(0.018), H_0018, rtol=1e-14)

    def test_slack_is_clamped(self):
        assert binary_entropy(-1e-13) == 0.0
        assert binary_entropy(1 + 1e-13) == 0.0

    @pytest.mark.parametrize("x", [-0.1, 1.01, float("nan")])
    def test_domain(self, x):
        with pytest.raises(DomainError):
            binary_entropy(x)

    def test_vectorized_symmetric(self):
        x = np.linspace(0, 1, 101)
        np.testing.assert_allclose(binary_entropy(x), binary_entropy(1 - x), atol=1e-15)


class TestKL:
    def test_identity(self):
        p = [0.2, 0.3, 0.5]
        assert kl_divergence(p, p) == 0.0

    def test_disjoint_support(self):
        assert kl_divergence([1, 0, 0], [0, 1, 0]) == math.inf

    def test_symbolic_value(self):
        np.testing.assert_allclose(
            kl_divergence([0.5, 0.5, 0], [0.25, 0.75, 0]), 1 - 0.5 * math.log2(3), rtol=1e-14
        )

    def test_rejects_non_distribution(self):
        with pytest.raises(DomainError):
            kl_divergence([0.5, 0.6, 0], [1 / 3] * 3)

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(st.floats(0.01, 1.0), min_size=3, max_size=3),
        st.lists(st.floats(0.01, 1.0), min_size=3, max_size=3),
    )
    def test_nonnegative(self, a, b):
        q = np.array(a) / sum(a)
        p = np.array(b) / sum(b)
        d = kl_divergence(q, p)
        assert d >= 0
        if np.allclose(q, p, atol=0, rtol=0):
            assert d == 0
        elif np.abs(q - p).max() > 1e-6:
            assert d > 0


class TestBinomialTail:
    def test_enumeration(self):
        assert binomial_tail(1, 4, 0.5, "lower") == pytest.approx(5 / 16, rel=1e-15)

    def test_degenerate(self):
        assert binomial_tail(0, 7, 0.0, "lower") == 1.0
        assert binomial_tail(5, 5, 0.3, "lower") == 1.0
        assert binomial_tail(0, 5, 0.3, "upper") == 1.0
        assert binomial_tail(1, 5, 0.0, "upper") == 0.0
        assert binomial_tail(4, 5, 1.0, "lower") == 0.0

    @pytest.mark.parametrize(
        "args", [(-1, 5, 0.5), (6, 5, 0.5), (2, 5, 1.5), (2, 5, -0.1), (1.5, 5, 0.5)]
    )
    def test_domain(self, args):
        with pytest.raises(DomainError):
            binomial_tail(*args)

    def test_bad_side(self):
        with pytest.raises(DomainError):
            binomial_tail(1, 4, 0.5, "middle")

    def test_complement(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            n = int(rng.integers(1, 10_000))
            k = int(rng.integers(0, n))
            p = float(rng.random())
            s = binomial_tail(k, n, p, "lower") + binomial_tail(k + 1, n, p, "upper")
            assert abs(s - 1) <= 1e-10

    def test_matches_exact_summation(self):
        rng = np.random.default_rng(11)
        for n in (1, 2, 17, 100, 1000):
            for _ in range(20):
                k = int(rng.integers(0, n + 1))
                p = float(rng.random())
                ref = exact_lower_tail(k, n, p)
                got = binomial_tail(k, n, p, "lower")
                if ref > 0:
                    assert abs(got - float(ref)) <= 1e-10 * float(ref)

    def test_large_n_tail(self):
        # 30-digit summation of the pmf, frozen
        assert binomial_tail(41425, 10**6, 0.83 * 13 / 256, "lower") == pytest.approx(
            1.547949088932465e-4, rel=1e-10
        )

    @pytest.mark.parametrize(
        "k,n,side,want,rel",
        [
            # 30-digit summation, near the bottom of the double range
            (1452, 10_000, "upper", 8.8563323787537116086e-283, 1e-12),
            (42376, 10**6, "lower", 3.1631260901349795962e-282, 1e-11),
        ],
    )
    def test_deep_tail(self, k, n, side, want, rel):
        assert binomial_tail(k, n, 0.05, side) == pytest.approx(want, rel=rel)


def scan_delta(n, p, eps, side):
    """Exhaustive search over candidate offsets using exact tails."""
    pf = Fraction(p)
    pmf = [math.comb(n, j) * pf**j * (1 - pf) ** (n - j) for j in range(n + 1)]
    cdf = list(itertools.accumulate(pmf))
    if side == "lower":
        # offsets p - k/n for k = 0..n; Pr[X < k] = cdf[k-1]
        best = None
        for k in range(0, n + 1):
            prob = cdf[k - 1] if k > 0 else 0
            if prob <= eps:
                best = k
        return max((n * p - best) / n, 0.0)
    for k in range(0, n + 1):
        prob = 1 - cdf[k]
        if prob <= eps:
            return max((k - n * p) / n, 0.0)
    return 0.0


class TestQuantile:
    def test_zero_probability(self):
        assert binomial_quantile_delta(1000, 0.0, 1e-3, "lower") == 0.0

    def test_scan_n100(self):
        for side in ("lower", "upper"):
            assert binomial_quantile_delta(100, 0.5, 0.5, side) == scan_delta(100, 0.5, 0.5, side)
            assert binomial_quantile_delta(100, 0.5, 1e-3 / 6, side) == scan_delta(
                100, 0.5, 1e-3 / 6, side
            )

    @pytest.mark.parametrize("n", [1, 5, 37, 200])
    def test_minimality_exhaustive(self, n):
        rng = np.random.default_rng(n)
        for _ in range(10):
            p = float(rng.random())
            eps = float(10 ** rng.uniform(-6, -0.5))
            for side in ("lower", "upper"):
                k = binomial_quantile_count(n, p, eps, side)
                if side == "lower":
                    ok = float(exact_lower_tail(k - 1, n, p)) if k > 0 else 0.0
                    assert ok <= eps
                    if k < n:
                        assert float(exact_lower_tail(k, n, p)) > eps
                else:
                    assert 1 - float(exact_lower_tail(k, n, p)) <= eps + 1e-15
                    if k > 0:
                        assert 1 - float(exact_lower_tail(k - 1, n, p)) > eps

    def test_full_n_cross_validation(self):
        n, p, eps = 10**6, 0.83 * 13 / 256, 1e-3 / 6
        k = binomial_quantile_count(n, p, eps, "lower")
        # frozen from a 30-digit summation: Pr[X <= k-1] <= eps < Pr[X <= k]
        assert k == 41429
        assert binomial_tail(k - 1, n, p) <= eps < binomial_tail(k, n, p)
        np.testing.assert_allclose(
            binomial_quantile_delta(n, p, eps, "lower"), (n * p - k) / n, rtol=0, atol=1e-18
        )

    def test_domain(self):
        with pytest.raises(DomainError):
            binomial_quantile_delta(0, 0.5, 0.1)
        with pytest.raises(DomainError):
            binomial_quantile_delta(10, 0.5, 1.0)


class TestConcaveEnvelope:
    def test_three_points(self):
        np.testing.assert_array_equal(concave_envelope([0, 1, 2], [0, -1, 0]), [0, 0, 0])

    def test_concave_unchanged(self):
        x = np.linspace(0, 1, 50)
        y = np.sqrt(x)
        np.testing.assert_allclose(concave_envelope(x, y), y, rtol=0, atol=1e-15)

    def test_constant(self):
        np.testing.assert_array_equal(concave_envelope([0, 1, 3], [2, 2, 2]), [2, 2, 2])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-10, 10), min_size=2, max_size=40))
    def test_dominates_and_concave(self, ys):
        x = np.arange(len(ys), dtype=float)
        env = concave_envelope(x, ys)
        assert np.all(env >= np.asarray(ys) - 1e-12)
        slopes = np.diff(env) / np.diff(x)
        assert np.all(np.diff(slopes) <= 1e-9)

    def test_rejects_bad_grid(self):
        with pytest.raises(DomainError):
            concave_envelope([0, 0, 1], [1, 2, 3])
        with pytest.raises(DomainError):
            concave_envelope([0, 1], [1, np.inf])


class TestMinimizeScalar:
    def test_quadratic(self):
        x, v = minimize_scalar(lambda t: (t - 1) ** 2, 0, 2, tol=1e-9)
        assert abs(x - 1) < 1e-6
        assert v < 1e-12

    def test_constant(self):
        x, v = minimize_scalar(lambda t: 3.0, -1, 1)
        assert v == 3.0 and -1 <= x <= 1

    def test_bimodal(self):
        f = lambda t: -math.exp(-((t - 0.2) ** 2) / 0.001) - 1.3 * math.exp(-((t - 0.8) ** 2) / 0.0005)
        x, v = minimize_scalar(f, 0, 1)
        grid = np.linspace(0, 1, 100_001)
        assert abs(x - grid[np.argmin([f(t) for t in grid])]) < 1e-4
        assert v <= min(f(t) for t in np.linspace(0, 1, 512))

    def test_nonfinite_is_inf(self):
        x, v = minimize_scalar(lambda t: math.nan if t < 0.5 else (t - 0.7) ** 2, 0, 1)
        assert abs(x - 0.7) < 1e-6
