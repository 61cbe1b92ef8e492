import math

import numpy as np
import pytest

from chsh_renyi import noisy_preprocessing as npp
from chsh_renyi import rate
from chsh_renyi.entropy_oracle import mixture_bracket
from chsh_renyi.numerics import DomainError
from chsh_renyi.rate_functions import bracket, overlap_g, score_range

TSIRELSON = 2 * math.sqrt(2)
FAMILIES = [("sandwiched-down", 1.5), ("sandwiched-down", 4.0), ("petz-down", 1.5), ("petz-down", 2.0), ("petz-up", 1.2), ("petz-up", 2.0)]

# DERIVED: 40-digit mpmath evaluation on the explicit flipped 2x2 blocks at g = 1/2, q = 1/10, alpha = 3/2
ORACLE_G05_Q01 = {
    "petz-up": 0.43296847474370250744,
    "sandwiched-down": 0.43946120780248647143,
    "petz-down": 0.41845824261202434765,
}


def rate_from_h(family, alpha, h):
    return 1.0 + npp.prefactor(family, alpha) * np.log2(h)


class TestBracket:
    @pytest.mark.parametrize("family", list(ORACLE_G05_Q01))
    def test_frozen_oracle_values(self, family):
        h = npp.npp_bracket(family, 1.5, 0.1, 0.5)
        assert abs(rate_from_h(family, 1.5, h) - ORACLE_G05_Q01[family]) <= 1e-12

    @pytest.mark.parametrize("family,alpha", FAMILIES)
    def test_q_zero_reduction(self, family, alpha):
        g = np.linspace(0, 0.999, 200)
        expected = 2.0 if (family, alpha) == ("petz-down", 2.0) else bracket(family, alpha, g)
        np.testing.assert_allclose(npp.npp_bracket(family, alpha, 0.0, g), expected, rtol=1e-12)

    @pytest.mark.parametrize("family,alpha", FAMILIES)
    def test_half_gives_one_bit(self, family, alpha):
        g = np.linspace(0, 1, 50)
        r = rate_from_h(family, alpha, npp.npp_bracket(family, alpha, 0.5, g))
        np.testing.assert_allclose(r, 1.0, atol=1e-12)

    @pytest.mark.parametrize("family,alpha", FAMILIES)
    def test_reflection(self, family, alpha):
        g = np.linspace(0, 1, 21)
        np.testing.assert_array_equal(
            npp.npp_bracket(family, alpha, 0.25, g), npp.npp_bracket(family, alpha, 0.75, g)
        )

    @pytest.mark.parametrize("family,alpha", FAMILIES)
    def test_positive_and_finite(self, family, alpha):
        g = np.linspace(0, 1, 101)
        for q in (0.0, 1e-9, 0.05, 0.25, 0.5 - 1e-9, 0.5):
            h = npp.npp_bracket(family, alpha, q, g)
            assert np.all(np.isfinite(h)) and np.all(h > 0)

    def test_degenerate_normalizer_is_continuous(self):
        # g = 0 with q = 1/2 is the 0/0 point; neighbours must agree
        for fam in ("petz-down", "petz-up"):
            mid = npp.npp_bracket(fam, 1.5, 0.5, 0.0)
            near = [npp.npp_bracket(fam, 1.5, 0.5 + d, 0.0) for d in (-1e-9, 1e-9)]
            near += [npp.npp_bracket(fam, 1.5, 0.5, 1e-9)]
            np.testing.assert_allclose(near, mid, rtol=1e-8)

    def test_domain(self):
        with pytest.raises(DomainError):
            npp.npp_bracket("sandwiched-up", 1.5, 0.1, 0.5)
        with pytest.raises(DomainError):
            npp.npp_bracket("petz-up", 2.5, 0.1, 0.5)
        with pytest.raises(DomainError):
            npp.npp_bracket("sandwiched-down", 1.5, 1.2, 0.5)
        with pytest.raises(DomainError):
            npp.npp_bracket("sandwiched-down", 1.5, 0.1, 1.2)

    def test_large_order_log_domain(self):
        lh = npp.npp_log2_bracket("sandwiched-down", 1e5, 0.1, np.linspace(0, 1, 11))
        assert np.all(np.isfinite(lh))
        # q = 0 at g = 0 equals log2 of 2^(alpha-1)
        assert npp.npp_log2_bracket("sandwiched-down", 1e5, 0.0, 0.0) == pytest.approx(1e5 - 1, rel=1e-15)


class TestEnvelope:
    @pytest.mark.parametrize("q", [0.0, 0.05, 0.25])
    @pytest.mark.parametrize("family,alpha", FAMILIES)
    def test_envelope_properties(self, family, alpha, q):
        br = npp.build_bracket(family, alpha, q)
        assert np.all(br.envelope >= br.grid - 1e-15)
        assert np.diff(br.envelope, 2).max() <= 1e-12
        # nonincreasing in the score
        assert np.diff(br.envelope).max() <= 1e-8
        # the floor is never lifted
        assert br.envelope[0] == br.grid[0]

    @pytest.mark.parametrize("family,alpha", FAMILIES)
    def test_near_concavity_recorded(self, family, alpha):
        # empirical: the sampled h has essentially no positive curvature
        for q in (0.05, 0.25):
            br = npp.build_bracket(family, alpha, q)
            assert np.diff(br.grid, 2).max() <= 1e-8

    def test_grid_convergence(self):
        s = np.linspace(2, TSIRELSON, 333)
        for family, alpha in FAMILIES:
            a = npp.build_bracket(family, alpha, 0.05)(s)
            b = npp.build_bracket(family, alpha, 0.05, points=4001)(s)
            np.testing.assert_allclose(a, b, rtol=1e-10)

    def test_cached(self):
        assert npp.build_bracket("petz-up", 1.5, 0.125) is npp.build_bracket("petz-up", 1.5, 0.875)

    def test_grid_immutable(self):
        br = npp.build_bracket("petz-up", 1.5, 0.1)
        with pytest.raises(ValueError):
            br.grid[0] = 0.0

    def test_small_beta_rejected(self):
        with pytest.raises(DomainError):
            npp.build_bracket("petz-up", 1.5, 0.1, beta=0.5)

    def test_huge_order_rejected(self):
        with pytest.raises(DomainError):
            npp.build_bracket("sandwiched-down", 1e6, 0.1)

    def test_mixture_realizes_chord(self):
        # a flagged mixture of two attack states lies on the chord of h
        fam, a, q = "sandwiched-down", 1.5, 0.1
        s, h = mixture_bracket(fam, a, q, [2.1, 2.7], [0.4, 0.6])
        h0, h1 = (npp.npp_bracket(fam, a, q, overlap_g(x)) for x in (2.1, 2.7))
        assert s == pytest.approx(0.4 * 2.1 + 0.6 * 2.7)
        assert h == pytest.approx(0.4 * h0 + 0.6 * h1, rel=1e-10)


class TestNppRate:
    @pytest.mark.parametrize("family,alpha", FAMILIES)
    def test_q_zero_matches_rate(self, family, alpha):
        s = np.linspace(2, TSIRELSON, 500)
        br_rate = np.clip(rate_from_h(family, alpha, npp.build_bracket(family, alpha, 0.0)(s)), 0, 1)
        np.testing.assert_allclose(br_rate, rate(s, family, alpha), atol=1e-10)

    @pytest.mark.parametrize("family,alpha", FAMILIES)
    def test_monotone_and_floor(self, family, alpha):
        for q in (0.05, 0.25):
            s = np.linspace(2, TSIRELSON, 400)
            r = npp.npp_rate(s, family, alpha, q)
            assert np.all(np.diff(r) >= -1e-12)
            floor = rate_from_h(family, alpha, npp.npp_bracket(family, alpha, q, 0.0))
            assert np.all(r >= floor - 1e-12)
            assert r[0] == pytest.approx(floor, abs=1e-12)

    def test_dispatch_from_rate(self):
        assert rate(2.5, "petz-up", 1.5, npp_q=0.1) == npp.npp_rate(2.5, "petz-up", 1.5, 0.1)

    def test_half(self):
        for family, alpha in FAMILIES:
            assert npp.npp_rate(2.3, family, alpha, 0.5) == pytest.approx(1.0, abs=1e-12)

    def test_tsirelson(self):
        for family, alpha in FAMILIES:
            assert npp.npp_rate(TSIRELSON, family, alpha, 0.2) == pytest.approx(1.0, abs=1e-12)

    def test_other_beta(self):
        lo, hi = score_range(2.0)
        r = npp.npp_rate(np.linspace(lo, hi, 50), "sandwiched-down", 2.0, 0.1, beta=2.0)
        assert np.all(np.diff(r) >= -1e-12) and 0 <= r.min() and r.max() <= 1

    def test_large_order_finite(self):
        r = npp.npp_rate(np.linspace(2, TSIRELSON, 30), "sandwiched-down", 800.0, 0.1)
        assert np.all(np.isfinite(r)) and np.all((0 <= r) & (r <= 1))

    def test_sd_petz_up_relation_measured(self):
        # the two agree at q = 0; for q > 0 the gap is only measured
        s = np.linspace(2, TSIRELSON, 50)
        gap = npp.npp_rate(s, "sandwiched-down", 1.5, 0.1) - npp.npp_rate(s, "petz-up", 1.5, 0.1)
        assert np.all(np.isfinite(gap))
