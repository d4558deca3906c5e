import math

import numpy as np
import pytest

from fa1f import (
    ConditionedSampler,
    EquilibriumSampler,
    Parameters,
    Volume,
    estimate_dirichlet,
    estimate_mean,
    estimate_variance,
    fit_exponent,
    gap_upper_bound,
    tau0_lower_bound,
)
from fa1f.errors import DegenerateEstimateError, FitError, PreconditionError
from fa1f.exact import build_generator, exact_expected_tau0, exact_gap, exact_moments
from fa1f.montecarlo import Estimate, ScalingSeries, generic_dirichlet_summands
from fa1f.testfunctions import (
    TestFunction,
    cluster_count_function,
    origin_function,
    window_vacancy_function,
)
from fa1f.streams import substream


def constant_function(volume, value=1.25):
    return TestFunction(
        "const",
        volume,
        np.array([], dtype=np.int64),
        lambda cfg: value,
        batch_fn=lambda occ: np.full(len(occ), value),
    )


class TestEstimateType:
    def test_validation(self):
        with pytest.raises(ValueError):
            Estimate(1.0, 0.1, 1)
        with pytest.raises(ValueError):
            Estimate(1.0, -0.1, 10)

    def test_stderr_scales_like_inverse_root_n(self, rng):
        vol = Volume.box_centered(1, 1)
        f = origin_function(vol)
        sampler = EquilibriumSampler(vol, 0.3)
        small = estimate_mean(f, sampler, 2000, substream(3, 0))
        big = estimate_mean(f, sampler, 32000, substream(3, 1))
        ratio = small.stderr / big.stderr
        assert abs(ratio - 4.0) < 1.0


class TestEstimateMean:
    def test_origin_mean(self, rng):
        vol = Volume.box_centered(1, 2)
        q = 0.3
        est = estimate_mean(origin_function(vol), EquilibriumSampler(vol, q), 20000, rng)
        assert abs(est.mean - (1 - q)) < 3 * est.stderr

    def test_constant(self, rng):
        vol = Volume.box((3,))
        est = estimate_mean(constant_function(vol), EquilibriumSampler(vol, 0.4), 500, rng)
        assert est.mean == 1.25 and est.stderr == 0.0

    def test_cluster_mean_matches_exact(self, rng):
        vol = Volume.box((3,))
        q = 0.3
        f = cluster_count_function(vol, 3)
        space, _ = build_generator(vol, Parameters(q=q, ell=1))
        exact = exact_moments(f, space)
        est = estimate_mean(f, EquilibriumSampler(vol, q), 20000, rng)
        assert abs(est.mean - exact.mean) < 3 * est.stderr


class TestEstimateVariance:
    def test_constant(self, rng):
        vol = Volume.box((3,))
        est = estimate_variance(constant_function(vol), EquilibriumSampler(vol, 0.4), 500, rng)
        assert est.mean == 0.0 and est.stderr == 0.0

    def test_origin_variance(self, rng):
        vol = Volume.box_centered(1, 1)
        q = 0.3
        est = estimate_variance(origin_function(vol), EquilibriumSampler(vol, q), 20000, rng)
        assert abs(est.mean - q * (1 - q)) < 3 * est.stderr

    def test_cluster_variance_matches_exact(self, rng):
        vol = Volume.box((3, 3))
        q = 0.3
        f = cluster_count_function(vol, 3)
        space, _ = build_generator(vol, Parameters(q=q, d=2, ell=3))
        exact = exact_moments(f, space)
        est = estimate_variance(f, EquilibriumSampler(vol, q), 20000, rng)
        assert abs(est.mean - exact.variance) < 3 * est.stderr


class TestEstimateDirichlet:
    def test_constant(self, rng):
        vol = Volume.box((3,))
        est = estimate_dirichlet(
            constant_function(vol), Parameters(q=0.4, ell=1), vol, 500, rng
        )
        assert est.mean == 0.0

    def test_origin_one_dimensional_closed_form(self, rng):
        q = 0.3
        vol = Volume.box_centered(1, 1)
        est = estimate_dirichlet(
            origin_function(vol), Parameters(q=q, ell=1), vol, 20000, rng
        )
        expected = q * (1 - q) * (1 - (1 - q) ** 2)
        assert abs(est.mean - expected) < 3 * max(est.stderr, 1e-12)

    def test_origin_three_dimensional(self, rng):
        # closed form q(1-q)(1-(1-q)^6); bounded by 2 d q^2
        q = 0.15
        d = 3
        vol = Volume.box_centered(1, d)
        est = estimate_dirichlet(
            origin_function(vol), Parameters(q=q, d=d, ell=1), vol, 30000, rng
        )
        expected = q * (1 - q) * (1 - (1 - q) ** (2 * d))
        assert abs(est.mean - expected) < 3 * est.stderr
        assert est.mean <= 2 * d * q**2

    def test_generic_path_matches_fast_path(self, rng):
        vol = Volume.box((4, 4), lo=(-1, -1))
        f = cluster_count_function(vol, 2)
        occ = EquilibriumSampler(vol, 0.35).sample_batch(rng, 100)
        assert np.array_equal(
            generic_dirichlet_summands(f, occ), f.dirichlet_batch_fn(occ)
        )


class TestGapUpperBound:
    def test_dominates_exact_gap_on_ring(self):
        vol = Volume.torus((4,))
        q = 0.3
        p = Parameters(q=q, d=1, ell=1)
        space, gen = build_generator(vol, p, conditioned=True)
        gap = exact_gap(space, gen)
        for i, f in enumerate(
            (cluster_count_function(vol, 2), origin_function(vol), window_vacancy_function(vol, 2))
        ):
            est = gap_upper_bound(f, p, vol, 20000, substream(11, i), conditioned=True)
            assert est.mean >= gap - 3 * est.stderr, f.label

    def test_scale_invariance(self):
        vol = Volume.torus((4,))
        p = Parameters(q=0.3, d=1, ell=1)
        f = origin_function(vol)
        doubled = TestFunction(
            "2origin",
            vol,
            f.support,
            lambda cfg: 2.0 * f(cfg),
            batch_fn=lambda occ: 2.0 * f.value_batch(occ),
        )
        a = gap_upper_bound(f, p, vol, 5000, substream(21))
        b = gap_upper_bound(doubled, p, vol, 5000, substream(21))
        assert a.mean == pytest.approx(b.mean, rel=1e-12)

    def test_degenerate_variance(self):
        # the window-vacancy indicator is constant under the conditioned law
        vol = Volume.torus((4,))
        p = Parameters(q=0.3, d=1, ell=1)
        f = window_vacancy_function(vol, 4)
        with pytest.raises(DegenerateEstimateError):
            gap_upper_bound(f, p, vol, 2000, substream(5), conditioned=True)


class TestTau0LowerBound:
    def test_requires_vanishing_at_empty_origin(self, rng):
        vol = Volume.box_centered(1, 1)
        with pytest.raises(PreconditionError):
            tau0_lower_bound(constant_function(vol), Parameters(q=0.3, ell=1), vol, 2000, rng)

    def test_bounded_by_exact_on_ring(self):
        vol = Volume.torus((4,))
        q = 0.3
        p = Parameters(q=q, d=1, ell=1)
        tau0 = exact_expected_tau0(vol, p)
        f = origin_function(vol)
        est = tau0_lower_bound(f, p, vol, 30000, substream(31), conditioned=True)
        assert est.mean <= tau0 + 3 * est.stderr
        # and the bound is informative (within a factor of a few)
        assert est.mean > 0.5 * tau0

    def test_degenerate_dirichlet(self):
        # an isolated origin site never flips
        vol = Volume.graph(1, [])
        f = origin_function(vol)
        with pytest.raises(DegenerateEstimateError):
            tau0_lower_bound(f, Parameters(q=0.3, ell=1), vol, 2000, substream(7))


class TestTentClosedForm:
    # closed forms from the geometric law of the nearest-vacancy distance:
    # independent of both the estimator path and the exact-enumeration module
    @pytest.mark.parametrize("q,ell", [(0.3, 2), (0.2, 3), (0.4, 1)])
    def test_mean_and_dirichlet_match_oracle(self, q, ell):
        from conftest import exact_tent_mean, exact_tent_dirichlet
        from fa1f.testfunctions import tent_function

        vol = Volume.box_centered(2 * ell, 1)
        f = tent_function(vol, ell)
        m = estimate_mean(f, EquilibriumSampler(vol, q), 20000, substream(61, ell))
        d = estimate_dirichlet(
            f, Parameters(q=q, d=1, ell=ell), vol, 20000, substream(62, ell)
        )
        assert abs(m.mean - exact_tent_mean(q, ell)) < 3 * m.stderr
        assert abs(d.mean - exact_tent_dirichlet(q, ell)) < 3 * d.stderr

    def test_oracle_against_exact_enumeration(self):
        # the closed form itself cross-checked against full summation
        from conftest import exact_tent_mean, exact_tent_dirichlet
        from fa1f.exact import build_generator, exact_moments
        from fa1f.testfunctions import tent_function

        q, ell = 0.35, 1
        vol = Volume.box_centered(2, 1)  # 5 sites: enumerable
        f = tent_function(vol, ell)
        space, _ = build_generator(vol, Parameters(q=q, d=1, ell=ell))
        m = exact_moments(f, space)
        assert m.mean == pytest.approx(exact_tent_mean(q, ell), abs=1e-12)
        assert m.dirichlet == pytest.approx(exact_tent_dirichlet(q, ell), abs=1e-12)


class TestRelabelingInvariance:
    def test_graph_relabeling(self):
        # the same ring with permuted vertex labels gives compatible estimates
        q = 0.3
        n = 6
        perm = [3, 5, 0, 2, 4, 1]
        natural = Volume.graph(n, [(i, (i + 1) % n) for i in range(n)])
        permuted = Volume.graph(
            n, [(perm[i], perm[(i + 1) % n]) for i in range(n)]
        )

        def vacancies(volume):
            return TestFunction(
                "vacancies",
                volume,
                np.arange(n),
                lambda cfg: float((cfg.occupancy == 0).sum()),
                batch_fn=lambda occ: (occ == 0).sum(axis=1).astype(float),
            )

        p = Parameters(q=q, ell=1)
        ests = []
        for i, vol in enumerate((natural, permuted)):
            sampler = ConditionedSampler(vol, q)
            mean = estimate_mean(vacancies(vol), sampler, 20000, substream(17, i))
            dir_ = estimate_dirichlet(
                vacancies(vol), p, vol, 20000, substream(18, i), conditioned=True
            )
            ests.append((mean, dir_))
        (m1, d1), (m2, d2) = ests
        assert abs(m1.mean - m2.mean) < 3 * math.hypot(m1.stderr, m2.stderr)
        assert abs(d1.mean - d2.mean) < 3 * math.hypot(d1.stderr, d2.stderr)


class TestFitExponent:
    def test_pure_power(self):
        qs = [0.2, 0.1, 0.05, 0.02]
        fit = fit_exponent([(q, q**2) for q in qs])
        assert fit.slope == pytest.approx(2.0, abs=1e-12)
        assert fit.r2 == pytest.approx(1.0)
        assert fit.slope_err == pytest.approx(0.0, abs=1e-9)

    def test_prefactor_invariance(self):
        qs = [0.2, 0.1, 0.05]
        fit = fit_exponent([(q, 5 * q**3) for q in qs])
        assert fit.slope == pytest.approx(3.0, abs=1e-12)

    def test_log_corrected_series(self):
        # evaluate-and-fit: the slope of q^2/log(1/q) sits above 2 because
        # d log v / d log q = 2 + 1/log(1/q); q^2*log(1/q) sits below 2
        qs = np.geomspace(0.1, 0.01, 6)
        over = fit_exponent([(q, q**2 / math.log(1 / q)) for q in qs])
        assert 2.0 < over.slope < 2.5
        under = fit_exponent([(q, q**2 * math.log(1 / q)) for q in qs])
        assert 1.5 < under.slope < 2.0

    def test_errors(self):
        with pytest.raises(ValueError):
            fit_exponent([(0.2, 1.0), (0.1, -1.0), (0.05, 1.0)])
        with pytest.raises(FitError):
            fit_exponent([(0.2, 1.0), (0.1, 0.5)])
        with pytest.raises(ValueError):
            fit_exponent([(0.2, 1.0), (0.2, 1.0), (0.1, 0.5)])

    def test_accepts_estimates(self):
        pts = [(q, Estimate(q**2, 0.01 * q**2, 100)) for q in (0.2, 0.1, 0.05)]
        fit = fit_exponent(pts)
        assert fit.slope == pytest.approx(2.0, abs=1e-9)

    def test_scaling_series_invariants(self):
        with pytest.raises(ValueError):
            ScalingSeries(
                points=((0.2, Estimate(1, 0.1, 10)), (0.3, Estimate(1, 0.1, 10))),
                slope=1.0,
                slope_err=0.0,
                r2=1.0,
            )
