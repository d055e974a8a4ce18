import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from tmsense.errors import (
    DimensionMismatch,
    InvalidParameter,
    NonPositiveCovariance,
    SingularCovariance,
    UninformativeMeasurement,
)
from tmsense.fisher import bound_for_spec, run_qfim
from tmsense.measurement import (
    DenseNormal,
    EqualPhaseFamily,
    HomodyneConfig,
    LowRankNormal,
    SampleBatch,
    classical_fisher,
    fit_mle,
    identifiable_interval,
    local_phases,
    log_likelihood,
    mle,
    optimize_lo,
    outcome_model,
    phi_opt,
    run_experiment,
    sample,
)
from tmsense.probes import ProbeSpec

specs = st.builds(
    lambda scheme, M, R_t, nbar, eta: ProbeSpec(scheme, M, R_t=1 if scheme == "TS" else R_t, nbar=nbar, eta=eta),
    st.sampled_from(["TS", "TM", "SQL"]),
    st.integers(1, 3),
    st.integers(1, 4),
    st.floats(0.1, 3.0),
    st.floats(0.05, 1.0),
)


def random_setting(spec, seed):
    rng = np.random.default_rng(seed)
    return rng.uniform(-1, 1, spec.M), HomodyneConfig(rng.uniform(0, 2 * np.pi, spec.n_modes), seed)


class TestPhiOpt:
    def test_reference(self):
        assert phi_opt(10, 2, 2) == pytest.approx(math.asin(1 / 81) / 2, rel=1e-14)

    def test_limits(self):
        # asin approaches 1 like a square root, so the gap to pi/4 is O(sqrt(nbar))
        assert phi_opt(1, 1, 1e-14) == pytest.approx(math.pi / 4, abs=1e-6)
        assert phi_opt(10**6, 10, 10) < 1e-7

    def test_domain(self):
        with pytest.raises(InvalidParameter):
            phi_opt(1, 1, 0.0)

    def test_local_phases(self):
        spec = ProbeSpec("TM", 4, R_t=10, nbar=2.0)
        ph = local_phases(spec, C=0.3, D=0.1)
        x = spec.photons_per_run
        assert ph.mean() == pytest.approx(phi_opt(10, 4, 2) + 0.3 / x)
        assert np.mean((ph - ph.mean()) ** 2) == pytest.approx(0.1 / x)


class TestConfig:
    def test_wraps_phases(self):
        cfg = HomodyneConfig([-0.5, 7.0])
        np.testing.assert_allclose(cfg.lo_phases, [2 * np.pi - 0.5, 7.0 - 2 * np.pi])

    def test_rejects_nonfinite(self):
        with pytest.raises(InvalidParameter):
            HomodyneConfig([np.nan])

    def test_rejects_negative_seed(self):
        with pytest.raises(InvalidParameter):
            HomodyneConfig([0.0], seed=-1)


class TestOutcomeModel:
    def test_coherent_marginal(self):
        spec = ProbeSpec("SQL", 2, nbar=1.7)
        m = outcome_model(spec, [0.0, 0.0], HomodyneConfig.uniform(2, 0.0), method="dense")
        np.testing.assert_allclose(m.mean, np.sqrt(2 * 1.7))
        np.testing.assert_allclose(m.cov, 0.5 * np.eye(2), atol=1e-14)

    @pytest.mark.parametrize("method", ["dense", "lowrank"])
    def test_squeezed_probe_has_zero_mean(self, method):
        spec = ProbeSpec("TM", 2, R_t=3, eta=0.7)
        ph, cfg = random_setting(spec, 1)
        assert np.all(outcome_model(spec, ph, cfg, method).mean == 0)

    @settings(max_examples=20, deadline=None)
    @given(spec=specs, seed=st.integers(0, 2**32 - 1))
    def test_cov_psd_and_routes_agree(self, spec, seed):
        ph, cfg = random_setting(spec, seed)
        dense = outcome_model(spec, ph, cfg, "dense")
        low = outcome_model(spec, ph, cfg, "lowrank")
        np.testing.assert_allclose(dense.cov, dense.cov.T)
        assert np.linalg.eigvalsh(dense.cov).min() > 0
        np.testing.assert_allclose(low.cov, dense.cov, atol=1e-10)
        np.testing.assert_allclose(low.mean, dense.mean, atol=1e-10)

    def test_dimension_checks(self):
        spec = ProbeSpec("TM", 2, R_t=2)
        with pytest.raises(DimensionMismatch):
            outcome_model(spec, [0.0], HomodyneConfig.uniform(4))
        with pytest.raises(DimensionMismatch):
            outcome_model(spec, [0.0, 0.0], HomodyneConfig.uniform(2))

    def test_unknown_method(self):
        spec = ProbeSpec("TM", 1)
        with pytest.raises(InvalidParameter):
            outcome_model(spec, [0.0], HomodyneConfig.uniform(1), method="svd")


class TestSampling:
    def test_vacuum_variance(self):
        spec = ProbeSpec("SQL", 3, nbar=0.1)
        model = outcome_model(spec, np.zeros(3), HomodyneConfig.uniform(3, np.pi / 2, seed=7))
        batch = sample(model, 100_000)
        var = batch.outcomes.var(axis=0, ddof=1)
        assert np.all((var > 0.49) & (var < 0.51))

    def test_deterministic(self):
        spec = ProbeSpec("TM", 2, R_t=4)
        model = outcome_model(spec, [0.1, 0.2], HomodyneConfig.uniform(8, seed=11))
        np.testing.assert_array_equal(sample(model, 50).outcomes, sample(model, 50).outcomes)
        assert not np.array_equal(sample(model, 50).outcomes, sample(model, 50, seed=12).outcomes)

    def test_sample_covariance_matches_model(self):
        spec = ProbeSpec("TM", 2, R_t=2, nbar=1.0, eta=0.8)
        ph, cfg = random_setting(spec, 5)
        model = outcome_model(spec, ph, cfg)
        Y = sample(model, 200_000).outcomes
        np.testing.assert_allclose(np.cov(Y.T), model.cov, atol=0.05 * np.abs(model.cov).max())

    @pytest.mark.parametrize(
        "law",
        [
            DenseNormal(np.array([1.0, 2.0]), np.diag([0.5, 0.0])),
            LowRankNormal(np.array([1.0, 2.0]), np.array([[0.0], [1.0]]), np.array([[-0.5]])),
        ],
    )
    def test_degenerate_direction_is_constant(self, law):
        Y = law.sample(np.random.default_rng(0), 1000)
        np.testing.assert_allclose(Y[:, 1], 2.0, atol=1e-12)
        assert Y[:, 0].std() > 0.5

    @pytest.mark.parametrize(
        "law",
        [
            DenseNormal(np.zeros(2), np.diag([1.0, -1.0])),
            LowRankNormal(np.zeros(2), np.array([[1.0], [0.0]]), np.array([[-2.0]])),
        ],
    )
    def test_non_psd_rejected(self, law):
        with pytest.raises(NonPositiveCovariance):
            law.sample(np.random.default_rng(0), 3)

    def test_batch_validation(self):
        spec = ProbeSpec("TM", 2)
        with pytest.raises(DimensionMismatch):
            SampleBatch(np.zeros((3, 3)), spec, np.zeros(2))
        with pytest.raises(InvalidParameter):
            SampleBatch(np.array([[np.inf, 0.0]]), spec, np.zeros(2))
        with pytest.raises(InvalidParameter):
            sample(outcome_model(spec, [0, 0], HomodyneConfig.uniform(2)), 0)


class TestLikelihood:
    @settings(max_examples=15, deadline=None)
    @given(spec=specs, seed=st.integers(0, 2**32 - 1), phi=st.floats(-1.5, 1.5))
    def test_matches_dense_density(self, spec, seed, phi):
        _, cfg = random_setting(spec, seed)
        batch = sample(outcome_model(spec, np.full(spec.M, 0.2), cfg), 7)
        ref = outcome_model(spec, np.full(spec.M, phi), cfg, "dense").law.logpdf_sum(batch.outcomes)
        assert log_likelihood(phi, batch, cfg) == pytest.approx(ref, rel=1e-9, abs=1e-9)

    def test_batches_add(self):
        spec = ProbeSpec("TM", 2, R_t=3)
        cfg = HomodyneConfig.uniform(6, seed=3)
        model = outcome_model(spec, [0.05, 0.05], cfg)
        a, b = sample(model, 20, seed=1), sample(model, 30, seed=2)
        total = log_likelihood(0.04, a.concat(b), cfg)
        assert total == pytest.approx(log_likelihood(0.04, a, cfg) + log_likelihood(0.04, b, cfg), rel=1e-12)

    @settings(max_examples=15, deadline=None)
    @given(spec=specs, seed=st.integers(0, 2**32 - 1), phi=st.floats(-1.5, 1.5))
    def test_score_is_derivative(self, spec, seed, phi):
        _, cfg = random_setting(spec, seed)
        fam = EqualPhaseFamily(spec, cfg)
        st_ = fam.stats(sample(outcome_model(spec, np.zeros(spec.M), cfg), 5).outcomes)
        h = 1e-6
        fd = (fam.loglik(phi + h, st_) - fam.loglik(phi - h, st_)) / (2 * h)
        assert fam.score(phi, st_)[0] == pytest.approx(fd[0], rel=1e-5, abs=1e-5)

    def test_unbiased_score_at_operating_point(self):
        spec = ProbeSpec("TM", 2, R_t=5, nbar=2.0)
        cfg = optimize_lo(spec, seed=21)
        p = phi_opt(5, 2, 2.0)
        fam = EqualPhaseFamily(spec, cfg)
        Y = sample(outcome_model(spec, [p, p], cfg), 10_000).outcomes
        scores = fam.score(p, fam.stats(Y[:, None, :]))
        assert abs(scores.mean()) < 3 * scores.std(ddof=1) / np.sqrt(scores.size)

    def test_singular_covariance_names_direction(self):
        law = LowRankNormal(np.zeros(2), np.array([[1.0], [0.0]]), np.array([[-0.5]]))
        with pytest.raises(SingularCovariance) as info:
            law.logpdf_sum(np.zeros((1, 2)))
        np.testing.assert_allclose(np.abs(info.value.direction), [1.0, 0.0], atol=1e-12)
        assert "direction" in str(info.value)
        with pytest.raises(SingularCovariance):
            DenseNormal(np.zeros(2), np.diag([1.0, 0.0])).logpdf_sum(np.zeros((1, 2)))

    def test_empty_batch_rejected(self):
        spec = ProbeSpec("TM", 1)
        with pytest.raises(InvalidParameter):
            log_likelihood(0.0, SampleBatch(np.zeros((0, 1)), spec, np.zeros(1)), HomodyneConfig.uniform(1))

    def test_lo_on_squeezed_axis_is_uninformative(self):
        # M = R_t = 1, no loss: at phi = 0 the LO reads the squeezed quadrature exactly
        spec = ProbeSpec("TM", 1, nbar=1.0)
        cfg = HomodyneConfig.uniform(1, np.pi / 2)
        assert classical_fisher(spec, [0.0], cfg) < 1e-6
        fam = EqualPhaseFamily(spec, cfg)
        with pytest.raises(UninformativeMeasurement):
            identifiable_interval(fam, 0.0, 0.1)
        bad = HomodyneConfig.uniform(1, np.pi / 2 + phi_opt(1, 1, 1.0))
        with pytest.raises(UninformativeMeasurement):
            run_experiment(spec, [phi_opt(1, 1, 1.0)], 100, bad)


class TestMLE:
    def test_large_batch_concentrates(self):
        spec = ProbeSpec("TM", 2, R_t=2, nbar=1.0)
        cfg = optimize_lo(spec, seed=5)
        p = phi_opt(2, 2, 1.0)
        batch = sample(outcome_model(spec, [p, p], cfg), 1_000_000)
        crb = 1.0 / classical_fisher(spec, [p, p], cfg)
        assert abs(mle(batch, cfg) - p) < 3 * math.sqrt(crb / 1e6)

    def test_argmax_precision(self):
        spec = ProbeSpec("TS", 2, nbar=1.0)
        cfg = optimize_lo(spec, seed=9)
        p = phi_opt(1, 2, 1.0)
        batch = sample(outcome_model(spec, [p, p], cfg), 400)
        tol = 1e-11
        est = mle(batch, cfg, tol=tol)
        fam = EqualPhaseFamily(spec, cfg)
        st_ = fam.stats(batch.outcomes)
        # the score changes sign across the returned point
        assert fam.score(est - 10 * tol, st_)[0] > 0 > fam.score(est + 10 * tol, st_)[0]
        ref = minimize_scalar(lambda x: -log_likelihood(x, batch, cfg), bracket=(est - 1e-3, est + 1e-3), tol=1e-12)
        assert abs(est - ref.x) < 1e-6

    def test_consistency_off_operating_point(self):
        spec0 = ProbeSpec("TM", 2, R_t=5, nbar=2.0)
        truth = local_phases(spec0, C=0.3)
        cfg = optimize_lo(spec0, seed=2)
        # the default window shrinks like R_r^-1/2 and would exclude this fixed offset
        search = identifiable_interval(EqualPhaseFamily(spec0, cfg), phi_opt(5, 2, 2.0), 0.05)
        assert search[0] < truth.mean() < search[1]
        rms = []
        for R_r in (100, 1_000, 10_000):
            spec = spec0.replace(R_r=R_r)
            res = run_experiment(spec, truth, 200, cfg, seed=17, search=search)
            rms.append(np.sqrt(np.mean((res.estimates - truth.mean()) ** 2)))
        assert rms[0] > rms[1] > rms[2]
        assert rms[2] < 0.2 * rms[0]

    @pytest.mark.filterwarnings("ignore:likelihood maximum on the search boundary")
    def test_single_row(self):
        spec = ProbeSpec("TM", 2, R_t=3)
        cfg = optimize_lo(spec)
        batch = sample(outcome_model(spec, local_phases(spec), cfg), 1)
        assert np.isfinite(mle(batch, cfg))

    def test_boundary_flagged(self):
        spec = ProbeSpec("TS", 2, nbar=1.0)
        cfg = optimize_lo(spec)
        p = phi_opt(1, 2, 1.0)
        batch = sample(outcome_model(spec, [p, p], cfg), 500)
        fit = fit_mle(batch, cfg, search=(p + 0.1, p + 0.2))
        assert fit.on_boundary[0] and fit.estimates[0] == pytest.approx(p + 0.1)
        with pytest.warns(RuntimeWarning, match="boundary"):
            mle(batch, cfg, search=(p + 0.1, p + 0.2))

    def test_bad_search(self):
        spec = ProbeSpec("TS", 1)
        cfg = HomodyneConfig.uniform(1)
        batch = sample(outcome_model(spec, [0.1], cfg), 5)
        with pytest.raises(InvalidParameter):
            mle(batch, cfg, search=(0.2, 0.1))
        with pytest.raises(InvalidParameter):
            mle(batch, cfg, search=(0.0, 0.2), tol=0.0)


class TestClassicalFisher:
    def test_coherent_orthogonal_lo(self):
        spec = ProbeSpec("SQL", 2, R_t=3, nbar=1.5)
        phi = 0.3
        cfg = HomodyneConfig.uniform(6, phi + np.pi / 2)
        assert classical_fisher(spec, [phi, phi], cfg) == pytest.approx(4 * 3 * 2 * 1.5, rel=1e-8)

    @pytest.mark.parametrize("R_t,M,nbar", [(1, 2, 2.0), (4, 2, 2.0), (10, 2, 2.0), (5, 4, 2.0)])
    def test_saturation_at_operating_point(self, R_t, M, nbar):
        spec = ProbeSpec("TM", M, R_t=R_t, nbar=nbar)
        cfg = optimize_lo(spec)
        p = phi_opt(R_t, M, nbar)
        x = R_t * M * nbar
        assert classical_fisher(spec, np.full(M, p), cfg) == pytest.approx(8 * (x**2 + x), rel=0.05)

    @settings(max_examples=20, deadline=None)
    @given(spec=specs, seed=st.integers(0, 2**32 - 1))
    def test_information_inequality(self, spec, seed):
        ph, cfg = random_setting(spec, seed)
        f = classical_fisher(spec, ph, cfg)
        assert 0 <= f <= run_qfim(spec).scalar() * (1 + 1e-6)

    @settings(max_examples=10, deadline=None)
    @given(spec=specs, seed=st.integers(0, 2**32 - 1))
    def test_dense_route_agrees(self, spec, seed):
        ph, cfg = random_setting(spec, seed)
        assert classical_fisher(spec, ph, cfg, "dense") == pytest.approx(
            classical_fisher(spec, ph, cfg), rel=1e-5, abs=1e-6
        )

    @settings(max_examples=10, deadline=None)
    @given(spec=specs, seed=st.integers(0, 2**32 - 1), phi=st.floats(-1, 1))
    def test_analytic_derivative_agrees(self, spec, seed, phi):
        _, cfg = random_setting(spec, seed)
        fd = classical_fisher(spec, np.full(spec.M, phi), cfg)
        assert EqualPhaseFamily(spec, cfg).fisher(phi) == pytest.approx(fd, rel=1e-6, abs=1e-6)

    def test_lossy_saturation_is_impossible(self):
        spec = ProbeSpec("TM", 2, R_t=5, nbar=2.0, eta=0.6)
        cfg = optimize_lo(spec)
        p = phi_opt(5, 2, 2.0)
        assert classical_fisher(spec, [p, p], cfg) < run_qfim(spec).scalar()


class TestExperiment:
    def test_lo_policy_saturates(self):
        for R_t in (1, 4, 10):
            spec = ProbeSpec("TM", 2, R_t=R_t, nbar=2.0)
            res = run_experiment(spec, local_phases(spec), 100, seed=1)
            assert res.cfi_at_truth == pytest.approx(res.qfi_scalar, rel=0.05)
            assert 0 <= res.lo_offset < np.pi

    def test_deterministic_and_schedule_free(self):
        spec = ProbeSpec("TM", 2, R_t=6, R_r=4)
        ph = local_phases(spec, 0.3, 0.1)
        a = run_experiment(spec, ph, 150, seed=42, workers=1)
        b = run_experiment(spec, ph, 150, seed=42, workers=3)
        np.testing.assert_array_equal(a.estimates, b.estimates)
        assert a.to_json() == b.to_json()
        c = run_experiment(spec, ph, 150, seed=43, workers=1)
        assert not np.array_equal(a.estimates, c.estimates)

    def test_env_worker_cap(self, monkeypatch):
        from tmsense.measurement import default_workers

        monkeypatch.setenv("TMSENSE_THREADS", "2")
        assert default_workers() == 2
        monkeypatch.setenv("TMSENSE_THREADS", "0")
        assert default_workers() >= 1
        monkeypatch.setenv("TMSENSE_THREADS", "-1")
        with pytest.raises(InvalidParameter):
            default_workers()

    def test_result_fields(self):
        spec = ProbeSpec("TS", 2, R_r=50)
        res = run_experiment(spec, local_phases(spec), 100, seed=0)
        assert res.n_trials == 100
        assert res.sample_variance >= 0
        assert res.cfi_at_truth <= res.qfi_scalar * (1 + 1e-6)
        assert res.crb == pytest.approx(1 / (50 * res.cfi_at_truth))
        assert res.qcrb == pytest.approx(bound_for_spec(spec).qcrb, rel=1e-12)
        d = res.to_dict()
        assert d["spec"]["R_r"] == 50 and len(d["estimates"]) == 100

    def test_minimum_trials(self):
        spec = ProbeSpec("TS", 2)
        with pytest.raises(InvalidParameter):
            run_experiment(spec, local_phases(spec), 99)

    def test_unknown_policy(self):
        spec = ProbeSpec("TS", 2)
        with pytest.raises(InvalidParameter):
            run_experiment(spec, local_phases(spec), 100, "random")

    def test_fixed_policy_records_offset(self):
        spec = ProbeSpec("TM", 2, R_t=3, R_r=20)
        res = run_experiment(spec, local_phases(spec), 100, "fixed")
        assert res.lo_offset == pytest.approx(np.pi / 2)

    @pytest.mark.slow
    def test_variance_not_below_bound_asymptotically(self):
        spec = ProbeSpec("TS", 2, R_r=1000, nbar=2.0)
        n = 2000
        res = run_experiment(spec, local_phases(spec), n, seed=8)
        assert res.sample_variance >= res.crb * (1 - 3 / np.sqrt(n))

    @pytest.mark.slow
    def test_single_multiplexed_probe(self):
        spec = ProbeSpec("TM", 2, R_t=100, R_r=1, nbar=2.0)
        res = run_experiment(spec, local_phases(spec), 2000, seed=4)
        assert res.sample_variance / res.qcrb <= 1.2
