import math

import numpy as np
import pytest
from scipy import stats

from ddmc.errors import SingularCovarianceError
from ddmc.experiments import (
    EventSpec,
    ExperimentConfig,
    builtin_experiment_config,
    clt_check,
    empirical_poisson_sup_frequency,
    lln_check,
    martingale_mean_check,
    mdp_estimate,
    poisson_tail_exponent,
    tilt_from_profile,
)
from ddmc.fluid import uniform_grid
from ddmc.model import Domain, ModelSpec, Polynomial

from conftest import T0


class TestConfig:
    def test_alpha_range(self):
        with pytest.raises(ValueError):
            builtin_experiment_config("yule", alpha=0.5)
        with pytest.raises(ValueError):
            builtin_experiment_config("yule", alpha=1.0)

    def test_min_reps(self):
        with pytest.raises(ValueError):
            builtin_experiment_config("yule", reps=50)

    def test_event_kinds(self):
        with pytest.raises(ValueError):
            EventSpec(kind="hitting_time", level=1.0)
        with pytest.raises(ValueError):
            EventSpec(kind="endpoint_exceed", level=-1.0)


class TestLln:
    def test_contact_decay_and_slope(self, contact):
        cfg = ExperimentConfig(
            model=contact.spec, n_list=(100, 200, 400, 800), reps=800,
            epsilons=(0.05,), seed=5, threads=2,
        )
        res = lln_check(cfg)
        freqs = [r.frequency for r in res.rows]
        assert freqs == sorted(freqs, reverse=True)
        assert res.slope < 0
        assert res.slope_pvalue < 0.05

    def test_large_n_small_frequency(self, contact):
        cfg = ExperimentConfig(
            model=contact.spec, n_list=(100, 1000, 10000), reps=400,
            epsilons=(0.05,), seed=5, threads=2,
        )
        res = lln_check(cfg)
        assert res.rows[-1].frequency < 0.01

    def test_huge_epsilon_never_exceeded(self, contact):
        cfg = ExperimentConfig(
            model=contact.spec, n_list=(100, 400), reps=200, epsilons=(10.0,), seed=1,
        )
        res = lln_check(cfg)
        assert all(r.frequency == 0.0 for r in res.rows)


class TestClt:
    def test_yule_ks(self, yule):
        cfg = ExperimentConfig(model=yule.spec, n_list=(10**4,), reps=5000,
                               seed=23, threads=2)
        rows = clt_check(cfg)
        assert rows[0].p_value > 0.01
        assert rows[0].sample_var == pytest.approx(rows[0].predicted_var, rel=0.1)

    def test_contact_ks_and_variance(self, contact):
        cfg = ExperimentConfig(model=contact.spec, n_list=(10**4,), reps=5000,
                               seed=101, threads=2)
        rows = clt_check(cfg)
        assert rows[0].p_value > 0.01
        assert rows[0].sample_var == pytest.approx(rows[0].predicted_var, rel=0.05)

    def test_small_n_reported_not_asserted(self, yule):
        cfg = ExperimentConfig(model=yule.spec, n_list=(10,), reps=2000, seed=23)
        rows = clt_check(cfg)  # only verify it reports cleanly at tiny n
        assert 0.0 <= rows[0].p_value <= 1.0

    def test_singular_covariance(self):
        spec = ModelSpec(
            dimension=1, jumps=((1,),), rates=(Polynomial(1, []),),
            domain=Domain.build(1, lower=[0.0]), x0=np.array([1.0]), name="frozen",
        )
        cfg = ExperimentConfig(model=spec, n_list=(100,), reps=200, seed=1)
        with pytest.raises(SingularCovarianceError):
            clt_check(cfg)


class TestMdp:
    def test_yule_estimate_matches_exact_tail(self, yule):
        # sum of n unit-start pure-birth counts is negative binomial, so the
        # event probability is exactly computable: a true external oracle
        n = 1000
        cfg = ExperimentConfig(
            model=yule.spec, n_list=(n,), reps=3000, seed=2024,
            event=EventSpec(kind="endpoint_exceed", level=1.0), threads=2,
        )
        row = mdp_estimate(cfg)[0]
        a_n = n**0.75
        threshold = math.ceil(n * math.e + a_n) - n
        p_exact = float(stats.nbinom.sf(threshold - 1, n, math.exp(-1.0)))
        assert row.ess >= 30
        assert not row.flagged
        assert abs(row.p_hat - p_exact) <= 4 * row.stderr

    def test_zero_level_is_central(self, yule):
        cfg = ExperimentConfig(
            model=yule.spec, n_list=(500,), reps=2000, seed=3,
            event=EventSpec(kind="endpoint_exceed", level=0.0), threads=2,
        )
        row = mdp_estimate(cfg)[0]
        assert 0.4 < row.p_hat < 0.6
        assert row.minus_log_scaled < 0.05

    def test_monotone_in_level(self, yule):
        phats = []
        for level in (0.5, 1.0, 1.5):
            cfg = ExperimentConfig(
                model=yule.spec, n_list=(500,), reps=2000, seed=7,
                event=EventSpec(kind="endpoint_exceed", level=level), threads=2,
            )
            phats.append(mdp_estimate(cfg)[0].p_hat)
        assert phats[0] > phats[1] > phats[2]

    def test_tilted_agrees_with_naive(self, yule):
        cfg = ExperimentConfig(
            model=yule.spec, n_list=(200,), reps=4000, seed=11,
            event=EventSpec(kind="endpoint_exceed", level=0.5),
            untilted_baseline=True, threads=2,
        )
        tilted, naive = mdp_estimate(cfg)
        assert tilted.estimator == "tilted" and naive.estimator == "naive"
        if tilted.ess >= 30 and naive.ess >= 30:
            se = math.hypot(tilted.stderr, naive.stderr)
            assert abs(tilted.p_hat - naive.p_hat) <= 3 * se

    def test_supnorm_event_runs(self, contact):
        cfg = ExperimentConfig(
            model=contact.spec, n_list=(300,), reps=500, seed=13,
            event=EventSpec(kind="supnorm_exceed", level=0.6), threads=2,
        )
        row = mdp_estimate(cfg)[0]
        assert 0.0 <= row.p_hat <= 1.5  # weighted estimate of a probability
        assert row.reference_rate > 0

    def test_needs_event(self, yule):
        cfg = ExperimentConfig(model=yule.spec, n_list=(100,), reps=200, seed=1)
        with pytest.raises(ValueError):
            mdp_estimate(cfg)


class TestMartingale:
    def test_zero_tilt_exact(self, yule):
        grid = uniform_grid(T0, 1e-2)
        g = tilt_from_profile(grid, 1, "constant", 0.0)
        mean, se = martingale_mean_check(yule, 100, g, 0.75, reps=200, seed=1)
        assert mean == 1.0 and se == 0.0

    def test_yule_constant_profile(self, yule):
        grid = uniform_grid(T0, 1e-3)
        g = tilt_from_profile(grid, 1, "constant", 0.15)
        mean, se = martingale_mean_check(yule, 1000, g, 0.75, reps=4000, seed=29,
                                         threads=2)
        assert abs(mean - 1.0) < 3 * se

    def test_contact_sin_profile(self, contact):
        grid = uniform_grid(T0, 1e-3)
        g = tilt_from_profile(grid, 1, "sin", 0.2)
        mean, se = martingale_mean_check(contact, 1000, g, 0.75, reps=4000, seed=31,
                                         threads=2)
        assert abs(mean - 1.0) < 3 * se


class TestPoissonTail:
    def test_unit_values(self):
        b = poisson_tail_exponent(1.0, 1.0)
        assert b.theta_upper == pytest.approx(math.log(2.0))
        assert b.exponent_upper == pytest.approx(2 * math.log(2.0) - 1.0)

    def test_grid_search_oracle(self):
        for delta, t1 in [(0.5, 1.0), (2.0, 3.0), (1.0, 0.25)]:
            b = poisson_tail_exponent(delta, t1)
            thetas = np.linspace(1e-6, 20.0, 400001)
            brute = np.max(delta * thetas - t1 * (np.exp(thetas) - thetas - 1.0))
            assert b.exponent_upper == pytest.approx(float(brute), abs=1e-6)

    def test_small_delta_vanishes(self):
        assert poisson_tail_exponent(1e-9, 1.0).exponent_upper < 1e-15

    def test_lower_tail_infinite_beyond_horizon_rate(self):
        b = poisson_tail_exponent(1.5, 1.0)
        assert b.exponent_lower == math.inf
        assert b.combined == 0.5 * b.exponent_upper

    def test_bad_args(self):
        with pytest.raises(ValueError):
            poisson_tail_exponent(0.0, 1.0)

    def test_empirical_frequency_respects_bound(self):
        delta, t1, n = 0.2, 1.0, 400
        b = poisson_tail_exponent(delta, t1)
        freq = empirical_poisson_sup_frequency(delta, t1, n, reps=20000, seed=99)
        assert freq <= math.exp(-n * b.combined) * 10.0
