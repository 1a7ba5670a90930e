import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from circlediff.bridge import (REFERENCE_BETA, STANDARD_BETA, TWO_PI, BridgePath,
                               cameron_martin_beta, sample_bridge)
from circlediff.circle_maps import BridgeDiffeo, Rotation, identity, log_derivative
from circlediff.experiments import rn_test_maps
from circlediff.measures import (CameronMartinShift, acted_path_values, EnergyTable, MCEstimate, map_samples,
                                 pitman_yor_functional, question_3220_statistic,
                                 ratio_identity_residual, rn_derivative, sample_bridge_refined,
                                 sample_nu_bch, sample_nu_beta, shift_bound_check,
                                 shift_moment_exact, transfer_check, weight_ch, weight_factors)
from circlediff.operators import VirasoroWeight


def _first_coefficient(rng):
    return float(sample_bridge(2.0, 4, rng).sine_coefficients[0])


class TestBridge:
    def test_variance_of_first_mode(self):
        vals = np.array(map_samples(_first_coefficient, 20000, seed=0))
        assert vals.var(ddof=1) == pytest.approx(0.5, rel=0.04)

    def test_reference_covariance_series(self):
        # sum_n 8/n^2 sin(ns/2) sin(nt/2) -> s (2pi - t) for s <= t
        n = np.arange(1, 200001)
        for s, t in [(0.5, 1.0), (1.0, 4.0), (3.0, 3.0), (2.0, 6.0)]:
            cov = np.sum(np.sin(n * s / 2) * np.sin(n * t / 2) / (REFERENCE_BETA * n * n))
            assert cov == pytest.approx(s * (TWO_PI - t), abs=1e-4)

    def test_standard_bridge_scaling(self):
        assert STANDARD_BETA / REFERENCE_BETA == pytest.approx(TWO_PI)
        assert cameron_martin_beta(STANDARD_BETA) == pytest.approx(1.0)

    def test_grid_matches_direct_sum(self):
        b = sample_bridge(1.0, 300, np.random.default_rng(3))
        # derivative() reads t modulo 2pi, so the right endpoint is left out
        t = TWO_PI * np.arange(256) / 256
        for order in range(3):
            assert np.allclose(b.grid(256, order)[:-1], b.derivative(t, order), atol=1e-9)

    def test_from_samples_roundtrip(self):
        b = sample_bridge(1.0, 64, np.random.default_rng(1))
        back = BridgePath.from_samples(b.grid(256), 64)
        assert np.allclose(back.sine_coefficients, b.sine_coefficients, atol=1e-13)

    def test_seed_determinism(self):
        a = sample_bridge(1.0, 32, np.random.default_rng(5)).sine_coefficients
        b = sample_bridge(1.0, 32, np.random.default_rng(5)).sine_coefficients
        assert np.array_equal(a, b)

    def test_rejects_nonpositive_beta(self):
        with pytest.raises(ValueError):
            sample_bridge(0.0)

    def test_refined_paths_pin_endpoints(self):
        t, v = sample_bridge_refined(1.0, np.random.default_rng(2), coarse=256, window=0.5,
                                     resolution=1e-3)
        assert t[0] == 0 and t[-1] == pytest.approx(TWO_PI)
        assert v[0] == 0 and abs(v[-1]) < 1e-12
        assert np.all(np.diff(t) > 0)
        near = np.diff(t)[np.argmax(v) - 1: np.argmax(v) + 1]
        assert near.max() <= 1e-3


class TestNuBeta:
    def test_log_derivative_roundtrip(self):
        phi = sample_nu_beta(1.0, np.random.default_rng(4), n_modes=64)
        t = np.linspace(0, TWO_PI, 101)
        assert np.allclose(log_derivative(phi)(t), phi.bridge(t), atol=1e-8)

    def test_rotation_uniform(self):
        rots = [sample_nu_beta(1.0, np.random.default_rng(c), 8).rotation
                for c in np.random.SeedSequence(0).spawn(2000)]
        assert stats.kstest(np.array(rots) / TWO_PI, "uniform").pvalue > 1e-3


class TestRN:
    def test_identity_is_one(self):
        b = sample_bridge(1.0, 64, np.random.default_rng(0))
        assert rn_derivative(identity(), b, 1.0, K=512) == pytest.approx(1.0)

    def test_bad_form(self):
        with pytest.raises(ValueError):
            rn_derivative(identity(), BridgePath.zero(4), 1.0, form="other")

    def test_rotation_prefactor(self):
        b = sample_bridge(1.0, 64, np.random.default_rng(1))
        r = rn_derivative(Rotation(0.7), b, 1.0, K=1024)
        assert rn_derivative(Rotation(0.7), b, 1.0, K=1024, form="schwarzian") == 1.0
        assert r > 0 and r != pytest.approx(1.0)

    @pytest.mark.parametrize("name", ["moebius_n1", "moebius_n2", "trig_mode1"])
    def test_chain_rule_per_path(self, name):
        # T_{phi^-1} T_phi = id forces R_phi(b) R_{phi^-1}(T_phi b) = 1 on every path;
        # this pins the density even where its Monte Carlo mean is heavy tailed
        phi, inv = rn_test_maps()[name]
        M = 4096
        for seed in range(2):
            b = sample_bridge(1.0, 128, np.random.default_rng(seed))
            v = acted_path_values(phi, b, TWO_PI * np.arange(M + 1) / M, K=M)
            v[0] = v[-1] = 0.0
            acted = BridgePath.from_samples(v, M - 1)
            prod = rn_derivative(phi, b, 1.0, K=M) * rn_derivative(inv, acted, 1.0, K=M)
            assert prod == pytest.approx(1.0, abs=3e-3)

    def test_rotation_mean_one(self):
        rep = transfer_check(Rotation(1.0), Rotation(-1.0), 1.0, n_samples=1500, seed=1,
                             n_modes=128, K=1024)
        assert rep.rn_mean.within(1.0, 4) and rep.passes(4)

    def test_trig_map_exact_form_centered_bare_form_not(self):
        phi, inv = rn_test_maps()["trig_mode1"]
        rep = transfer_check(phi, inv, 1.0, n_samples=1500, seed=1, n_modes=128, K=1024)
        assert rep.passes(4)
        assert not rep.schwarzian_mean.within(1.0, 4)


class TestShift:
    def test_zero_shift(self):
        rep = shift_bound_check(CameronMartinShift.single_mode(1, 0.0), 1.0, n_samples=100, seed=0)
        assert rep.lhs.mean == 0 and rep.exact == 0 and rep.bound == 0

    def test_norm(self):
        h = CameronMartinShift.with_norm(3, 0.7)
        assert h.norm2 == pytest.approx(0.49)
        path = BridgePath(h.coefficients)
        assert path.cameron_martin_norm2() == pytest.approx(0.49)

    @pytest.mark.parametrize("p", [1.0, 2.0, 3.0])
    def test_monte_carlo_matches_exact(self, p):
        rep = shift_bound_check(CameronMartinShift.with_norm(2, 0.5), 1.0, p, 20000, seed=3)
        assert rep.lhs.within(rep.exact, 4)

    def test_exact_p2_closed_form(self):
        # E (e^{sZ - s^2/2} - 1)^2 = e^{s^2} - 1
        for s2 in (0.01, 0.3, 1.0):
            assert shift_moment_exact(s2, 2.0) == pytest.approx(math.expm1(s2), rel=1e-10)

    def test_sigma_scales_with_beta(self):
        h = CameronMartinShift.with_norm(1, 0.4)
        a = shift_bound_check(h, 1.0, n_samples=10, seed=0)
        b = shift_bound_check(h, 4.0, n_samples=10, seed=0)
        assert b.sigma2 / a.sigma2 == pytest.approx(4.0)
        assert b.bound / a.bound == pytest.approx(4.0)


class TestPathFunctionals:
    @pytest.mark.parametrize("beta", [1.0, 0.1])
    def test_pitman_yor_flat_path(self, beta):
        assert pitman_yor_functional(beta, BridgePath.zero(8)) == pytest.approx(TWO_PI / beta ** 2)

    def test_q3220_flat_path_is_jensen_minimum(self):
        for beta, n in [(1.0, 1), (0.5, 3)]:
            assert question_3220_statistic(beta, BridgePath.zero(4), n) == pytest.approx(
                n * beta ** 2 / TWO_PI)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.sampled_from([1.0, 0.5, 0.25]))
    def test_q3220_jensen_bound(self, seed, beta):
        b = sample_bridge(1.0, 128, np.random.default_rng(seed))
        assert question_3220_statistic(beta, b) >= beta ** 2 / TWO_PI * (1 - 1e-12)

    def test_pitman_yor_is_bounded_by_flat(self):
        b = sample_bridge(1.0, 128, np.random.default_rng(0))
        assert pitman_yor_functional(0.5, b) < TWO_PI / 0.25


class TestEnergyTable:
    def test_csv_roundtrip(self):
        t = EnergyTable.build(1.0, 8, seed=3, grid=512, n_modes=32)
        back = EnergyTable.from_csv(t.to_csv())
        assert back.key == t.key
        assert np.array_equal(back.mean, t.mean) and np.array_equal(back.stderr, t.stderr)

    def test_cache(self, tmp_path):
        a = EnergyTable.cached(1.0, str(tmp_path), n_samples=6, seed=1, grid=512, n_modes=32)
        files = list(tmp_path.iterdir())
        b = EnergyTable.cached(1.0, str(tmp_path), n_samples=6, seed=1, grid=512, n_modes=32)
        assert len(files) == 1 and np.array_equal(a.mean, b.mean)


class TestWeights:
    def test_trivial_weight(self):
        phi = sample_nu_beta(1.0, np.random.default_rng(0), 64)
        assert weight_ch(phi, VirasoroWeight(0.0, 0.0)) == 1.0

    def test_identity_factors(self):
        f = weight_factors(identity(), VirasoroWeight(1.0, 0.5), table=np.zeros(10), N=32)
        assert f.det2 == pytest.approx(1.0) and f.diag == pytest.approx(1.0)
        assert f.energy == pytest.approx(0.0, abs=1e-12)

    def test_c_needs_table(self):
        with pytest.raises(ValueError):
            weight_factors(identity(), VirasoroWeight(1.0, 0.0))

    def test_beta_mismatch(self):
        table = EnergyTable.build(1.0, 4, seed=0, grid=256, n_modes=16)
        with pytest.raises(ValueError):
            weight_ch(identity(), VirasoroWeight(1.0, 0.0), beta=2.0, table=table)

    def test_bound_by_energy_factor(self):
        table = np.linspace(0.0, 1.0, 10)
        for child in np.random.SeedSequence(1).spawn(5):
            phi = sample_nu_beta(1.0, np.random.default_rng(child), 128)
            w = VirasoroWeight(2.0, 0.3)
            f = weight_factors(phi, w, table, N=32)
            assert 0 <= f.det2 <= 1 and 0 < f.diag <= 1
            assert f.weight <= math.exp(-w.c / (8 * np.pi ** 2) * f.energy) * (1 + 1e-12)

    def test_negative_parameters_rejected(self):
        with pytest.raises(ValueError):
            VirasoroWeight(-1.0, 0.0)


class TestNuBCH:
    def test_uniform_weights_when_trivial(self):
        ens = sample_nu_bch(1.0, VirasoroWeight(), 20, seed=0, N=16, n_modes=64)
        assert np.allclose(ens.weights, 1 / 20) and ens.ess == pytest.approx(20)

    def test_h_pushes_diag_toward_one(self):
        ens = sample_nu_bch(1.0, VirasoroWeight(0.0, 0.0), 200, seed=1, N=32, n_modes=128,
                            factor_weight=VirasoroWeight(0.0, 1.0))
        diag = np.array([f.diag for f in ens.factors])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            heavy = ens.reweight(16 * 0.5 * np.log(diag))
        assert heavy.weighted_mean(diag) > ens.weighted_mean(diag)

    def test_ratio_identity(self):
        ens = sample_nu_bch(1.0, VirasoroWeight(0.0, 0.2), 40, seed=2, N=32, n_modes=64)
        assert ratio_identity_residual(ens, VirasoroWeight(0.0, 0.2),
                                       VirasoroWeight(0.0, 0.7)) < 1e-14


class TestMonteCarlo:
    def test_estimate(self):
        est = MCEstimate.from_samples([1.0, 2.0, 3.0, 4.0], seed=9, config={"a": 1})
        assert est.mean == 2.5 and est.n_samples == 4 and est.seed == 9
        assert est.stderr == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
        assert est.config_fingerprint and "p50" in est.to_dict()

    def test_workers_bit_identical(self):
        one = map_samples(_first_coefficient, 40, seed=11, workers=1)
        two = map_samples(_first_coefficient, 40, seed=11, workers=2)
        assert one == two
