import numpy as np
import pytest

from circlediff.bridge import sample_bridge
from circlediff.circle_maps import (BridgeDiffeo, ComposedDiffeo, MoebiusDiffeo, MoebiusElement,
                                    Rotation, TrigDiffeo, identity)
from circlediff.welding import (WeldingError, WeldingTriple, area, check_bounds,
                                composition_blocks, diag_from_determinants, verify_weld, weld)


def moebius(w, phase=0.0, n=1):
    m = MoebiusElement.from_w(w, phase, n)
    return m, MoebiusDiffeo(m)


class TestBlocks:
    def test_identity(self):
        blk = composition_blocks(identity(), 12)
        assert np.allclose(blk.matrix, np.eye(24), atol=1e-13)

    def test_rotation(self):
        blk = composition_blocks(Rotation(0.5), 8)
        assert np.allclose(blk.matrix, np.diag(np.exp(-0.5j * blk.modes)), atol=1e-13)

    def test_symplectic_defect_decays(self):
        phi = TrigDiffeo([0.2, 0.05], [0.1, -0.1])
        d = [composition_blocks(phi, N).symplectic_defect() for N in (8, 16, 32)]
        assert d[1] < d[0] / 3 and d[2] < d[1] / 3


class TestWeld:
    def test_rotation(self):
        T = weld(Rotation(0.7), 32)
        assert T.diag == pytest.approx(np.exp(0.7j))
        assert np.allclose(T.u_coefficients, 0, atol=1e-13)
        assert np.allclose(T.l_inverse_coefficients, 0, atol=1e-13)

    def test_moebius_level_one_closed_form(self):
        m, phi = moebius(0.4 * np.exp(0.7j), 0.3)
        w = m.w
        T = weld(phi, 64)
        assert T.diag == pytest.approx(m.a ** -2, abs=1e-13)
        assert abs(T.diag) == pytest.approx(1 - abs(w) ** 2)
        k = np.arange(1, 20)
        assert np.allclose(T.u_coefficients[:19], (-w) ** k, atol=1e-13)
        assert T.l_inverse_coefficients[0] == pytest.approx(-np.conj(m.b) / m.a, abs=1e-13)
        assert np.allclose(T.l_inverse_coefficients[1:], 0, atol=1e-13)

    @pytest.mark.parametrize("n,r", [(2, 0.6), (3, 0.5), (2, 0.8)])
    def test_level_n_modulus(self, n, r):
        _, phi = moebius(r * np.exp(0.4j), 0.1, n)
        T = weld(phi, 128)
        assert abs(T.diag) == pytest.approx((1 - r * r) ** (1 / n), abs=1e-10)

    def test_level_two_example(self):
        _, phi = moebius(0.6, 0.0, 2)
        assert abs(weld(phi, 128).diag) == pytest.approx(0.8, abs=1e-10)

    def test_rotation_equivariance(self):
        rng = np.random.default_rng(4)
        phi = BridgeDiffeo(sample_bridge(1.0, 128, rng), 0.9)
        s, t = 0.8, -1.3
        T = weld(phi, 128)
        R = weld(ComposedDiffeo(Rotation(s), ComposedDiffeo(phi, Rotation(t))), 128)
        k = np.arange(1, T.u_coefficients.size + 1)
        n = np.arange(T.l_inverse_coefficients.size)
        assert R.diag == pytest.approx(np.exp(1j * (s + t)) * T.diag, abs=1e-8)
        assert np.allclose(R.u_coefficients, T.u_coefficients * np.exp(1j * k * t), atol=1e-8)
        assert np.allclose(R.l_inverse_coefficients,
                           T.l_inverse_coefficients * np.exp(1j * (n + 1) * s), atol=1e-8)

    def test_condition_guard(self):
        _, phi = moebius(0.5)
        with pytest.raises(WeldingError):
            weld(phi, 32, max_condition=1.0)

    def test_json_roundtrip(self):
        T = weld(moebius(0.3j)[1], 16)
        back = WeldingTriple.from_json(T.to_json())
        assert back.diag == T.diag
        assert np.array_equal(back.u_coefficients, T.u_coefficients)
        assert np.array_equal(back.l_inverse_coefficients, T.l_inverse_coefficients)


class TestVerify:
    def test_identity(self):
        rep = verify_weld(identity(), weld(identity(), 16))
        assert rep.roundtrip_error < 1e-14
        assert np.allclose(rep.winding_numbers, 1) and rep.univalent

    @pytest.mark.parametrize("n,r", [(1, 0.2), (1, 0.8), (2, 0.6), (3, 0.5)])
    def test_moebius_roundtrip(self, n, r):
        _, phi = moebius(r * np.exp(0.4j), 0.3, n)
        assert verify_weld(phi, weld(phi, 256)).roundtrip_error < 1e-3

    def test_bridge_roundtrip_converges(self):
        phi = BridgeDiffeo(sample_bridge(1.0, 512, np.random.default_rng(6)), 1.0)
        errs = [verify_weld(phi, weld(phi, N)).roundtrip_error for N in (32, 64, 128)]
        assert errs[1] < errs[0] and errs[2] < errs[1]


class TestDiagAndArea:
    def test_identity(self):
        assert diag_from_determinants(identity(), 32) == pytest.approx(1.0)

    @pytest.mark.parametrize("n,r", [(1, 0.5), (2, 0.6), (3, 0.4)])
    def test_moebius(self, n, r):
        _, phi = moebius(r, 0.0, n)
        assert diag_from_determinants(phi, 128) == pytest.approx((1 - r * r) ** (1 / n), rel=1e-10)

    def test_rotation_area_zero(self):
        assert area(weld(Rotation(0.2), 16)) == pytest.approx(0.0, abs=1e-12)

    def test_moebius_area_terms(self):
        # m |lambda|^2 |u~_m|^2 with u~_m = (-w)^{m-1}: the terms sum to one, so the area vanishes
        r = 0.5
        T = weld(moebius(r)[1], 64)
        m = np.arange(1, 11)
        expected = m * (1 - r * r) ** 2 * r ** (2 * (m - 1))
        assert np.allclose(T.mode_area_terms()[:10], expected, atol=1e-13)
        assert area(T) == pytest.approx(0.0, abs=1e-10)

    def test_bounds_on_samples(self):
        for child in np.random.SeedSequence(3).spawn(10):
            phi = BridgeDiffeo(sample_bridge(1.0, 256, np.random.default_rng(child)), 0.0)
            T = weld(phi, 64)
            assert check_bounds(T) == {"diag": 0, "u1": 0, "area_modes": 0}
            assert abs(T.u_coefficients[0]) <= 2

    def test_bounds_detect_violation(self):
        fake = WeldingTriple(1.5 + 0j, np.array([3.0 + 0j]), np.array([0j, 2.0 + 0j]))
        v = check_bounds(fake)
        assert v["diag"] == 1 and v["u1"] == 1 and v["area_modes"] >= 1
