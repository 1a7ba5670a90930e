import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from circlediff.formal_series import (FormalSeries, FormalVectorField, NonInvertibleError,
                                      OrderMismatchError, apply_automorphism, apply_vector_field,
                                      compose, exp_vector_field, extract_lambda_V, invert,
                                      lambda_V_from_image, reflect)

z = sp.symbols("z")


def sympy_coeffs(expr, order):
    ser = sp.series(expr, z, 0, order + 1).removeO()
    return np.array([complex(ser.coeff(z, k)) for k in range(1, order + 1)])


def series(coeffs, order=None):
    return FormalSeries.from_coefficients(coeffs, order)


complex_coef = st.builds(complex, st.floats(-2, 2), st.floats(-2, 2))


@st.composite
def invertible_series(draw, order=None):
    n = order or draw(st.integers(2, 12))
    c = draw(st.lists(complex_coef, min_size=n, max_size=n))
    lead = draw(st.builds(complex, st.floats(0.3, 2), st.floats(-2, 2)))
    c[0] = lead
    return series(c)


class TestCompose:
    def test_identity_left(self):
        g = series([1.5, -0.3j, 2.0, 0.1])
        assert compose(FormalSeries.identity(4), g).allclose(g)

    def test_hand_expansion(self):
        f = series([1, 1, 0])
        assert np.allclose(compose(f, f).coefficients, [1, 2, 2])

    def test_inverse_pair_sympy(self):
        N = 10
        f = series(sympy_coeffs(z / (1 + z), N))
        g = series(sympy_coeffs(z / (1 - z), N))
        assert compose(f, g).allclose(FormalSeries.identity(N), atol=1e-12)

    def test_matches_sympy_on_random_pair(self):
        rng = np.random.default_rng(1)
        N = 7
        a, b = rng.integers(-3, 4, size=(2, N))
        a[0], b[0] = 2, -1
        f = sum(int(a[k]) * z ** (k + 1) for k in range(N))
        g = sum(int(b[k]) * z ** (k + 1) for k in range(N))
        expected = sympy_coeffs(sp.expand(f.subs(z, g)), N)
        assert np.allclose(compose(series(a), series(b)).coefficients, expected)

    def test_order_mismatch(self):
        with pytest.raises(OrderMismatchError):
            compose(series([1, 2]), series([1, 2, 3]))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 10).flatmap(lambda n: st.tuples(*(invertible_series(n),) * 3)))
    def test_associative(self, fgh):
        f, g, h = fgh
        lhs = compose(compose(f, g), h)
        rhs = compose(f, compose(g, h))
        scale = 1 + np.max(np.abs(lhs.coefficients))
        assert np.allclose(lhs.coefficients, rhs.coefficients, atol=1e-9 * scale)


class TestInvert:
    def test_trivial(self):
        assert invert(FormalSeries.identity(5)).allclose(FormalSeries.identity(5))
        lam = 0.5 - 2j
        assert np.allclose(invert(series([lam, 0, 0])).coefficients, [1 / lam, 0, 0])

    def test_lagrange_catalan(self):
        # inverse of z + z^2 is (sqrt(1 + 4z) - 1) / 2
        N = 12
        expected = sympy_coeffs((sp.sqrt(1 + 4 * z) - 1) / 2, N)
        got = invert(series([1, 1], N)).coefficients
        assert np.allclose(got, expected)
        assert np.allclose(got[:4], [1, -1, 2, -5])

    def test_non_invertible(self):
        with pytest.raises(NonInvertibleError):
            invert(series([0, 1, 2]))

    @settings(max_examples=40, deadline=None)
    @given(invertible_series())
    def test_two_sided(self, u):
        ident = FormalSeries.identity(u.truncation_order)
        v = invert(u)
        scale = 1 + np.max(np.abs(v.coefficients))
        assert np.allclose(compose(u, v).coefficients, ident.coefficients, atol=1e-8 * scale)
        assert np.allclose(compose(v, u).coefficients, ident.coefficients, atol=1e-8 * scale)


class TestVectorFields:
    def test_zero_field(self):
        assert exp_vector_field(FormalVectorField.zero(8), 8).allclose(FormalSeries.identity(8))

    def test_z_squared_flow(self):
        V = FormalVectorField([1.0])
        assert np.allclose(exp_vector_field(V, 10).coefficients, np.ones(10))

    def test_z_cubed_flow(self):
        V = FormalVectorField([0.0, 1.0])
        expected = sympy_coeffs(z / sp.sqrt(1 - 2 * z ** 2), 11)
        assert np.allclose(exp_vector_field(V, 11).coefficients, expected)

    def test_fourth_relation_symbolic(self):
        # c_4 / lambda = v_4 + (5/2) v_2 v_3 + v_2^3, from the Lie series itself
        v2, v3, v4 = sp.symbols("v2 v3 v4")
        v = v2 * z ** 2 + v3 * z ** 3 + v4 * z ** 4
        total, term = z, z
        for n in range(1, 5):
            term = sp.expand(v * sp.diff(term, z) / n)
            term = sum(term.coeff(z, k) * z ** k for k in range(5))
            total += term
        c = [sp.expand(total).coeff(z, k) for k in range(1, 5)]
        assert sp.simplify(c[1] - v2) == 0
        assert sp.simplify(c[2] - (v3 + v2 ** 2)) == 0
        assert sp.simplify(c[3] - (v4 + sp.Rational(5, 2) * v2 * v3 + v2 ** 3)) == 0

    def test_fourth_relation_numeric(self):
        v = np.array([0.7 - 0.2j, -1.1, 0.4j])
        c = exp_vector_field(FormalVectorField(v), 4).coefficients
        assert np.isclose(c[3], v[2] + 2.5 * v[0] * v[1] + v[0] ** 3)

    def test_order_raising(self):
        N = 10
        rng = np.random.default_rng(3)
        V = FormalVectorField(rng.standard_normal(N - 1) + 1j * rng.standard_normal(N - 1))
        for m in range(1, N + 1):
            f = np.zeros(N + 1, complex)
            f[m] = 1
            for n in range(1, N - m + 1):
                f = apply_vector_field(V, f)
                assert np.all(f[: n + m] == 0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(3, 10).flatmap(lambda n: st.tuples(
        st.just(n), st.lists(complex_coef, min_size=n - 1, max_size=n - 1),
        st.lists(complex_coef, min_size=n + 1, max_size=n + 1),
        st.lists(complex_coef, min_size=n + 1, max_size=n + 1))))
    def test_automorphism_is_multiplicative(self, data):
        n, v, f, g = data
        V = FormalVectorField(np.array(v) * 0.5)
        f, g = np.array(f), np.array(g)
        prod = np.convolve(f, g)[: n + 1]
        lhs = apply_automorphism(V, prod)
        rhs = np.convolve(apply_automorphism(V, f), apply_automorphism(V, g))[: n + 1]
        assert np.allclose(lhs, rhs, atol=1e-8 * (1 + np.abs(rhs).max()))


class TestExtract:
    def test_identity(self):
        lam, V = extract_lambda_V(FormalSeries.identity(6))
        assert lam == 1 and np.allclose(V.coefficients, 0)

    def test_two_term_image(self):
        lam, V = lambda_V_from_image(series([2, 3, 0, 0]))
        assert lam == 2
        assert np.isclose(V.coefficients[0], 1.5)

    def test_three_term_image(self):
        lam, V = lambda_V_from_image(series([1, 1, 1, 0]))
        assert lam == 1
        assert np.allclose(V.coefficients[:2], [1, 0])

    def test_extract_uses_inverse(self):
        c = series([2, 3, 0, 0, 0])
        u = invert(c)
        lam, V = extract_lambda_V(u)
        assert np.isclose(lam, 2) and np.isclose(V.coefficients[0], 1.5)

    @settings(max_examples=40, deadline=None)
    @given(invertible_series())
    def test_roundtrip(self, c):
        lam, V = lambda_V_from_image(c)
        back = exp_vector_field(V, c.truncation_order).scale(lam)
        scale = 1 + np.max(np.abs(c.coefficients))
        assert np.allclose(back.coefficients, c.coefficients, atol=1e-9 * scale)


def test_json_roundtrip():
    s = series([1 + 2j, -0.5, 3j])
    assert FormalSeries.from_json(s.to_json()).allclose(s, atol=0)


def test_reflect_matches_sympy():
    b = [0.3, -0.2j, 0.1]
    w = sp.symbols("w")
    expr = w / (1 + sp.Rational(3, 10) * w + (-sp.I / 5) * w ** 2 + sp.Rational(1, 10) * w ** 3)
    expected = sympy_coeffs(expr.subs(w, z), 8)
    assert np.allclose(reflect(b, 8).coefficients, expected)
