"""Truncated formal power series and the groups of formal automorphisms.

A :class:`FormalSeries` stores ``c_1 z + c_2 z^2 + ... + c_N z^N`` (no constant
term) as a dense complex vector.  Composition of such series is the group law
of the formal automorphism group ``C* . N+``; a :class:`FormalVectorField`
``v d/dz`` with ``v = O(z^2)`` exponentiates to an element of ``N+`` through the
Lie series ``sum_n (v d/dz)^n / n!``.

Everything here is truncated at a fixed order ``N`` and uses double precision
complex arithmetic.  Series that live on the disk about infinity (the ``N-``
side) are handled through :func:`reflect`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

DEFAULT_ORDER = 32


class OrderMismatchError(ValueError):
    """Raised when two series with different truncation orders are combined."""


class NonInvertibleError(ValueError):
    """Raised when the linear coefficient of a series vanishes."""


def _as_coefficients(values, order: int | None) -> np.ndarray:
    c = np.asarray(values, dtype=complex).ravel()
    if order is None:
        return c.copy()
    if order < 1:
        raise ValueError("truncation order must be positive")
    out = np.zeros(order, dtype=complex)
    n = min(order, c.size)
    out[:n] = c[:n]
    return out


@dataclass(frozen=True, eq=False)
class FormalSeries:
    """Series ``sum_{k=1}^N c_k z^k``; ``coefficients[k-1]`` holds ``c_k``."""

    coefficients: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=complex).ravel()
        if c.size < 1:
            raise ValueError("a formal series needs at least one coefficient")
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    @classmethod
    def from_coefficients(cls, values, order: int | None = None) -> "FormalSeries":
        """Build from ``[c_1, c_2, ...]``, padding or cutting to ``order``."""
        return cls(_as_coefficients(values, order))

    @classmethod
    def identity(cls, order: int = DEFAULT_ORDER) -> "FormalSeries":
        return cls.from_coefficients([1.0], order)

    @property
    def truncation_order(self) -> int:
        return self.coefficients.size

    @property
    def leading(self) -> complex:
        return complex(self.coefficients[0])

    def dense(self) -> np.ndarray:
        """Coefficients indexed by power, ``out[k]`` = coefficient of ``z^k``."""
        return np.concatenate([[0.0], self.coefficients])

    def __call__(self, z):
        """Evaluate the truncated polynomial at ``z``."""
        z = np.asarray(z, dtype=complex)
        return np.polynomial.polynomial.polyval(z, self.dense())

    def __add__(self, other: "FormalSeries") -> "FormalSeries":
        _check_orders(self, other)
        return FormalSeries(self.coefficients + other.coefficients)

    def __sub__(self, other: "FormalSeries") -> "FormalSeries":
        _check_orders(self, other)
        return FormalSeries(self.coefficients - other.coefficients)

    def scale(self, factor: complex) -> "FormalSeries":
        return FormalSeries(factor * self.coefficients)

    def allclose(self, other: "FormalSeries", atol: float = 1e-10) -> bool:
        _check_orders(self, other)
        return bool(np.allclose(self.coefficients, other.coefficients, rtol=0, atol=atol))

    def to_json(self) -> str:
        return json.dumps([[c.real, c.imag] for c in self.coefficients])

    @classmethod
    def from_json(cls, text: str) -> "FormalSeries":
        pairs = json.loads(text)
        return cls(np.array([complex(re, im) for re, im in pairs]))

    def __repr__(self):
        return f"FormalSeries(order={self.truncation_order}, c1={self.leading:.6g})"


@dataclass(frozen=True, eq=False)
class FormalVectorField:
    """``V = (v_2 z^2 + ... + v_N z^N) d/dz``; ``coefficients[0]`` is ``v_2``."""

    coefficients: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=complex).ravel()
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    @classmethod
    def zero(cls, order: int = DEFAULT_ORDER) -> "FormalVectorField":
        return cls(np.zeros(max(order - 1, 0), dtype=complex))

    def dense(self, order: int) -> np.ndarray:
        """``v`` indexed by power, length ``order + 1``."""
        out = np.zeros(order + 1, dtype=complex)
        n = min(self.coefficients.size, order - 1)
        out[2:2 + n] = self.coefficients[:n]
        return out


def _check_orders(f: FormalSeries, g: FormalSeries):
    if f.truncation_order != g.truncation_order:
        raise OrderMismatchError(
            f"truncation orders differ: {f.truncation_order} != {g.truncation_order}")


def _mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Truncated product of dense (power-indexed) coefficient vectors."""
    return np.convolve(a, b)[: a.size]


def _derivative(a: np.ndarray) -> np.ndarray:
    out = np.zeros_like(a)
    out[:-1] = a[1:] * np.arange(1, a.size)
    return out


def compose(f: FormalSeries, g: FormalSeries) -> FormalSeries:
    """Return ``f o g`` truncated at the common order (Horner scheme)."""
    _check_orders(f, g)
    gd = g.dense()
    acc = np.zeros_like(gd)
    for c in f.coefficients[::-1]:
        acc[0] += c
        acc = _mul(acc, gd)
    return FormalSeries(acc[1:])


def invert(u: FormalSeries) -> FormalSeries:
    """Compositional inverse of ``u``; each sweep fixes one more coefficient."""
    c1 = u.leading
    if abs(c1) == 0.0:
        raise NonInvertibleError("linear coefficient vanishes; series is not invertible")
    order = u.truncation_order
    ident = FormalSeries.identity(order)
    v = ident.scale(1.0 / c1)
    for _ in range(order):
        r = compose(u, v) - ident
        v = v - r.scale(1.0 / c1)
    return v


def apply_vector_field(V: FormalVectorField, f: np.ndarray) -> np.ndarray:
    """One application of the derivation ``f -> v f'`` on a dense vector."""
    return _mul(V.dense(f.size - 1), _derivative(f))


def apply_automorphism(V: FormalVectorField, f: np.ndarray) -> np.ndarray:
    """Lie series ``e^V f = sum_n (v d/dz)^n f / n!`` on a dense vector.

    The sum stops once a term vanishes identically, which happens after at
    most ``N`` steps because each application raises the order by one.
    """
    f = np.asarray(f, dtype=complex)
    total = f.copy()
    term = f.copy()
    for n in range(1, f.size + 1):
        term = apply_vector_field(V, term) / n
        if not np.any(term):
            break
        total += term
    return total


def exp_vector_field(V: FormalVectorField, order: int = DEFAULT_ORDER) -> FormalSeries:
    """``e^V`` applied to ``z``: the time-one flow of ``v d/dz``."""
    z = np.zeros(order + 1, dtype=complex)
    z[1] = 1.0
    return FormalSeries(apply_automorphism(V, z)[1:])


def lambda_V_from_image(c: FormalSeries) -> tuple[complex, FormalVectorField]:
    """Solve ``lambda * e^V(z) = c`` for ``(lambda, V)``.

    The coefficient of ``z^k`` in ``e^V(z)`` is ``v_k`` plus a polynomial in
    ``v_2 .. v_{k-1}``, so the system is triangular and solved in order.
    """
    lam = c.leading
    if abs(lam) == 0.0:
        raise NonInvertibleError("linear coefficient vanishes; series is not invertible")
    order = c.truncation_order
    target = c.coefficients / lam
    v = np.zeros(max(order - 1, 0), dtype=complex)
    for k in range(2, order + 1):
        v[k - 2] = 0.0
        current = exp_vector_field(FormalVectorField(v), order).coefficients[k - 1]
        v[k - 2] = target[k - 1] - current
    return lam, FormalVectorField(v)


def extract_lambda_V(u: FormalSeries) -> tuple[complex, FormalVectorField]:
    """Split ``u`` as ``(.) o u^{-1} = lambda e^V`` and return ``(lambda, V)``."""
    return lambda_V_from_image(invert(u))


def reflect(coefficients, order: int = DEFAULT_ORDER) -> FormalSeries:
    """Carry ``z + sum_{n>=0} b_n z^{-n}`` to the disk about zero.

    With ``w = 1/z`` the map ``w -> 1 / l(1/w)`` is an ordinary series
    ``w / (1 + b_0 w + b_1 w^2 + ...)``, so the ``N-`` side reuses every routine
    of this module.
    """
    b = np.asarray(coefficients, dtype=complex).ravel()
    denom = np.zeros(order + 1, dtype=complex)
    denom[0] = 1.0
    n = min(b.size, order)
    denom[1:1 + n] = b[:n]
    # 1/denom by the recursion for reciprocal series
    inv = np.zeros(order + 1, dtype=complex)
    inv[0] = 1.0
    for k in range(1, order + 1):
        inv[k] = -np.dot(denom[1:k + 1], inv[k - 1::-1][:k])
    return FormalSeries(inv[:order])
