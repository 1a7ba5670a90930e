"""Brownian bridges on [0, 2pi] in the half-frequency sine basis.

A path is ``b(t) = sum_{n>=1} b_n sin(n t / 2)``.  Under the bridge measure at
inverse temperature ``beta`` the coefficients are independent centered
Gaussians with ``Var(b_n) = 1 / (beta n^2)``.  With this scaling

* ``beta = pi / 4`` is the standard bridge, ``E b(s) b(t) = s (2pi - t) / 2pi``;
* ``beta = 1 / 8`` gives the unnormalized covariance ``s (2pi - t)``;
* the Cameron-Martin norm ``int h'^2`` corresponds to ``beta_cm = 4 beta / pi``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dct, dst

TWO_PI = 2.0 * np.pi
REFERENCE_BETA = 1.0 / 8.0
STANDARD_BETA = np.pi / 4.0


def cameron_martin_beta(beta: float) -> float:
    """Coefficient of ``int h'^2 / 2`` in the Gaussian density at ``beta``."""
    return 4.0 * beta / np.pi


def _fold_sine(coef: np.ndarray, M: int) -> np.ndarray:
    """Alias sine modes ``sin(pi n j / M)`` onto ``n = 1..M-1``."""
    n = np.arange(1, coef.size + 1)
    r = n % (2 * M)
    sign = np.where(r > M, -1.0, 1.0)
    r = np.where(r > M, 2 * M - r, r)
    out = np.zeros(M + 1, dtype=coef.dtype)
    np.add.at(out, r, sign * coef)
    return out[1:M]


def _fold_cosine(coef: np.ndarray, M: int) -> np.ndarray:
    """Alias cosine modes ``cos(pi n j / M)`` onto ``n = 0..M``."""
    n = np.arange(1, coef.size + 1)
    r = n % (2 * M)
    r = np.where(r > M, 2 * M - r, r)
    out = np.zeros(M + 1, dtype=coef.dtype)
    np.add.at(out, r, coef)
    return out


def sine_synthesis(coef: np.ndarray, M: int) -> np.ndarray:
    """``sum_n coef[n-1] sin(pi n j / M)`` for ``j = 0..M`` via DST-I."""
    out = np.zeros(M + 1)
    if M > 1:
        out[1:M] = dst(_fold_sine(np.asarray(coef, float), M), type=1) / 2.0
    return out


def cosine_synthesis(coef: np.ndarray, M: int) -> np.ndarray:
    """``sum_n coef[n-1] cos(pi n j / M)`` for ``j = 0..M`` via DCT-I."""
    x = _fold_cosine(np.asarray(coef, float), M)
    x[1:M] /= 2.0
    return dct(x, type=1)


def sine_analysis(values: np.ndarray, n_modes: int) -> np.ndarray:
    """Inverse of :func:`sine_synthesis` from samples at ``j = 0..M``."""
    M = values.size - 1
    if n_modes > M - 1:
        raise ValueError(f"at most {M - 1} modes are resolved by {M + 1} samples")
    c = dst(np.asarray(values[1:M], float), type=1) / M
    return c[:n_modes]


@dataclass(frozen=True, eq=False)
class BridgePath:
    """A bridge realization stored by its sine coefficients ``b_1 .. b_N``."""

    sine_coefficients: np.ndarray
    beta: float = float("nan")
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        c = np.asarray(self.sine_coefficients, dtype=float).ravel()
        c.setflags(write=False)
        object.__setattr__(self, "sine_coefficients", c)

    @classmethod
    def zero(cls, n_modes: int = 1) -> "BridgePath":
        return cls(np.zeros(n_modes))

    @classmethod
    def from_samples(cls, values, n_modes: int | None = None, beta: float = float("nan")):
        """Fit coefficients to samples at ``t_j = 2 pi j / M``, ``j = 0..M``."""
        values = np.asarray(values, float)
        if abs(values[0]) > 1e-10 or abs(values[-1]) > 1e-10:
            raise ValueError("bridge samples must vanish at both endpoints")
        M = values.size - 1
        return cls(sine_analysis(values, n_modes or M - 1), beta)

    @property
    def n_modes(self) -> int:
        return self.sine_coefficients.size

    @property
    def modes(self) -> np.ndarray:
        return np.arange(1, self.n_modes + 1)

    def derivative(self, t, order: int = 0) -> np.ndarray:
        """``b^{(order)}(t)`` by direct summation, ``t`` read modulo 2pi."""
        t = np.mod(np.asarray(t, float), TWO_PI)
        k = self.modes / 2.0
        w = self.sine_coefficients * k ** order
        phase = order * np.pi / 2.0
        flat = t.ravel()
        out = np.empty(flat.size)
        chunk = max(1, 2 ** 22 // max(self.n_modes, 1))
        for i in range(0, flat.size, chunk):
            out[i:i + chunk] = np.sin(np.outer(flat[i:i + chunk], k) + phase) @ w
        return out.reshape(t.shape)

    def __call__(self, t) -> np.ndarray:
        return self.derivative(t, 0)

    def grid(self, M: int, order: int = 0) -> np.ndarray:
        """``b^{(order)}`` at ``t_j = 2 pi j / M`` for ``j = 0..M`` (fast transforms)."""
        key = (M, order)
        if key not in self._cache:
            w = self.sine_coefficients * (self.modes / 2.0) ** order
            sign = (1.0, 1.0, -1.0, -1.0)[order % 4]
            if order % 2 == 0:
                vals = sign * sine_synthesis(w, M)
            else:
                vals = sign * cosine_synthesis(w, M)
            vals.setflags(write=False)
            self._cache[key] = vals
        return self._cache[key]

    def __add__(self, h: "BridgePath") -> "BridgePath":
        n = max(self.n_modes, h.n_modes)
        c = np.zeros(n)
        c[:self.n_modes] += self.sine_coefficients
        c[:h.n_modes] += h.sine_coefficients
        return BridgePath(c, self.beta)

    def cameron_martin_norm2(self) -> float:
        """``int_0^{2pi} b'(t)^2 dt``."""
        return float(np.pi / 4.0 * np.sum(self.modes ** 2 * self.sine_coefficients ** 2))


def sample_bridge(beta: float, n_modes: int = 512, rng=None) -> BridgePath:
    """Draw a truncated bridge with ``Var(b_n) = 1 / (beta n^2)``."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    rng = np.random.default_rng(rng)
    n = np.arange(1, n_modes + 1)
    return BridgePath(rng.standard_normal(n_modes) / (np.sqrt(beta) * n), beta)


def sample_bridge_coefficients(beta: float, n_modes: int, n_paths: int, rng) -> np.ndarray:
    """Matrix of coefficient rows for ``n_paths`` independent bridges."""
    n = np.arange(1, n_modes + 1)
    return rng.standard_normal((n_paths, n_modes)) / (np.sqrt(beta) * n)
