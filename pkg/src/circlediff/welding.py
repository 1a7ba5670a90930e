"""Conformal welding ``phi = l o diag o u`` through composition operators.

``C_phi f = f o phi^{-1}`` acts on functions modulo constants; its matrix in the
basis ``z^q`` is

    M_{qp} = (1/2pi) int e^{-i q Phi(s)} e^{i p s} Phi'(s) ds.

The welding is characterized by ``(lambda u) o phi^{-1} = l^{-1}``, with
``l^{-1} = z + b_0 + b_1 z^{-1} + ...`` and ``lambda u`` holomorphic in the disk.
:func:`weld` solves the equivalent statement that ``l^{-1} o phi`` has no
nonpositive modes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .bridge import TWO_PI
from .circle_maps import CircleDiffeo, DomainError, NumericalError, uniform_grid
from .formal_series import FormalSeries
from .operators import (ANTIPERIODIC, PERIODIC, det_abs_A, fourier_rows, lift_samples,
                        quadrature_size)


class WeldingError(NumericalError):
    """The ``A`` block is too ill-conditioned at this cutoff."""


@dataclass(frozen=True, eq=False)
class SymplecticBasisBlocks:
    """``C_phi`` in the basis ``z^n / sqrt|n|``, ``0 < |n| <= N``."""

    matrix: np.ndarray
    modes: np.ndarray
    cutoff: int

    @property
    def positive(self) -> np.ndarray:
        return self.modes > 0

    @property
    def A(self) -> np.ndarray:
        pos = self.positive
        return self.matrix[np.ix_(pos, pos)]

    def symplectic_defect(self, fraction: float = 0.5) -> float:
        """``||C^T J C - J||`` on the inner modes, ``J_{-n,n} = sign(n)``."""
        C = self.matrix
        J = np.diag(np.sign(self.modes))[::-1]
        inner = np.abs(self.modes) <= fraction * self.cutoff
        D = (C.T @ J @ C - J)[np.ix_(inner, inner)]
        return float(np.linalg.norm(D, 2))


def composition_blocks(phi: CircleDiffeo, N: int = 64, L: int | None = None) -> SymplecticBasisBlocks:
    P, dP, L = lift_samples(phi, N, L)
    modes = np.concatenate([np.arange(-N, 0), np.arange(1, N + 1)])
    M = fourier_rows(P, dP, modes.astype(float), modes, 0.0, L)
    w = np.sqrt(np.abs(modes))
    return SymplecticBasisBlocks(M * w[:, None] / w[None, :], modes, N)


@dataclass(frozen=True, eq=False)
class WeldingTriple:
    """``l^{-1} = z + sum_{n>=0} b_n z^{-n}``, ``diag = lambda``, ``u = z (1 + sum_{n>=1} u_n z^n)``."""

    diag: complex
    u_coefficients: np.ndarray
    l_inverse_coefficients: np.ndarray
    condition_number: float = float("nan")
    leak: float = float("nan")
    extra: dict = field(default_factory=dict)

    @property
    def cutoff(self) -> int:
        return self.u_coefficients.size + 1

    @property
    def u_series(self) -> np.ndarray:
        """Taylor coefficients of ``u`` from ``z^1``: ``[1, u_1, u_2, ...]``."""
        return np.concatenate([[1.0 + 0j], self.u_coefficients])

    def u(self, z):
        return np.polynomial.polynomial.polyval(np.asarray(z, complex),
                                                np.concatenate([[0.0], self.u_series]))

    def u_derivative(self, z):
        c = np.arange(1, self.cutoff + 1) * self.u_series
        return np.polynomial.polynomial.polyval(np.asarray(z, complex), c)

    def l_inverse(self, z):
        z = np.asarray(z, complex)
        return z + np.polynomial.polynomial.polyval(1.0 / z, self.l_inverse_coefficients)

    def l_inverse_derivative(self, z):
        z = np.asarray(z, complex)
        n = np.arange(self.l_inverse_coefficients.size)
        c = np.concatenate([[0.0], -n[1:] * self.l_inverse_coefficients[1:]])
        return 1.0 + np.polynomial.polynomial.polyval(1.0 / z, c) / z

    def u_formal(self) -> FormalSeries:
        return FormalSeries(self.u_series)

    def mode_area_terms(self) -> np.ndarray:
        """``m (|b_m|^2 + |lambda u~_m|^2)`` for ``m >= 1``; ``u~_m`` is the ``z^m`` coefficient."""
        b = self.l_inverse_coefficients[1:]
        ut = self.u_series
        n = min(b.size, ut.size)
        m = np.arange(1, n + 1)
        return m * (np.abs(b[:n]) ** 2 + abs(self.diag) ** 2 * np.abs(ut[:n]) ** 2)

    def to_json(self) -> str:
        pair = lambda c: [float(np.real(c)), float(np.imag(c))]
        return json.dumps({"lambda": pair(self.diag),
                           "u": [pair(c) for c in self.u_coefficients],
                           "b": [pair(c) for c in self.l_inverse_coefficients]})

    @classmethod
    def from_json(cls, text: str) -> "WeldingTriple":
        d = json.loads(text)
        c = lambda p: complex(p[0], p[1])
        return cls(c(d["lambda"]), np.array([c(p) for p in d["u"]]),
                   np.array([c(p) for p in d["b"]]))


def weld(phi: CircleDiffeo, N: int = 128, L: int | None = None,
         max_condition: float = 1e8) -> WeldingTriple:
    """Factor ``phi = l o diag o u`` at cutoff ``N``.

    The finite section ``A_N`` of ``C_phi`` is badly conditioned because column
    ``p`` spreads over rows up to ``p max(Psi')``.  We therefore solve the dual
    problem: ``lambda u = l^{-1} o phi`` has no modes ``q <= 0``, i.e.

        P_{<=0} [ phi + sum_{n=0}^{N} b_n phi^{-n} ] = 0,

    by least squares over every row ``-R <= q <= 0`` the columns reach
    (``R ~ N max Phi'``), in the normalized basis ``z^n / sqrt(n)``.  That
    matrix is the ``D`` block of ``C_{phi^{-1}}`` and is boundedly invertible,
    so the reported condition number is meaningful.  Then ``lambda u`` is the
    positive part of ``l^{-1} o phi`` sampled on the grid.
    """
    if L is None:
        _, dP = phi.sample(1024)
        R = int(np.ceil(N * float(dP.max()) * 1.1)) + N // 4 + 32
        L = quadrature_size(float(dP.max()), N, extra=int(0.2 * N * float(dP.max())) + N // 2 + 64)
    P, dP = phi.sample(L)
    if not np.all(np.isfinite(dP)) or dP.min() <= 0:
        raise DomainError("lift is not strictly increasing")
    R = min(L // 2 - N, int(np.ceil(N * float(dP.max()) * 1.1)) + N // 4 + 32)
    n = np.arange(N + 1)
    E = np.exp(-1j * np.outer(P, n))                 # phi^{-n} on the grid
    rows = (-np.arange(R + 1)) % L                   # modes q = 0, -1, ..., -R
    G = np.fft.fft(E, axis=0)[rows] / L
    head = np.exp(1j * P)
    h = np.fft.fft(head)[rows] / L
    wr = np.sqrt(np.maximum(np.arange(R + 1), 1.0))
    wc = np.sqrt(np.maximum(n, 1.0))
    Gw = G * wr[:, None] / wc[None, :]
    sol, *_ = np.linalg.lstsq(Gw, -h * wr, rcond=None)
    sv = np.linalg.svd(Gw, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
    if not np.isfinite(cond) or cond > max_condition:
        raise WeldingError(f"welding system ill-conditioned (cond={cond:.3g}) at N={N}")
    b = sol / wc
    g = head + E @ b                                  # lambda u(e^{is})
    c = np.fft.fft(g) / L
    lam = c[1]
    if lam == 0:
        raise WeldingError("vanishing linear coefficient")
    nonpos = c[(-np.arange(N + 1)) % L]
    leak = float(np.sqrt(np.sum(np.abs(nonpos) ** 2)) / abs(lam))
    ut = c[1:N + 1] / lam
    tail = float(np.sqrt(np.sum(np.abs(c[N + 1:L // 2]) ** 2)) / abs(lam))
    return WeldingTriple(complex(lam), ut[1:], b, cond, leak,
                         {"quadrature": L, "rows": R, "u_tail": tail})


@dataclass
class WeldReport:
    roundtrip_error: float
    series_residual: float
    winding_numbers: np.ndarray
    univalent: bool
    leak: float
    condition_number: float


def _winding(values: np.ndarray) -> float:
    d = np.angle(np.roll(values, -1) / values)
    return float(np.sum(d) / TWO_PI)


def verify_weld(phi: CircleDiffeo, triple: WeldingTriple, M: int | None = None,
                probes=(0.0, 0.5, 0.5j, -0.6 + 0.2j, 0.3 - 0.7j)) -> WeldReport:
    """Roundtrip ``l o diag o u`` against ``phi`` and certify univalence of ``u``.

    ``l`` is evaluated by Newton iteration on ``l^{-1}(w) = lambda u(z)``
    started at ``phi(z)``; the reported error is the sup over the grid of
    ``|l(lambda u(z)) - phi(z)|``.
    """
    M = M or max(1024, 8 * triple.cutoff)
    s = uniform_grid(M)
    z = np.exp(1j * s)
    target = triple.diag * triple.u(z)
    w0 = np.exp(1j * phi.lift(s))
    series_res = float(np.max(np.abs(triple.l_inverse(w0) - target)))
    w = w0.copy()
    for _ in range(50):
        step = (triple.l_inverse(w) - target) / triple.l_inverse_derivative(w)
        w = w - step
        if np.max(np.abs(step)) < 1e-14:
            break
    err = float(np.max(np.abs(w - w0)))
    uz = triple.u(z)
    winds = np.array([_winding(uz - triple.u(p)) for p in probes])
    univalent = bool(np.all(np.abs(winds - 1) < 1e-6))
    return WeldReport(err, series_res, winds, univalent, triple.leak, triple.condition_number)


def diag_from_determinants(phi: CircleDiffeo, N: int = 128, L: int | None = None) -> float:
    """``|diag| = (det|A_p| / det|A_a|)^8`` from the truncated determinants."""
    da = det_abs_A(phi, ANTIPERIODIC, N, L)
    dp = det_abs_A(phi, PERIODIC, N, L)
    if da <= 0:
        raise NumericalError("det|A_a| vanishes at this cutoff")
    return float((dp / da) ** 4)


def area(triple: WeldingTriple) -> float:
    """``pi (1 - sum_m m (|b_m|^2 + |lambda|^2 |u~_m|^2))`` with ``u~_1 = 1``.

    For a welding of a circle map both boundary curves coincide, so the
    annulus is degenerate and the value is zero up to truncation error.
    """
    return float(np.pi * (1.0 - np.sum(triple.mode_area_terms())))


def check_bounds(triple: WeldingTriple, eps: float = 1e-2) -> dict:
    """Violation counts for ``|diag| <= 1``, ``|u_1| <= 2`` and the per-mode area bound."""
    terms = triple.mode_area_terms()
    u1 = abs(triple.u_coefficients[0]) if triple.u_coefficients.size else 0.0
    return {
        "diag": int(abs(triple.diag) > 1 + eps),
        "u1": int(u1 > 2 + eps),
        "area_modes": int(np.sum(terms > 1 + eps)),
    }
