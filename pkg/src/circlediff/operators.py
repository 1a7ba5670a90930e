"""Truncated block operators of the half-density action and their determinants.

``U_phi f = (Psi')^{1/2} f o psi`` on ``L^2(S^1)``, in the Fourier basis
``e^{i p theta}``.  Periodic spin uses integer ``p`` with ``H_+ = {p >= 0}``;
antiperiodic spin uses ``p = k + 1/2`` with ``H_+ = {p > 0}``.  Matrix entries

    U_{qp} = (1/2pi) int e^{-i q Phi(s)} e^{i p s} Phi'(s)^{1/2} ds

need only the forward lift, one FFT per row.  ``phi -> U_phi`` is a
homomorphism, so blocks of compositions are consistent with products.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import toeplitz

from .bridge import TWO_PI
from .circle_maps import (BridgeDiffeo, CircleDiffeo, ComposedDiffeo, DomainError,
                          MoebiusDiffeo, MoebiusElement, NumericalError, uniform_grid)

PERIODIC = "periodic"
ANTIPERIODIC = "antiperiodic"
_SPINS = {PERIODIC: 0.0, ANTIPERIODIC: 0.5, "p": 0.0, "a": 0.5}


def _half(spin: str) -> float:
    try:
        return _SPINS[spin]
    except KeyError:
        raise ValueError(f"unknown spin {spin!r}") from None


def spin_modes(spin: str, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Mode labels and the ``H_+`` mask at cutoff ``N``."""
    half = _half(spin)
    ks = np.arange(-N, N + (0 if half else 1))
    p = ks + half
    return p, (p > 0) if half else (p >= 0)


MAX_QUADRATURE = 1 << 22


def quadrature_size(dP_max: float, N: int, extra: int = 0) -> int:
    """Power-of-two grid that resolves ``e^{-i q Phi}`` for ``|q| <= N``.

    The row integrand has local frequency ``q Phi'``, so aliasing is avoided only
    when the grid exceeds ``N (1 + max Phi')`` with room for the decay tail.
    """
    if not math.isfinite(dP_max):
        raise NumericalError("derivative of the lift is not finite")
    need = max(4 * N, int(2 * (N * dP_max + N)) + 64 + extra)
    if need > MAX_QUADRATURE:
        raise NumericalError(f"map too distorted for N={N}: needs {need} quadrature nodes")
    return 1 << int(math.ceil(math.log2(need)))


def fourier_rows(P, amp, qs, cols, half, L, chunk=64):
    """``(1/2pi) int e^{-i q Phi(s)} e^{i (k + half) s} amp(s) ds`` for rows ``q``, columns ``k``."""
    s = uniform_grid(L)
    out = np.empty((qs.size, cols.size), complex)
    for i in range(0, qs.size, chunk):
        q = qs[i:i + chunk]
        g = np.exp(1j * (half * s[None, :] - np.outer(q, P))) * amp
        out[i:i + chunk] = np.fft.ifft(g, axis=1)[:, cols % L]
    return out


@dataclass(frozen=True, eq=False)
class BlockOperator:
    """Truncated ``U`` with rows/columns labelled by :attr:`modes`."""

    matrix: np.ndarray
    modes: np.ndarray
    positive: np.ndarray
    cutoff: int
    spin: str
    quadrature: int

    def _block(self, rows, cols):
        return self.matrix[np.ix_(rows, cols)]

    @property
    def A(self):
        return self._block(self.positive, self.positive)

    @property
    def B(self):
        return self._block(self.positive, ~self.positive)

    @property
    def C(self):
        return self._block(~self.positive, self.positive)

    @property
    def D(self):
        return self._block(~self.positive, ~self.positive)

    def unitarity_defect(self, fraction: float = 0.5) -> float:
        """``||U*U - I||`` restricted to the inner ``|p| <= fraction * N`` modes."""
        inner = np.abs(self.modes) <= fraction * self.cutoff
        G = self.matrix.conj().T @ self.matrix
        G = G[np.ix_(inner, inner)]
        return float(np.linalg.norm(G - np.eye(G.shape[0]), 2))


def lift_samples(phi: CircleDiffeo, N: int, L: int | None):
    if L is None:
        _, dP = phi.sample(1024)
        L = quadrature_size(float(dP.max()), N)
    P, dP = phi.sample(L)
    if not np.all(np.isfinite(dP)) or dP.min() <= 0:
        raise DomainError("lift is not strictly increasing")
    return P, dP, L


def build_blocks(phi: CircleDiffeo, spin: str = ANTIPERIODIC, N: int = 128,
                 L: int | None = None) -> BlockOperator:
    """Full truncated matrix of ``U_phi`` with modes ``|p| <= N``."""
    half = _half(spin)
    P, dP, L = lift_samples(phi, N, L)
    p, pos = spin_modes(spin, N)
    ks = np.round(p - half).astype(int)
    U = fourier_rows(P, np.sqrt(dP), p, ks, half, L)
    return BlockOperator(U, p, pos, N, ANTIPERIODIC if half else PERIODIC, L)


def c_block(phi: CircleDiffeo, spin: str = ANTIPERIODIC, N: int = 128,
            L: int | None = None) -> np.ndarray:
    """``C`` block alone (rows in ``H_-``, columns in ``H_+``).

    By ``U_{-q,-p} = conj(U_{q,p})`` it is the conjugate of the ``q > 0``,
    ``p <= 0`` corner, which halves the work compared with the full matrix.
    """
    half = _half(spin)
    P, dP, L = lift_samples(phi, N, L)
    if half:
        qs = np.arange(N) + 0.5           # -q runs over H_- rows
        cols = -np.arange(N) - 1          # p = cols + 1/2 <= -1/2  <->  -p in H_+
    else:
        qs = np.arange(1, N + 1).astype(float)
        cols = -np.arange(N + 1)
    return np.conj(fourier_rows(P, np.sqrt(dP), qs, cols, half, L))


def _singular_squares(C: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    sv2 = np.linalg.svd(C, compute_uv=False) ** 2
    if sv2.size and sv2.max() > 1.0 + tol:
        raise NumericalError(f"|C|^2 has eigenvalue {sv2.max():.6g} > 1")
    return np.minimum(sv2, 1.0)


def det_abs_A2_from_C(C: np.ndarray) -> float:
    """``det |A|^2 = det(1 - |C|^2)`` for a unitary with off-diagonal block ``C``."""
    return float(np.prod(1.0 - _singular_squares(C)))


def det2_abs_A_from_C(C: np.ndarray) -> float:
    sv2 = _singular_squares(C)
    return float(np.exp(np.sum(np.log1p(-sv2) + sv2)))


def det_abs_A2(op: BlockOperator) -> float:
    return det_abs_A2_from_C(op.C)


def det2_abs_A(op: BlockOperator) -> float:
    """Regularized ``det((1 - |C|^2) e^{|C|^2})``, always in ``[0, 1]``."""
    return det2_abs_A_from_C(op.C)


def trace_C2(op: BlockOperator) -> float:
    return float(np.sum(np.abs(op.C) ** 2))


def det_abs_A(phi, spin: str = ANTIPERIODIC, N: int = 128, L: int | None = None) -> float:
    """Truncated ``det|A(phi)|^2`` for a diffeo or a :class:`MoebiusElement`."""
    if isinstance(phi, MoebiusElement):
        phi = MoebiusDiffeo(phi)
    return det_abs_A2_from_C(c_block(phi, spin, N, L))


def det_abs_A_periodic(m: MoebiusElement, N: int = 128) -> float:
    return det_abs_A(m, PERIODIC, N)


def moebius_antiperiodic_exponent(n: int) -> float:
    """Exponent ``e`` in ``det|A_a|^2 = (1 - r^2)^e`` for the level-``n`` cover.

    Equals ``(n^2 - 1) / (12 n)``; see the project notes for the comparison
    with the tabulated value ``n (n^2 - 1) / 24``, which agrees only at ``n = 1``.
    """
    return (n * n - 1) / (12.0 * n)


def moebius_det_closed_form(n: int, r: float, spin: str = ANTIPERIODIC) -> float:
    e = moebius_antiperiodic_exponent(n)
    if _half(spin) == 0.0:
        e += 1.0 / (4 * n)
    return (1.0 - r * r) ** e


def cocycle_det(m1: MoebiusElement, m2: MoebiusElement, N: int = 64,
                spin: str = ANTIPERIODIC, L: int | None = None) -> complex:
    """``det(A(phi) A(psi) A(phi o psi)^{-1}) = det(1 - A_{12}^{-1} B_1 C_2)``.

    ``phi o psi`` is built from the two lifts, not from the matrix product,
    so ``U_{phi o psi} = U_phi U_psi`` holds exactly (no deck ambiguity).
    """
    if m1.level != m2.level:
        raise DomainError("both elements must live on the same cover")
    f, g = MoebiusDiffeo(m1), MoebiusDiffeo(m2)
    fg = ComposedDiffeo(f, g)
    if L is None:
        dmax = max(float(d.sample(1024)[1].max()) for d in (f, g, fg))
        L = quadrature_size(dmax, N)
    U1, U2, U12 = (build_blocks(d, spin, N, L) for d in (f, g, fg))
    Y = U1.B @ U2.C
    if np.abs(Y).max() < 1e-13:
        # det(1 - A^{-1} Y) = 1 without inverting A, whose finite section may be singular
        return 1.0 + 0j
    A12 = U12.A
    # columns near the cutoff lose mass to truncation; judge invertibility on the core
    core = max(1, A12.shape[0] // 2)
    cond = np.linalg.cond(A12[:core, :core])
    if not np.isfinite(cond) or cond > 1e12:
        raise NumericalError(f"A block numerically singular (cond={cond:.3g})")
    X = np.linalg.solve(A12, Y)
    d = complex(np.linalg.det(np.eye(X.shape[0]) - X))
    if not np.isfinite(d):
        raise NumericalError("cocycle determinant is not finite")
    return d


def cocycle_det_closed_form(m1: MoebiusElement, m2: MoebiusElement) -> complex:
    n = m1.level
    w = m1.b / m1.a
    zeta = np.conj(m2.b) / m2.a
    return complex((1.0 + w * zeta) ** moebius_antiperiodic_exponent(n))


def _toeplitz_from_symbol(coeffs: dict[int, float], size: int) -> np.ndarray:
    col = np.zeros(size)
    row = np.zeros(size)
    for k, v in coeffs.items():
        if 0 <= k < size:
            col[k] = v
        if -size < k <= 0:
            row[-k] = v
    return toeplitz(col, row)


def s2_matrix(r: float, N: int, pad: int | None = None) -> np.ndarray:
    """``S_2 = T(1/a_-) T(1/a_+) T(a_-) T(a_+)`` on ``span{z^0..z^{N-1}}``.

    ``a_+ = 1 - r z``, ``a_- = 1 - r/z``.  Each factor is built on ``N + 4 pad``
    modes so the truncated product agrees with the compression of the
    infinite product up to ``O(r^pad)``.
    """
    if not 0 <= r < 1:
        raise DomainError("r must satisfy 0 <= r < 1")
    if pad is None:
        pad = 2 if r == 0 else int(math.ceil(math.log(1e-18) / math.log(r))) + 2
    size = N + 4 * pad
    geo = {k: r ** k for k in range(size) if r ** k > 0}
    T_inv_minus = _toeplitz_from_symbol({-k: v for k, v in geo.items()}, size)
    T_inv_plus = _toeplitz_from_symbol(geo, size)
    T_minus = _toeplitz_from_symbol({0: 1.0, -1: -r}, size)
    T_plus = _toeplitz_from_symbol({0: 1.0, 1: -r}, size)
    S = T_inv_minus @ T_inv_plus @ T_minus @ T_plus
    return S[:N, :N]


def commutator_det_S2(r: float, N: int = 512) -> float:
    """Truncated ``det(S_2)``; the limit is ``(1 - r^2)^{-1}``."""
    sign, logdet = np.linalg.slogdet(s2_matrix(r, N))
    return float(sign * np.exp(logdet))


def kernel_K(phi: CircleDiffeo, s, t) -> np.ndarray:
    """``[(Phi'(s) Phi'(t))^{1/2} sin((t-s)/2) / sin((Phi(t)-Phi(s))/2) - 1] / (z - zeta)``.

    ``z = e^{it}``, ``zeta = e^{is}``.  This is the kernel of
    ``V_phi^{-1} (1/2)[V_phi, j]`` with ``j = P_+ - P_-`` in the antiperiodic
    basis; see :func:`kernel_K_operator`.
    """
    s = np.asarray(s, float)
    t = np.asarray(t, float)
    if np.any(np.isclose(np.mod(t - s + np.pi, TWO_PI) - np.pi, 0.0, atol=1e-14)):
        raise DomainError("kernel is undefined on the diagonal")
    Ps, dPs = phi.jet(s, 1)
    Pt, dPt = phi.jet(t, 1)
    num = np.sqrt(dPs * dPt) * np.sin((t - s) / 2) / np.sin((Pt - Ps) / 2) - 1.0
    return num / (np.exp(1j * t) - np.exp(1j * s))


def kernel_K_operator(phi: CircleDiffeo, s, t, N: int = 64, L: int | None = None):
    """Series kernel of ``V^{-1} (1/2)[V, j] = -V^* [[0, B], [-C, 0]]``.

    ``K(s, t) = sum T_{mk} e^{i m t} e^{-i (k+1) s}`` over the truncated integer
    labels ``k = p - 1/2``.  Converges to :func:`kernel_K` as ``N`` grows.
    """
    op = build_blocks(phi, ANTIPERIODIC, N, L)
    pos = op.positive
    M = np.zeros_like(op.matrix)
    M[np.ix_(pos, ~pos)] = op.B
    M[np.ix_(~pos, pos)] = -op.C
    T = -(op.matrix.conj().T @ M)
    ks = np.round(op.modes - 0.5).astype(int)
    s = np.atleast_1d(np.asarray(s, float))
    t = np.atleast_1d(np.asarray(t, float))
    Et = np.exp(1j * np.outer(t, ks))
    Es = np.exp(-1j * np.outer(s, ks + 1))
    return np.einsum("im,mk,ik->i", Et, T, Es)


@dataclass(frozen=True)
class KernelDiagnostics:
    """Ingredients of ``|K|^2 = |e^F - 1|^2 / (2 - 2 cos Delta)``."""

    delta: np.ndarray
    midpoint_average: np.ndarray
    integral: np.ndarray
    alpha: float
    F: np.ndarray

    @property
    def kernel_abs2(self) -> np.ndarray:
        return np.abs(np.expm1(self.F)) ** 2 / (2.0 - 2.0 * np.cos(self.delta))


def kernel_diagnostics(psi: BridgeDiffeo, s, t) -> KernelDiagnostics:
    """``F = A - ln(sin(alpha I / 2) / (alpha sin(Delta / 2)))`` for a based bridge diffeo."""
    s = np.asarray(s, float)
    t = np.asarray(t, float)
    b = psi.bridge
    alpha = psi.alpha
    A = 0.5 * (b(s) + b(t))
    I = (psi.lift(t) - psi.lift(s)) / alpha
    D = t - s
    F = A - np.log(np.sin(alpha * I / 2) / (alpha * np.sin(D / 2)))
    return KernelDiagnostics(D, A, I, alpha, F)


@dataclass(frozen=True)
class VirasoroWeight:
    c: float = 0.0
    h: float = 0.0

    def __post_init__(self):
        if self.c < 0 or self.h < 0:
            raise ValueError("c and h must be nonnegative")


def default_delta_schedule(levels: int = 10) -> np.ndarray:
    return np.pi * 2.0 ** -np.arange(1, levels + 1)


def _lags(M: int, deltas: np.ndarray, dense: int = 64, ratio: float = 1.03) -> np.ndarray:
    """Integer lags ``m`` (grid step ``2pi/M``) covering ``[min delta, pi]``."""
    h = TWO_PI / M
    m_lo = max(1, int(np.floor(deltas.min() / h)))
    m_hi = M // 2
    geo = np.unique(np.round(np.geomspace(m_lo, m_hi, int(np.log(m_hi / m_lo) / np.log(ratio)) + 2)))
    dense_part = np.arange(m_lo, min(m_lo + dense, m_hi) + 1)
    at_deltas = np.round(deltas / h)
    lags = np.unique(np.concatenate([geo, dense_part, at_deltas, [m_hi]])).astype(int)
    return lags[(lags >= m_lo) & (lags <= m_hi)]


def kernel_lag_profile(phi: CircleDiffeo, lags: np.ndarray, M: int) -> np.ndarray:
    """``g(m h) = mean_s |K(s, s + m h)|^2`` on the uniform ``M`` grid."""
    P, dP = phi.sample(M)
    P2 = np.concatenate([P, P + TWO_PI])
    dP2 = np.concatenate([dP, dP])
    out = np.empty(lags.size)
    h = TWO_PI / M
    for i, m in enumerate(lags):
        half = np.sin(m * h / 2)
        ratio = np.sqrt(dP * dP2[m:m + M]) * half / np.sin((P2[m:m + M] - P) / 2)
        out[i] = np.mean((ratio - 1.0) ** 2) / (4 * half * half)
    return out


def truncated_energies(phi: CircleDiffeo, deltas=None, M: int = 4096) -> np.ndarray:
    """``X_k = iint_{|s-t| > delta_k} |K|^2`` (circular distance) for each level."""
    deltas = default_delta_schedule() if deltas is None else np.asarray(deltas, float)
    lags = _lags(M, deltas)
    g = kernel_lag_profile(phi, lags, M)
    D = lags * TWO_PI / M
    # tail integrals int_{D_i}^{pi} g by the trapezoid rule on the lag nodes
    cell = 0.5 * (g[1:] + g[:-1]) * np.diff(D)
    tail = np.concatenate([np.cumsum(cell[::-1])[::-1], [0.0]])
    idx = np.searchsorted(D, np.round(deltas / (TWO_PI / M)) * TWO_PI / M)
    return 2.0 * TWO_PI * tail[idx]


@dataclass
class EnergyResult:
    value: float
    levels: np.ndarray
    centered: np.ndarray
    residuals: np.ndarray
    converged: bool

    @property
    def cauchy_residual(self) -> float:
        return float(self.residuals[-1])


def regularized_energy(phi, table, deltas=None, M: int | None = None) -> EnergyResult:
    """Centered truncated energies and the Cauchy residuals between levels.

    ``table`` supplies ``E_beta X_k`` (an :class:`~circlediff.measures.EnergyTable`
    or an array).  ``converged`` is False when the residuals fail to decrease.
    """
    if isinstance(table, (np.ndarray, list, tuple)):
        mean = table
    else:
        mean, deltas, M = table.mean, table.deltas, M or table.grid
    M = M or 4096
    deltas = default_delta_schedule() if deltas is None else np.asarray(deltas)
    X = truncated_energies(phi, deltas, M)
    R = X - np.asarray(mean)
    res = np.abs(np.diff(R))
    converged = bool(np.all(np.diff(res) < 0))
    return EnergyResult(float(R[-1]), X, R, res, converged)


def besov_seminorm(b, p: float = 2) -> float:
    """Dyadic Besov ``B^{1/p}_{p,p}`` seminorm of a periodic function.

    ``b`` is a callable on ``[0, 2pi]`` or an array of samples on a uniform grid.
    Blocks ``Delta_j`` collect frequencies ``2^j <= |k| < 2^{j+1}``; the result is
    ``(sum_j 2^j ||Delta_j b||_p^p)^{1/p}`` with the normalized ``L^p`` norm.
    """
    vals = np.asarray(b(uniform_grid(4096)) if callable(b) else b, float)
    M = vals.size
    F = np.fft.fft(vals)
    k = np.abs(np.fft.fftfreq(M, 1.0 / M))
    total = 0.0
    j = 0
    while 2 ** j < M // 2:
        mask = (k >= 2 ** j) & (k < 2 ** (j + 1))
        block = np.fft.ifft(np.where(mask, F, 0)).real
        total += 2.0 ** j * np.mean(np.abs(block) ** p)
        j += 1
    return float(total ** (1.0 / p))


def _abs_A(C: np.ndarray, n: int) -> np.ndarray:
    G = np.eye(C.shape[1]) - C.conj().T @ C
    w, V = np.linalg.eigh(G)
    R = (V * np.sqrt(np.clip(w, 0, None))) @ V.conj().T
    return R[:n, :n]


def operator_inequality_probe(phi, N: int = 64) -> float:
    """Smallest eigenvalue of ``|A_a| - |A_p|`` on ``H_+`` labels ``k = 0..N-1``.

    ``|A| = (1 - C^* C)^{1/2}``; the periodic mode ``k`` is matched with the
    antiperiodic mode ``k + 1/2``.
    """
    if isinstance(phi, MoebiusElement):
        phi = MoebiusDiffeo(phi)
    Ca = c_block(phi, ANTIPERIODIC, N)
    Cp = c_block(phi, PERIODIC, N)
    D = _abs_A(Ca, N) - _abs_A(Cp, N)
    return float(np.linalg.eigvalsh(0.5 * (D + D.conj().T)).min())
