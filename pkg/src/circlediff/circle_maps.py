"""Orientation-preserving circle diffeomorphisms through their lifts.

Every map is an object exposing ``jet(s, order)``: the lift ``Phi`` and its
first ``order`` derivatives (up to three) at arbitrary real points.  Closed-form
families (rotations, Moebius covers, trigonometric perturbations) give exact
jets; compositions and inverses are lazy and propagate jets by the chain rule,
so cocycle and Radon-Nikodym computations never difference noisy data.
Sampled lifts enter through :class:`GridDiffeo`, bridge data through
:class:`BridgeDiffeo`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.interpolate import BPoly, CubicSpline

from .bridge import TWO_PI, BridgePath

__all__ = [
    "DomainError", "NumericalError", "CircleDiffeo", "Rotation", "MoebiusElement",
    "MoebiusDiffeo", "TrigDiffeo", "GridDiffeo", "BridgeDiffeo", "ComposedDiffeo",
    "InverseDiffeo", "LogDerivative", "TrigVectorField", "compose", "invert",
    "moebius_diffeo", "diffeo_from_log_derivative", "log_derivative", "bott_cocycle",
    "virasoro_cocycle", "left_action", "random_trig_diffeo", "identity",
]


class DomainError(ValueError):
    """Input outside the domain of an operation (non-monotone lift, bad endpoints)."""


class NumericalError(ArithmeticError):
    """A numerical procedure failed to converge or lost its branch."""


def uniform_grid(M: int) -> np.ndarray:
    return TWO_PI * np.arange(M) / M


class CircleDiffeo:
    """Base class: subclasses implement :meth:`jet`."""

    max_order = 3

    def jet(self, s, order: int = 1) -> list[np.ndarray]:
        raise NotImplementedError

    def lift(self, s) -> np.ndarray:
        return self.jet(s, 0)[0]

    def __call__(self, z):
        """Action on points of the unit circle."""
        z = np.asarray(z, dtype=complex)
        return np.exp(1j * self.lift(np.angle(z)))

    def sample(self, L: int) -> tuple[np.ndarray, np.ndarray]:
        """``(Phi, Phi')`` on the uniform grid ``2 pi j / L``."""
        P, dP = self.jet(uniform_grid(L), 1)
        return P, dP

    @cached_property
    def _periodic_range(self) -> tuple[float, float]:
        th = uniform_grid(2048)
        p = self.lift(th) - th
        spread = p.max() - p.min()
        return p.min() - 0.05 * spread - 1e-3, p.max() + 0.05 * spread + 1e-3

    def inverse_lift(self, x, tol: float = 1e-15, maxiter: int = 200) -> np.ndarray:
        """Solve ``Phi(s) = x`` by Newton steps safeguarded by bisection."""
        x = np.asarray(x, dtype=float)
        pmin, pmax = self._periodic_range
        lo, hi = x - pmax, x - pmin
        for _ in range(60):
            bad_lo = self.lift(lo) > x
            bad_hi = self.lift(hi) < x
            if not (bad_lo.any() or bad_hi.any()):
                break
            lo = np.where(bad_lo, lo - np.pi, lo)
            hi = np.where(bad_hi, hi + np.pi, hi)
        else:
            raise NumericalError("could not bracket the inverse lift")
        s = 0.5 * (lo + hi)
        scale = tol * (1.0 + np.abs(x))
        for it in range(maxiter):
            F, dF = self.jet(s, 1)
            r = F - x
            lo = np.where(r <= 0, s, lo)
            hi = np.where(r >= 0, s, hi)
            with np.errstate(divide="ignore", invalid="ignore"):
                step = s - r / dF
            # interpolated jets can make Newton cycle at rounding level; bisection then finishes
            bad = ~np.isfinite(step) | (step < lo) | (step > hi) | (it >= 40)
            s_new = np.where(bad, 0.5 * (lo + hi), step)
            done = np.all((np.abs(s_new - s) <= scale) | (hi - lo <= scale))
            s = s_new
            if done:
                return s
        raise NumericalError("inverse lift did not converge")

    def check_monotone(self, M: int = 4096) -> None:
        _, dP = self.sample(M)
        if not np.all(np.isfinite(dP)) or dP.min() <= 0:
            raise DomainError("lift is not strictly increasing")

    def to_grid(self, M: int = 4096) -> "GridDiffeo":
        return GridDiffeo(self.lift(uniform_grid(M)))

    def to_json(self, M: int = 4096) -> str:
        th = uniform_grid(M)
        return json.dumps({"grid_size": M, "lift_values": self.lift(th).tolist()})

    def to_csv(self, M: int = 4096) -> str:
        th = uniform_grid(M)
        rows = "\n".join(f"{a:.17g},{b:.17g}" for a, b in zip(th, self.lift(th)))
        return "theta,Phi\n" + rows + "\n"


class Rotation(CircleDiffeo):
    """``Rot(e^{i angle})``: the lift ``s + angle``."""

    def __init__(self, angle: float = 0.0):
        self.angle = float(angle)

    def jet(self, s, order=1):
        s = np.asarray(s, dtype=float)
        out = [s + self.angle]
        if order >= 1:
            out.append(np.ones_like(s))
        out += [np.zeros_like(s)] * max(order - 1, 0)
        return out

    def inverse_lift(self, x, **_):
        return np.asarray(x, float) - self.angle

    def __repr__(self):
        return f"Rotation({self.angle:.6g})"


def identity() -> Rotation:
    return Rotation(0.0)


@dataclass(frozen=True)
class MoebiusElement:
    """``[[a, b], [conj b, conj a]]`` with ``|a|^2 - |b|^2 = 1`` at cover level ``n``."""

    a: complex
    b: complex
    level: int = 1

    def __post_init__(self):
        det = abs(self.a) ** 2 - abs(self.b) ** 2
        if abs(det - 1.0) > 1e-9:
            raise DomainError(f"|a|^2 - |b|^2 = {det}, expected 1")
        if self.level < 1:
            raise DomainError("cover level must be a positive integer")

    @classmethod
    def from_w(cls, w: complex, phase: float = 0.0, level: int = 1) -> "MoebiusElement":
        """Element with ``b / a = w`` and ``arg a = phase``."""
        if abs(w) >= 1:
            raise DomainError("|w| must be < 1")
        a = np.exp(1j * phase) / np.sqrt(1.0 - abs(w) ** 2)
        return cls(complex(a), complex(w * a), level)

    @classmethod
    def from_r(cls, r: float, level: int = 1) -> "MoebiusElement":
        return cls.from_w(r, 0.0, level)

    @property
    def w(self) -> complex:
        return self.b / self.a

    @property
    def r(self) -> float:
        return abs(self.w)

    def matrix(self) -> np.ndarray:
        a, b = self.a, self.b
        return np.array([[a, b], [np.conj(b), np.conj(a)]])

    def __matmul__(self, other: "MoebiusElement") -> "MoebiusElement":
        if other.level != self.level:
            raise DomainError("levels differ")
        m = self.matrix() @ other.matrix()
        return MoebiusElement(complex(m[0, 0]), complex(m[0, 1]), self.level)

    def inverse(self) -> "MoebiusElement":
        return MoebiusElement(np.conj(self.a), -self.b, self.level)

    def act(self, z):
        """Action on the covered circle variable ``z' = z^n``."""
        a, b = self.a, self.b
        return (np.conj(b) + np.conj(a) * z) / (a + b * z)


class MoebiusDiffeo(CircleDiffeo):
    """Level-``n`` lift ``theta - (2/n) arg a - (2/n) Arg(1 + w e^{i n theta})``."""

    def __init__(self, m: MoebiusElement):
        self.element = m
        self.n = m.level
        self.w = m.w
        self._shift = -2.0 / self.n * np.angle(m.a)

    def jet(self, s, order=1):
        s = np.asarray(s, dtype=float)
        n, w = self.n, self.w
        wz = w * np.exp(1j * n * s)
        out = [s + self._shift - 2.0 / n * np.angle(1.0 + wz)]
        if order >= 1:
            q = wz / (1.0 + wz)
            inn = 1j * n
            g = [inn * q]
            if order >= 2:
                g.append(inn ** 2 * (q - q * q))
            if order >= 3:
                g.append(inn ** 3 * (q - q * q) * (1.0 - 2.0 * q))
            out.append(1.0 - 2.0 / n * g[0].imag)
            out += [-2.0 / n * gk.imag for gk in g[1:]]
        return out

    def __repr__(self):
        return f"MoebiusDiffeo(w={self.w:.4g}, n={self.n})"


def moebius_diffeo(m: MoebiusElement) -> MoebiusDiffeo:
    return MoebiusDiffeo(m)


class TrigDiffeo(CircleDiffeo):
    """``Phi(s) = s + shift + sum_k (a_k cos ks + b_k sin ks)``, ``k = 1..K``."""

    def __init__(self, cos_coefficients, sin_coefficients, shift: float = 0.0):
        self.a = np.asarray(cos_coefficients, float).ravel()
        self.b = np.asarray(sin_coefficients, float).ravel()
        if self.a.size != self.b.size:
            raise ValueError("coefficient arrays must have equal length")
        self.shift = float(shift)
        self.k = np.arange(1, self.a.size + 1)
        if np.sum(self.k * (np.abs(self.a) + np.abs(self.b))) >= 1.0:
            self.check_monotone()

    def jet(self, s, order=1):
        s = np.asarray(s, dtype=float)
        ks = np.multiply.outer(s, self.k)
        c, sn = np.cos(ks), np.sin(ks)
        out = [s + self.shift + c @ self.a + sn @ self.b]
        # d/ds of (a cos + b sin) cycles through (-a sin + b cos), (-a cos - b sin), ...
        for j in range(1, order + 1):
            kj = self.k ** j
            coeffs = [(c, self.a, sn, self.b), (sn, -self.a, c, self.b),
                      (c, -self.a, sn, -self.b), (sn, self.a, c, -self.b)][j % 4]
            x1, y1, x2, y2 = coeffs
            d = x1 @ (kj * y1) + x2 @ (kj * y2)
            out.append(d + (1.0 if j == 1 else 0.0))
        return out

    def __repr__(self):
        return f"TrigDiffeo(K={self.k.size}, shift={self.shift:.4g})"


def random_trig_diffeo(rng, n_modes: int = 3, amplitude: float = 0.3,
                       rotate: bool = True) -> TrigDiffeo:
    """Random trigonometric diffeo with ``sum_k k(|a_k|+|b_k|) = amplitude < 1``."""
    rng = np.random.default_rng(rng)
    a = rng.standard_normal(n_modes)
    b = rng.standard_normal(n_modes)
    k = np.arange(1, n_modes + 1)
    scale = amplitude / np.sum(k * (np.abs(a) + np.abs(b)))
    shift = rng.uniform(0, TWO_PI) if rotate else 0.0
    return TrigDiffeo(a * scale, b * scale, shift)


class GridDiffeo(CircleDiffeo):
    """Lift sampled at ``2 pi j / M``; periodic cubic spline of ``Phi(s) - s``."""

    def __init__(self, lift_values):
        P = np.asarray(lift_values, float).ravel()
        M = P.size
        th = uniform_grid(M)
        if np.any(np.diff(np.append(P, P[0] + TWO_PI)) <= 0):
            raise DomainError("lift values are not strictly increasing")
        p = P - th
        self.grid_size = M
        self.lift_values = P
        self._spline = CubicSpline(np.append(th, TWO_PI), np.append(p, p[0]),
                                   bc_type="periodic")

    @property
    def inverse_lift_values(self) -> np.ndarray:
        return self.inverse_lift(uniform_grid(self.grid_size))

    @classmethod
    def from_json(cls, text: str) -> "GridDiffeo":
        return cls(json.loads(text)["lift_values"])

    def jet(self, s, order=1):
        s = np.asarray(s, dtype=float)
        r = np.mod(s, TWO_PI)
        out = [s + self._spline(r)]
        for j in range(1, order + 1):
            out.append(self._spline(r, j) + (1.0 if j == 1 else 0.0))
        return out


class ComposedDiffeo(CircleDiffeo):
    """``f o g`` with jets from the chain rule."""

    def __init__(self, f: CircleDiffeo, g: CircleDiffeo):
        self.f, self.g = f, g

    def jet(self, s, order=1):
        G = self.g.jet(s, order)
        F = self.f.jet(G[0], order)
        out = [F[0]]
        if order >= 1:
            out.append(F[1] * G[1])
        if order >= 2:
            out.append(F[2] * G[1] ** 2 + F[1] * G[2])
        if order >= 3:
            out.append(F[3] * G[1] ** 3 + 3.0 * F[2] * G[1] * G[2] + F[1] * G[3])
        return out

    def inverse_lift(self, x, **kw):
        return self.g.inverse_lift(self.f.inverse_lift(x, **kw), **kw)

    def __repr__(self):
        return f"({self.f!r} o {self.g!r})"


class InverseDiffeo(CircleDiffeo):
    """``f^{-1}``; values by Newton, derivatives by the inverse function rule."""

    def __init__(self, f: CircleDiffeo):
        self.f = f

    def jet(self, s, order=1):
        psi = self.f.inverse_lift(s)
        out = [psi]
        if order >= 1:
            F = self.f.jet(psi, order)
            d1 = 1.0 / F[1]
            out.append(d1)
            if order >= 2:
                out.append(-F[2] * d1 ** 3)
            if order >= 3:
                out.append(-F[3] * d1 ** 4 + 3.0 * F[2] ** 2 * d1 ** 5)
        return out

    def inverse_lift(self, x, **_):
        return self.f.lift(x)


def compose(phi: CircleDiffeo, psi: CircleDiffeo) -> CircleDiffeo:
    """``phi o psi`` (lazy, exact jets)."""
    if isinstance(phi, Rotation) and isinstance(psi, Rotation):
        return Rotation(phi.angle + psi.angle)
    return ComposedDiffeo(phi, psi)


def invert(phi: CircleDiffeo) -> CircleDiffeo:
    if isinstance(phi, Rotation):
        return Rotation(-phi.angle)
    if isinstance(phi, InverseDiffeo):
        return phi.f
    return InverseDiffeo(phi)


def _em_cumulative(f, df, d3f, h):
    """Cumulative integral with Euler-Maclaurin end corrections per cell."""
    cell = (0.5 * h * (f[1:] + f[:-1])
            - h * h / 12.0 * (df[1:] - df[:-1])
            + h ** 4 / 720.0 * (d3f[1:] - d3f[:-1]))
    return np.concatenate([[0.0], np.cumsum(cell)])


class BridgeDiffeo(CircleDiffeo):
    """``Rot(rotation) o psi_1`` with ``Psi_1(t) = alpha int_0^t e^b``."""

    def __init__(self, b: BridgePath, rotation: float = 0.0, grid_size: int | None = None):
        self.bridge = b
        self.rotation = float(rotation)
        self.grid_size = grid_size or max(4096, 16 * b.n_modes)
        self._grids: dict[int, np.ndarray] = {}
        self._alphas: dict[int, float] = {}

    @property
    def alpha(self) -> float:
        """Normalizer ``((1/2pi) int e^b)^{-1}`` from the reference grid."""
        self.grid_lift(self.grid_size)
        return self._alphas[self.grid_size]

    @cached_property
    def _interp(self) -> BPoly:
        t, P = self.grid_lift(self.grid_size)
        b0 = self.bridge.grid(self.grid_size, 0)
        b1 = self.bridge.grid(self.grid_size, 1)
        d1 = self.alpha * np.exp(b0)
        return BPoly.from_derivatives(t, np.column_stack([P, d1, d1 * b1]))

    def grid_lift(self, K: int) -> tuple[np.ndarray, np.ndarray]:
        """``(t_j, Psi_1(t_j))`` for ``j = 0..K``."""
        if K not in self._grids:
            b = self.bridge
            b0, b1, b2, b3 = (b.grid(K, k) for k in range(4))
            f = np.exp(b0)
            cum = _em_cumulative(f, f * b1, f * (b3 + 3 * b1 * b2 + b1 ** 3), TWO_PI / K)
            alpha = TWO_PI / cum[-1]
            self._alphas[K] = alpha
            P = alpha * cum
            P[-1] = TWO_PI
            self._grids[K] = P
        return TWO_PI * np.arange(K + 1) / K, self._grids[K]

    def sample(self, L: int):
        m = max(1, -(-2048 // L))
        K = L * m
        _, P = self.grid_lift(K)
        e = self._alphas[K] * np.exp(self.bridge.grid(K, 0))
        return P[:-1:m] + self.rotation, e[:-1:m]

    def jet(self, s, order=1):
        s = np.asarray(s, dtype=float)
        k, r = np.divmod(s, TWO_PI)
        out = [self._interp(r) + TWO_PI * k + self.rotation]
        if order >= 1:
            b = self.bridge
            d1 = self.alpha * np.exp(b.derivative(r, 0))
            out.append(d1)
            if order >= 2:
                b1 = b.derivative(r, 1)
                out.append(d1 * b1)
            if order >= 3:
                out.append(d1 * (b.derivative(r, 2) + b1 ** 2))
        return out

    def __repr__(self):
        return f"BridgeDiffeo(n_modes={self.bridge.n_modes}, rotation={self.rotation:.4g})"


def diffeo_from_log_derivative(b, rotation: float = 0.0, grid_size: int | None = None,
                               tol: float = 1e-10) -> BridgeDiffeo:
    """Based diffeo with log-derivative ``b``, followed by a rotation."""
    if not isinstance(b, BridgePath):
        vals = np.asarray([b(0.0), b(TWO_PI)], float)
        if np.max(np.abs(vals)) > tol:
            raise DomainError("b must vanish at 0 and 2 pi")
        M = grid_size or 4096
        b = BridgePath.from_samples(b(TWO_PI * np.arange(M + 1) / M), M // 2)
    return BridgeDiffeo(b, rotation, grid_size)


class LogDerivative:
    """``b_psi(t) = ln Psi'(t) - ln Psi'(0)`` with derivatives from the jet."""

    def __init__(self, psi: CircleDiffeo, check_grid: int = 1024):
        self.psi = psi
        _, dP = psi.sample(check_grid)
        if not np.all(np.isfinite(dP)) or dP.min() <= 0:
            raise DomainError("lift is not C^1-resolvable with positive derivative")
        self._offset = float(np.log(psi.jet(np.array([0.0]), 1)[1][0]))

    def __call__(self, t):
        return np.log(self.psi.jet(t, 1)[1]) - self._offset

    def derivative(self, t, order: int = 1):
        J = self.psi.jet(t, order + 1)
        if order == 0:
            return np.log(J[1]) - self._offset
        h1 = J[2] / J[1]
        if order == 1:
            return h1
        if order == 2:
            return J[3] / J[1] - h1 ** 2
        raise ValueError("order must be 0, 1 or 2")


def log_derivative(psi: CircleDiffeo) -> LogDerivative:
    return LogDerivative(psi)


def bott_cocycle(phi: CircleDiffeo, psi: CircleDiffeo, M: int = 4096) -> float:
    """``(1/48 pi) Re int log(phi' o psi) d log psi'`` by the periodic trapezoid rule.

    With ``z = e^{i theta}`` the complex logarithms are ``i(Phi(X) - X) + ln Phi'(X)``
    and ``i(X - theta) + ln X'`` where ``X`` is the lift of ``psi``, so lifts carry the
    branch and the real part reduces to ``B D - A C`` below.
    """
    th = uniform_grid(M)
    X, dX, d2X = psi.jet(th, 2)
    F, dF = phi.jet(X, 1)
    if dF.min() <= 0 or dX.min() <= 0 or not np.all(np.isfinite(dF * dX)):
        raise NumericalError("logarithm branch lost: non-positive derivative")
    A = F - X
    B = np.log(dF)
    C = dX - 1.0
    D = d2X / dX
    return float(np.mean(B * D - A * C) * TWO_PI / (48.0 * np.pi))


class TrigVectorField:
    """``xi(theta) d/dtheta`` with ``xi = sum_k c_k e^{i k theta}`` (finite support).

    Complex coefficients are allowed so that ``L_n = i e^{i n theta} d/dtheta`` is
    representable; :attr:`is_real` reports conjugate symmetry.
    """

    def __init__(self, coefficients: dict[int, complex]):
        self.coefficients = {int(k): complex(v) for k, v in coefficients.items() if v != 0}

    @classmethod
    def L(cls, n: int) -> "TrigVectorField":
        return cls({n: 1j})

    @property
    def degree(self) -> int:
        return max((abs(k) for k in self.coefficients), default=0)

    @property
    def is_real(self) -> bool:
        c = self.coefficients
        return all(np.isclose(c.get(-k, 0), np.conj(v)) for k, v in c.items())

    def derivative(self, theta, order: int = 0):
        theta = np.asarray(theta, float)
        out = np.zeros(theta.shape, complex)
        for k, v in self.coefficients.items():
            out += v * (1j * k) ** order * np.exp(1j * k * theta)
        return out

    def __call__(self, theta):
        return self.derivative(theta, 0)


def virasoro_cocycle(xi: TrigVectorField, eta: TrigVectorField,
                     convention: str = "group") -> complex:
    """Lie algebra cocycle ``(i/24 pi) int (xi''' + xi') eta dtheta``.

    The integrand is a trigonometric polynomial, so the trapezoid rule on
    ``M > deg xi + deg eta`` points is exact.  The literal integral pairs with
    the vector-field bracket; ``convention="group"`` negates it, which is the
    normalization in which ``c(L_n, L_{-n}) = n(n^2 - 1)/12``.
    """
    if convention not in ("group", "vector_field"):
        raise ValueError("convention must be 'group' or 'vector_field'")
    M = 2 * (xi.degree + eta.degree) + 8
    th = uniform_grid(M)
    integrand = (xi.derivative(th, 3) + xi.derivative(th, 1)) * eta(th)
    val = 1j / (24 * np.pi) * TWO_PI * np.mean(integrand)
    return complex(-val if convention == "group" else val)


def left_action(phi: CircleDiffeo, b: BridgePath, n_modes: int | None = None,
                grid_size: int | None = None, psi1: BridgeDiffeo | None = None) -> BridgePath:
    """``b -> b_{(phi o psi_1)_1}``: log-derivative of the re-based composition.

    With ``t0 = Psi_1^{-1}(Phi^{-1}(0) mod 2pi)`` the new path is
    ``ln Phi'(Psi_1(t + t0)) + b(t + t0)`` minus its value at ``t = 0``.  For a
    rotation by ``s`` this is the time shift ``b(t + T) - b(T)`` with
    ``Psi_1(T) = 2 pi - s``.
    """
    n_out = n_modes or b.n_modes
    M = grid_size or 1 << int(np.ceil(np.log2(4 * n_out)))
    psi1 = psi1 or BridgeDiffeo(b)
    x0 = np.mod(phi.inverse_lift(np.array([0.0]))[0], TWO_PI)
    t0 = float(np.mod(psi1.inverse_lift(np.array([x0]))[0], TWO_PI))
    tau = t0 + TWO_PI * np.arange(M + 1) / M
    vals = b(tau)
    if not isinstance(phi, Rotation):
        vals = vals + np.log(phi.jet(psi1.lift(tau), 1)[1])
    vals = vals - vals[0]
    vals[-1] = 0.0
    return BridgePath.from_samples(vals, n_out, b.beta)
