"""Monte Carlo on the bridge measures and their reweightings.

Every experiment derives one child :class:`numpy.random.SeedSequence` per
sample from a root seed.  Sample ``i`` therefore sees the same random stream
whatever the worker count, and aggregation happens in sample order, so results
are bit-identical in single- and multi-worker runs.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special, stats

from .bridge import (REFERENCE_BETA, STANDARD_BETA, TWO_PI, BridgePath, cameron_martin_beta,
                     sample_bridge)
from .circle_maps import BridgeDiffeo, CircleDiffeo, DomainError, NumericalError, Rotation
from .operators import (ANTIPERIODIC, PERIODIC, VirasoroWeight, c_block, default_delta_schedule,
                        det2_abs_A_from_C, det_abs_A2_from_C, regularized_energy,
                        truncated_energies)
from .welding import WeldingError, area, check_bounds, weld

__all__ = [
    "BridgePath", "sample_bridge", "MCEstimate", "fingerprint", "seed_sequence", "map_samples",
    "sample_nu_beta", "rn_derivative", "transfer_check", "CameronMartinShift",
    "shift_bound_check", "question_3220_statistic", "question_3220_estimator",
    "sample_bridge_refined", "pitman_yor_functional", "pitman_yor_experiment", "EnergyTable",
    "weight_ch", "sample_nu_bch", "beta_sweep_limits", "REFERENCE_BETA", "STANDARD_BETA",
]

QUANTILE_LEVELS = (1, 5, 25, 50, 75, 95, 99)


# ---------------------------------------------------------------- plumbing

def fingerprint(config: dict) -> str:
    """Stable hash of a JSON-serializable configuration."""
    text = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def seed_sequence(seed) -> np.random.SeedSequence:
    """Normalize an int, ``SeedSequence``, ``Generator`` or ``None`` to a ``SeedSequence``."""
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, np.random.Generator):
        return np.random.SeedSequence(int(seed.integers(2 ** 63)))
    return np.random.SeedSequence(seed)


def _seed_label(seed) -> int | None:
    ss = seed_sequence(seed)
    return ss.entropy if isinstance(ss.entropy, int) else None


def _call(args):
    fn, child = args
    return fn(np.random.default_rng(child))


def map_samples(fn: Callable[[np.random.Generator], object], n_samples: int, seed=None,
                workers: int = 1) -> list:
    """Evaluate ``fn(rng_i)`` for ``i < n_samples`` with per-sample substreams.

    The output is in sample order for any ``workers``; with ``workers > 1``
    ``fn`` must be picklable (a module-level function or ``functools.partial``).
    """
    children = seed_sequence(seed).spawn(n_samples)
    if workers <= 1:
        return [fn(np.random.default_rng(c)) for c in children]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_call, [(fn, c) for c in children],
                             chunksize=max(1, n_samples // (8 * workers))))


@dataclass
class MCEstimate:
    mean: float
    stderr: float
    n_samples: int
    seed: int | None = None
    config_fingerprint: str = ""
    quantiles: dict = field(default_factory=dict)

    @classmethod
    def from_samples(cls, values, seed=None, config: dict | None = None) -> "MCEstimate":
        v = np.asarray(values, float)
        n = v.size
        sd = float(v.std(ddof=1)) if n > 1 else float("nan")
        q = np.percentile(v, QUANTILE_LEVELS) if n else np.full(len(QUANTILE_LEVELS), np.nan)
        return cls(float(v.mean()) if n else float("nan"), sd / math.sqrt(max(n, 1)), n,
                   _seed_label(seed) if seed is not None else None,
                   fingerprint(config) if config is not None else "",
                   {f"p{k}": float(x) for k, x in zip(QUANTILE_LEVELS, q)})

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.mean - target) <= k * self.stderr

    def to_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "n_samples": self.n_samples,
                "seed": self.seed, "config_fingerprint": self.config_fingerprint,
                **self.quantiles}


# ---------------------------------------------------------------- sampling

def sample_nu_beta(beta: float, rng=None, n_modes: int = 512) -> BridgeDiffeo:
    """``Rot(U) o psi_1`` with ``psi_1`` from a bridge and ``U`` uniform, independent."""
    rng = np.random.default_rng(rng)
    b = sample_bridge(beta, n_modes, rng)
    return BridgeDiffeo(b, rotation=float(rng.uniform(0.0, TWO_PI)))


def _psi_grid(b: BridgePath, K: int):
    psi = BridgeDiffeo(b, grid_size=K)
    t, P = psi.grid_lift(K)
    d1 = psi._alphas[K] * np.exp(b.grid(K, 0))
    return t, P, d1


def _trapezoid(f: np.ndarray, h: float) -> float:
    return float(h * (f.sum() - 0.5 * (f[0] + f[-1])))


def rn_derivative(phi: CircleDiffeo, b: BridgePath, beta: float, K: int = 4096,
                  form: str = "exact") -> float:
    """Radon-Nikodym derivative of the left action ``b -> b_{(phi o psi_1)_1}``.

    Normalized so that ``E[G(T_phi b) R_phi(b)] = E[G(b)]`` and ``E R_phi = 1``.
    With ``h = ln Phi'`` and the Cameron-Martin scale ``beta_cm = 4 beta / pi``,

        R = Psi_1'(0) / (Phi o Psi_1)'(T) * exp(-beta_cm/2 int (h'^2 - 2 h'')(Psi_1) Psi_1'^2)

    where ``T = Psi_1^{-1}(Phi^{-1}(0))`` is the new base point.  The prefactor
    is the Jacobian of the re-basing: it is ``1/Phi'(0)`` for maps fixing ``1``
    and ``Psi_1'(0)/Psi_1'(T)`` for a rotation.  ``form="schwarzian"`` drops it
    and returns the bare exponential, which has mean ``1`` only when the
    prefactor is ``1``.
    """
    return _rn_on_grid(phi, _psi_grid(b, K), beta, form)


def _base_point(phi: CircleDiffeo, grid) -> tuple[float, float]:
    """New base time ``T`` and ``(Phi o Psi_1)'(T)``."""
    t, P, d1 = grid
    x0 = float(np.mod(phi.inverse_lift(np.array([0.0]))[0], TWO_PI))
    T = float(np.interp(x0, P, t))
    return T, float(np.interp(T, t, d1)) * float(phi.jet(np.array([x0]), 1)[1][0])


def _rn_on_grid(phi: CircleDiffeo, grid, beta: float, form: str = "exact") -> float:
    if form not in ("exact", "schwarzian"):
        raise ValueError("form must be 'exact' or 'schwarzian'")
    t, P, d1 = grid
    if isinstance(phi, Rotation):
        expo = 0.0
    else:
        _, p1, p2, p3 = phi.jet(P, 3)
        if not (np.all(np.isfinite(p3)) and p1.min() > 0):
            raise DomainError("map derivatives are not resolved on the grid")
        hp = p2 / p1
        hpp = p3 / p1 - hp * hp
        K = t.size - 1
        expo = -0.5 * cameron_martin_beta(beta) * _trapezoid((hp * hp - 2 * hpp) * d1 * d1,
                                                             TWO_PI / K)
    if form == "schwarzian":
        return float(np.exp(expo))
    _, dT = _base_point(phi, grid)
    return float(d1[0] / dT * np.exp(expo))


def acted_path_values(phi: CircleDiffeo, b: BridgePath, times, K: int = 4096) -> np.ndarray:
    """``(T_phi b)(t)`` at the given times, from the re-based composition."""
    return _acted_on_grid(phi, _psi_grid(b, K), times)


def _acted_on_grid(phi: CircleDiffeo, grid, times) -> np.ndarray:
    t, P, d1 = grid
    T, dT = _base_point(phi, grid)

    def logd(tt):
        tt = np.mod(tt, TWO_PI)
        return np.log(np.interp(tt, t, d1) * phi.jet(np.interp(tt, t, P), 1)[1])

    return logd(T + np.asarray(times, float)) - math.log(dT)


@dataclass
class TransferReport:
    rn_mean: MCEstimate
    forward: list            # (E[G(T b) R_phi], E[G(b)]) per functional
    pushforward: list        # (E[G(T b)], E[G(b) R_{phi^-1}]) per functional
    schwarzian_mean: MCEstimate

    def passes(self, k: float = 3.0) -> bool:
        ok = self.rn_mean.within(1.0, k)
        for lhs, rhs in self.forward + self.pushforward:
            ok &= abs(lhs.mean - rhs.mean) <= k * math.hypot(lhs.stderr, rhs.stderr)
        return bool(ok)


DEFAULT_FUNCTIONALS = {
    "cos_b_pi": (np.array([np.pi]), lambda v: np.cos(v[..., 0])),
    "b_half_times_b_pi": (np.array([np.pi / 2, np.pi]), lambda v: v[..., 0] * v[..., 1]),
}


def transfer_check(phi: CircleDiffeo, phi_inverse: CircleDiffeo, beta: float,
                   n_samples: int = 10_000, seed=None, n_modes: int = 256, K: int = 2048,
                   functionals: dict | None = None) -> TransferReport:
    """Monte Carlo check of ``E R = 1`` and of the two transfer identities.

    The forward identity is ``E[G(T_phi b) R_phi(b)] = E[G(b)]``; the
    push-forward identity is ``E[G(T_phi b)] = E[G(b) R_{phi^{-1}}(b)]``.
    Each side uses the same samples, so the comparison uses paired errors only
    through the independent-stderr bound.
    """
    functionals = functionals or DEFAULT_FUNCTIONALS
    rows = {k: [] for k in ("R", "Rs", "Rinv")}
    gvals = {name: ([], [], []) for name in functionals}
    for rng in (np.random.default_rng(c) for c in seed_sequence(seed).spawn(n_samples)):
        b = sample_bridge(beta, n_modes, rng)
        grid = _psi_grid(b, K)
        R = _rn_on_grid(phi, grid, beta)
        rows["R"].append(R)
        rows["Rs"].append(_rn_on_grid(phi, grid, beta, "schwarzian"))
        rows["Rinv"].append(_rn_on_grid(phi_inverse, grid, beta))
        for name, (times, G) in functionals.items():
            acted = G(_acted_on_grid(phi, grid, times))
            plain = G(b(times))
            gvals[name][0].append(acted)
            gvals[name][1].append(plain)
            gvals[name][2].append(float(acted) * R)
    Rinv = np.array(rows["Rinv"])
    forward, push = [], []
    for name in functionals:
        acted, plain, weighted = (np.asarray(x, float) for x in gvals[name])
        forward.append((MCEstimate.from_samples(weighted), MCEstimate.from_samples(plain)))
        push.append((MCEstimate.from_samples(acted), MCEstimate.from_samples(plain * Rinv)))
    return TransferReport(MCEstimate.from_samples(rows["R"], seed), forward, push,
                          MCEstimate.from_samples(rows["Rs"], seed))


# ---------------------------------------------------------------- Gaussian shift

@dataclass(frozen=True)
class CameronMartinShift:
    """A finite-mode shift ``h = sum h_n sin(n t / 2)``."""

    coefficients: np.ndarray

    @classmethod
    def single_mode(cls, n: int, amplitude: float) -> "CameronMartinShift":
        c = np.zeros(n)
        c[n - 1] = amplitude
        return cls(c)

    @classmethod
    def with_norm(cls, n: int, norm: float) -> "CameronMartinShift":
        """Single mode ``n`` with ``int h'^2 = norm^2``."""
        return cls.single_mode(n, norm / (n * math.sqrt(np.pi / 4.0)))

    @property
    def norm2(self) -> float:
        """``int_0^{2pi} h'^2``."""
        n = np.arange(1, len(self.coefficients) + 1)
        return float(np.pi / 4.0 * np.sum(n * n * np.asarray(self.coefficients) ** 2))

    def pairing(self, b_coefficients: np.ndarray) -> np.ndarray:
        """``int h' b'`` for coefficient rows of bridge samples."""
        h = np.asarray(self.coefficients, float)
        n = np.arange(1, h.size + 1)
        return (np.pi / 4.0) * (np.asarray(b_coefficients)[..., :h.size] @ (n * n * h))


def shift_moment_exact(sigma2: float, p: float) -> float:
    """``E|exp(s Z - s^2/2) - 1|^p`` for ``Z ~ N(0,1)`` by Gauss-Hermite quadrature."""
    if sigma2 == 0:
        return 0.0
    s = math.sqrt(sigma2)
    # split at the kink z = s/2 for accuracy
    total = 0.0
    for lo, hi in ((-40.0, s / 2), (s / 2, 40.0)):
        xs, ws = np.polynomial.legendre.leggauss(400)
        z = 0.5 * (hi - lo) * xs + 0.5 * (hi + lo)
        f = np.abs(np.expm1(s * z - sigma2 / 2)) ** p * np.exp(-z * z / 2) / math.sqrt(TWO_PI)
        total += 0.5 * (hi - lo) * np.sum(ws * f)
    return float(total)


@dataclass
class ShiftBoundReport:
    lhs: MCEstimate
    bound: float
    exact: float
    sigma2: float

    @property
    def holds(self) -> bool:
        return self.lhs.mean - 3 * self.lhs.stderr <= self.bound


def shift_bound_check(h: CameronMartinShift, beta: float, p: float = 2.0,
                      n_samples: int = 10_000, seed=None, n_modes: int = 64) -> ShiftBoundReport:
    """Estimate ``int |d(b+h)/db - 1|^p`` against ``2 Gamma((p+1)/2) (beta_cm |h|^2)^{p/2}``.

    For the translation ``b -> b + h`` the derivative is
    ``exp(-beta_cm <h, b> - beta_cm |h|^2 / 2)``, evaluated on bridge samples.
    """
    rng = np.random.default_rng(seed_sequence(seed))
    n = np.arange(1, n_modes + 1)
    coef = rng.standard_normal((n_samples, n_modes)) / (math.sqrt(beta) * n)
    bcm = cameron_martin_beta(beta)
    sigma2 = bcm * h.norm2
    R = np.exp(-bcm * h.pairing(coef) - 0.5 * sigma2)
    lhs = MCEstimate.from_samples(np.abs(R - 1.0) ** p, seed,
                                  {"beta": beta, "p": p, "h": list(map(float, h.coefficients))})
    bound = 2.0 * special.gamma((p + 1) / 2) * sigma2 ** (p / 2)
    return ShiftBoundReport(lhs, float(bound), shift_moment_exact(sigma2, p), sigma2)


# ---------------------------------------------------------------- fine bridges near the maximum

def diffusion_coefficient(beta: float) -> float:
    """Quadratic variation rate of the bridge at ``beta``: ``pi / (4 beta)``."""
    return STANDARD_BETA / beta


def sample_bridge_refined(beta: float, rng, coarse: int = 4096, window: float = 0.1,
                          resolution: float = 1e-4, scale: float | None = None,
                          max_points: int = 2_000_000):
    """Exact bridge samples, refined near the maximum.

    The path is drawn exactly on a uniform ``coarse`` grid, then every interval
    that may reach within ``window`` of the running maximum is bisected with
    conditional Brownian-bridge midpoints.  Intervals touching the maximum end
    up shorter than ``resolution``; one lying ``d`` below it may be
    ``e^{d/scale}`` times longer (``scale`` defaults to ``window / 20``).
    Returns nonuniform ``(t, values)``.
    """
    rng = np.random.default_rng(rng)
    scale = scale or window / 20.0
    D = diffusion_coefficient(beta)
    h = TWO_PI / coarse
    w = np.concatenate([[0.0], np.cumsum(rng.standard_normal(coarse) * math.sqrt(D * h))])
    t = np.linspace(0.0, TWO_PI, coarse + 1)
    v = w - t / TWO_PI * w[-1]
    while True:
        dt = np.diff(t)
        top = v.max()
        deficit = np.maximum(top - np.maximum(v[:-1], v[1:]) - 4.0 * np.sqrt(D * dt), 0.0)
        # far below the maximum a coarser step is enough: allow it to grow like e^{deficit}
        allowed = resolution * np.exp(np.minimum(deficit / scale, 30.0))
        sel = np.nonzero((deficit <= window) & (dt > allowed))[0]
        if sel.size == 0:
            break
        if t.size + sel.size > max_points:
            raise NumericalError("refinement exceeded the point budget")
        mid_t = 0.5 * (t[sel] + t[sel + 1])
        mid_v = (0.5 * (v[sel] + v[sel + 1])
                 + rng.standard_normal(sel.size) * np.sqrt(D * dt[sel] / 4.0))
        t = np.insert(t, sel + 1, mid_t)
        v = np.insert(v, sel + 1, mid_v)
    return t, v


def _path_values(b, M: int = 8192):
    if isinstance(b, BridgePath):
        return TWO_PI * np.arange(M + 1) / M, b.grid(M, 0)
    t, v = b
    return np.asarray(t, float), np.asarray(v, float)


def _log_integral(t: np.ndarray, x: np.ndarray) -> float:
    """``log int e^x dt`` by the trapezoid rule, stable for large ``x``."""
    dt = np.diff(t)
    m = x.max()
    e = np.exp(x - m)
    return float(m + np.log(np.sum(0.5 * dt * (e[1:] + e[:-1]))))


def pitman_yor_functional(beta: float, b) -> float:
    """``beta^{-2} int_0^{2pi} e^{(b - sup b)/beta}``; ``b`` is a path or ``(t, values)``."""
    t, v = _path_values(b)
    return float(np.exp(_log_integral(t, (v - v.max()) / beta)) / beta ** 2)


@dataclass(frozen=True)
class _PitmanYorSample:
    beta: float
    path_beta: float

    def __call__(self, rng) -> float:
        return _pitman_yor_sample(self.beta, self.path_beta, rng)


def _pitman_yor_sample(beta: float, path_beta: float, rng) -> float:
    path = sample_bridge_refined(path_beta, rng, window=40.0 * beta,
                                 resolution=beta ** 2 / 64.0, scale=2.0 * beta)
    return pitman_yor_functional(beta, path)


@dataclass
class PitmanYorReport:
    betas: list
    samples: dict
    ks: dict                  # (beta, beta/2) -> Kolmogorov distance


def pitman_yor_experiment(betas: Sequence[float] = (0.1, 0.05), n_samples: int = 4000,
                          seed=None, path_beta: float = 1.0, workers: int = 1) -> PitmanYorReport:
    """Empirical laws at each ``beta`` and at ``beta/2``, from independent paths."""
    ss = seed_sequence(seed)
    grid = sorted(set(list(betas) + [x / 2 for x in betas]), reverse=True)
    streams = ss.spawn(len(grid))
    samples = {}
    for beta, stream in zip(grid, streams):
        samples[beta] = np.array(map_samples(
            _PitmanYorSample(beta, path_beta), n_samples, stream, workers))
    ks = {(b, b / 2): float(stats.ks_2samp(samples[b], samples[b / 2]).statistic)
          for b in betas}
    return PitmanYorReport(list(grid), samples, ks)


# ---------------------------------------------------------------- exponential moment (q3220)

def question_3220_statistic(beta: float, b, n: int = 1) -> float:
    """Log of the integrand: ``n beta^2 int e^{2b/beta} / (int e^{b/beta})^2 > 0``."""
    t, v = _path_values(b)
    log_ratio = _log_integral(t, 2 * v / beta) - 2 * _log_integral(t, v / beta)
    return float(n * beta ** 2 * np.exp(log_ratio))


@dataclass
class Q3220Report:
    beta: float
    n: int
    estimate: MCEstimate          # of exp(S), censored samples excluded
    statistic: MCEstimate         # of S itself
    censored_fraction: float
    trimmed_mean: float           # 1% trimmed mean of exp(S) over uncensored samples
    log_mean: float               # log of the mean of exp(S) over all samples, via logsumexp
    min_integrand: float


CENSOR_LOG = 700.0


@dataclass(frozen=True)
class _Q3220Sample:
    beta: float
    n: int
    path_beta: float

    def __call__(self, rng) -> float:
        path = sample_bridge_refined(self.path_beta, rng, window=40.0 * self.beta,
                                     resolution=min(self.beta ** 2 / 64.0, 1e-3), scale=self.beta)
        return question_3220_statistic(self.beta, path, self.n)


def question_3220_estimator(beta: float, n: int = 1, n_samples: int = 2000, seed=None,
                            path_beta: float = 1.0, workers: int = 1) -> Q3220Report:
    """Evidence on ``E exp(S)``, ``S = n beta^2 int e^{2b/beta} / (int e^{b/beta})^2``.

    Paths are drawn at ``path_beta`` and refined near the maximum on the scale
    that dominates both integrals.  Samples with ``S > 700`` would overflow;
    they are counted as censored and kept in the log-mean, never dropped silently.
    """
    S = np.array(map_samples(_Q3220Sample(beta, n, path_beta), n_samples, seed, workers))
    cens = S > CENSOR_LOG
    vals = np.exp(S[~cens])
    cfg = {"beta": beta, "n": n, "n_samples": n_samples, "path_beta": path_beta}
    log_mean = float(special.logsumexp(S) - math.log(S.size))
    trimmed = float(stats.trim_mean(vals, 0.01)) if vals.size else float("nan")
    return Q3220Report(beta, n, MCEstimate.from_samples(vals, seed, cfg),
                       MCEstimate.from_samples(S, seed, cfg), float(cens.mean()), trimmed,
                       log_mean, float(np.exp(S.min())))


# ---------------------------------------------------------------- energy table and weights

class EnergyTable:
    """Monte Carlo table of ``E_beta X_k`` for the truncated energies ``X_k``."""

    def __init__(self, beta: float, deltas: np.ndarray, grid: int, n_modes: int,
                 mean: np.ndarray, stderr: np.ndarray, n_samples: int, seed: int | None):
        self.beta = beta
        self.deltas = np.asarray(deltas, float)
        self.grid = grid
        self.n_modes = n_modes
        self.mean = np.asarray(mean, float)
        self.stderr = np.asarray(stderr, float)
        self.n_samples = n_samples
        self.seed = seed

    @property
    def key(self) -> dict:
        return {"beta": self.beta, "grid": self.grid, "n_modes": self.n_modes,
                "deltas": [float(d) for d in self.deltas], "seed": self.seed,
                "n_samples": self.n_samples}

    @classmethod
    def build(cls, beta: float, n_samples: int = 10_000, seed=None, deltas=None,
              grid: int = 4096, n_modes: int = 512, workers: int = 1) -> "EnergyTable":
        deltas = default_delta_schedule() if deltas is None else np.asarray(deltas, float)
        X = np.array(map_samples(_EnergySample(beta, deltas, grid, n_modes), n_samples, seed,
                                 workers))
        return cls(beta, deltas, grid, n_modes, X.mean(0),
                   X.std(0, ddof=1) / math.sqrt(n_samples), n_samples, _seed_label(seed))

    def to_csv(self) -> str:
        buf = io.StringIO()
        for k, v in self.key.items():
            buf.write(f"# {k}: {json.dumps(v)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["level", "delta", "mean", "stderr"])
        for k, (d, m, s) in enumerate(zip(self.deltas, self.mean, self.stderr), 1):
            w.writerow([k, repr(float(d)), repr(float(m)), repr(float(s))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EnergyTable":
        meta, rows = {}, []
        for line in text.splitlines():
            if line.startswith("#"):
                k, v = line[1:].split(":", 1)
                meta[k.strip()] = json.loads(v)
            elif line.strip():
                rows.append(line)
        data = list(csv.DictReader(rows))
        return cls(meta["beta"], [float(r["delta"]) for r in data], meta["grid"],
                   meta["n_modes"], [float(r["mean"]) for r in data],
                   [float(r["stderr"]) for r in data], meta["n_samples"], meta["seed"])

    @classmethod
    def cached(cls, beta: float, cache_dir: str, n_samples: int = 10_000, seed: int = 0,
               deltas=None, grid: int = 4096, n_modes: int = 512,
               workers: int = 1) -> "EnergyTable":
        """Load from ``cache_dir`` if a table with the same key exists, else build and store."""
        deltas = default_delta_schedule() if deltas is None else np.asarray(deltas, float)
        key = {"beta": beta, "grid": grid, "n_modes": n_modes,
               "deltas": [float(d) for d in deltas], "seed": seed, "n_samples": n_samples}
        path = os.path.join(cache_dir, f"energy_{fingerprint(key)}.csv")
        if os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                return cls.from_csv(fh.read())
        table = cls.build(beta, n_samples, seed, deltas, grid, n_modes, workers)
        os.makedirs(cache_dir, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(table.to_csv())
        return table


@dataclass(frozen=True)
class _EnergySample:
    beta: float
    deltas: np.ndarray
    grid: int
    n_modes: int

    def __call__(self, rng):
        phi = BridgeDiffeo(sample_bridge(self.beta, self.n_modes, rng))
        return truncated_energies(phi, self.deltas, self.grid)


@dataclass
class WeightFactors:
    weight: float
    energy: float
    det2: float
    diag: float
    log_weight: float


def weight_factors(phi: CircleDiffeo, w: VirasoroWeight, table=None, N: int = 64) -> WeightFactors:
    """Factors of ``exp(-(c/8pi^2) E_reg) det_2|A_a|^{2c} |diag|^{16h}``."""
    energy, det2, diag = 0.0, 1.0, 1.0
    if w.c > 0:
        if table is None:
            raise ValueError("an energy table is required when c > 0")
        energy = regularized_energy(phi, table).value
        det2 = det2_abs_A_from_C(c_block(phi, ANTIPERIODIC, N))
    if w.h > 0:
        diag = abs(weld(phi, N).diag)
    logw = -w.c / (8 * np.pi ** 2) * energy
    if w.c > 0:
        logw += 2 * w.c * math.log(det2) if det2 > 0 else -math.inf
    if w.h > 0:
        logw += 16 * w.h * math.log(diag)
    return WeightFactors(math.exp(logw), energy, det2, diag, logw)


def weight_ch(phi: CircleDiffeo, w: VirasoroWeight, beta: float | None = None, table=None,
              N: int = 64) -> float:
    """Unnormalized density of ``nu_{beta,c,h}`` against ``nu_beta`` at ``phi``."""
    if table is not None and beta is not None and getattr(table, "beta", beta) != beta:
        raise ValueError("energy table was built for a different beta")
    return weight_factors(phi, w, table, N).weight


@dataclass
class WeightedEnsemble:
    paths: list               # BridgePath per sample
    rotations: np.ndarray
    log_weights: np.ndarray
    factors: list

    @property
    def weights(self) -> np.ndarray:
        """Self-normalized weights (sum to one)."""
        lw = self.log_weights - self.log_weights.max()
        e = np.exp(lw)
        return e / e.sum()

    @property
    def ess(self) -> float:
        """Kish effective sample size."""
        w = self.weights
        return float(1.0 / np.sum(w * w))

    def diffeo(self, i: int) -> BridgeDiffeo:
        return BridgeDiffeo(self.paths[i], float(self.rotations[i]))

    def weighted_mean(self, values) -> float:
        return float(np.sum(self.weights * np.asarray(values, float)))

    def reweight(self, log_ratio) -> "WeightedEnsemble":
        """Ensemble for a density proportional to ``exp(log_ratio)`` times the current one."""
        return WeightedEnsemble(self.paths, self.rotations,
                                self.log_weights + np.asarray(log_ratio, float), self.factors)


def ratio_identity_residual(ens: WeightedEnsemble, w_from: VirasoroWeight,
                            w_to: VirasoroWeight) -> float:
    """Reweighting ``nu_{c,h} -> nu_{c',h'}`` by the weight ratio versus direct weights.

    Both routes are self-normalized, so agreement up to rounding is the
    density-ratio property of the family.
    """
    f = ens.factors
    lw = lambda w: np.array([_log_weight(x, w) for x in f])
    base = WeightedEnsemble(ens.paths, ens.rotations, lw(w_from), f)
    via = base.reweight(lw(w_to) - lw(w_from)).weights
    direct = WeightedEnsemble(ens.paths, ens.rotations, lw(w_to), f).weights
    return float(np.max(np.abs(via - direct)))


def _log_weight(f: WeightFactors, w: VirasoroWeight) -> float:
    out = -w.c / (8 * np.pi ** 2) * f.energy
    if w.c > 0:
        out += 2 * w.c * math.log(f.det2) if f.det2 > 0 else -math.inf
    if w.h > 0:
        out += 16 * w.h * math.log(f.diag)
    return out


def sample_nu_bch(beta: float, w: VirasoroWeight, n_samples: int = 1000, seed=None,
                  table=None, N: int = 64, n_modes: int = 512, min_ess: float = 0.05,
                  factor_weight: VirasoroWeight | None = None) -> WeightedEnsemble:
    """Self-normalized importance sample of ``nu_{beta,c,h}`` with ``nu_beta`` proposals.

    All three factors are computed when ``factor_weight`` (default: ``w``) needs
    them, so one ensemble can be reweighted to other ``(c, h)`` afterwards.
    A warning is issued when the effective sample size is below
    ``min_ess * n_samples``.
    """
    fw = factor_weight or w
    if fw.c > 0 and table is None:
        table = EnergyTable.build(beta, 2000, seed_sequence(seed).spawn(1)[0], n_modes=n_modes)
    paths, rots, facts = [], [], []
    for rng in (np.random.default_rng(c) for c in seed_sequence(seed).spawn(n_samples)):
        b = sample_bridge(beta, n_modes, rng)
        rot = float(rng.uniform(0.0, TWO_PI))
        phi = BridgeDiffeo(b, rot)
        try:
            f = weight_factors(phi, fw, table, N)
        except (WeldingError, NumericalError) as exc:
            warnings.warn(f"sample dropped from the ensemble: {exc}")
            continue
        paths.append(b)
        rots.append(rot)
        facts.append(f)
    ens = WeightedEnsemble(paths, np.array(rots), np.array([_log_weight(f, w) for f in facts]),
                           facts)
    if ens.ess < min_ess * n_samples:
        warnings.warn(f"effective sample size {ens.ess:.1f} is below {min_ess:.0%} of {n_samples}")
    return ens


# ---------------------------------------------------------------- beta sweep

@dataclass
class BetaSweepRow:
    beta: float
    n_welded: int
    ess: float
    u1: np.ndarray
    b0: np.ndarray
    diag: np.ndarray
    weights: np.ndarray
    violations: dict
    tail_table: list
    mellin: dict


def _weighted_tail(values: np.ndarray, weights: np.ndarray, threshold: float) -> float:
    return float(np.sum(weights * (np.abs(values) > threshold)))


def beta_sweep_limits(w: VirasoroWeight, betas: Sequence[float] = (1.0, 0.5, 0.25),
                      n_samples: int = 500, seed=None, N: int = 64, n_modes: int = 512,
                      table_samples: int = 1000, tail_n=(2, 3), tail_R=(0.25, 0.5, 0.75),
                      mellin_lambdas=(0.5, 1.0, 2.0), eps: float = 1e-2) -> list[BetaSweepRow]:
    """Per-``beta`` weighted laws of ``u_1``, ``b_0`` and ``|diag|`` under ``nu_{beta,c,h}``.

    Also reports support-box violations, the tail comparison
    ``P{|u_n| > (n+1) R}`` versus ``P{|u_{n-1}| > n R}`` and Mellin transforms
    ``E |diag|^{-i lambda}``.  Exploratory: nothing here is a pass/fail claim.
    """
    betas = list(betas)
    if any(b2 >= b1 for b1, b2 in zip(betas, betas[1:])):
        raise ValueError("beta schedule must be strictly decreasing")
    streams = seed_sequence(seed).spawn(len(betas))
    out = []
    for beta, ss in zip(betas, streams):
        s_table, s_ens = ss.spawn(2)
        table = (EnergyTable.build(beta, table_samples, s_table, n_modes=n_modes)
                 if w.c > 0 else None)
        ens = sample_nu_bch(beta, w, n_samples, s_ens, table, N, n_modes,
                            factor_weight=VirasoroWeight(w.c, max(w.h, 0.0)))
        u1, b0, dg, lw, coeffs, viol = [], [], [], [], [], {"diag": 0, "u1": 0, "area_modes": 0,
                                                            "b_n": 0, "u_n": 0}
        for i in range(len(ens.paths)):
            try:
                T = weld(ens.diffeo(i), N)
            except WeldingError:
                continue
            u1.append(T.u_coefficients[0])
            b0.append(T.l_inverse_coefficients[0])
            dg.append(abs(T.diag))
            lw.append(ens.log_weights[i])
            coeffs.append(T.u_series)
            for k, v in check_bounds(T, eps).items():
                viol[k] += v
            n = np.arange(1, T.l_inverse_coefficients.size)
            viol["b_n"] += int(np.any(np.abs(T.l_inverse_coefficients[1:]) > 1 / n + eps))
            m = np.arange(1, T.u_series.size)
            viol["u_n"] += int(np.any(np.abs(T.u_series[1:]) > m + 1 + eps))
        lw = np.array(lw)
        wts = np.exp(lw - lw.max())
        wts /= wts.sum()
        U = np.array(coeffs)
        tails = []
        for n in tail_n:
            for R in tail_R:
                hi = _weighted_tail(U[:, n], wts, (n + 1) * R)
                lo = _weighted_tail(U[:, n - 1], wts, n * R)
                tails.append({"n": n, "R": R, "P_n": hi, "P_n_minus_1": lo, "holds": hi <= lo})
        dg = np.array(dg)
        mellin = {lam: complex(np.sum(wts * np.exp(-1j * lam * np.log(dg))))
                  for lam in mellin_lambdas}
        out.append(BetaSweepRow(beta, len(dg), float(1 / np.sum(wts * wts)), np.array(u1),
                                np.array(b0), dg, wts, viol, tails, mellin))
    return out


def area_of(phi: CircleDiffeo, N: int = 64) -> float:
    return area(weld(phi, N))
