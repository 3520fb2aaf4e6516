"""Monte Carlo tracking statistics, closed-form bound constants and
generalized-derivative functionals."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.polynomial import Polynomial

from .design import LyapunovCertificate, admissible_r_min, in_admissible_range
from .simulate import SignalModel, SimulationGrid, TdConfig, Trajectory, simulate_ensemble

__all__ = [
    "BoundReport",
    "EnsembleStats",
    "GeneralizedDerivativeReport",
    "TestFunction",
    "appendix_a_constants",
    "ensemble_ms_error",
    "generalized_derivative_check",
    "gendiff_errors",
    "lemma1_moment_bound",
    "make_bump",
    "ms_stats",
    "optimal_mu",
    "path_seeds",
    "path_squared_errors",
    "r_ladder_medians",
    "theorem1_bound",
    "window_mask",
]

CHUNK = 256


def path_seeds(base_seed: int, paths: int) -> list:
    """Seeds of an ensemble: path ``k`` uses ``base_seed + k``."""
    return [int(base_seed) + k for k in range(int(paths))]


def window_mask(times, t_lo, t_hi=math.inf):
    times = np.asarray(times)
    return (times >= t_lo - 1e-12) & (times <= t_hi + 1e-12)


# -- ensembles -------------------------------------------------------------------

def ms_stats(samples) -> tuple:
    """Per-column sample mean and standard error of ``samples`` (paths, times)."""
    samples = np.asarray(samples, dtype=float)
    paths = samples.shape[0]
    if paths < 2:
        raise ValueError("need at least two paths for a standard error")
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / math.sqrt(paths)
    return mean, se


def _chunk_errors(args):
    config, signal, grid, seeds, r_min, orders = args
    ens = simulate_ensemble(config, signal, grid, seeds, r_min=r_min)
    out = [(ens.x[:, :, 0] - ens.v_values) ** 2]
    for i in orders:
        target = np.asarray(signal.derivative(i - 1, ens.times), dtype=float)
        out.append((ens.x[:, :, i - 1] - target) ** 2)
    return out


def _derivative_orders(config, signal):
    orders = []
    for i in range(2, config.n + 1):
        try:
            signal.derivative(i - 1, 0.0)
        except NotImplementedError:
            break
        orders.append(i)
    return orders


def path_squared_errors(config: TdConfig, signal: SignalModel, grid: SimulationGrid,
                        seeds: Sequence[int], workers: int = 1, r_min=None,
                        derivative_orders: Sequence[int] = ()) -> list:
    """``|x_1 - v|^2`` (and ``|x_i - v^(i-1)|^2`` per requested order) per path.

    Returns a list of ``(paths, steps+1)`` arrays. Paths are integrated in
    fixed chunks and reassembled in seed order, so the result does not
    depend on ``workers``.
    """
    seeds = list(seeds)
    jobs = [(config, signal, grid, seeds[i:i + CHUNK], r_min, tuple(derivative_orders))
            for i in range(0, len(seeds), CHUNK)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_chunk_errors, jobs))
    else:
        parts = [_chunk_errors(job) for job in jobs]
    return [np.concatenate([p[j] for p in parts], axis=0) for j in range(len(parts[0]))]


@dataclass
class EnsembleStats:
    times: np.ndarray
    ms_error: np.ndarray
    ms_error_stderr: np.ndarray
    derivative_ms: dict
    paths: int
    base_seed: int
    path_errors: Optional[np.ndarray] = field(default=None, repr=False)

    def window_average(self, t_lo, t_hi=math.inf) -> float:
        return float(self.ms_error[window_mask(self.times, t_lo, t_hi)].mean())

    def to_csv(self, path, bound: Optional[float] = None, T: float = 0.0,
               metadata: Optional[dict] = None) -> None:
        """Columns ``t,ms_error,stderr,theorem1_bound``; the bound cell is
        left empty before ``T`` or when no bound is available."""
        with open(path, "w", newline="") as fh:
            for key in sorted(metadata or {}):
                fh.write(f"# {key}: {metadata[key]}\n")
            writer = csv.writer(fh)
            header = ["t", "ms_error", "stderr"]
            if bound is not None:
                header.append("theorem1_bound")
            writer.writerow(header)
            for t, m, s in zip(self.times, self.ms_error, self.ms_error_stderr):
                row = [repr(float(t)), repr(float(m)), repr(float(s))]
                if bound is not None:
                    row.append(repr(float(bound)) if t >= T - 1e-12 else "")
                writer.writerow(row)


def ensemble_ms_error(config: TdConfig, signal: SignalModel, grid: SimulationGrid,
                      paths: int, base_seed: int = 0, workers: int = 1,
                      r_min=None, keep_paths: bool = False) -> EnsembleStats:
    """Estimate ``E|x_1(t) - v(t)|^2`` on the grid from ``paths`` seeded runs."""
    if paths < 2:
        raise ValueError("paths must be at least 2")
    orders = _derivative_orders(config, signal)
    errs = path_squared_errors(config, signal, grid, path_seeds(base_seed, paths),
                               workers=workers, r_min=r_min, derivative_orders=orders)
    mean, se = ms_stats(errs[0])
    deriv = {i: ms_stats(e)[0] for i, e in zip(orders, errs[1:])}
    return EnsembleStats(grid.times, mean, se, deriv, int(paths), int(base_seed),
                         errs[0] if keep_paths else None)


def r_ladder_medians(config: TdConfig, signal: SignalModel, grid: SimulationGrid,
                     rs: Sequence[float], seeds: Sequence[int], t_lo: float,
                     t_hi: float = math.inf) -> list:
    """Median over seeds of the window-averaged ``|x_1 - v|^2`` for each gain."""
    out = []
    for r in rs:
        errs = path_squared_errors(config.replace(r=float(r)), signal, grid, seeds)[0]
        per_path = errs[:, window_mask(grid.times, t_lo, t_hi)].mean(axis=1)
        out.append(float(np.median(per_path)))
    return out


# -- bound constants ---------------------------------------------------------------

def _initial_error(config: TdConfig, signal: SignalModel) -> np.ndarray:
    y0 = np.asarray(config.x0, dtype=float) * config.scale
    y0[0] -= float(signal.v(0.0)) + config.sigma1 * config.noise1.w0
    return y0


def appendix_a_constants(cert: LyapunovCertificate, config: TdConfig, signal: SignalModel):
    """Constants ``(N1, N2, N3)`` of the moment-growth bound."""
    r, n = config.r, config.n
    if r < 1:
        raise ValueError("r must be at least 1")
    l1, c1, c2, M = cert.lambda1, cert.c1, cert.c2, signal.bound_M
    s1, s2, s3 = config.sigma1, config.sigma2, config.sigma3
    a1, b1 = config.noise1.alpha, config.noise1.beta
    g1, g2 = config.noise1.gamma, config.noise2.gamma
    V0 = float(cert.V_value(_initial_error(config, signal)))
    N1 = 2.0 * V0 + 32.0 * c1 ** 2 * s1 ** 2 * a1 ** 2 * b1 / r
    N2 = (c1 ** 2 * M ** 2 / r
          + c1 ** 2 * s1 ** 2 * a1 ** 2 * g1 / r
          + 2.0 * c2 * s1 ** 2 * a1 ** 2 * b1 / r
          + c1 ** 2 * s2 ** 2 * g2 / r ** n
          + c2 * s3 ** 2 / r ** (2 * n - 1)
          + 32.0 * c1 ** 2 * s3 ** 2 / (r ** (2 * n - 1) * l1))
    N3 = 2.0 / (l1 * r) + 1.0 / (l1 * r ** n) + 2.0 / l1
    return N1, N2, N3


def lemma1_moment_bound(cert: LyapunovCertificate, config: TdConfig, signal: SignalModel, t):
    """Bound on ``E sup_{s<=t} |y(s)|^2`` in fast time ``t``."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("t must be nonnegative")
    N1, N2, N3 = appendix_a_constants(cert, config, signal)
    out = (N1 + N2 / N3) * np.exp(N3 * t_arr) / cert.lambda1
    return float(out) if out.ndim == 0 else out


def optimal_mu(A: float, B: float) -> float:
    """Minimiser of ``(1 + 1/mu) A + (1 + mu) B`` over ``mu > 0``."""
    if B <= 0:
        return math.inf
    if A <= 0:
        return 0.0
    return math.sqrt(A / B)


@dataclass
class BoundReport:
    N1: float
    N2: float
    N3: float
    Gamma1: float
    Gamma2: float
    Gamma: float
    mu: float
    T: float
    r: float
    r_min: float
    theorem1_bound: float
    mu_star: float
    optimized_bound: float
    noise_floor: float
    lemma1_bound_at: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {k: v for k, v in self.__dict__.items() if k != "lemma1_bound_at"}
        out["lemma1_bound_at"] = {repr(float(t)): b for t, b in self.lemma1_bound_at.items()}
        return {k: (None if isinstance(v, float) and math.isinf(v) else v) for k, v in out.items()}


def theorem1_bound(cert: LyapunovCertificate, config: TdConfig, signal: SignalModel,
                   mu: float, T: float, lemma_times: Sequence[float] = ()) -> BoundReport:
    """Mean-square tracking bound valid uniformly on ``t >= T``.

    ``Gamma2`` takes the supremum of ``g(r) = r exp(-c r T)`` over the
    admissible range in closed form: ``g`` peaks at ``1/(c T)``, clipped to
    ``[r_min, inf)``.
    """
    if not mu > 0:
        raise ValueError("mu must be positive")
    if not T > 0:
        raise ValueError("T must be positive")
    n, r = config.n, config.r
    r_min = admissible_r_min(cert, n)
    if not in_admissible_range(r, cert, n):
        raise ValueError(f"r={r} is outside the admissible range [{r_min:.6g}, inf)")
    l1, l2, l3 = cert.lambda1, cert.lambda2, cert.lambda3
    c1, c2, th, M = cert.c1, cert.c2, cert.theta, signal.bound_M
    s1, s2, s3 = config.sigma1, config.sigma2, config.sigma3
    a1, b1 = config.noise1.alpha, config.noise1.beta
    g1, g2 = config.noise1.gamma, config.noise2.gamma

    G1 = (c1 ** 2 * M ** 2 / (2.0 * l1)
          + c1 ** 2 * s1 ** 2 * a1 ** 2 * g1 / (2.0 * l1)
          + c2 * s1 ** 2 * a1 ** 2 * b1
          + c1 ** 2 * s2 ** 2 * g2 / (2.0 * l1)
          + c2 * s3 ** 2 / 2.0)
    c = cert.decay_rate
    r_peak = max(1.0 / (c * T), r_min)
    x0 = np.asarray(config.x0, dtype=float)
    bracket = ((x0[0] - float(signal.v(0.0)) - s1 * config.noise1.w0) ** 2
               + float(np.sum(x0[1:] ** 2)))
    G2 = r_peak * math.exp(-c * r_peak * T) * bracket
    G = l2 * G2 / l1 + l2 * G1 / ((1.0 - th) * l3 * l1)

    A = G / r
    B = s1 ** 2 * g1
    bound = (1.0 + 1.0 / mu) * A + (1.0 + mu) * B
    mu_star = optimal_mu(A, B)
    optimized = (math.sqrt(A) + math.sqrt(B)) ** 2
    N1, N2, N3 = appendix_a_constants(cert, config, signal)
    lemma = {float(t): lemma1_moment_bound(cert, config, signal, t) for t in lemma_times}
    return BoundReport(N1, N2, N3, G1, G2, G, float(mu), float(T), r, r_min, bound,
                       mu_star, optimized, B, lemma)


# -- test functions and generalized derivatives ---------------------------------------

def _bump_polys(order: int) -> list:
    # psi^(k)(u) = P_k(u) / (1-u^2)^(2k) * psi(u),  psi(u) = exp(-1/(1-u^2))
    s = Polynomial([1.0, 0.0, -1.0])
    u = Polynomial([0.0, 1.0])
    polys = [Polynomial([1.0])]
    for k in range(order):
        P = polys[-1]
        polys.append(P.deriv() * s * s + 4 * k * u * s * P - 2 * u * P)
    return polys


@dataclass(frozen=True)
class TestFunction:
    """Smooth bump ``exp(-1/(1-u^2))``, ``u = (t - center)/width``, on ``(0, a)``."""

    __test__ = False  # not a pytest class

    a: float
    center: float
    width: float
    max_order: int = 4
    _polys: tuple = field(init=False, repr=False, compare=False)
    _sup: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (self.a > 0 and self.width > 0):
            raise ValueError("a and width must be positive")
        if not (0.0 < self.center - self.width and self.center + self.width < self.a):
            raise ValueError("bump support must lie strictly inside (0, a)")
        object.__setattr__(self, "_polys", tuple(_bump_polys(self.max_order)))
        grid = np.linspace(self.center - self.width, self.center + self.width, 10_000)
        sups = tuple(1.1 * float(np.max(np.abs(self.derivative(k, grid))))
                     for k in range(self.max_order + 1))
        object.__setattr__(self, "_sup", sups)

    @property
    def support(self) -> tuple:
        return (self.center - self.width, self.center + self.width)

    def derivative(self, k: int, t):
        """``k``-th derivative in ``t``; exactly zero outside the open support."""
        if not 0 <= k <= self.max_order:
            raise ValueError(f"derivative order must lie in [0, {self.max_order}]")
        t = np.asarray(t, dtype=float)
        u = (t - self.center) / self.width
        inside = np.abs(u) < 1.0
        out = np.zeros_like(u)
        ui = u[inside]
        s = 1.0 - ui * ui
        out[inside] = self._polys[k](ui) / s ** (2 * k) * np.exp(-1.0 / s) / self.width ** k
        return float(out) if out.ndim == 0 else out

    def __call__(self, t):
        return self.derivative(0, t)

    evaluate = __call__

    def sup_bound(self, k: int) -> float:
        """Grid-scanned ``sup |phi^(k)|`` inflated by 10%."""
        return self._sup[k]


def make_bump(a: float, center: float, width: float, max_order: int = 4) -> TestFunction:
    return TestFunction(a=float(a), center=float(center), width=float(width),
                        max_order=int(max_order))


@dataclass
class GeneralizedDerivativeReport:
    order: int
    x_i_functional: float
    v_functional: float
    abs_error: float
    theorem2_bound: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _check_cover(times, phi: TestFunction):
    if times[0] > 1e-12 or times[-1] < phi.a - 1e-9:
        raise ValueError(f"grid [{times[0]:g}, {times[-1]:g}] does not cover (0, {phi.a:g})")


def _pairing_grid(times, phi: TestFunction):
    mask = times <= phi.a + 1e-12
    return mask, times[mask]


def gendiff_errors(times, x_i, v_values, phi: TestFunction, i: int) -> tuple:
    """Vectorised functionals: ``x_i(phi)`` per path and ``v^(i-1)(phi)``.

    ``x_i`` may be (steps+1,) or (paths, steps+1).
    """
    times = np.asarray(times, dtype=float)
    _check_cover(times, phi)
    mask, t = _pairing_grid(times, phi)
    x_i = np.asarray(x_i, dtype=float)[..., mask]
    xf = np.trapezoid(x_i * phi(t), t, axis=-1)
    vf = (-1) ** (i - 1) * np.trapezoid(np.asarray(v_values)[mask] * phi.derivative(i - 1, t), t)
    return xf, float(vf)


def generalized_derivative_check(traj: Trajectory, signal: SignalModel, phi: TestFunction,
                                 i: int, sigma1: Optional[float] = None,
                                 gamma1: Optional[float] = None) -> GeneralizedDerivativeReport:
    """Compare ``x_i(phi) = int x_i phi`` with ``v^(i-1)(phi)`` by trapezoid quadrature.

    The asymptotic bound ``a^2 sup|phi^(i-1)|^2 sigma1^2 gamma1`` uses the
    noise level recorded in the trajectory unless overridden.
    """
    n = traj.x.shape[1]
    if not 2 <= i <= n:
        raise ValueError(f"order must lie in [2, {n}], got {i}")
    if i - 1 > phi.max_order:
        raise ValueError("test function does not provide the needed derivative")
    v_vals = np.asarray(signal.v(traj.times), dtype=float)
    xf, vf = gendiff_errors(traj.times, traj.x[:, i - 1], v_vals, phi, i)
    s1 = traj.sigma1 if sigma1 is None else sigma1
    g1 = float(traj.metadata.get("gamma1", 0.0)) if gamma1 is None else gamma1
    bound = phi.a ** 2 * phi.sup_bound(i - 1) ** 2 * s1 ** 2 * g1
    return GeneralizedDerivativeReport(i, float(xf), vf, abs(float(xf) - vf), bound)
