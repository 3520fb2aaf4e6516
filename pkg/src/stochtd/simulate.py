"""Euler-Maruyama integration of the noisy tracking differentiator.

State ``x`` follows the integrator chain ``dx_i = x_{i+1} dt`` closed by

    dx_n = [r^n f(x_1 - v*(t), x_2/r, ..., x_n/r^(n-1)) + s2 w2] dt + s3 dB3

with ``v* = v + s1 w1`` and ``w1``, ``w2`` colored (OU) noise. The
time-scaled error ``y(t) = (x_1 - v*, x_2/r, ..., x_n/r^(n-1))`` evaluated at
``t/r`` obeys a system whose nominal part is ``z' = (z_2, ..., f(z))``; it is
integrated directly by :func:`simulate_scaled_error`.

Both integrators draw their Brownian increments from the same per-path
streams (``dB_hat = sqrt(r) dB``), so their paths are coupled sample by
sample and differ only by the discretisation of ``v``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .design import TdFunction, td_function_from_dict
from .noise import (RNG_ALGORITHM, SOURCE_B1, SOURCE_B2, SOURCE_B3, OuParams,
                    make_generator)

__all__ = [
    "DivergenceError",
    "EnsembleTrajectories",
    "ScaledErrorState",
    "ScaledErrorTrajectory",
    "SignalModel",
    "SimulationGrid",
    "StiffnessWarning",
    "TdConfig",
    "Trajectory",
    "draw_increments",
    "from_error_coordinates",
    "simulate_ensemble",
    "simulate_scaled_error",
    "simulate_td",
    "transform_to_error_coordinates",
]

STIFFNESS_LIMIT = 0.1


class DivergenceError(FloatingPointError):
    """Integrator produced a non-finite state."""

    def __init__(self, message, step=None, seed=None, r_dt=None, r_min=None):
        super().__init__(message)
        self.step = step
        self.seed = seed
        self.r_dt = r_dt
        self.r_min = r_min


class StiffnessWarning(RuntimeWarning):
    pass


def canonical_digest(obj) -> str:
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


# -- inputs --------------------------------------------------------------------

@dataclass(frozen=True)
class _Sinusoid:
    # module-level so signals pickle into worker processes
    amplitude: float
    frequency: float
    phase: float
    offset: float

    def derivative(self, k, t):
        t = np.asarray(t, dtype=float)
        A, w = self.amplitude, self.frequency
        out = A * w ** k * np.sin(w * t + self.phase + 0.5 * k * np.pi)
        return out + self.offset if k == 0 else out

    def value(self, t):
        return self.derivative(0, t)

    def rate(self, t):
        t = np.asarray(t, dtype=float)
        return self.amplitude * self.frequency * np.cos(self.frequency * t + self.phase)


@dataclass(frozen=True)
class SignalModel:
    """Reference signal ``v`` with its derivative and a declared bound ``M``.

    Builtin sinusoids ``offset + amplitude*sin(frequency*t + phase)`` carry
    exact derivatives of every order; user signals supply ``v`` and ``v_dot``
    and optionally higher derivatives via ``derivatives``.
    """

    v: Callable = field(repr=False, compare=False)
    v_dot: Callable = field(repr=False, compare=False)
    bound_M: float
    kind: str = "user"
    params: dict = field(default_factory=dict)
    derivatives: Optional[Callable] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not (math.isfinite(self.bound_M) and self.bound_M >= 0):
            raise ValueError("bound_M must be a nonnegative real")

    @classmethod
    def sinusoid(cls, amplitude=1.0, frequency=3.0, phase=1.0, offset=0.0, bound_M=None):
        wave = _Sinusoid(float(amplitude), float(frequency), float(phase), float(offset))
        A, w, p, c = wave.amplitude, wave.frequency, wave.phase, wave.offset
        exact_M = abs(c) + abs(A) * math.sqrt(1.0 + w * w)
        return cls(
            v=wave.value,
            v_dot=wave.rate,
            bound_M=exact_M if bound_M is None else float(bound_M),
            kind="sinusoid",
            params={"amplitude": A, "frequency": w, "phase": p, "offset": c},
            derivatives=wave.derivative,
        )

    @classmethod
    def constant(cls, value: float, bound_M=None):
        return cls.sinusoid(amplitude=0.0, frequency=0.0, phase=0.0, offset=value,
                            bound_M=bound_M)

    def derivative(self, k: int, t):
        """``k``-th derivative of ``v`` at ``t``; raises if unavailable."""
        if self.derivatives is not None:
            return self.derivatives(k, t)
        if k == 0:
            return self.v(t)
        if k == 1:
            return self.v_dot(t)
        raise NotImplementedError(f"signal provides no derivative of order {k}")

    def check_bound(self, times) -> bool:
        t = np.asarray(times, dtype=float)
        return bool(np.all(np.abs(self.v(t)) + np.abs(self.v_dot(t)) <= self.bound_M * (1 + 1e-12)))

    def to_dict(self) -> dict:
        if self.kind == "sinusoid":
            return {"kind": "sinusoid", **self.params, "bound_M": self.bound_M}
        return {"kind": self.kind, "bound_M": self.bound_M}

    @classmethod
    def from_dict(cls, data: dict) -> "SignalModel":
        kind = data.get("kind", "sinusoid")
        if kind == "sinusoid":
            return cls.sinusoid(amplitude=data.get("amplitude", 1.0),
                                frequency=data.get("frequency", 3.0),
                                phase=data.get("phase", 0.0),
                                offset=data.get("offset", 0.0),
                                bound_M=data.get("bound_M"))
        if kind == "constant":
            return cls.constant(data["value"], bound_M=data.get("bound_M"))
        raise ValueError(f"unknown signal kind {kind!r}")


@dataclass(frozen=True)
class TdConfig:
    n: int
    r: float
    f: TdFunction
    sigma1: float
    sigma2: float
    sigma3: float
    noise1: OuParams
    noise2: OuParams
    x0: tuple

    def __post_init__(self):
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.f.order != self.n:
            raise ValueError(f"design function has order {self.f.order}, config has n={self.n}")
        if len(self.x0) != self.n:
            raise ValueError("x0 must have n entries")
        if not (math.isfinite(self.r) and self.r >= 1.0):
            raise ValueError(f"r must be >= 1, got {self.r!r}")

    def replace(self, **changes) -> "TdConfig":
        from dataclasses import replace
        return replace(self, **changes)

    @property
    def scale(self) -> np.ndarray:
        """``(1, 1/r, ..., 1/r^(n-1))``."""
        return self.r ** -np.arange(self.n, dtype=float)

    def to_dict(self) -> dict:
        return {
            "n": self.n, "r": self.r, "f": self.f.to_dict(),
            "sigma1": self.sigma1, "sigma2": self.sigma2, "sigma3": self.sigma3,
            "noise1": self.noise1.to_dict(), "noise2": self.noise2.to_dict(),
            "x0": list(self.x0),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TdConfig":
        return cls(
            n=int(data["n"]), r=float(data["r"]), f=td_function_from_dict(data["f"]),
            sigma1=float(data["sigma1"]), sigma2=float(data["sigma2"]),
            sigma3=float(data["sigma3"]),
            noise1=OuParams.from_dict(data["noise1"]), noise2=OuParams.from_dict(data["noise2"]),
            x0=tuple(data["x0"]),
        )

    @property
    def digest(self) -> str:
        return canonical_digest(self.to_dict())


@dataclass(frozen=True)
class SimulationGrid:
    t_end: float
    dt: float

    def __post_init__(self):
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ValueError("dt must be positive")
        if not (math.isfinite(self.t_end) and self.t_end > 0):
            raise ValueError("t_end must be positive")
        steps = round(self.t_end / self.dt)
        if steps < 1:
            raise ValueError("grid must contain at least one step")
        if abs(steps * self.dt - self.t_end) > 1e-9 * max(1.0, self.t_end):
            raise ValueError("t_end must be an integer multiple of dt")

    @property
    def steps(self) -> int:
        return round(self.t_end / self.dt)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def to_dict(self) -> dict:
        return {"t_end": self.t_end, "dt": self.dt}


# -- outputs -------------------------------------------------------------------

@dataclass
class Trajectory:
    times: np.ndarray
    x: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    v_values: np.ndarray
    metadata: dict
    sigma1: float = 0.0

    @property
    def vstar(self) -> np.ndarray:
        return self.v_values + self.sigma1 * self.w1

    @property
    def dt(self) -> float:
        return self.metadata["dt"]

    def to_csv(self, path, extra_metadata: Optional[dict] = None) -> None:
        """Write ``t,x1..xn,w1,w2,v,vstar`` with ``#``-prefixed metadata lines."""
        meta = dict(self.metadata)
        meta.update(extra_metadata or {})
        n = self.x.shape[1]
        with open(path, "w", newline="") as fh:
            for key in sorted(meta):
                fh.write(f"# {key}: {meta[key]}\n")
            writer = csv.writer(fh)
            writer.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + ["w1", "w2", "v", "vstar"])
            vstar = self.vstar
            for k in range(len(self.times)):
                row = [self.times[k], *self.x[k], self.w1[k], self.w2[k],
                       self.v_values[k], vstar[k]]
                writer.writerow([repr(float(val)) for val in row])

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        meta = {}
        rows = []
        with open(path, newline="") as fh:
            for line in fh:
                if line.startswith("#"):
                    key, _, value = line[1:].strip().partition(": ")
                    meta[key] = value
                else:
                    rows.append(line)
        reader = csv.reader(rows)
        header = next(reader)
        data = np.array([[float(c) for c in row] for row in reader])
        n = len(header) - 5
        meta["dt"] = float(meta["dt"])
        if "seed" in meta:
            meta["seed"] = int(meta["seed"])
        sigma1 = float(meta.get("sigma1", 0.0))
        if "gamma1" in meta:
            meta["gamma1"] = float(meta["gamma1"])
        w1 = data[:, n + 1]
        return cls(times=data[:, 0], x=data[:, 1:n + 1], w1=w1, w2=data[:, n + 2],
                   v_values=data[:, n + 3], metadata=meta, sigma1=sigma1)


@dataclass
class EnsembleTrajectories:
    """Paths integrated side by side; leading axis indexes the path."""

    times: np.ndarray
    x: np.ndarray          # (paths, steps+1, n)
    w1: np.ndarray         # (paths, steps+1)
    w2: np.ndarray
    v_values: np.ndarray   # (steps+1,)
    seeds: tuple
    metadata: dict

    def path(self, k: int) -> Trajectory:
        meta = dict(self.metadata, seed=self.seeds[k])
        return Trajectory(self.times, self.x[k], self.w1[k], self.w2[k],
                          self.v_values, meta, self.metadata["sigma1"])


@dataclass(frozen=True)
class ScaledErrorState:
    tau: float
    y: np.ndarray


@dataclass
class ScaledErrorTrajectory:
    """Error coordinates ``y`` on the fast time axis ``tau = r t``."""

    times: np.ndarray
    y: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    metadata: dict

    def at(self, tau: float) -> ScaledErrorState:
        h = self.times[1] - self.times[0]
        k = int(round(tau / h))
        if not 0 <= k < len(self.times):
            raise IndexError(f"tau={tau} outside the trajectory")
        return ScaledErrorState(float(self.times[k]), self.y[k].copy())

    def states(self):
        return [ScaledErrorState(float(t), row.copy()) for t, row in zip(self.times, self.y)]


# -- integration -----------------------------------------------------------------

def draw_increments(seeds: Sequence[int], dt: float, steps: int) -> np.ndarray:
    """Brownian increments of shape ``(3, paths, steps)`` for sources B1, B2, B3."""
    out = np.empty((3, len(seeds), steps))
    sq = math.sqrt(dt)
    for p, seed in enumerate(seeds):
        for s, tag in enumerate((SOURCE_B1, SOURCE_B2, SOURCE_B3)):
            out[s, p] = make_generator(seed, tag).standard_normal(steps) * sq
    return out


def _warn_stiff(config: TdConfig, dt: float):
    if config.r * dt > STIFFNESS_LIMIT:
        warnings.warn(f"r*dt = {config.r * dt:.3g} exceeds {STIFFNESS_LIMIT}; "
                      "explicit Euler-Maruyama may be unstable", StiffnessWarning, stacklevel=3)


def _divergence(config, dt, step, seeds, bad_paths, r_min):
    seed_list = [seeds[i] for i in bad_paths]
    msg = (f"non-finite state at step {step} (t={step * dt:g}) for seed(s) {seed_list}; "
           f"r*dt={config.r * dt:.3g}")
    if r_min is not None:
        msg += f", certificate r_min={r_min:.6g}"
    return DivergenceError(msg, step=step, seed=seed_list[0], r_dt=config.r * dt, r_min=r_min)


def _base_metadata(config: TdConfig, grid: SimulationGrid) -> dict:
    return {"dt": grid.dt, "config_digest": config.digest, "rng": RNG_ALGORITHM,
            "sigma1": config.sigma1, "gamma1": config.noise1.gamma,
            "scheme": "euler-maruyama, left endpoint"}


def _integrate_x(config, signal, grid, dB, seeds, r_min=None):
    n, r, dt, steps = config.n, config.r, grid.dt, grid.steps
    paths = dB.shape[1]
    times = grid.times
    v_vals = np.broadcast_to(np.asarray(signal.v(times), dtype=float), times.shape).copy()
    scale = config.scale
    gain = r ** n
    a1, a2 = config.noise1.alpha, config.noise2.alpha
    d1, d2 = config.noise1.diffusion, config.noise2.diffusion
    s1, s2, s3 = config.sigma1, config.sigma2, config.sigma3

    X = np.empty((paths, steps + 1, n))
    W1 = np.empty((paths, steps + 1))
    W2 = np.empty((paths, steps + 1))
    x = np.tile(np.asarray(config.x0, dtype=float), (paths, 1))
    w1 = np.full(paths, config.noise1.w0)
    w2 = np.full(paths, config.noise2.w0)
    X[:, 0], W1[:, 0], W2[:, 0] = x, w1, w2
    for k in range(steps):
        z = x * scale
        z[:, 0] -= v_vals[k] + s1 * w1
        drive = gain * config.f(z) + s2 * w2
        x_new = np.empty_like(x)
        x_new[:, :-1] = x[:, :-1] + x[:, 1:] * dt
        x_new[:, -1] = x[:, -1] + drive * dt + s3 * dB[2, :, k]
        w1 = w1 - a1 * w1 * dt + d1 * dB[0, :, k]
        w2 = w2 - a2 * w2 * dt + d2 * dB[1, :, k]
        x = x_new
        finite = np.isfinite(x).all(axis=1)
        if not finite.all():
            raise _divergence(config, dt, k + 1, seeds, np.flatnonzero(~finite), r_min)
        X[:, k + 1], W1[:, k + 1], W2[:, k + 1] = x, w1, w2
    return times, X, W1, W2, v_vals


def simulate_ensemble(config: TdConfig, signal: SignalModel, grid: SimulationGrid,
                      seeds: Sequence[int], r_min: Optional[float] = None) -> EnsembleTrajectories:
    """Integrate one path per seed; path ``k`` equals ``simulate_td(..., seeds[k])``."""
    seeds = tuple(int(s) for s in seeds)
    _warn_stiff(config, grid.dt)
    dB = draw_increments(seeds, grid.dt, grid.steps)
    # overflow is caught explicitly as a DivergenceError
    with np.errstate(over="ignore", invalid="ignore"):
        times, X, W1, W2, v_vals = _integrate_x(config, signal, grid, dB, seeds, r_min)
    return EnsembleTrajectories(times, X, W1, W2, v_vals, seeds, _base_metadata(config, grid))


def simulate_td(config: TdConfig, signal: SignalModel, grid: SimulationGrid, seed: int,
                r_min: Optional[float] = None) -> Trajectory:
    """Single Euler-Maruyama path of the differentiator and its noise states."""
    ens = simulate_ensemble(config, signal, grid, [seed], r_min=r_min)
    return ens.path(0)


def simulate_scaled_error(config: TdConfig, signal: SignalModel, grid: SimulationGrid,
                          seed: int) -> ScaledErrorTrajectory:
    """Integrate the error system on ``tau in [0, r t_end]`` with step ``r dt``.

    The colored noise is read at ``tau/r``, i.e. on the original grid, and
    the scaled Brownian increments are ``sqrt(r)`` times the original ones.
    """
    n, r, dt, steps = config.n, config.r, grid.dt, grid.steps
    _warn_stiff(config, dt)
    h = r * dt
    dB = draw_increments([seed], dt, steps)[:, 0, :]
    dBh1, dBh3 = math.sqrt(r) * dB[0], math.sqrt(r) * dB[2]
    t = grid.times
    vdot_tau = np.broadcast_to(np.asarray(signal.v_dot(t), dtype=float), t.shape) / r
    a1, a2 = config.noise1.alpha, config.noise2.alpha
    d1, d2 = config.noise1.diffusion, config.noise2.diffusion
    s1, s2, s3 = config.sigma1, config.sigma2, config.sigma3
    c_w1 = s1 * a1 / r
    c_b1 = s1 * d1 / math.sqrt(r)
    c_w2 = s2 / r ** n
    c_b3 = s3 / r ** (n - 0.5)

    Y = np.empty((steps + 1, n))
    W1 = np.empty(steps + 1)
    W2 = np.empty(steps + 1)
    w1, w2 = config.noise1.w0, config.noise2.w0
    y = np.asarray(config.x0, dtype=float) * config.scale
    y[0] -= float(signal.v(0.0)) + s1 * w1
    Y[0], W1[0], W2[0] = y, w1, w2
    for k in range(steps):
        y_new = np.empty(n)
        y_new[:-1] = y[:-1] + y[1:] * h
        y_new[0] += (-vdot_tau[k] + c_w1 * w1) * h - c_b1 * dBh1[k]
        y_new[-1] = y[-1] + (float(config.f(y)) + c_w2 * w2) * h + c_b3 * dBh3[k]
        w1 = w1 - a1 * w1 * dt + d1 * dB[0, k]
        w2 = w2 - a2 * w2 * dt + d2 * dB[1, k]
        y = y_new
        if not np.isfinite(y).all():
            raise DivergenceError(f"non-finite error state at step {k + 1} for seed {seed}; "
                                  f"r*dt={r * dt:.3g}", step=k + 1, seed=seed, r_dt=r * dt)
        Y[k + 1], W1[k + 1], W2[k + 1] = y, w1, w2
    meta = dict(_base_metadata(config, grid), seed=int(seed), tau_step=h)
    return ScaledErrorTrajectory(r * t, Y, W1, W2, meta)


def transform_to_error_coordinates(traj: Trajectory, config: TdConfig, signal: SignalModel,
                                   taus=None) -> ScaledErrorTrajectory:
    """Map a differentiator path to error coordinates on the fast time axis.

    With ``taus`` omitted every grid point ``t_k`` maps to ``tau = r t_k``;
    otherwise each requested ``tau`` is read at the nearest grid point to
    ``tau / r``.
    """
    digest = traj.metadata.get("config_digest")
    if digest is not None and digest != config.digest:
        raise ValueError("trajectory was produced with a different configuration")
    r = config.r
    if taus is None:
        idx = np.arange(len(traj.times))
    else:
        idx = np.rint(np.asarray(taus, dtype=float) / (r * traj.dt)).astype(int)
        if np.any(idx < 0) or np.any(idx >= len(traj.times)):
            raise IndexError("requested tau outside the trajectory")
    vstar = traj.v_values[idx] + config.sigma1 * traj.w1[idx]
    y = traj.x[idx] * config.scale
    y[:, 0] -= vstar
    return ScaledErrorTrajectory(r * traj.times[idx], y, traj.w1[idx], traj.w2[idx],
                                 dict(traj.metadata))


def from_error_coordinates(scaled: ScaledErrorTrajectory, config: TdConfig,
                           signal: SignalModel) -> np.ndarray:
    """Inverse of :func:`transform_to_error_coordinates`; returns ``x`` rows."""
    t = scaled.times / config.r
    x = scaled.y / config.scale
    x[:, 0] += np.asarray(signal.v(t), dtype=float) + config.sigma1 * scaled.w1
    return x
