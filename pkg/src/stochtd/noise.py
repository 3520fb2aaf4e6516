"""Brownian increments and Ornstein-Uhlenbeck (colored) noise.

The colored noise solves ``dw = -alpha*w dt + alpha*sqrt(2*beta) dB``.
Every stochastic routine here is a pure function of a 64-bit seed and its
parameters: a seed and a source tag are fed to :class:`numpy.random.SeedSequence`
and drive a PCG64 bit generator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "RNG_ALGORITHM",
    "SOURCE_B1",
    "SOURCE_B2",
    "SOURCE_B3",
    "IncrementStream",
    "OuParams",
    "brownian_increments",
    "gamma",
    "make_generator",
    "ou_euler_from_increments",
    "ou_exact_from_increments",
    "ou_second_moment",
    "simulate_ou_exact",
]

RNG_ALGORITHM = "numpy.random.PCG64(SeedSequence([seed, source_tag])).standard_normal"

# Fixed tags so that B1, B2 and B3 of one path never share a stream.
SOURCE_B1 = 1
SOURCE_B2 = 2
SOURCE_B3 = 3

_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class OuParams:
    """Parameters of one colored-noise source.

    ``alpha`` is the correlation rate (1/time), ``beta`` the spectral height
    and ``w0`` the deterministic initial value.
    """

    alpha: float
    beta: float
    w0: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise ValueError(f"alpha must be positive and finite, got {self.alpha!r}")
        if not (math.isfinite(self.beta) and self.beta >= 0):
            raise ValueError(f"beta must be nonnegative and finite, got {self.beta!r}")
        if not math.isfinite(self.w0):
            raise ValueError(f"w0 must be finite, got {self.w0!r}")

    @property
    def diffusion(self) -> float:
        """Coefficient multiplying dB in the OU equation."""
        return self.alpha * math.sqrt(2.0 * self.beta)

    @property
    def gamma(self) -> float:
        return gamma(self)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "w0": self.w0}

    @classmethod
    def from_dict(cls, data: dict) -> "OuParams":
        return cls(alpha=float(data["alpha"]), beta=float(data["beta"]),
                   w0=float(data.get("w0", 0.0)))


@dataclass(frozen=True)
class IncrementStream:
    seed: int
    dt: float
    count: int
    values: np.ndarray = field(repr=False)
    tag: int = 0

    def __post_init__(self):
        if len(self.values) != self.count:
            raise ValueError("length of values does not match count")
        self.values.setflags(write=False)

    def __len__(self):
        return self.count


def gamma(params: OuParams) -> float:
    """Uniform-in-time bound on the second moment of the OU process."""
    return params.w0 ** 2 + params.alpha * params.beta


def ou_second_moment(params: OuParams, t):
    """Exact ``E|w(t)|^2`` for a deterministic initial value.

    Accepts a scalar or an array of nonnegative times.
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("t must be nonnegative")
    decay = np.exp(-2.0 * params.alpha * t_arr)
    out = decay * params.w0 ** 2 + params.alpha * params.beta * (1.0 - decay)
    return float(out) if out.ndim == 0 else out


def _check_stream_spec(dt, count):
    if not (math.isfinite(dt) and dt > 0):
        raise ValueError(f"dt must be positive, got {dt!r}")
    if int(count) != count or count < 1:
        raise ValueError(f"count must be a positive integer, got {count!r}")


def make_generator(seed: int, tag: int = 0) -> np.random.Generator:
    """Independent generator for ``(seed, tag)``; negative seeds wrap modulo 2**64."""
    seq = np.random.SeedSequence([int(seed) & _SEED_MASK, int(tag)])
    return np.random.Generator(np.random.PCG64(seq))


def brownian_increments(seed: int, dt: float, count: int, tag: int = 0) -> IncrementStream:
    """``count`` i.i.d. Normal(0, dt) increments, deterministic in ``(seed, tag)``."""
    _check_stream_spec(dt, count)
    count = int(count)
    values = make_generator(seed, tag).standard_normal(count) * math.sqrt(dt)
    return IncrementStream(seed=int(seed), dt=float(dt), count=count, values=values, tag=int(tag))


def ou_exact_from_increments(params: OuParams, dB: np.ndarray, dt: float,
                             w_init=None) -> np.ndarray:
    """Exact OU recursion driven by Brownian increments along the last axis.

    The increment ``dB_k`` (variance ``dt``) is rescaled to the exact
    transition variance ``alpha*beta*(1 - exp(-2*alpha*dt))``, so the path is
    coupled to an Euler-Maruyama path fed with the same increments.
    Returns an array with one more entry than ``dB`` along the last axis.
    """
    dB = np.asarray(dB, dtype=float)
    decay = math.exp(-params.alpha * dt)
    scale = math.sqrt(params.alpha * params.beta * (1.0 - decay * decay) / dt)
    out = np.empty(dB.shape[:-1] + (dB.shape[-1] + 1,))
    out[..., 0] = params.w0 if w_init is None else w_init
    for k in range(dB.shape[-1]):
        out[..., k + 1] = decay * out[..., k] + scale * dB[..., k]
    return out


def ou_euler_from_increments(params: OuParams, dB: np.ndarray, dt: float,
                             w_init=None) -> np.ndarray:
    """Euler-Maruyama OU path with the same layout as :func:`ou_exact_from_increments`."""
    dB = np.asarray(dB, dtype=float)
    damp = 1.0 - params.alpha * dt
    sig = params.diffusion
    out = np.empty(dB.shape[:-1] + (dB.shape[-1] + 1,))
    out[..., 0] = params.w0 if w_init is None else w_init
    for k in range(dB.shape[-1]):
        out[..., k + 1] = damp * out[..., k] + sig * dB[..., k]
    return out


def simulate_ou_exact(params: OuParams, stream_spec, tag: int = SOURCE_B1) -> np.ndarray:
    """Exact OU path ``w_0..w_count`` for ``stream_spec = (seed, dt, count)``.

    Uses the same increment stream as the coupled simulation for source
    ``tag``, so it serves as a pathwise oracle for that simulation's noise.
    """
    seed, dt, count = stream_spec
    stream = brownian_increments(seed, dt, count, tag=tag)
    return ou_exact_from_increments(params, stream.values, stream.dt)
