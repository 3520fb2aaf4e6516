"""Differentiator design functions, quadratic Lyapunov certificates and the
admissible gain range.

A design function ``f`` closes the integrator chain of the differentiator.
It is accepted when a quadratic certificate ``V(z) = z Q z^T`` with
dissipation form ``W`` satisfies the sandwich, dissipation and
gradient/Hessian inequalities. For linear ``f`` the certificate is built
from the Lyapunov equation ``Q A + A^T Q = -I``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "CertificateReport",
    "LinearDesign",
    "LyapunovCertificate",
    "StabilityError",
    "TdFunction",
    "admissible_r_min",
    "builtin_nonlinear_2d",
    "characteristic_polynomial",
    "hurwitz_check",
    "in_admissible_range",
    "nonlinear_2d_certificate",
    "phi_saturated_sine",
    "r0_lhs",
    "r0_threshold",
    "routh_hurwitz",
    "solve_lyapunov",
    "td_function_from_dict",
    "user_td_function",
    "verify_certificate",
]


class StabilityError(ValueError):
    """Raised when a companion matrix is not Hurwitz."""


# -- design functions --------------------------------------------------------

class _LinearF:
    def __init__(self, coefficients):
        self.coefficients = np.asarray(coefficients, dtype=float)

    def __call__(self, z):
        return np.asarray(z, dtype=float) @ self.coefficients


def phi_saturated_sine(s):
    """Saturated sine: ``sin(s)/(4 pi)`` on ``[-pi/2, pi/2]``, ``+-1/(4 pi)`` outside."""
    return np.sin(np.clip(s, -0.5 * np.pi, 0.5 * np.pi)) / (4.0 * np.pi)


class _Nonlinear2dF:
    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        z1 = z[..., 0]
        return -2.0 * z1 - 4.0 * z[..., 1] - phi_saturated_sine(z1)


@dataclass(frozen=True)
class TdFunction:
    """Design function ``f: R^n -> R``.

    ``func`` must be vectorised over leading axes: an array of shape
    ``(..., n)`` maps to shape ``(...)``.
    """

    order: int
    func: Callable = field(repr=False, compare=False)
    kind: str = "user"
    coefficients: Optional[tuple] = None
    name: str = ""

    def __post_init__(self):
        if self.order < 2:
            raise ValueError("order must be at least 2")

    def __call__(self, z):
        return self.func(z)

    evaluate = __call__

    def to_dict(self) -> dict:
        if self.kind == "linear":
            return {"kind": "linear", "coefficients": list(self.coefficients)}
        if self.kind == "nonlinear_2d":
            return {"kind": "nonlinear_2d"}
        return {"kind": "user", "order": self.order, "name": self.name or repr(self.func)}


def builtin_nonlinear_2d() -> TdFunction:
    """``f(z1, z2) = -2 z1 - 4 z2 - phi(z1)`` with the saturated sine ``phi``."""
    return TdFunction(order=2, func=_Nonlinear2dF(), kind="nonlinear_2d",
                      name="nonlinear_2d")


def user_td_function(order: int, func: Callable, name: str = "") -> TdFunction:
    f = TdFunction(order=order, func=func, kind="user", name=name)
    if abs(float(np.asarray(f(np.zeros(order))))) > 0.0:
        raise ValueError("design function must vanish at the origin")
    return f


@dataclass(frozen=True)
class LinearDesign:
    """Linear design ``f(z) = a_1 z_1 + ... + a_n z_n``."""

    coefficients: tuple

    def __post_init__(self):
        coeffs = tuple(float(a) for a in self.coefficients)
        if len(coeffs) < 2:
            raise ValueError("a linear design needs at least two coefficients")
        if not all(math.isfinite(a) for a in coeffs):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "coefficients", coeffs)

    @property
    def order(self) -> int:
        return len(self.coefficients)

    @property
    def companion_matrix(self) -> np.ndarray:
        n = self.order
        A = np.zeros((n, n))
        A[np.arange(n - 1), np.arange(1, n)] = 1.0
        A[-1, :] = self.coefficients
        return A

    def td_function(self) -> TdFunction:
        return TdFunction(order=self.order, func=_LinearF(self.coefficients),
                          kind="linear", coefficients=self.coefficients,
                          name="linear")


def td_function_from_dict(data: dict) -> TdFunction:
    kind = data["kind"]
    if kind == "linear":
        return LinearDesign(tuple(data["coefficients"])).td_function()
    if kind == "nonlinear_2d":
        return builtin_nonlinear_2d()
    raise ValueError(f"cannot deserialise design function of kind {kind!r}")


# -- Hurwitz check -----------------------------------------------------------

def characteristic_polynomial(design: LinearDesign) -> list:
    """Coefficients of ``det(sI - A)``, highest degree first, as exact fractions.

    For the companion matrix this is ``s^n - a_n s^(n-1) - ... - a_1``.
    """
    a = [Fraction(c) for c in design.coefficients]
    return [Fraction(1)] + [-c for c in reversed(a)]


def routh_hurwitz(poly: Sequence) -> bool:
    """Strict Routh-Hurwitz test in exact arithmetic.

    True iff every root of the polynomial has negative real part. A zero in
    the first column means roots on or right of the imaginary axis.
    """
    p = [Fraction(c) for c in poly]
    while p and p[0] == 0:
        p.pop(0)
    if len(p) < 2:
        return False
    if p[0] < 0:
        p = [-c for c in p]
    rows = [p[0::2], p[1::2]]
    width = len(rows[0])
    rows = [r + [Fraction(0)] * (width - len(r)) for r in rows]
    for _ in range(len(p) - 2):
        upper, lower = rows[-2], rows[-1]
        if lower[0] <= 0:
            return False
        new = [(lower[0] * upper[j + 1] - upper[0] * lower[j + 1]) / lower[0]
               for j in range(width - 1)] + [Fraction(0)]
        rows.append(new)
    return rows[-1][0] > 0


def hurwitz_check(design: LinearDesign) -> bool:
    return routh_hurwitz(characteristic_polynomial(design))


# -- certificates --------------------------------------------------------------

@dataclass(frozen=True)
class LyapunovCertificate:
    """Constants and quadratic forms witnessing the design assumption.

    ``V`` and ``W`` are symmetric coefficient matrices; ``V(z) = z V z^T``.
    """

    lambda1: float
    lambda2: float
    lambda3: float
    lambda4: float
    c1: float
    c2: float
    V: np.ndarray = field(compare=False)
    W: np.ndarray = field(compare=False)
    theta: float = 0.5

    def __post_init__(self):
        V = np.array(self.V, dtype=float)
        W = np.array(self.W, dtype=float)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "W", W)
        V.setflags(write=False)
        W.setflags(write=False)
        consts = (self.lambda1, self.lambda2, self.lambda3, self.lambda4, self.c1, self.c2)
        if not all(math.isfinite(c) and c > 0 for c in consts):
            raise ValueError("lambda1..lambda4, c1, c2 must be positive")
        if self.lambda1 > self.lambda2 or self.lambda3 > self.lambda4:
            raise ValueError("need lambda1 <= lambda2 and lambda3 <= lambda4")
        if not 0.0 < self.theta < 1.0:
            raise ValueError("theta must lie in (0, 1)")
        if V.ndim != 2 or V.shape[0] != V.shape[1] or V.shape != W.shape:
            raise ValueError("V and W must be square matrices of the same size")
        if not (np.allclose(V, V.T) and np.allclose(W, W.T)):
            raise ValueError("V and W must be symmetric")

    @property
    def order(self) -> int:
        return self.V.shape[0]

    @property
    def decay_rate(self) -> float:
        """Exponential decay rate ``(1 - theta) lambda3 / lambda2`` of E V."""
        return (1.0 - self.theta) * self.lambda3 / self.lambda2

    def V_value(self, z):
        z = np.asarray(z, dtype=float)
        return np.einsum("...i,ij,...j->...", z, self.V, z)

    def W_value(self, z):
        z = np.asarray(z, dtype=float)
        return np.einsum("...i,ij,...j->...", z, self.W, z)

    def V_gradient(self, z):
        return 2.0 * np.asarray(z, dtype=float) @ self.V

    def with_theta(self, theta: float) -> "LyapunovCertificate":
        return replace(self, theta=float(theta))

    def to_dict(self) -> dict:
        return {
            "lambda1": self.lambda1, "lambda2": self.lambda2,
            "lambda3": self.lambda3, "lambda4": self.lambda4,
            "c1": self.c1, "c2": self.c2,
            "V": self.V.tolist(), "W": self.W.tolist(),
            "theta": self.theta,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LyapunovCertificate":
        return cls(
            lambda1=float(data["lambda1"]), lambda2=float(data["lambda2"]),
            lambda3=float(data["lambda3"]), lambda4=float(data["lambda4"]),
            c1=float(data["c1"]), c2=float(data["c2"]),
            V=np.asarray(data["V"], dtype=float), W=np.asarray(data["W"], dtype=float),
            theta=float(data.get("theta", 0.5)),
        )


def nonlinear_2d_certificate(theta: float = 0.5) -> LyapunovCertificate:
    """Published certificate for :func:`builtin_nonlinear_2d`."""
    return LyapunovCertificate(
        lambda1=0.13, lambda2=1.43, lambda3=0.5, lambda4=0.5, c1=3.91, c2=2.75,
        V=np.array([[1.375, 0.25], [0.25, 0.1875]]),
        W=0.5 * np.eye(2),
        theta=theta,
    )


def solve_lyapunov(design: LinearDesign, theta: float = 0.5):
    """Solve ``Q A + A^T Q = -I`` for symmetric ``Q``.

    The n(n+1)/2 upper-triangular entries of ``Q`` are the unknowns of one
    square linear system (one equation per upper-triangular entry of the
    residual). Returns ``(Q, certificate)``.
    """
    if not hurwitz_check(design):
        raise StabilityError(f"companion matrix of {design.coefficients} is not Hurwitz")
    A = design.companion_matrix
    n = design.order
    pairs = [(i, j) for i in range(n) for j in range(i, n)]
    index = {p: k for k, p in enumerate(pairs)}

    def unknown(i, j):
        return index[(i, j) if i <= j else (j, i)]

    M = np.zeros((len(pairs), len(pairs)))
    rhs = np.zeros(len(pairs))
    for row, (i, j) in enumerate(pairs):
        # (QA)_ij + (A^T Q)_ij = sum_k Q_ik A_kj + A_ki Q_kj
        for k in range(n):
            if A[k, j] != 0.0:
                M[row, unknown(i, k)] += A[k, j]
            if A[k, i] != 0.0:
                M[row, unknown(k, j)] += A[k, i]
        rhs[row] = -1.0 if i == j else 0.0
    q = np.linalg.solve(M, rhs)
    Q = np.empty((n, n))
    for (i, j), k in index.items():
        Q[i, j] = Q[j, i] = q[k]
    eig = np.linalg.eigvalsh(Q)
    lam_min, lam_max = float(eig[0]), float(eig[-1])
    cert = LyapunovCertificate(
        lambda1=lam_min, lambda2=lam_max, lambda3=1.0, lambda4=1.0,
        c1=2.0 * lam_max, c2=2.0 * lam_max, V=Q, W=np.eye(n), theta=theta,
    )
    return Q, cert


@dataclass
class CertificateReport:
    holds: bool
    worst_violation: float
    witness: np.ndarray
    worst_condition: str
    violations: dict
    region: tuple
    samples: int

    def to_dict(self) -> dict:
        return {
            "holds": self.holds,
            "worst_violation": self.worst_violation,
            "witness": self.witness.tolist(),
            "worst_condition": self.worst_condition,
            "violations": self.violations,
            "region": list(self.region),
            "samples": self.samples,
        }


def verify_certificate(f: TdFunction, cert: LyapunovCertificate, sample_spec=None,
                       rtol: float = 1e-9) -> CertificateReport:
    """Sampling falsifier for the certificate inequalities.

    ``sample_spec`` is a mapping with ``half_width`` (box ``[-h, h]^n``),
    ``count`` and ``seed``. The report holds on the sampled region only.
    Each inequality ``lhs <= rhs`` is scored as ``lhs - rhs`` and counts as
    violated when that exceeds ``rtol * (|lhs| + |rhs|)``. Besides the
    literal inequalities, ``decay`` checks the combined dissipation bound
    ``dV <= -lambda3 |z|^2`` that the convergence analysis relies on.
    """
    spec = {"half_width": 10.0, "count": 100_000, "seed": 0}
    spec.update(sample_spec or {})
    n = cert.order
    if f.order != n:
        raise ValueError("certificate and design function have different orders")
    h = float(spec["half_width"])
    count = int(spec["count"])
    rng = np.random.default_rng(int(spec["seed"]))
    z = rng.uniform(-h, h, size=(count, n))
    norm2 = np.einsum("ij,ij->i", z, z)
    norm = np.sqrt(norm2)
    V = cert.V_value(z)
    W = cert.W_value(z)
    grad = cert.V_gradient(z)
    fz = np.asarray(f(z), dtype=float)
    dV = np.einsum("ij,ij->i", grad[:, :-1], z[:, 1:]) + grad[:, -1] * fz
    hess_diag = 2.0 * np.diag(cert.V)
    ends = [0, n - 1]

    checks = {
        "V_lower": (cert.lambda1 * norm2, V),
        "V_upper": (V, cert.lambda2 * norm2),
        "W_lower": (cert.lambda3 * norm2, W),
        "W_upper": (W, cert.lambda4 * norm2),
        "dissipation": (dV, -W),
        "decay": (dV, -cert.lambda3 * norm2),
    }
    for j in ends:
        checks[f"gradient_{j + 1}"] = (np.abs(grad[:, j]), cert.c1 * norm)
        checks[f"hessian_{j + 1}"] = (np.full(count, abs(hess_diag[j])), np.full(count, cert.c2))

    violations = {}
    worst = (-math.inf, "", 0)
    for name, (lhs, rhs) in checks.items():
        excess = lhs - rhs - rtol * (np.abs(lhs) + np.abs(rhs))
        k = int(np.argmax(excess))
        violations[name] = float(lhs[k] - rhs[k]) if excess[k] > 0 else 0.0
        if excess[k] > worst[0]:
            worst = (float(excess[k]), name, k)
    _, name, k = worst
    holds = all(v == 0.0 for v in violations.values())
    return CertificateReport(
        holds=holds,
        worst_violation=violations[name] if not holds else max(
            float(np.max(lhs - rhs)) for lhs, rhs in checks.values()),
        witness=z[k].copy(),
        worst_condition=name,
        violations=violations,
        region=(-h, h),
        samples=count,
    )


# -- admissible gains ----------------------------------------------------------

def r0_lhs(r: float, n: int) -> float:
    """Left-hand side ``1/r + 1/(2 r^(2n-1))`` of the admissibility inequality."""
    return 1.0 / r + 0.5 / r ** (2 * n - 1)


def r0_threshold(cert: LyapunovCertificate) -> float:
    return cert.theta * cert.lambda3 / cert.lambda2


def in_admissible_range(r: float, cert: LyapunovCertificate, n: int) -> bool:
    return r >= 1.0 and r0_lhs(r, n) <= r0_threshold(cert)


def admissible_r_min(cert: LyapunovCertificate, n: int, tol: float = 1e-6) -> float:
    """Smallest admissible gain, to absolute tolerance ``tol``.

    The left-hand side is strictly decreasing in ``r``; bisection returns the
    upper bracket so the result is always admissible. Returns ``math.inf``
    when the range is empty (only if the threshold is not positive).
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    thr = r0_threshold(cert)
    if thr <= 0:
        return math.inf
    if r0_lhs(1.0, n) <= thr:
        return 1.0
    lo, hi = 1.0, 2.0
    while r0_lhs(hi, n) > thr:
        lo, hi = hi, 2.0 * hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if r0_lhs(mid, n) <= thr:
            hi = mid
        else:
            lo = mid
    return hi
