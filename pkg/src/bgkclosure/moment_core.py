"""Hermite-moment utilities for the one-dimensional BGK system.

Conventions used throughout the package:

* Hermite polynomials are the probabilists' family ``He_k``, fixed by the
  three-term recurrence ``He_{k+1}(x) = x He_k(x) - k He_{k-1}(x)`` with
  ``He_0 = 1`` and ``He_1 = x``.  (Not the physicists' convention.)
* A state of order ``M`` is the primitive vector
  ``w = (rho, u, theta, f_3, ..., f_M)`` of length ``M + 1``.  Wherever a
  formula refers to moments below index 3 the identities ``f_0 = rho`` and
  ``f_1 = f_2 = 0`` apply; the heat flux is ``q = 3 f_3``.
* System matrices are unreduced lower Hessenberg: zero above the first
  superdiagonal, with superdiagonal entries ``(rho, 1, 6/rho, 4, 5, ..., M)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MIN_ORDER = 4

__all__ = [
    "MIN_ORDER",
    "PositivityError",
    "DegenerateDistributionError",
    "PrimitiveMomentState",
    "ConservativeState",
    "Grid1D",
    "hermite_eval",
    "hermite_roots",
    "maxwellian",
    "moments_from_distribution",
    "moment_arrays",
    "grad_matrix",
    "hme_matrix",
    "grad_matrix_fields",
    "hme_matrix_fields",
    "grad_last_row_fields",
    "hme_last_row_fields",
    "collision_source",
    "convert_variables",
    "primitive_to_conservative_arrays",
    "conservative_to_primitive_arrays",
]


class PositivityError(ValueError):
    """Raised when a state violates rho > 0 or theta > 0."""


class DegenerateDistributionError(ValueError):
    """Raised when a velocity distribution yields non-positive density or temperature."""


def _check_order(order: int) -> None:
    if order < MIN_ORDER:
        raise ValueError(f"moment order must be >= {MIN_ORDER}, got {order}")


@dataclass(frozen=True)
class PrimitiveMomentState:
    """Primitive moment vector ``(rho, u, theta, f_3, ..., f_M)``.

    ``f`` holds the higher moments ``f_3 ... f_M`` (length ``order - 2``).
    """

    order: int
    rho: float
    u: float
    theta: float
    f: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        _check_order(self.order)
        f = np.asarray(self.f, dtype=float)
        object.__setattr__(self, "f", f)
        if f.shape != (self.order - 2,):
            raise ValueError(
                f"expected {self.order - 2} higher moments for order {self.order}, got {f.shape}"
            )
        if not (self.rho > 0.0 and self.theta > 0.0):
            raise PositivityError(f"rho={self.rho}, theta={self.theta} must be positive")
        if not np.isfinite([self.rho, self.u, self.theta]).all() or not np.isfinite(f).all():
            raise ValueError("non-finite entry in moment state")

    @classmethod
    def equilibrium(cls, order: int, rho: float = 1.0, u: float = 0.0, theta: float = 1.0):
        return cls(order, rho, u, theta, np.zeros(order - 2))

    def as_vector(self) -> np.ndarray:
        return np.concatenate(([self.rho, self.u, self.theta], self.f))

    @classmethod
    def from_vector(cls, order: int, w: np.ndarray) -> "PrimitiveMomentState":
        w = np.asarray(w, dtype=float)
        return cls(order, w[0], w[1], w[2], w[3:].copy())


@dataclass(frozen=True)
class ConservativeState:
    """Partially conserved vector ``(rho, rho*u, E, f_3, ..., f_M)`` with
    ``E = rho*theta/2 + rho*u**2/2``."""

    order: int
    rho: float
    momentum: float
    energy: float
    f: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        _check_order(self.order)
        f = np.asarray(self.f, dtype=float)
        object.__setattr__(self, "f", f)
        if f.shape != (self.order - 2,):
            raise ValueError(
                f"expected {self.order - 2} higher moments for order {self.order}, got {f.shape}"
            )
        if not self.rho > 0.0:
            raise PositivityError(f"rho={self.rho} must be positive")
        if not self.energy - self.momentum**2 / (2.0 * self.rho) > 0.0:
            raise PositivityError("internal energy (temperature) must be positive")

    def as_vector(self) -> np.ndarray:
        return np.concatenate(([self.rho, self.momentum, self.energy], self.f))

    @classmethod
    def from_vector(cls, order: int, v: np.ndarray) -> "ConservativeState":
        v = np.asarray(v, dtype=float)
        return cls(order, v[0], v[1], v[2], v[3:].copy())


@dataclass(frozen=True)
class Grid1D:
    """Uniform periodic/outflow cell grid on ``[x_a, x_b]``."""

    x_a: float
    x_b: float
    n_cells: int
    boundary: str = "periodic"

    def __post_init__(self):
        if not self.x_b > self.x_a:
            raise ValueError("x_b must exceed x_a")
        if self.n_cells < 4:
            raise ValueError("need at least 4 cells")
        if self.boundary not in ("periodic", "outflow"):
            raise ValueError(f"unknown boundary {self.boundary!r}")

    @property
    def dx(self) -> float:
        return (self.x_b - self.x_a) / self.n_cells

    @property
    def centers(self) -> np.ndarray:
        return self.x_a + (np.arange(self.n_cells) + 0.5) * self.dx

    @property
    def length(self) -> float:
        return self.x_b - self.x_a


# ---------------------------------------------------------------------------
# Hermite polynomials (probabilists' convention)
# ---------------------------------------------------------------------------


def hermite_eval(k: int, x):
    """Evaluate ``He_k(x)`` by the three-term recurrence.

    Accepts scalars or arrays; total in its arguments.
    """
    if k < 0:
        raise ValueError("degree must be nonnegative")
    x = np.asarray(x, dtype=float)
    prev = np.ones_like(x)
    if k == 0:
        return prev if prev.ndim else float(prev)
    cur = x.copy()
    for j in range(1, k):
        prev, cur = cur, x * cur - j * prev
    return cur if cur.ndim else float(cur)


def hermite_roots(k: int) -> np.ndarray:
    """Roots of ``He_k`` in increasing order.

    Computed as eigenvalues of the symmetric tridiagonal Jacobi matrix with
    zero diagonal and off-diagonal entries ``sqrt(1), ..., sqrt(k-1)``; this
    is stable and avoids polynomial deflation.
    """
    if k < 1:
        raise ValueError("degree must be >= 1")
    jac = np.zeros((k, k))
    off = np.sqrt(np.arange(1, k, dtype=float))
    jac[np.arange(k - 1), np.arange(1, k)] = off
    jac[np.arange(1, k), np.arange(k - 1)] = off
    return np.sort(np.linalg.eigvalsh(jac))


def maxwellian(rho: float, u: float, theta: float, v):
    """Local Maxwellian ``rho/sqrt(2 pi theta) * exp(-(v-u)^2 / (2 theta))``."""
    if not (rho > 0.0 and theta > 0.0):
        raise PositivityError("maxwellian requires rho > 0 and theta > 0")
    v = np.asarray(v, dtype=float)
    out = rho / np.sqrt(2.0 * np.pi * theta) * np.exp(-((v - u) ** 2) / (2.0 * theta))
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Moment extraction from a discrete velocity distribution
# ---------------------------------------------------------------------------


def moment_arrays(values: np.ndarray, v_nodes: np.ndarray, weights: np.ndarray, max_order: int):
    """Velocity-quadrature moments of ``values`` up to ``f_{max_order}``.

    ``values`` has shape ``(..., n_v)``; returns ``(rho, u, theta, fs)`` where
    ``fs[..., k-3]`` holds ``f_k`` for ``k = 3 .. max_order``, each with the
    leading shape of ``values``.  The projection uses
    ``f_k = theta^{k/2} / k! * sum_j w_j f(v_j) He_k((v_j - u)/sqrt(theta))``.
    """
    values = np.asarray(values, dtype=float)
    v = np.asarray(v_nodes, dtype=float)
    w = np.asarray(weights, dtype=float)
    rho = values @ w
    if np.any(rho <= 0.0):
        raise DegenerateDistributionError("non-positive density from quadrature")
    mom = values @ (w * v)
    e2 = values @ (w * v * v)
    u = mom / rho
    theta = e2 / rho - u * u
    if np.any(theta <= 0.0):
        raise DegenerateDistributionError("non-positive temperature from quadrature")
    sqt = np.sqrt(theta)
    z = (v - u[..., None]) / sqt[..., None]
    fs = np.empty(values.shape[:-1] + (max_order - 2,))
    # He_k(z) by recurrence, reusing the two previous rows; scale = theta^{k/2}.
    prev = np.ones_like(z)
    cur = z
    kfac = 1.0
    scale = np.array(sqt, copy=True)
    for k in range(2, max_order + 1):
        prev, cur = cur, z * cur - (k - 1) * prev
        kfac *= k
        scale = scale * sqt
        if k >= 3:
            fs[..., k - 3] = ((values * cur) @ w) * scale / kfac
    return rho, u, theta, fs


def moments_from_distribution(
    values: np.ndarray, v_nodes: np.ndarray, weights: np.ndarray, order: int
) -> PrimitiveMomentState:
    """Project a pointwise velocity distribution onto a primitive moment state.

    The velocity grid must be wide enough that the tail mass outside it is
    negligible at the requested tolerance; no windowing is applied.
    """
    _check_order(order)
    rho, u, theta, fs = moment_arrays(values, v_nodes, weights, order)
    return PrimitiveMomentState(order, float(rho), float(u), float(theta), fs[: order - 2])


# ---------------------------------------------------------------------------
# System matrices
# ---------------------------------------------------------------------------


def _fk(rho: np.ndarray, fs: np.ndarray, k: int) -> np.ndarray:
    """Moment ``f_k`` under the ``f_0 = rho``, ``f_1 = f_2 = 0`` convention."""
    if k == 0:
        return rho
    if k in (1, 2):
        return np.zeros_like(rho)
    return fs[..., k - 3]


def grad_matrix_fields(rho, u, theta, fs) -> np.ndarray:
    """Batched transport matrices of the truncated moment system.

    Inputs are arrays of shape ``(n,)`` and ``(n, M-2)``; returns
    ``(n, M+1, M+1)``.  The closing moment is dropped (``f_{M+1} = 0``).
    """
    rho = np.asarray(rho, dtype=float)
    u = np.asarray(u, dtype=float)
    theta = np.asarray(theta, dtype=float)
    fs = np.asarray(fs, dtype=float)
    order = fs.shape[-1] + 2
    m = order + 1
    n = rho.shape[0]
    A = np.zeros((n, m, m))
    A[:, 0, 0] = u
    A[:, 0, 1] = rho
    A[:, 1, 0] = theta / rho
    A[:, 1, 1] = u
    A[:, 1, 2] = 1.0
    A[:, 2, 1] = 2.0 * theta
    A[:, 2, 2] = u
    A[:, 2, 3] = 6.0 / rho
    for k in range(3, order + 1):
        A[:, k, 0] += -theta / rho * _fk(rho, fs, k - 1)
        A[:, k, 1] += (k + 1.0) * _fk(rho, fs, k)
        A[:, k, 2] += 0.5 * (k - 1.0) * _fk(rho, fs, k - 1) + 0.5 * theta * _fk(rho, fs, k - 3)
        A[:, k, 3] += -3.0 / rho * _fk(rho, fs, k - 2)
        if k - 1 >= 3:
            A[:, k, k - 1] += theta
        A[:, k, k] += u
        if k + 1 <= order:
            A[:, k, k + 1] += k + 1.0
    return A


def hme_last_row_fields(rho, u, theta, fs) -> np.ndarray:
    """Batched hyperbolic-regularized last rows, shape ``(n, M+1)``."""
    rho = np.asarray(rho, dtype=float)
    u = np.asarray(u, dtype=float)
    theta = np.asarray(theta, dtype=float)
    fs = np.asarray(fs, dtype=float)
    order = fs.shape[-1] + 2
    row = np.zeros(rho.shape + (order + 1,))
    row[:, 0] = -theta / rho * _fk(rho, fs, order - 1)
    row[:, 2] = -_fk(rho, fs, order - 1) + 0.5 * theta * _fk(rho, fs, order - 3)
    row[:, 3] += -3.0 / rho * _fk(rho, fs, order - 2)
    row[:, order - 1] += theta
    row[:, order] += u
    return row


def grad_last_row_fields(rho, u, theta, fs) -> np.ndarray:
    """Batched last rows of the truncation closure (``f_{M+1} = 0``)."""
    rho = np.asarray(rho, dtype=float)
    fs = np.asarray(fs, dtype=float)
    order = fs.shape[-1] + 2
    return grad_matrix_fields(rho, u, theta, fs)[:, order, :]


def hme_matrix_fields(rho, u, theta, fs) -> np.ndarray:
    A = grad_matrix_fields(rho, u, theta, fs)
    order = np.asarray(fs).shape[-1] + 2
    A[:, order, :] = hme_last_row_fields(rho, u, theta, fs)
    return A


def grad_matrix(w: PrimitiveMomentState) -> np.ndarray:
    """Transport matrix of the order-``M`` system with the truncation closure."""
    return grad_matrix_fields(
        np.array([w.rho]), np.array([w.u]), np.array([w.theta]), w.f[None, :]
    )[0]


def hme_matrix(w: PrimitiveMomentState) -> np.ndarray:
    """Transport matrix with the globally hyperbolic last-row regularization.

    Only the last row differs from :func:`grad_matrix`: its density column,
    velocity column and temperature column become
    ``(-theta/rho f_{M-1}, 0, -f_{M-1} + theta/2 f_{M-3})``.
    """
    return hme_matrix_fields(
        np.array([w.rho]), np.array([w.u]), np.array([w.theta]), w.f[None, :]
    )[0]


def collision_source(w: PrimitiveMomentState, tau: float) -> np.ndarray:
    """Relaxation source ``(0, 0, 0, -f_3/tau, ..., -f_M/tau)``."""
    if not tau > 0.0:
        raise ValueError(f"relaxation time must be positive, got {tau}")
    return np.concatenate((np.zeros(3), -w.f / tau))


# ---------------------------------------------------------------------------
# Variable transforms
# ---------------------------------------------------------------------------


def primitive_to_conservative_arrays(W: np.ndarray) -> np.ndarray:
    """Map stacked primitive vectors ``(..., M+1)`` to partially conserved ones."""
    V = np.array(W, dtype=float, copy=True)
    rho, u, theta = W[..., 0], W[..., 1], W[..., 2]
    V[..., 1] = rho * u
    V[..., 2] = 0.5 * rho * theta + 0.5 * rho * u * u
    return V


def conservative_to_primitive_arrays(V: np.ndarray) -> np.ndarray:
    """Inverse of :func:`primitive_to_conservative_arrays`.

    Raises :class:`PositivityError` on non-physical input (``E <= p^2/2rho``).
    """
    W = np.array(V, dtype=float, copy=True)
    rho, mom, ene = V[..., 0], V[..., 1], V[..., 2]
    if np.any(rho <= 0.0):
        raise PositivityError("non-positive density in conservative state")
    u = mom / rho
    theta = 2.0 * ene / rho - u * u
    if np.any(theta <= 0.0):
        raise PositivityError("non-positive temperature in conservative state")
    W[..., 1] = u
    W[..., 2] = theta
    return W


def convert_variables(state, direction: str):
    """Exact algebraic transform between primitive and partially conserved states.

    ``direction`` is ``"to_conservative"`` or ``"to_primitive"``; the higher
    moments pass through unchanged and the round trip is the identity up to
    floating-point round-off.
    """
    if direction == "to_conservative":
        if not isinstance(state, PrimitiveMomentState):
            raise TypeError("to_conservative expects a PrimitiveMomentState")
        v = primitive_to_conservative_arrays(state.as_vector())
        return ConservativeState.from_vector(state.order, v)
    if direction == "to_primitive":
        if not isinstance(state, ConservativeState):
            raise TypeError("to_primitive expects a ConservativeState")
        w = conservative_to_primitive_arrays(state.as_vector())
        return PrimitiveMomentState.from_vector(state.order, w)
    raise ValueError(f"unknown direction {direction!r}")

