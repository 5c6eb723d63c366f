"""Path-conservative finite-volume solvers for the non-conservative moment system.

The evolved unknowns are partially conserved cell averages
``v = (rho, rho*u, E, f_3, ..., f_M)``.  The first three components obey true
conservation laws and are discretized with conservative flux differences
(mass, momentum and energy then telescope to machine precision on periodic
grids); the remaining components are genuinely non-conservative and are
updated with path-conservative fluctuations ``D^{+-}`` built from a
quadrature Roe matrix along a path in state space.

Schemes: first-order ``roe`` / ``lax_friedrichs`` / ``force`` with forward
Euler, and ``high_order_roe`` combining component-wise WENO5 traces, a
four-node Gauss-Lobatto in-cell integral of ``A(P) dP/dx`` and three-stage
SSP Runge-Kutta, with the closure row refreshed at every stage.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import ml_closure_runtime as mlrt
from .moment_core import (
    Grid1D,
    conservative_to_primitive_arrays,
    grad_last_row_fields,
    grad_matrix_fields,
    hme_last_row_fields,
    primitive_to_conservative_arrays,
)

__all__ = [
    "SolverConfig",
    "FieldState",
    "SolverFailure",
    "HyperbolicityError",
    "Closure",
    "GradClosure",
    "HmeClosure",
    "MlClosure",
    "MlNonhyperbolicClosure",
    "make_closure",
    "roe_linearization",
    "fluctuations",
    "weno5_reconstruct",
    "step_first_order",
    "high_order_rhs",
    "compute_dt",
    "run",
    "RunResult",
]

FIRST_ORDER_SCHEMES = ("roe", "lax_friedrichs", "force")
SCHEMES = FIRST_ORDER_SCHEMES + ("high_order_roe",)


class SolverFailure(RuntimeError):
    def __init__(self, kind: str, cell: int, time: float, message: str = ""):
        super().__init__(f"{kind} at cell {cell}, t={time:.6g} {message}")
        self.kind = kind
        self.cell = cell
        self.time = time


class HyperbolicityError(SolverFailure):
    def __init__(self, cell: int, time: float, message: str = ""):
        super().__init__("hyperbolicity violation", cell, time, message)


@dataclass(frozen=True)
class SolverConfig:
    scheme: str = "force"
    path: str = "linear"  # linear | polynomial
    path_degree: int = 2
    quad_points: int = 3
    cfl: float = 0.5
    collision: str = "explicit"  # explicit | split_exact
    tau: float = 1.0
    dt_fixed: Optional[float] = None
    roe_cond_limit: float = 1e10

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.path not in ("linear", "polynomial"):
            raise ValueError(f"unknown path {self.path!r}")
        if not 0.0 < self.cfl <= 1.0:
            raise ValueError("cfl must lie in (0, 1]")
        if self.quad_points < 1:
            raise ValueError("need at least one quadrature point")
        if self.collision not in ("explicit", "split_exact"):
            raise ValueError(f"unknown collision mode {self.collision!r}")
        if not self.tau > 0.0:
            raise ValueError("tau must be positive")


@dataclass
class FieldState:
    grid: Grid1D
    order: int
    conserved: np.ndarray  # (n_cells, order + 1)
    time: float = 0.0

    @classmethod
    def from_primitive(cls, grid: Grid1D, W: np.ndarray, order: int, time: float = 0.0):
        W = np.asarray(W, dtype=float)
        if W.shape != (grid.n_cells, order + 1):
            raise ValueError(f"expected primitive array of shape {(grid.n_cells, order + 1)}")
        return cls(grid, order, primitive_to_conservative_arrays(W), time)

    def primitive(self) -> np.ndarray:
        return conservative_to_primitive_arrays(self.conserved)

    def copy(self) -> "FieldState":
        return FieldState(self.grid, self.order, self.conserved.copy(), self.time)


# ---------------------------------------------------------------------------
# Closures
# ---------------------------------------------------------------------------


class Closure:
    """Supplies the last row of the system matrix from primitive fields."""

    name = "base"
    hyperbolic = False

    def last_rows(self, rho, u, theta, fs) -> np.ndarray:
        raise NotImplementedError

    def matrices(self, rho, u, theta, fs) -> np.ndarray:
        A = grad_matrix_fields(rho, u, theta, fs)
        A[:, -1, :] = self.last_rows(rho, u, theta, fs)
        return A


class GradClosure(Closure):
    name = "grad"
    hyperbolic = False

    def last_rows(self, rho, u, theta, fs):
        return grad_last_row_fields(rho, u, theta, fs)


class HmeClosure(Closure):
    name = "hme"
    hyperbolic = True

    def last_rows(self, rho, u, theta, fs):
        return hme_last_row_fields(rho, u, theta, fs)


class MlClosure(Closure):
    """Eigenvalue-head network closure; hyperbolic by construction."""

    name = "ml"
    hyperbolic = True

    def __init__(self, weights: mlrt.NetworkWeights, config: mlrt.ClosureRuntimeConfig):
        self.weights = weights
        self.config = config

    def last_rows(self, rho, u, theta, fs):
        return mlrt.ml_last_rows_fields(self.weights, self.config, rho, u, theta, fs)


class MlNonhyperbolicClosure(Closure):
    """Gradient-coefficient network closure without the eigenvalue head.

    The network output is taken directly as the coefficients ``N_i`` on the
    moment gradients, so nothing constrains the spectrum of the assembled
    matrix.
    """

    name = "ml_nonhyperbolic"
    hyperbolic = False

    def __init__(self, weights: mlrt.NetworkWeights, config: mlrt.ClosureRuntimeConfig):
        self.weights = weights
        self.config = config

    def last_rows(self, rho, u, theta, fs):
        feats = mlrt.features_from_state(rho, theta, fs)
        std = (feats - self.config.feature_means) / self.config.feature_scales
        coeffs = mlrt.forward(self.weights, std)
        base = grad_last_row_fields(rho, u, theta, fs)
        order = np.asarray(fs).shape[-1] + 2
        return base + (order + 1.0) * coeffs


def make_closure(name: str, weights_path: Optional[str] = None) -> Closure:
    if name == "grad":
        return GradClosure()
    if name == "hme":
        return HmeClosure()
    if name in ("ml", "ml_nonhyperbolic"):
        if weights_path is None:
            raise ValueError(f"closure {name!r} requires a weights file")
        with open(weights_path, "rb") as fh:
            weights, config = mlrt.load_weights(fh)
        return MlClosure(weights, config) if name == "ml" else MlNonhyperbolicClosure(weights, config)
    raise ValueError(f"unknown closure {name!r}")


# ---------------------------------------------------------------------------
# Variable transforms between primitive rows and partially conserved rows
# ---------------------------------------------------------------------------


def _jacobians(rho, u, theta, m: int):
    """Batched d(conserved)/d(primitive) and its inverse."""
    n = rho.shape[0]
    J = np.tile(np.eye(m), (n, 1, 1))
    J[:, 1, 0] = u
    J[:, 1, 1] = rho
    J[:, 2, 0] = 0.5 * (theta + u * u)
    J[:, 2, 1] = rho * u
    J[:, 2, 2] = 0.5 * rho
    Jinv = np.tile(np.eye(m), (n, 1, 1))
    Jinv[:, 1, 0] = -u / rho
    Jinv[:, 1, 1] = 1.0 / rho
    Jinv[:, 2, 0] = (u * u - theta) / rho
    Jinv[:, 2, 1] = -2.0 * u / rho
    Jinv[:, 2, 2] = 2.0 / rho
    return J, Jinv


def _conservative_matrices(closure: Closure, V: np.ndarray) -> np.ndarray:
    """System matrices expressed in the partially conserved variables."""
    W = conservative_to_primitive_arrays(V)
    rho, u, theta, fs = W[:, 0], W[:, 1], W[:, 2], W[:, 3:]
    A = closure.matrices(rho, u, theta, fs)
    J, Jinv = _jacobians(rho, u, theta, A.shape[-1])
    return J @ A @ Jinv


def _flux_rows(V: np.ndarray) -> np.ndarray:
    """Exact fluxes of the three conservation laws, from conserved variables."""
    rho, mom, ene = V[..., 0], V[..., 1], V[..., 2]
    F = np.empty(V.shape[:-1] + (3,))
    F[..., 0] = mom
    F[..., 1] = 2.0 * ene
    F[..., 2] = 3.0 * V[..., 3] + 3.0 * mom * ene / rho - mom**3 / rho**2
    return F


# ---------------------------------------------------------------------------
# Roe linearization along a path
# ---------------------------------------------------------------------------


_GAUSS_CACHE: dict = {}


def _unit_gauss_legendre(p: int):
    if p not in _GAUSS_CACHE:
        x, w = np.polynomial.legendre.leggauss(p)
        _GAUSS_CACHE[p] = (0.5 * (x + 1.0), 0.5 * w)
    return _GAUSS_CACHE[p]


def roe_linearization(wL, wR, matrix_provider: Callable, path: str = "linear", p: int = 3, degree: int = 2):
    """Quadrature approximation of the path integral of the system matrix.

    For the linear path this is ``int_0^1 A(wL + s (wR - wL)) ds``; for the
    polynomial path of the given degree the integrand carries the weight
    ``degree * s**(degree-1)`` from the path derivative.  ``matrix_provider``
    maps a state vector to a square matrix.
    """
    wL = np.asarray(wL, dtype=float)
    wR = np.asarray(wR, dtype=float)
    nodes, wts = _unit_gauss_legendre(p)
    acc = None
    for s, wt in zip(nodes, wts):
        if path == "linear":
            phi, factor = wL + s * (wR - wL), 1.0
        elif path == "polynomial":
            phi = wL + s**degree * (wR - wL)
            factor = degree * s ** (degree - 1)
        else:
            raise ValueError(f"unknown path {path!r}")
        term = wt * factor * np.asarray(matrix_provider(phi), dtype=float)
        acc = term if acc is None else acc + term
    return acc


def _roe_matrices_batch(closure: Closure, VL: np.ndarray, VR: np.ndarray, config: SolverConfig):
    """Path-integrated matrices in conserved variables for every interface."""
    nodes, wts = _unit_gauss_legendre(config.quad_points)
    acc = None
    for s, wt in zip(nodes, wts):
        if config.path == "linear":
            phi, factor = VL + s * (VR - VL), 1.0
        else:
            phi = VL + s**config.path_degree * (VR - VL)
            factor = config.path_degree * s ** (config.path_degree - 1)
        term = (wt * factor) * _conservative_matrices(closure, phi)
        acc = term if acc is None else acc + term
    return acc


# ---------------------------------------------------------------------------
# Fluctuations
# ---------------------------------------------------------------------------


def _force_viscosity(A: np.ndarray, dx: float, dt: float) -> np.ndarray:
    m = A.shape[-1]
    eye = np.eye(m)
    return 0.5 * ((dx / dt) * eye + (dt / dx) * (A @ A))


def _abs_matrix_batch(A: np.ndarray, cond_limit: float):
    """``R |Lambda| R^{-1}`` per matrix with a FORCE-style fallback mask.

    Returns ``(absA, bad)`` where ``bad`` marks matrices with non-real
    spectrum or an eigenvector basis whose condition number exceeds the
    limit; callers substitute a centered viscosity there.
    """
    lam, R = np.linalg.eig(A)
    scale = np.maximum(np.abs(lam).max(axis=-1), 1e-300)
    bad = np.abs(lam.imag).max(axis=-1) > 1e-8 * scale
    lam_abs = np.abs(lam)
    absA = np.zeros_like(A)
    ok = ~bad
    if np.any(ok):
        Rok = R[ok]
        try:
            Rinv = np.linalg.inv(Rok)
        except np.linalg.LinAlgError:
            Rinv = np.linalg.pinv(Rok)
        # 1-norm condition estimate from the factors already at hand.
        cond = np.abs(Rok).sum(axis=-2).max(axis=-1) * np.abs(Rinv).sum(axis=-2).max(axis=-1)
        ill = ~np.isfinite(cond) | (cond > cond_limit)
        absA[ok] = np.real((Rok * lam_abs[ok][:, None, :]) @ Rinv)
        if np.any(ill):
            idx = np.flatnonzero(ok)[ill]
            bad[idx] = True
    return absA, bad


def _viscosity_batch(A: np.ndarray, scheme: str, dx: float, dt: float, cond_limit: float):
    """Viscosity matrices Q for the fluctuation splitting; returns (Q, n_fallback)."""
    m = A.shape[-1]
    eye = np.eye(m)
    if scheme == "lax_friedrichs":
        return np.broadcast_to((dx / dt) * eye, A.shape).copy(), 0
    if scheme == "force":
        return _force_viscosity(A, dx, dt), 0
    if scheme in ("roe", "high_order_roe"):
        Q, bad = _abs_matrix_batch(A, cond_limit)
        n_bad = int(bad.sum())
        if n_bad:
            Q[bad] = _force_viscosity(A[bad], dx, dt)
        return Q, n_bad
    raise ValueError(f"unknown scheme {scheme!r}")


def fluctuations(A_phi: np.ndarray, dw: np.ndarray, scheme: str, dx: float, dt: float):
    """Split the jump ``A_phi dw`` into left/right-going parts ``(D-, D+)``.

    ``D+- = (A_phi dw)/2 +- (Q dw)/2`` with the scheme's viscosity matrix Q:
    eigenvalue upwinding for ``roe``, ``(dx/dt) I`` for ``lax_friedrichs``
    and the average of those two characteristic limits for ``force``.  The
    jump identity ``D- + D+ = A_phi dw`` holds for every scheme, and both
    vanish when ``dw = 0``.  A numerically defective Roe matrix falls back to
    the FORCE viscosity with a warning.
    """
    A_phi = np.asarray(A_phi, dtype=float)
    dw = np.asarray(dw, dtype=float)
    Q, n_bad = _viscosity_batch(A_phi[None], scheme, dx, dt, 1e10)
    if n_bad:
        warnings.warn("defective Roe matrix; falling back to FORCE viscosity", RuntimeWarning)
    central = 0.5 * (A_phi @ dw)
    diff = 0.5 * (Q[0] @ dw)
    return central - diff, central + diff


# ---------------------------------------------------------------------------
# WENO5 reconstruction
# ---------------------------------------------------------------------------

_WENO_EPS = 1e-6
_GL_NODES = np.array([-0.5, -0.5 / np.sqrt(5.0), 0.5 / np.sqrt(5.0), 0.5])
_GL_WEIGHTS = np.array([1.0 / 12.0, 5.0 / 12.0, 5.0 / 12.0, 1.0 / 12.0])


def _cell_average_monomial(p: int, c: float) -> float:
    return ((c + 0.5) ** (p + 1) - (c - 0.5) ** (p + 1)) / (p + 1)


def _weno_tables(xi: np.ndarray):
    """Substencil evaluation coefficients and optimal weights at points ``xi``.

    Derived at run time from polynomial exactness on the uniform unit grid:
    each 3-cell substencil reproduces quadratics, and the optimal combination
    reproduces quartics.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    offsets = [(-2, -1, 0), (-1, 0, 1), (0, 1, 2)]
    C = np.zeros((len(xi), 3, 3))
    for r, offs in enumerate(offsets):
        Amat = np.array([[_cell_average_monomial(p, c) for c in offs] for p in range(3)])
        for q, x in enumerate(xi):
            C[q, r] = np.linalg.solve(Amat, np.array([x**p for p in range(3)]))
    big = np.array([[_cell_average_monomial(p, c) for c in range(-2, 3)] for p in range(5)])
    D = np.zeros((len(xi), 3))
    for q, x in enumerate(xi):
        Cquart = np.linalg.solve(big, np.array([x**p for p in range(5)]))
        # d solves: sum_r d_r = 1 and exactness on cubic/quartic data.
        rows = [np.ones(3)]
        rhs = [1.0]
        for p in (3, 4):
            avgs = np.array([_cell_average_monomial(p, c) for c in range(-2, 3)])
            pr = np.array([C[q, r] @ avgs[r : r + 3] for r in range(3)])
            rows.append(pr)
            rhs.append(Cquart @ avgs)
        D[q] = np.linalg.solve(np.array(rows), np.array(rhs))
    return C, D


_RECON_TABLES: dict = {}


def _tables_for(xi_key: tuple):
    if xi_key not in _RECON_TABLES:
        _RECON_TABLES[xi_key] = _weno_tables(np.array(xi_key))
    return _RECON_TABLES[xi_key]


def _smoothness(S: np.ndarray):
    """Jiang-Shu indicators; ``S`` has the 5-cell stencil on the last axis."""
    b0 = (
        13.0 / 12.0 * (S[..., 0] - 2.0 * S[..., 1] + S[..., 2]) ** 2
        + 0.25 * (S[..., 0] - 4.0 * S[..., 1] + 3.0 * S[..., 2]) ** 2
    )
    b1 = (
        13.0 / 12.0 * (S[..., 1] - 2.0 * S[..., 2] + S[..., 3]) ** 2
        + 0.25 * (S[..., 1] - S[..., 3]) ** 2
    )
    b2 = (
        13.0 / 12.0 * (S[..., 2] - 2.0 * S[..., 3] + S[..., 4]) ** 2
        + 0.25 * (3.0 * S[..., 2] - 4.0 * S[..., 3] + S[..., 4]) ** 2
    )
    return np.stack((b0, b1, b2), axis=-1)


def weno5_reconstruct(averages: np.ndarray, xi=(-0.5, 0.5), nonlinear: bool = True) -> np.ndarray:
    """Fifth-order WENO point values inside the center cell of a 5-cell stencil.

    ``averages`` has the stencil on its last axis; ``xi`` are intra-cell
    abscissae in cell units (interfaces at -1/2 and +1/2).  With
    ``nonlinear=False`` the optimal linear combination is used, which is
    exact for polynomials up to degree four.  Negative optimal weights at
    interior points are handled by the standard positive/negative splitting.
    """
    S = np.asarray(averages, dtype=float)
    if S.shape[-1] != 5:
        raise ValueError("stencil axis must have length 5")
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    C, D = _tables_for(tuple(xi.tolist()))
    sub = np.stack(
        [np.einsum("qt,...t->...q", C[:, r, :], S[..., r : r + 3]) for r in range(3)],
        axis=-1,
    )  # (..., n_xi, 3)
    if not nonlinear:
        return np.einsum("...qr,qr->...q", sub, D)
    beta = _smoothness(S)[..., None, :]  # (..., 1, 3)
    alpha_denom = (_WENO_EPS + beta) ** 2
    dpos = 0.5 * (D + 3.0 * np.abs(D))
    dneg = dpos - D
    out = 0.0
    for dd, sign in ((dpos, 1.0), (dneg, -1.0)):
        sigma = dd.sum(axis=-1)  # (n_xi,)
        gam = dd / np.maximum(sigma[:, None], 1e-300)
        alpha = gam / alpha_denom
        wts = alpha / np.maximum(alpha.sum(axis=-1, keepdims=True), 1e-300)
        out = out + sign * sigma * np.einsum("...qr,...qr->...q", wts, sub)
    return out


def _lagrange_diff_matrix(nodes: np.ndarray) -> np.ndarray:
    n = len(nodes)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i == j:
                D[i, j] = sum(1.0 / (nodes[i] - nodes[k]) for k in range(n) if k != i)
            else:
                num = 1.0
                for k in range(n):
                    if k != j and k != i:
                        num *= (nodes[i] - nodes[k]) / (nodes[j] - nodes[k])
                D[i, j] = num / (nodes[j] - nodes[i])
    return D


_GL_DIFF = _lagrange_diff_matrix(_GL_NODES)


# ---------------------------------------------------------------------------
# Steps and right-hand sides
# ---------------------------------------------------------------------------


def _pad(V: np.ndarray, g: int, boundary: str) -> np.ndarray:
    if boundary == "periodic":
        return np.concatenate((V[-g:], V, V[:g]), axis=0)
    return np.concatenate((np.repeat(V[:1], g, axis=0), V, np.repeat(V[-1:], g, axis=0)), axis=0)


def _check_physical(V: np.ndarray, time: float) -> None:
    rho = V[:, 0]
    theta_like = V[:, 2] - V[:, 1] ** 2 / (2.0 * V[:, 0])
    bad = ~np.isfinite(V).all(axis=1) | (rho <= 0.0) | (theta_like <= 0.0)
    if np.any(bad):
        cell = int(np.argmax(bad))
        kind = "non-finite state" if not np.isfinite(V[cell]).all() else "positivity loss"
        raise SolverFailure(kind, cell, time)


def _interface_terms(closure: Closure, Vm: np.ndarray, Vp: np.ndarray, config: SolverConfig, dx, dt):
    """Fluctuations and conservative fluxes at a batch of interfaces.

    ``Vm``/``Vp`` are the left/right interface traces.  Returns
    ``(Dm, Dp, Fhat, n_fallback)``.
    """
    A_phi = _roe_matrices_batch(closure, Vm, Vp, config)
    dv = Vp - Vm
    Q, n_bad = _viscosity_batch(A_phi, config.scheme, dx, dt, config.roe_cond_limit)
    Qdv = np.einsum("nij,nj->ni", Q, dv)
    central = 0.5 * np.einsum("nij,nj->ni", A_phi, dv)
    Dm = central - 0.5 * Qdv
    Dp = central + 0.5 * Qdv
    Fhat = 0.5 * (_flux_rows(Vm) + _flux_rows(Vp)) - 0.5 * Qdv[:, :3]
    return Dm, Dp, Fhat, n_bad


def step_first_order(state: FieldState, closure: Closure, config: SolverConfig, dt: float):
    """One forward-Euler step of the first-order path-conservative scheme."""
    V = state.conserved
    dx = state.grid.dx
    Vp = _pad(V, 1, state.grid.boundary)
    Dm, Dp, Fhat, n_bad = _interface_terms(closure, Vp[:-1], Vp[1:], config, dx, dt)
    Vnew = V.copy()
    Vnew[:, :3] -= dt / dx * (Fhat[1:] - Fhat[:-1])
    Vnew[:, 3:] -= dt / dx * (Dp[:-1, 3:] + Dm[1:, 3:])
    if config.collision == "explicit":
        Vnew[:, 3:] -= dt / config.tau * V[:, 3:]
    else:
        Vnew[:, 3:] *= math.exp(-dt / config.tau)
    _check_physical(Vnew, state.time + dt)
    return FieldState(state.grid, state.order, Vnew, state.time + dt), n_bad


def high_order_rhs(state: FieldState, closure: Closure, config: SolverConfig, dt: float):
    """Semi-discrete rate of change of the cell averages for the RK stages."""
    V = state.conserved
    n, m = V.shape
    dx = state.grid.dx
    Vp = _pad(V, 3, state.grid.boundary)
    # Nodal values for cells -1 .. n (one halo cell each side).
    stencils = np.stack([Vp[k : k + n + 2] for k in range(5)], axis=-1)
    nodes = weno5_reconstruct(stencils, xi=tuple(_GL_NODES.tolist()))  # (n+2, m, 4)
    nodes = np.swapaxes(nodes, 1, 2)  # (n+2, 4, m)

    Vm = nodes[:-1, 3, :]  # right-edge trace of cell j-1 at interface j-1/2
    Vpl = nodes[1:, 0, :]  # left-edge trace of cell j
    _check_physical(Vm.reshape(-1, m), state.time)
    _check_physical(Vpl.reshape(-1, m), state.time)
    Dm, Dp, Fhat, n_bad = _interface_terms(closure, Vm, Vpl, config, dx, dt)

    # In-cell integral of A(P) dP/dx over real cells via Gauss-Lobatto.
    inner = nodes[1:-1]  # (n, 4, m)
    dinner = np.einsum("ab,nbm->nam", _GL_DIFF, inner)
    flat = inner.reshape(-1, m)
    _check_physical(flat, state.time)
    B = _conservative_matrices(closure, flat).reshape(n, 4, m, m)
    cellint = np.einsum("a,namk,nak->nm", _GL_WEIGHTS, B, dinner)

    rhs = np.zeros_like(V)
    rhs[:, :3] = -(Fhat[1:] - Fhat[:-1]) / dx
    rhs[:, 3:] = -(Dp[:-1, 3:] + Dm[1:, 3:] + cellint[:, 3:]) / dx
    if config.collision == "explicit":
        rhs[:, 3:] -= V[:, 3:] / config.tau
    return rhs, n_bad


def compute_dt(state: FieldState, closure: Closure, config: SolverConfig):
    """CFL time step from the per-cell spectrum of the closure matrix.

    Returns ``(dt, max_speed)``.  For closures that promise hyperbolicity a
    non-real spectrum raises :class:`HyperbolicityError` with the offending
    cell; otherwise the modulus of the complex eigenvalues bounds the speed.
    """
    W = state.primitive()
    A = closure.matrices(W[:, 0], W[:, 1], W[:, 2], W[:, 3:])
    lam = np.linalg.eigvals(A)
    mod = np.abs(lam)
    scale = max(mod.max(), 1e-300)
    if closure.hyperbolic:
        imax = np.abs(lam.imag).max(axis=-1)
        if np.any(imax > 1e-8 * scale):
            cell = int(np.argmax(imax))
            raise HyperbolicityError(cell, state.time, f"|Im lambda| = {imax[cell]:.3e}")
    max_speed = float(mod.max())
    dt = config.cfl * state.grid.dx / max_speed
    if config.collision == "explicit":
        dt = min(dt, 0.9 * config.tau)
    return dt, max_speed


@dataclass
class RunResult:
    states: list
    times: list
    dt_history: list
    speed_history: list
    failures: list = field(default_factory=list)
    roe_fallbacks: int = 0

    @property
    def final(self) -> FieldState:
        return self.states[-1]

    @property
    def completed(self) -> bool:
        return not self.failures


def _rk3_step(state: FieldState, closure: Closure, config: SolverConfig, dt: float):
    n_bad = 0

    def L(V, t):
        nonlocal n_bad
        rhs, nb = high_order_rhs(FieldState(state.grid, state.order, V, t), closure, config, dt)
        n_bad += nb
        return rhs

    V = state.conserved
    t = state.time
    V1 = V + dt * L(V, t)
    _check_physical(V1, t + dt)
    V2 = 0.75 * V + 0.25 * (V1 + dt * L(V1, t + dt))
    _check_physical(V2, t + 0.5 * dt)
    V3 = V / 3.0 + 2.0 / 3.0 * (V2 + dt * L(V2, t + 0.5 * dt))
    if config.collision == "split_exact":
        V3[:, 3:] *= math.exp(-dt / config.tau)
    _check_physical(V3, t + dt)
    return FieldState(state.grid, state.order, V3, t + dt), n_bad


def run(
    grid: Grid1D,
    W0: np.ndarray,
    order: int,
    closure: Closure,
    config: SolverConfig,
    t_final: float,
    save_times=None,
    save_every: int = 0,
) -> RunResult:
    """Advance the moment field to ``t_final``.

    First-order schemes use forward Euler; ``high_order_roe`` uses SSP-RK3
    with the closure matrix rebuilt from the current stage state inside every
    right-hand-side evaluation.  The time step is fixed at the start of each
    step from the stage-one wave speeds (or ``config.dt_fixed``).  Solver
    failures (positivity loss, non-finite values, hyperbolicity violations)
    are captured as records on the result, not raised.
    """
    state = FieldState.from_primitive(grid, W0, order)
    result = RunResult([state.copy()], [0.0], [], [])
    pending = sorted(float(t) for t in save_times if t > 1e-14) if save_times is not None else []
    step = 0
    while state.time < t_final - 1e-12:
        try:
            if config.dt_fixed is not None:
                dt, speed = config.dt_fixed, float("nan")
            else:
                dt, speed = compute_dt(state, closure, config)
            dt = min(dt, t_final - state.time)
            if pending:
                dt = min(dt, max(pending[0] - state.time, 1e-14))
            if config.scheme == "high_order_roe":
                state, n_bad = _rk3_step(state, closure, config, dt)
            else:
                state, n_bad = step_first_order(state, closure, config, dt)
        except SolverFailure as exc:
            result.failures.append(
                {"kind": exc.kind, "cell": exc.cell, "time": exc.time, "message": str(exc)}
            )
            break
        result.roe_fallbacks += n_bad
        result.dt_history.append(dt)
        result.speed_history.append(speed)
        step += 1
        want_save = False
        while pending and state.time >= pending[0] - 1e-12:
            pending.pop(0)
            want_save = True
        if save_every and step % save_every == 0:
            want_save = True
        if want_save and result.times[-1] != state.time:
            result.states.append(state.copy())
            result.times.append(state.time)
    if result.times[-1] != state.time:
        result.states.append(state.copy())
        result.times.append(state.time)
    return result
