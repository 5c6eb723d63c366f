"""Discrete-velocity reference solver for the BGK equation.

Space is discretized with fifth-order upwind WENO finite differences per
velocity node, time with a third-order implicit-explicit Runge-Kutta pairing
(transport explicit, relaxation implicit).  The implicit stages are solved
exactly: relaxation preserves the collision invariants, so the Maxwellian of
the unknown stage equals the Maxwellian of the known part and each stage is
a convex combination.

The IMEX tableau is the stiffly accurate ARS(4,4,3) pair; both parts reuse
their final row as the output weights, so a step costs four transport
evaluations and four relaxation solves.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .moment_core import DegenerateDistributionError, Grid1D, moment_arrays

__all__ = [
    "VelocityGrid",
    "KineticField",
    "advection_rhs",
    "relaxation_solve",
    "imex_step",
    "run_dvm",
    "DvmResult",
    "maxwellian_field",
    "write_distribution_dump",
]

# ARS(4,4,3): implicit part is SDIRK with gamma = 1/2 and stiffly accurate.
_A_IM = np.array(
    [
        [0.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.5, 0.0, 0.0, 0.0],
        [0.0, 1.0 / 6.0, 0.5, 0.0, 0.0],
        [0.0, -0.5, 0.5, 0.5, 0.0],
        [0.0, 1.5, -1.5, 0.5, 0.5],
    ]
)
_A_EX = np.array(
    [
        [0.0, 0.0, 0.0, 0.0, 0.0],
        [0.5, 0.0, 0.0, 0.0, 0.0],
        [11.0 / 18.0, 1.0 / 18.0, 0.0, 0.0, 0.0],
        [5.0 / 6.0, -5.0 / 6.0, 0.5, 0.0, 0.0],
        [0.25, 7.0 / 4.0, 0.75, -7.0 / 4.0, 0.0],
    ]
)
_N_STAGES = 5

IMEX_TABLEAU_NAME = "ARS(4,4,3)"


@dataclass(frozen=True)
class VelocityGrid:
    """Uniform symmetric velocity grid with trapezoid quadrature weights."""

    v_max: float = 10.0
    n_nodes: int = 150

    def __post_init__(self):
        if not self.v_max > 0:
            raise ValueError("v_max must be positive")
        if self.n_nodes < 32:
            raise ValueError("need at least 32 velocity nodes")

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(-self.v_max, self.v_max, self.n_nodes)

    @property
    def weights(self) -> np.ndarray:
        dv = 2.0 * self.v_max / (self.n_nodes - 1)
        w = np.full(self.n_nodes, dv)
        w[0] = w[-1] = 0.5 * dv
        return w


@dataclass
class KineticField:
    grid: Grid1D
    vgrid: VelocityGrid
    values: np.ndarray  # (n_cells, n_nodes)
    time: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_cells, self.vgrid.n_nodes):
            raise ValueError("field shape does not match grids")

    def moments(self, max_order: int):
        return moment_arrays(self.values, self.vgrid.nodes, self.vgrid.weights, max_order)

    def copy(self) -> "KineticField":
        return KineticField(self.grid, self.vgrid, self.values.copy(), self.time)


def maxwellian_field(grid: Grid1D, vgrid: VelocityGrid, rho, u, theta) -> np.ndarray:
    """Local Maxwellian values on the space-velocity grid from macroscopic fields."""
    rho = np.atleast_1d(np.asarray(rho, dtype=float))[:, None]
    u = np.atleast_1d(np.asarray(u, dtype=float))[:, None]
    theta = np.atleast_1d(np.asarray(theta, dtype=float))[:, None]
    if np.any(rho <= 0) or np.any(theta <= 0):
        raise DegenerateDistributionError("Maxwellian needs positive rho and theta")
    v = vgrid.nodes[None, :]
    return rho / np.sqrt(2.0 * np.pi * theta) * np.exp(-((v - u) ** 2) / (2.0 * theta))


# ---------------------------------------------------------------------------
# Transport
# ---------------------------------------------------------------------------


def _weno5_flux(S: list[np.ndarray]) -> np.ndarray:
    """Upwind WENO5 interface value from five point values, wind left-to-right."""
    h0 = (2.0 * S[0] - 7.0 * S[1] + 11.0 * S[2]) / 6.0
    h1 = (-S[1] + 5.0 * S[2] + 2.0 * S[3]) / 6.0
    h2 = (2.0 * S[2] + 5.0 * S[3] - S[4]) / 6.0
    b0 = 13.0 / 12.0 * (S[0] - 2.0 * S[1] + S[2]) ** 2 + 0.25 * (S[0] - 4.0 * S[1] + 3.0 * S[2]) ** 2
    b1 = 13.0 / 12.0 * (S[1] - 2.0 * S[2] + S[3]) ** 2 + 0.25 * (S[1] - S[3]) ** 2
    b2 = 13.0 / 12.0 * (S[2] - 2.0 * S[3] + S[4]) ** 2 + 0.25 * (3.0 * S[2] - 4.0 * S[3] + S[4]) ** 2
    eps = 1e-6
    a0 = 0.1 / (eps + b0) ** 2
    a1 = 0.6 / (eps + b1) ** 2
    a2 = 0.3 / (eps + b2) ** 2
    tot = a0 + a1 + a2
    return (a0 * h0 + a1 * h1 + a2 * h2) / tot


def advection_rhs(field: KineticField) -> np.ndarray:
    """Transport term ``-v df/dx`` with wind direction per velocity node."""
    f = field.values
    n = field.grid.n_cells
    g = 3
    if field.grid.boundary == "periodic":
        fp = np.concatenate((f[-g:], f, f[:g]), axis=0)
    else:
        fp = np.concatenate((np.repeat(f[:1], g, axis=0), f, np.repeat(f[-1:], g, axis=0)), axis=0)
    # Interface i sits at x_a + i*dx; positive wind uses cells i-3 .. i+1,
    # negative wind the mirrored stencil.
    Spos = [fp[k : k + n + 1] for k in range(5)]
    Sneg = [fp[5 - k : 5 - k + n + 1] for k in range(5)]
    hpos = _weno5_flux(Spos)
    hneg = _weno5_flux(Sneg)
    v = field.vgrid.nodes
    h = np.where(v[None, :] > 0.0, hpos, hneg)
    return -v[None, :] * (h[1:] - h[:-1]) / field.grid.dx


# ---------------------------------------------------------------------------
# Collision
# ---------------------------------------------------------------------------


def relaxation_solve(f_hat: np.ndarray, vgrid: VelocityGrid, lam: float) -> np.ndarray:
    """Exact solution of ``f = f_hat + lam (f_Max[f] - f)``.

    Relaxation conserves density, momentum and energy, so the Maxwellian of
    the unknown equals the Maxwellian built from ``f_hat``'s moments and the
    update is ``(f_hat + lam f_Max) / (1 + lam)``.
    """
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    f_hat = np.asarray(f_hat, dtype=float)
    rho, u, theta, _ = moment_arrays(f_hat, vgrid.nodes, vgrid.weights, 2)
    rho = np.atleast_1d(rho)
    u = np.atleast_1d(u)
    theta = np.atleast_1d(theta)
    v = vgrid.nodes[None, :]
    fM = (
        rho[:, None]
        / np.sqrt(2.0 * np.pi * theta[:, None])
        * np.exp(-((v - u[:, None]) ** 2) / (2.0 * theta[:, None]))
    )
    fM = fM.reshape(f_hat.shape)
    return (f_hat + lam * fM) / (1.0 + lam)


def imex_step(field: KineticField, tau: float, dt: float) -> KineticField:
    """One ARS(4,4,3) step: explicit transport, exactly solved implicit relaxation."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    f = field.values
    vg = field.vgrid
    transports: list[np.ndarray] = []
    collisions: list[np.ndarray] = []
    stage = f
    for i in range(_N_STAGES):
        f_hat = f.copy()
        for j in range(i):
            if _A_EX[i, j]:
                f_hat += dt * _A_EX[i, j] * transports[j]
            if _A_IM[i, j]:
                f_hat += dt * _A_IM[i, j] * collisions[j]
        aii = _A_IM[i, i]
        if aii:
            lam = dt * aii / tau
            stage = relaxation_solve(f_hat, vg, lam)
            collisions.append((stage - f_hat) / (dt * aii))
        else:
            stage = f_hat
            rho, u, theta, _ = moment_arrays(stage, vg.nodes, vg.weights, 2)
            fM = maxwellian_field(field.grid, vg, rho, u, theta)
            collisions.append((fM - stage) / tau)
        if i < _N_STAGES - 1:
            transports.append(advection_rhs(KineticField(field.grid, vg, stage, field.time)))
    # Both tableaus are stiffly accurate: the last stage is the step result.
    return KineticField(field.grid, vg, stage, field.time + dt)


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


@dataclass
class DvmResult:
    times: list
    moments: list  # per sample: (n_cells, max_order + 1) columns rho,u,theta,f3..f_{max_order}
    fields: list = field(default_factory=list)
    final: Optional[KineticField] = None


def run_dvm(
    field0: KineticField,
    tau: float,
    t_final: float,
    sample_times=None,
    max_order: int = 5,
    cfl: float = 0.5,
    keep_fields: bool = False,
) -> DvmResult:
    """Advance the kinetic field and extract moments up to ``f_{max_order}``.

    ``max_order`` is usually ``M + 1`` so the dataset carries the closing
    moment alongside the resolved ones.
    """

    def extract(fld: KineticField) -> np.ndarray:
        rho, u, theta, fs = fld.moments(max_order)
        return np.column_stack((rho, u, theta, fs))

    state = field0.copy()
    result = DvmResult([state.time], [extract(state)])
    if keep_fields:
        result.fields.append(state.copy())
    pending = sorted(float(t) for t in sample_times if t > state.time) if sample_times is not None else []
    dt_cfl = cfl * state.grid.dx / state.vgrid.v_max
    while state.time < t_final - 1e-12:
        dt = min(dt_cfl, t_final - state.time)
        if pending:
            dt = min(dt, max(pending[0] - state.time, 1e-14))
        state = imex_step(state, tau, dt)
        want = False
        while pending and state.time >= pending[0] - 1e-12:
            pending.pop(0)
            want = True
        if want or state.time >= t_final - 1e-12:
            result.times.append(state.time)
            result.moments.append(extract(state))
            if keep_fields:
                result.fields.append(state.copy())
    result.final = state
    return result


def write_distribution_dump(path: str, result: DvmResult) -> None:
    """Raw binary dump: header (n_x, n_v, grids), then f row-major per sample."""
    if not result.fields:
        raise ValueError("run_dvm must keep_fields to dump distributions")
    first = result.fields[0]
    with open(path, "wb") as fh:
        fh.write(b"BGKF")
        fh.write(
            struct.pack(
                "<IIddd I",
                first.grid.n_cells,
                first.vgrid.n_nodes,
                first.grid.x_a,
                first.grid.x_b,
                first.vgrid.v_max,
                len(result.fields),
            )
        )
        fh.write(np.asarray(result.times, dtype="<f8").tobytes())
        for fld in result.fields:
            fh.write(np.asarray(fld.values, dtype="<f8").tobytes())
