"""Shared helpers for the test suite: random states, analytic reference
constructions, and cell-average initial data."""

from __future__ import annotations

import numpy as np

from bgkclosure import moment_core as mc
from bgkclosure import ml_closure_runtime as rt
from bgkclosure import pathcons_solvers as ps


def random_state(rng: np.random.Generator, order: int) -> mc.PrimitiveMomentState:
    """Moderate off-equilibrium state with well-scaled higher moments."""
    rho = rng.uniform(0.5, 2.0)
    u = rng.uniform(-1.0, 1.0)
    theta = rng.uniform(0.5, 2.0)
    scale = rho * np.sqrt(theta) ** np.arange(3, order + 1)
    f = rng.uniform(-0.05, 0.05, order - 2) * scale
    return mc.PrimitiveMomentState(order, rho, u, theta, f)


def random_offsets(
    rng: np.random.Generator, order: int, theta: float = 1.0, min_gap: float = 1e-3
) -> np.ndarray:
    """Strictly increasing wave-speed offsets with one gap at the documented floor.

    Gaps scale with the thermal speed (as physical spectra do) and one
    randomly placed gap is drawn from [min_gap, 2 min_gap].  Two deliberate
    exclusions keep the round-trip testable in double precision: stacked
    near-floor gaps (a cluster of k near-coincident eigenvalues is only
    representable through the closure row to about (eps ||A||)^(1/k)) and
    very wide spans (characteristic coefficients grow like span^(M+1), so
    the row's own rounding perturbs a floor-gap pair beyond tight
    tolerances).
    """
    s = np.sqrt(theta)
    gaps = rng.uniform(0.5, 1.0, order) * s
    gaps[rng.integers(order)] = rng.uniform(min_gap, 2 * min_gap)
    start = rng.uniform(-2.0, -1.0) * s
    return start + np.concatenate(([0.0], np.cumsum(gaps)))


def synthesize_distribution(w: mc.PrimitiveMomentState, v: np.ndarray) -> np.ndarray:
    """Truncated Hermite-series distribution with the given moments."""
    z = (v - w.u) / np.sqrt(w.theta)
    weight = np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)
    coeffs = np.concatenate(([w.rho, 0.0, 0.0], w.f))
    out = np.zeros_like(np.asarray(v, dtype=float))
    for k, fk in enumerate(coeffs):
        if fk:
            out += w.theta ** (-(k + 1) / 2.0) * mc.hermite_eval(k, z) * fk
    return out * weight


def constant_offsets_network(order: int, offsets: np.ndarray, eps_gap: float = 1e-6):
    """Single-layer network emitting fixed eigenvalue offsets for every input."""
    offsets = np.asarray(offsets, dtype=float)
    raw = np.empty(order + 1)
    raw[0] = offsets[0]
    raw[1:] = np.log(np.expm1(np.diff(offsets) - eps_gap))
    layer = rt.LayerWeights(np.zeros((order + 1, order)), raw, None, "identity")
    weights = rt.NetworkWeights([layer])
    config = rt.ClosureRuntimeConfig(order, eps_gap, np.zeros(order), np.ones(order))
    return weights, config


def hme_coefficient_network(order: int):
    """Linear gradient-coefficient network that reproduces the hyperbolic
    regularization exactly: N_1 = -f_M, N_2 = -f_{M-1}/2, all else zero."""
    W = np.zeros((order + 1, order))
    W[1, order - 1] = -1.0
    W[2, order - 2] = -0.5
    layer = rt.LayerWeights(W, np.zeros(order + 1), None, "identity")
    weights = rt.NetworkWeights([layer])
    config = rt.ClosureRuntimeConfig(order, 1e-6, np.zeros(order), np.ones(order))
    return weights, config


def detuned_coefficient_network(order: int, delta: float = -1.5):
    """Gradient-coefficient network whose constant bias on N_3 drags the
    coupling below zero and makes the assembled matrix non-hyperbolic near
    equilibrium."""
    W = np.zeros((order + 1, order))
    W[1, order - 1] = -1.0
    W[2, order - 2] = -0.5
    b = np.zeros(order + 1)
    b[3] = delta
    layer = rt.LayerWeights(W, b, None, "identity")
    weights = rt.NetworkWeights([layer])
    config = rt.ClosureRuntimeConfig(order, 1e-6, np.zeros(order), np.ones(order))
    return weights, config


def smooth_wave_profile(order: int):
    """Smooth periodic primitive profile on [-1/2, 1/2] for convergence work."""

    def W_of_x(x: np.ndarray) -> np.ndarray:
        W = np.zeros(np.shape(x) + (order + 1,))
        W[..., 0] = 1.0 + 0.2 * np.sin(2 * np.pi * x)
        W[..., 1] = 0.1 * np.cos(2 * np.pi * x)
        W[..., 2] = 1.0 + 0.1 * np.sin(4 * np.pi * x)
        return W

    return W_of_x


def cell_averaged_conserved(grid: mc.Grid1D, W_of_x, quad: int = 12) -> np.ndarray:
    """High-order cell averages of the conserved variables of a profile."""
    gx, gw = np.polynomial.legendre.leggauss(quad)
    x = grid.centers[:, None] + 0.5 * grid.dx * gx[None, :]
    V = ps.primitive_to_conservative_arrays(W_of_x(x.ravel()))
    V = V.reshape(grid.n_cells, quad, -1)
    return 0.5 * np.einsum("q,nqm->nm", gw, V)


def restrict_averages(V: np.ndarray) -> np.ndarray:
    """Pairwise average, mapping 2n-cell averages onto the n-cell grid."""
    return 0.5 * (V[0::2] + V[1::2])
