"""Conversion between prescribed transport eigenvalues and closure rows.

The learned closure prescribes the ``M + 1`` eigenvalues of the system matrix
as Galilean offsets ``r_k = u + rt_k`` with ``rt_0 < ... < rt_M``.  This
module converts offsets into the matrix last row (and back into gradient
coefficients) through three exact algebraic steps:

1. expand ``prod_k (y - rt_k)`` into monomial coefficients (Vieta),
2. change basis from monomials in ``y = x - u`` to Hermite polynomials in
   ``(x - u)/sqrt(theta)``,
3. match Hermite coefficients of the characteristic polynomial against the
   associated-polynomial sequence of the unreduced lower Hessenberg system
   matrix and back-substitute for the row entries ``a_M, ..., a_0``.

All of step 3 happens in the co-moving frame (``u = 0``); ``u`` enters only
through the final shift ``a_M += u``.  As a consequence the entries
``a_0 .. a_{M-1}`` and ``a_M - u`` are bitwise independent of ``u``.
"""

from __future__ import annotations

import math

import numpy as np

from .moment_core import PrimitiveMomentState, grad_last_row_fields, grad_matrix

__all__ = [
    "DEFAULT_EPS_GAP",
    "validate_offsets",
    "vieta_coefficients",
    "hermite_connection",
    "monomial_to_hermite",
    "last_row_from_eigenvalues",
    "last_rows_from_eigenvalue_fields",
    "grad_coeffs_from_last_row",
    "assemble_ml_matrix",
]

# Minimum admissible eigenvalue separation; see solver notes on instability
# when the spectrum clusters.
DEFAULT_EPS_GAP = 1e-6


def validate_offsets(offsets: np.ndarray, min_gap: float = 0.0) -> np.ndarray:
    offsets = np.asarray(offsets, dtype=float)
    if offsets.ndim != 1 or offsets.size < 2:
        raise ValueError("offsets must be a 1-d array of at least two values")
    if not np.isfinite(offsets).all():
        raise ValueError("offsets must be finite")
    gaps = np.diff(offsets)
    if np.any(gaps <= min_gap):
        raise ValueError(f"offsets must be strictly increasing with gaps > {min_gap}")
    return offsets


def vieta_coefficients(offsets: np.ndarray) -> np.ndarray:
    """Monomial coefficients ``c_0 .. c_M`` of ``prod_k (y - rt_k)``.

    The polynomial is monic; the implicit leading coefficient ``c_{M+1} = 1``
    is not stored.  Signs follow the elementary symmetric functions:
    ``c_M = -sum rt_k``, ..., ``c_0 = (-1)^{M+1} prod rt_k``.
    """
    offsets = np.asarray(offsets, dtype=float)
    return _vieta_batch(offsets[None, :])[0]


def _vieta_batch(offsets: np.ndarray) -> np.ndarray:
    """Row-wise Vieta expansion; ``offsets`` is ``(n, M+1)``, result ``(n, M+1)``."""
    n, nroots = offsets.shape
    coeffs = np.zeros((n, nroots + 1))
    coeffs[:, 0] = 1.0
    for deg in range(nroots):
        r = offsets[:, deg : deg + 1]
        new = np.zeros_like(coeffs)
        new[:, 1 : deg + 2] = coeffs[:, : deg + 1]
        new[:, : deg + 1] -= r * coeffs[:, : deg + 1]
        coeffs = new
    # coeffs now holds the monic polynomial; drop the leading 1.
    return coeffs[:, :nroots]


def hermite_connection(m: int, k: int) -> float:
    """Coefficient ``b_{mk}`` in ``x^m = sum_k b_{mk} He_k(x)``.

    ``b_{mk} = m! / (2^j j! k!)`` with ``j = (m - k)/2`` when ``m`` and ``k``
    have equal parity, zero otherwise.
    """
    if k < 0 or k > m:
        raise ValueError("need 0 <= k <= m")
    if (m - k) % 2 != 0:
        return 0.0
    j = (m - k) // 2
    return float(math.factorial(m) // (2**j * math.factorial(j) * math.factorial(k)))


def _connection_matrix(n: int) -> np.ndarray:
    """Matrix ``B[i, k] = b_{ik}`` for ``0 <= k <= i < n``."""
    B = np.zeros((n, n))
    for i in range(n):
        for k in range(i % 2, i + 1, 2):
            B[i, k] = hermite_connection(i, k)
    return B


def _sqrt_theta_powers(theta: np.ndarray, n: int) -> np.ndarray:
    """Cumulative powers ``theta^{i/2}`` for ``i = 0 .. n-1``, shape ``(..., n)``."""
    sqt = np.sqrt(theta)
    pw = np.ones(np.shape(theta) + (n,))
    for i in range(1, n):
        pw[..., i] = pw[..., i - 1] * sqt
    return pw


def monomial_to_hermite(coeffs: np.ndarray, theta: float) -> np.ndarray:
    """Hermite coefficients ``beta_0 .. beta_M`` of the monic polynomial.

    Solves ``sum_i c_i y^i + y^{M+1} = sum_k beta_k theta^{k/2} He_k(y/sqrt(theta))``
    via ``beta_k = theta^{-k/2} sum_{i>=k} c_i theta^{i/2} b_{ik}`` with
    ``c_{M+1} = 1``; the leading ``beta_{M+1} = 1`` is implicit.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if not theta > 0.0:
        raise ValueError("theta must be positive")
    return _monomial_to_hermite_batch(coeffs[None, :], np.asarray([theta], dtype=float))[0]


def _monomial_to_hermite_batch(coeffs: np.ndarray, theta: np.ndarray) -> np.ndarray:
    n, mm = coeffs.shape  # mm = M + 1
    full = np.concatenate((coeffs, np.ones((n, 1))), axis=1)
    B = _connection_matrix(mm + 1)
    pw = _sqrt_theta_powers(theta, mm + 1)
    beta_scaled = (full * pw) @ B
    return beta_scaled[:, :mm] / pw[:, :mm]


def last_row_from_eigenvalues(offsets: np.ndarray, w: PrimitiveMomentState) -> np.ndarray:
    """Last row ``a_0 .. a_M`` of the system matrix with prescribed spectrum.

    Given strictly increasing offsets, the assembled matrix (see
    :func:`assemble_ml_matrix`) has eigenvalues ``u + offsets`` exactly, up to
    round-off, and is real diagonalizable.
    """
    offsets = validate_offsets(offsets)
    if offsets.size != w.order + 1:
        raise ValueError(f"expected {w.order + 1} offsets for order {w.order}")
    return last_rows_from_eigenvalue_fields(
        offsets[None, :],
        np.array([w.rho]),
        np.array([w.u]),
        np.array([w.theta]),
        w.f[None, :],
    )[0]


def last_rows_from_eigenvalue_fields(offsets, rho, u, theta, fs) -> np.ndarray:
    """Batched version of :func:`last_row_from_eigenvalues`.

    ``offsets`` is ``(n, M+1)``; moment arrays as in
    :func:`bgkclosure.moment_core.grad_matrix_fields`.  Returns ``(n, M+1)``.
    """
    offsets = np.asarray(offsets, dtype=float)
    rho = np.asarray(rho, dtype=float)
    u = np.asarray(u, dtype=float)
    theta = np.asarray(theta, dtype=float)
    fs = np.asarray(fs, dtype=float)
    order = fs.shape[-1] + 2
    n = offsets.shape[0]
    mfac = float(math.factorial(order))

    coeffs = _vieta_batch(offsets)
    beta = _monomial_to_hermite_batch(coeffs, theta)
    pw = _sqrt_theta_powers(theta, order + 2)
    sqt = pw[:, 1]

    def fk(k: int) -> np.ndarray:
        if k == 0:
            return rho
        if k in (1, 2):
            return np.zeros_like(rho)
        return fs[:, k - 3]

    # Hermite-basis coefficients of the associated polynomials q_0 .. q_M in
    # the co-moving frame.  q_i has leading He_i term theta^{i/2}/i!; for
    # i >= 4 it also carries He_2 and He_1 terms from the moment couplings.
    qcoef = np.zeros((order + 1, n, order + 1))
    qcoef[0, :, 0] = 1.0
    qcoef[1, :, 1] = sqt / rho
    qcoef[2, :, 2] = pw[:, 2] / rho
    qcoef[3, :, 3] = pw[:, 3] / 6.0
    for k in range(4, order + 1):
        qcoef[k, :, k] = pw[:, k] / math.factorial(k)
        qcoef[k, :, 2] = -theta * fk(k - 2) / (2.0 * rho)
        qcoef[k, :, 1] = -sqt * fk(k - 1) / rho

    # T = M! * x q_M - P in the Hermite basis (x = sqrt(theta) * xi at u = 0);
    # multiplication by xi maps He_j -> He_{j+1} + j He_{j-1}.  The He_{M+1}
    # terms cancel identically and are not tracked.
    T = np.zeros((n, order + 1))
    for j in range(order + 1):
        col = qcoef[order, :, j]
        if j + 1 <= order:
            T[:, j + 1] += mfac * sqt * col
        if j >= 1:
            T[:, j - 1] += mfac * sqt * j * col
    T -= beta * pw[:, : order + 1]

    # Back-substitute a_M, ..., a_0 against the triangular Hermite structure.
    a = np.zeros((n, order + 1))
    for i in range(order, -1, -1):
        a[:, i] = T[:, i] / (mfac * qcoef[i, :, i])
        T -= mfac * a[:, i : i + 1] * qcoef[i]
    a[:, order] += u
    return a


def grad_coeffs_from_last_row(a: np.ndarray, w: PrimitiveMomentState) -> np.ndarray:
    """Gradient coefficients ``N_0 .. N_M`` encoded by a closure row.

    Inverts ``a_i = base_i + (M+1) N_i`` where ``base`` is the last row of the
    truncation-closure matrix, so that the closing-moment gradient is
    ``dx f_{M+1} = sum_i N_i dx w_i``.
    """
    a = np.asarray(a, dtype=float)
    base = grad_last_row_fields(
        np.array([w.rho]), np.array([w.u]), np.array([w.theta]), w.f[None, :]
    )[0]
    return (a - base) / (w.order + 1.0)


def assemble_ml_matrix(w: PrimitiveMomentState, a: np.ndarray) -> np.ndarray:
    """System matrix with the closure row ``a`` in place of the last row."""
    a = np.asarray(a, dtype=float)
    if a.shape != (w.order + 1,):
        raise ValueError(f"closure row must have length {w.order + 1}")
    A = grad_matrix(w)
    A[w.order, :] = a
    return A
