"""Training-data generation: random initial conditions, trajectory datasets.

Initial conditions come in two flavours.  Wave data blends two random local
Maxwellians whose density and temperature profiles are random sinusoids
(zero initial velocity); mixed data superposes wave data with a two-state
Riemann profile carrying discontinuities at random interior points.

Datasets are serialized in the BGKD format (little-endian):

================  =====================================================
magic             4 bytes, ``b"BGKD"``
version           u32, currently 1
header            u32 M, u32 n_cells, f64 x_a, f64 x_b, u8 generator
                  (0 = hme, 1 = dvm), u64 base_seed, u32 n_records
per record        u64 seed, f64 tau, u8 kind (0 = wave, 1 = mix),
                  u32 n_params + f64 params, u32 n_times + f64 times,
                  f64 values[n_times, M+2, n_cells],
                  f64 gradients[n_times, M+2, n_cells]
crc32             u32 over every preceding byte
================  =====================================================

Per saved time the ``M + 2`` field rows are ``rho, u, theta, f_3, ...,
f_{M+1}``: primitive moments plus the closing moment.  For the hme
generator the closing-moment *value* row is zero (the analytic closure only
defines its gradient, ``-f_M du/dx - f_{M-1}/2 dtheta/dx``).
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field, replace
from typing import BinaryIO, Optional

import numpy as np

from . import kinetic_dvm as dvm
from . import pathcons_solvers as ps
from .kinetic_dvm import KineticField, VelocityGrid, maxwellian_field
from .moment_core import Grid1D

__all__ = [
    "BLEND_EPS",
    "MacroWaveParams",
    "WaveParams",
    "MixParams",
    "DatasetRecord",
    "TrajectoryDataset",
    "sample_knudsen",
    "sample_wave_params",
    "sample_wave_ic",
    "sample_mix_ic",
    "wave_field",
    "mix_field",
    "compute_gradients",
    "write_dataset",
    "read_dataset",
    "generate_dataset",
    "hme_closure_gradient",
]

BGKD_MAGIC = b"BGKD"
BGKD_VERSION = 1
BLEND_EPS = 1e-6

WAVE_AMP_RANGE = (0.2, 0.3)
WAVE_OFFSET_RANGE = (0.5, 0.7)
WAVE_NUMBERS = (1, 2, 3, 4)
MIX_ALPHA_RANGE = (0.2, 0.4)
SHOCK_X1_RANGE = (0.2, 0.4)
SHOCK_X2_RANGE = (0.6, 0.8)
SHOCK_LEFT_RANGE = (1.0, 2.0)
SHOCK_RIGHT_RANGE = (0.55, 0.9)


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class MacroWaveParams:
    """Sinusoid parameters for one (rho, theta) macroscopic draw; u = 0."""

    a_rho: float
    b_rho: float
    k_rho: int
    psi_rho: float
    a_theta: float
    b_theta: float
    k_theta: int
    psi_theta: float

    def density(self, x: np.ndarray, length: float) -> np.ndarray:
        return self.a_rho * np.sin(2.0 * np.pi * self.k_rho * np.asarray(x) / length + self.psi_rho) + self.b_rho

    def temperature(self, x: np.ndarray, length: float) -> np.ndarray:
        return (
            self.a_theta * np.sin(2.0 * np.pi * self.k_theta * np.asarray(x) / length + self.psi_theta)
            + self.b_theta
        )

    def flat(self) -> list:
        return [
            self.a_rho,
            self.b_rho,
            float(self.k_rho),
            self.psi_rho,
            self.a_theta,
            self.b_theta,
            float(self.k_theta),
            self.psi_theta,
        ]


@dataclass(frozen=True)
class WaveParams:
    """Blend of two Maxwellian wave draws with weights alpha1, alpha2."""

    u1: MacroWaveParams
    u2: MacroWaveParams
    alpha1: float
    alpha2: float

    def flat(self) -> list:
        return self.u1.flat() + self.u2.flat() + [self.alpha1, self.alpha2]

    @classmethod
    def from_flat(cls, vals) -> "WaveParams":
        def macro(v):
            return MacroWaveParams(v[0], v[1], int(v[2]), v[3], v[4], v[5], int(v[6]), v[7])

        return cls(macro(vals[0:8]), macro(vals[8:16]), vals[16], vals[17])


@dataclass(frozen=True)
class MixParams:
    wave: WaveParams
    x1: float
    x2: float
    rho_left: float
    theta_left: float
    rho_right: float
    theta_right: float
    alpha: float

    def flat(self) -> list:
        return self.wave.flat() + [
            self.x1,
            self.x2,
            self.rho_left,
            self.theta_left,
            self.rho_right,
            self.theta_right,
            self.alpha,
        ]

    @classmethod
    def from_flat(cls, vals) -> "MixParams":
        return cls(WaveParams.from_flat(vals[:18]), *vals[18:25])


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def sample_knudsen(rng: np.random.Generator, lo: float = 1e-3, hi: float = 10.0) -> float:
    """Log-uniform relaxation time on ``[lo, hi]``."""
    return float(10.0 ** rng.uniform(np.log10(lo), np.log10(hi)))


def _sample_macro(rng: np.random.Generator) -> MacroWaveParams:
    def draw():
        a = rng.uniform(*WAVE_AMP_RANGE)
        b = rng.uniform(*WAVE_OFFSET_RANGE)
        k = int(rng.choice(WAVE_NUMBERS))
        psi = rng.uniform(0.0, 2.0 * np.pi)
        return a, b, k, psi

    ar, br, kr, pr = draw()
    at, bt, kt, pt = draw()
    return MacroWaveParams(ar, br, kr, pr, at, bt, kt, pt)


def sample_wave_params(rng: np.random.Generator) -> WaveParams:
    return WaveParams(_sample_macro(rng), _sample_macro(rng), rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0))


def wave_field(params: WaveParams, grid: Grid1D, vgrid: VelocityGrid) -> KineticField:
    """Blend ``(a1 fM(U1) + a2 fM(U2)) / (a1 + a2 + eps)`` on the grid."""
    x = grid.centers
    L = grid.length
    f1 = maxwellian_field(grid, vgrid, params.u1.density(x, L), 0.0 * x, params.u1.temperature(x, L))
    f2 = maxwellian_field(grid, vgrid, params.u2.density(x, L), 0.0 * x, params.u2.temperature(x, L))
    values = (params.alpha1 * f1 + params.alpha2 * f2) / (params.alpha1 + params.alpha2 + BLEND_EPS)
    return KineticField(grid, vgrid, values)


def sample_wave_ic(rng: np.random.Generator, grid: Grid1D, vgrid: VelocityGrid):
    """Draw wave parameters and return ``(params, field at t=0)``."""
    params = sample_wave_params(rng)
    return params, wave_field(params, grid, vgrid)


def mix_field(params: MixParams, grid: Grid1D, vgrid: VelocityGrid) -> KineticField:
    x = grid.centers
    inside = (x >= params.x1) & (x <= params.x2)
    rho = np.where(inside, params.rho_left, params.rho_right)
    theta = np.where(inside, params.theta_left, params.theta_right)
    shock = maxwellian_field(grid, vgrid, rho, 0.0 * x, theta)
    wave = wave_field(params.wave, grid, vgrid).values
    return KineticField(grid, vgrid, params.alpha * wave + (1.0 - params.alpha) * shock)


def sample_mix_ic(rng: np.random.Generator, grid: Grid1D, vgrid: VelocityGrid):
    """Wave data superposed with a random interior Riemann profile."""
    wave = sample_wave_params(rng)
    params = MixParams(
        wave,
        rng.uniform(*SHOCK_X1_RANGE),
        rng.uniform(*SHOCK_X2_RANGE),
        rng.uniform(*SHOCK_LEFT_RANGE),
        rng.uniform(*SHOCK_LEFT_RANGE),
        rng.uniform(*SHOCK_RIGHT_RANGE),
        rng.uniform(*SHOCK_RIGHT_RANGE),
        rng.uniform(*MIX_ALPHA_RANGE),
    )
    return params, mix_field(params, grid, vgrid)


# ---------------------------------------------------------------------------
# Gradients and trajectory records
# ---------------------------------------------------------------------------


def compute_gradients(fields: np.ndarray, dx: float) -> np.ndarray:
    """Fourth-order central differences with periodic wrap on the last axis."""
    f = np.asarray(fields, dtype=float)
    fm2 = np.roll(f, 2, axis=-1)
    fm1 = np.roll(f, 1, axis=-1)
    fp1 = np.roll(f, -1, axis=-1)
    fp2 = np.roll(f, -2, axis=-1)
    return (fm2 - 8.0 * fm1 + 8.0 * fp1 - fp2) / (12.0 * dx)


def hme_closure_gradient(values: np.ndarray, gradients: np.ndarray) -> np.ndarray:
    """Analytic closing-moment gradient ``-f_M du/dx - f_{M-1}/2 dtheta/dx``.

    ``values``/``gradients`` are ``(..., M+2, n_cells)`` stacked field rows;
    the last row (the closing moment itself) is ignored.
    """
    f_m = values[..., -2, :]
    f_m1 = values[..., -3, :]
    du = gradients[..., 1, :]
    dth = gradients[..., 2, :]
    return -f_m * du - 0.5 * f_m1 * dth


@dataclass
class DatasetRecord:
    seed: int
    tau: float
    kind: str  # wave | mix
    params: np.ndarray  # flat parameter vector
    times: np.ndarray  # (n_times,)
    values: np.ndarray  # (n_times, M+2, n_cells)
    gradients: np.ndarray  # same shape

    def __post_init__(self):
        if self.values.shape != self.gradients.shape:
            raise ValueError("values and gradients must have matching shapes")
        if self.values.shape[0] != self.times.shape[0]:
            raise ValueError("one field snapshot per saved time required")


@dataclass
class TrajectoryDataset:
    order: int
    grid: Grid1D
    generator: str  # hme | dvm
    base_seed: int
    records: list = field(default_factory=list)


_KINDS = ("wave", "mix")
_GENERATORS = ("hme", "dvm")


def write_dataset(ds: TrajectoryDataset, stream: BinaryIO) -> None:
    out = bytearray()
    out += BGKD_MAGIC
    out += struct.pack("<I", BGKD_VERSION)
    out += struct.pack(
        "<IIddBQI",
        ds.order,
        ds.grid.n_cells,
        ds.grid.x_a,
        ds.grid.x_b,
        _GENERATORS.index(ds.generator),
        ds.base_seed,
        len(ds.records),
    )
    for rec in ds.records:
        out += struct.pack("<Qd B", rec.seed, rec.tau, _KINDS.index(rec.kind))
        params = np.asarray(rec.params, dtype="<f8")
        out += struct.pack("<I", params.size) + params.tobytes()
        times = np.asarray(rec.times, dtype="<f8")
        out += struct.pack("<I", times.size) + times.tobytes()
        out += np.ascontiguousarray(rec.values, dtype="<f8").tobytes()
        out += np.ascontiguousarray(rec.gradients, dtype="<f8").tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    stream.write(bytes(out))


def read_dataset(stream: BinaryIO) -> TrajectoryDataset:
    data = stream.read()
    if len(data) < 8 or data[:4] != BGKD_MAGIC:
        raise DatasetFormatError("not a BGKD stream")
    stored = struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != stored:
        raise DatasetFormatError("crc32 mismatch")
    pos = 4
    (version,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if version != BGKD_VERSION:
        raise DatasetFormatError(f"unsupported version {version}")
    order, n_cells, x_a, x_b, gen, base_seed, n_rec = struct.unpack_from("<IIddBQI", data, pos)
    pos += struct.calcsize("<IIddBQI")
    grid = Grid1D(x_a, x_b, n_cells)
    ds = TrajectoryDataset(order, grid, _GENERATORS[gen], base_seed)
    for _ in range(n_rec):
        seed, tau, kind = struct.unpack_from("<Qd B", data, pos)
        pos += struct.calcsize("<Qd B")
        (n_par,) = struct.unpack_from("<I", data, pos)
        pos += 4
        params = np.frombuffer(data, dtype="<f8", count=n_par, offset=pos).astype(float)
        pos += 8 * n_par
        (n_times,) = struct.unpack_from("<I", data, pos)
        pos += 4
        times = np.frombuffer(data, dtype="<f8", count=n_times, offset=pos).astype(float)
        pos += 8 * n_times
        count = n_times * (order + 2) * n_cells
        values = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(float)
        pos += 8 * count
        grads = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(float)
        pos += 8 * count
        shape = (n_times, order + 2, n_cells)
        ds.records.append(
            DatasetRecord(seed, tau, _KINDS[kind], params, times, values.reshape(shape), grads.reshape(shape))
        )
    if pos != len(data) - 4:
        raise DatasetFormatError("trailing bytes in dataset")
    return ds


# ---------------------------------------------------------------------------
# Generation drivers
# ---------------------------------------------------------------------------


def generate_record(
    index: int,
    base_seed: int,
    grid: Grid1D,
    vgrid: VelocityGrid,
    order: int,
    generator: str,
    kind: str,
    t_final: float,
    n_saves: int,
    tau: Optional[float] = None,
    solver_config: Optional[ps.SolverConfig] = None,
) -> DatasetRecord:
    """Sample one initial condition and produce its trajectory record."""
    rng = np.random.default_rng([base_seed, index])
    if tau is None:
        tau = sample_knudsen(rng)
    if kind == "wave":
        params, field0 = sample_wave_ic(rng, grid, vgrid)
    elif kind == "mix":
        params, field0 = sample_mix_ic(rng, grid, vgrid)
    else:
        raise ValueError(f"unknown IC kind {kind!r}")
    save_times = np.linspace(0.0, t_final, n_saves + 1)[1:]
    m2 = order + 2

    if generator == "dvm":
        res = dvm.run_dvm(field0, tau, t_final, sample_times=save_times, max_order=order + 1)
        times = np.asarray(res.times)
        values = np.stack([mom.T for mom in res.moments])  # (n_t, M+2, n_cells)
    elif generator == "hme":
        rho, u, theta, fs = field0.moments(order)
        W0 = np.column_stack((rho, u, theta, fs))
        cfg = solver_config or ps.SolverConfig(scheme="high_order_roe", collision="split_exact", tau=tau)
        if cfg.tau != tau:
            cfg = replace(cfg, tau=tau)
        res = ps.run(grid, W0, order, ps.HmeClosure(), cfg, t_final, save_times=save_times)
        if res.failures:
            raise RuntimeError(f"generator run failed: {res.failures[0]}")
        times = np.asarray(res.times)
        values = np.zeros((len(res.states), m2, grid.n_cells))
        for i, st in enumerate(res.states):
            values[i, : order + 1] = st.primitive().T
    else:
        raise ValueError(f"unknown generator {generator!r}")

    gradients = compute_gradients(values, grid.dx)
    if generator == "hme":
        gradients[:, -1, :] = hme_closure_gradient(values, gradients)
    return DatasetRecord(index, tau, kind, np.asarray(params.flat()), times, values, gradients)


def generate_dataset(
    base_seed: int,
    n_ic: int,
    grid: Grid1D,
    vgrid: VelocityGrid,
    order: int,
    generator: str = "hme",
    kind: str = "wave",
    t_final: float = 1.0,
    n_saves: int = 20,
    tau: Optional[float] = None,
    workers: int = 1,
) -> TrajectoryDataset:
    """Generate ``n_ic`` independent records; parallel over initial conditions."""
    ds = TrajectoryDataset(order, grid, generator, base_seed)
    args = [(i, base_seed, grid, vgrid, order, generator, kind, t_final, n_saves, tau) for i in range(n_ic)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            ds.records = list(pool.map(_record_star, args))
    else:
        ds.records = [_record_star(a) for a in args]
    return ds


def _record_star(args) -> DatasetRecord:
    return generate_record(*args)
