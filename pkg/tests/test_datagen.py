import io

import numpy as np
import pytest

from bgkclosure import datagen as dg
from bgkclosure import kinetic_dvm as kd
from bgkclosure import moment_core as mc


@pytest.fixture(scope="module")
def vgrid():
    return kd.VelocityGrid(10.0, 100)


@pytest.fixture(scope="module")
def grid():
    return mc.Grid1D(0.0, 1.0, 64)


class TestWaveSampling:
    def test_density_profile_value(self):
        macro = dg.MacroWaveParams(0.25, 0.6, 1, 0.0, 0.25, 0.6, 1, 0.0)
        assert macro.density(0.25, 1.0) == pytest.approx(0.85, abs=1e-15)

    def test_single_component_blend(self, grid, vgrid):
        rng = np.random.default_rng(0)
        params = dg.sample_wave_params(rng)
        p1 = dg.WaveParams(params.u1, params.u2, 1.0, 0.0)
        field = dg.wave_field(p1, grid, vgrid)
        x = grid.centers
        ref = kd.maxwellian_field(grid, vgrid, params.u1.density(x, 1.0), 0 * x, params.u1.temperature(x, 1.0))
        assert np.abs(field.values - ref / (1 + dg.BLEND_EPS)).max() < 1e-15

    def test_sampled_parameters_in_ranges(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            p = dg.sample_wave_params(rng)
            for macro in (p.u1, p.u2):
                assert 0.2 <= macro.a_rho <= 0.3 and 0.2 <= macro.a_theta <= 0.3
                assert 0.5 <= macro.b_rho <= 0.7 and 0.5 <= macro.b_theta <= 0.7
                assert macro.k_rho in (1, 2, 3, 4) and macro.k_theta in (1, 2, 3, 4)
                assert 0.0 <= macro.psi_rho <= 2 * np.pi and 0.0 <= macro.psi_theta <= 2 * np.pi
            assert 0.0 <= p.alpha1 <= 1.0 and 0.0 <= p.alpha2 <= 1.0

    def test_initial_velocity_zero(self, grid, vgrid):
        rng = np.random.default_rng(2)
        _, field = dg.sample_wave_ic(rng, grid, vgrid)
        _, u, _, _ = field.moments(4)
        assert np.abs(u).max() < 1e-12


class TestMixSampling:
    def test_alpha_one_is_pure_wave(self, grid, vgrid):
        rng = np.random.default_rng(3)
        params, _ = dg.sample_mix_ic(rng, grid, vgrid)
        pure = dg.MixParams(params.wave, params.x1, params.x2, params.rho_left,
                            params.theta_left, params.rho_right, params.theta_right, 1.0)
        field = dg.mix_field(pure, grid, vgrid)
        wave = dg.wave_field(params.wave, grid, vgrid)
        assert np.abs(field.values - wave.values).max() < 1e-15

    def test_alpha_zero_is_two_state_maxwellian(self, grid, vgrid):
        rng = np.random.default_rng(4)
        params, _ = dg.sample_mix_ic(rng, grid, vgrid)
        shock = dg.MixParams(params.wave, 0.3, 0.7, 1.5, 1.2, 0.6, 0.8, 0.0)
        field = dg.mix_field(shock, grid, vgrid)
        x = grid.centers
        inside = (x >= 0.3) & (x <= 0.7)
        ref_in = mc.maxwellian(1.5, 0.0, 1.2, vgrid.nodes)
        ref_out = mc.maxwellian(0.6, 0.0, 0.8, vgrid.nodes)
        assert np.abs(field.values[inside] - ref_in).max() < 1e-15
        assert np.abs(field.values[~inside] - ref_out).max() < 1e-15

    def test_density_bounds_from_blend(self, grid, vgrid):
        rng = np.random.default_rng(5)
        for _ in range(10):
            params, field = dg.sample_mix_ic(rng, grid, vgrid)
            rho, _, _, _ = field.moments(4)
            wave_rho = dg.wave_field(params.wave, grid, vgrid).moments(4)[0]
            a = params.alpha
            lo = a * wave_rho.min() + (1 - a) * dg.SHOCK_RIGHT_RANGE[0]
            hi = a * wave_rho.max() + (1 - a) * dg.SHOCK_LEFT_RANGE[1]
            assert rho.min() >= lo - 1e-8
            assert rho.max() <= hi + 1e-8

    def test_shock_parameters_in_ranges(self):
        rng = np.random.default_rng(6)
        g = mc.Grid1D(0.0, 1.0, 32)
        vg = kd.VelocityGrid(10.0, 64)
        for _ in range(100):
            p, _ = dg.sample_mix_ic(rng, g, vg)
            assert 0.2 <= p.x1 <= 0.4 and 0.6 <= p.x2 <= 0.8
            assert 1.0 <= p.rho_left <= 2.0 and 1.0 <= p.theta_left <= 2.0
            assert 0.55 <= p.rho_right <= 0.9 and 0.55 <= p.theta_right <= 0.9
            assert 0.2 <= p.alpha <= 0.4


class TestGradients:
    def test_constant_zero(self):
        assert np.abs(dg.compute_gradients(np.full(64, 3.7), 1 / 64)).max() < 1e-13

    def test_sine_accuracy(self):
        n = 256
        x = (np.arange(n) + 0.5) / n
        g = dg.compute_gradients(np.sin(2 * np.pi * x), 1.0 / n)
        assert np.abs(g - 2 * np.pi * np.cos(2 * np.pi * x)).max() < 1e-6

    def test_cubic_exact_on_interior(self):
        n = 32
        x = np.arange(n, dtype=float)
        f = 0.3 * x**3 - 2 * x**2 + x
        g = dg.compute_gradients(f, 1.0)
        exact = 0.9 * x**2 - 4 * x + 1
        interior = slice(2, n - 2)
        assert np.abs(g[interior] - exact[interior]).max() < 1e-10


class TestDatasetIO:
    def _tiny_dataset(self):
        grid = mc.Grid1D(0.0, 1.0, 16)
        vg = kd.VelocityGrid(10.0, 64)
        return dg.generate_dataset(3, 2, grid, vg, 4, generator="hme", kind="wave",
                                   t_final=0.02, n_saves=2, tau=0.7)

    def test_round_trip_bitwise(self):
        ds = self._tiny_dataset()
        buf = io.BytesIO()
        dg.write_dataset(ds, buf)
        payload = buf.getvalue()
        ds2 = dg.read_dataset(io.BytesIO(payload))
        buf2 = io.BytesIO()
        dg.write_dataset(ds2, buf2)
        assert buf2.getvalue() == payload

    def test_version_mismatch_rejected(self):
        import struct
        import zlib

        ds = self._tiny_dataset()
        buf = io.BytesIO()
        dg.write_dataset(ds, buf)
        raw = bytearray(buf.getvalue())
        raw[4:8] = struct.pack("<I", 42)
        raw[-4:] = struct.pack("<I", zlib.crc32(bytes(raw[:-4])) & 0xFFFFFFFF)
        with pytest.raises(dg.DatasetFormatError):
            dg.read_dataset(io.BytesIO(bytes(raw)))

    def test_corruption_rejected(self):
        ds = self._tiny_dataset()
        buf = io.BytesIO()
        dg.write_dataset(ds, buf)
        raw = bytearray(buf.getvalue())
        raw[len(raw) // 2] ^= 0xFF
        with pytest.raises(dg.DatasetFormatError):
            dg.read_dataset(io.BytesIO(bytes(raw)))

    def test_shapes(self):
        ds = self._tiny_dataset()
        rec = ds.records[0]
        assert rec.values.shape == (3, 6, 16)  # saves+initial, M+2 rows, cells
        assert rec.gradients.shape == rec.values.shape
        assert rec.times.shape == (3,)


class TestGeneratedContent:
    def test_hme_closure_gradient_identity(self):
        grid = mc.Grid1D(0.0, 1.0, 32)
        vg = kd.VelocityGrid(10.0, 64)
        ds = dg.generate_dataset(11, 1, grid, vg, 4, generator="hme", kind="wave",
                                 t_final=0.05, n_saves=4, tau=0.5)
        rec = ds.records[0]
        target = rec.gradients[:, -1, :]
        expected = -rec.values[:, -2, :] * rec.gradients[:, 1, :] \
            - 0.5 * rec.values[:, -3, :] * rec.gradients[:, 2, :]
        assert np.abs(target - expected).max() == 0.0

    def test_dvm_records_closing_moment(self):
        grid = mc.Grid1D(0.0, 1.0, 32)
        vg = kd.VelocityGrid(10.0, 64)
        ds = dg.generate_dataset(13, 1, grid, vg, 4, generator="dvm", kind="wave",
                                 t_final=0.01, n_saves=2, tau=0.5)
        rec = ds.records[0]
        assert rec.values.shape[1] == 6
        # closing moment is genuinely populated for kinetic data
        assert np.abs(rec.values[:, -1, :]).max() > 0.0

    def test_knudsen_log_uniform_ks(self):
        n = 10_000
        rng = np.random.default_rng(123)
        taus = np.array([dg.sample_knudsen(rng) for _ in range(n)])
        assert taus.min() >= 1e-3 and taus.max() <= 10.0
        z = (np.log10(np.sort(taus)) + 3.0) / 4.0  # map to [0, 1]
        grid_cdf = np.arange(1, n + 1) / n
        d = max(np.abs(grid_cdf - z).max(), np.abs(z - (np.arange(n) / n)).max())
        # Kolmogorov-Smirnov critical value at the 1% level
        assert d < 1.63 / np.sqrt(n)

    def test_deterministic_per_seed(self):
        grid = mc.Grid1D(0.0, 1.0, 16)
        vg = kd.VelocityGrid(10.0, 64)
        a = dg.generate_record(0, 9, grid, vg, 4, "hme", "wave", 0.02, 2)
        b = dg.generate_record(0, 9, grid, vg, 4, "hme", "wave", 0.02, 2)
        assert np.array_equal(a.values, b.values)
        assert a.tau == b.tau
