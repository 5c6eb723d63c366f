import numpy as np
import pytest

from bgkclosure import moment_core as mc
from bgkclosure import pathcons_solvers as ps
from helpers import (
    cell_averaged_conserved,
    constant_offsets_network,
    hme_coefficient_network,
    random_state,
    restrict_averages,
    smooth_wave_profile,
)

M = 4


def _wave_state(n, order=M, grid=None):
    grid = grid or mc.Grid1D(-0.5, 0.5, n)
    V0 = cell_averaged_conserved(grid, smooth_wave_profile(order))
    return grid, ps.conservative_to_primitive_arrays(V0)


class TestRoeLinearization:
    def test_consistency_on_equal_states(self):
        rng = np.random.default_rng(0)
        w = random_state(rng, M).as_vector()

        def provider(vec):
            st = mc.PrimitiveMomentState.from_vector(M, vec)
            return mc.grad_matrix(st)

        A = ps.roe_linearization(w, w, provider)
        assert np.allclose(A, provider(w), atol=1e-14)

    def test_affine_provider_gives_midpoint(self):
        B = np.random.default_rng(1).standard_normal((3, 3))

        def provider(vec):
            return B * vec.sum()

        wL = np.array([0.0, 1.0, 2.0])
        wR = np.array([2.0, 3.0, 4.0])
        A = ps.roe_linearization(wL, wR, provider, p=3)
        assert np.allclose(A, provider(0.5 * (wL + wR)), atol=1e-13)

    def test_quadrature_refinement(self):
        rng = np.random.default_rng(2)
        wL = random_state(rng, M).as_vector()
        wR = random_state(rng, M).as_vector()
        # keep the segment physical
        wR = wL + 0.3 * (wR - wL)

        def provider(vec):
            return mc.grad_matrix(mc.PrimitiveMomentState.from_vector(M, vec))

        A3 = ps.roe_linearization(wL, wR, provider, p=3)
        A6 = ps.roe_linearization(wL, wR, provider, p=6)
        assert np.abs(A3 - A6).max() < 1e-6

    def test_polynomial_path_weighting(self):
        # for a provider linear in w the degree-2 path integral is computable
        # in closed form: int_0^1 f(wL + s^2 dw) 2s ds = f(wL) + dw-part
        def provider(vec):
            return np.array([[vec[0]]])

        wL, wR = np.array([1.0]), np.array([3.0])
        A = ps.roe_linearization(wL, wR, provider, path="polynomial", p=4, degree=2)
        # int 2s (1 + 2 s^2) ds = 1 + 1 = 2
        assert A[0, 0] == pytest.approx(2.0, abs=1e-13)


class TestFluctuations:
    def test_zero_jump(self):
        A = np.diag([1.0, -2.0, 3.0])
        Dm, Dp = ps.fluctuations(A, np.zeros(3), "roe", 0.1, 0.01)
        assert np.all(Dm == 0.0) and np.all(Dp == 0.0)

    def test_scalar_upwind(self):
        Dm, Dp = ps.fluctuations(np.array([[2.0]]), np.array([1.0]), "roe", 0.1, 0.01)
        assert Dm[0] == pytest.approx(0.0, abs=1e-14)
        assert Dp[0] == pytest.approx(2.0, abs=1e-14)

    @pytest.mark.parametrize("scheme", ["roe", "lax_friedrichs", "force"])
    def test_jump_identity(self, scheme):
        rng = np.random.default_rng(4)
        w = random_state(rng, M)
        A = mc.hme_matrix(w)
        dw = rng.standard_normal(M + 1)
        Dm, Dp = ps.fluctuations(A, dw, scheme, 0.05, 0.01)
        assert np.allclose(Dm + Dp, A @ dw, atol=1e-12)

    def test_defective_matrix_falls_back_with_warning(self):
        A = np.array([[0.0, 1.0], [-1.0, 0.0]])  # purely imaginary spectrum
        with pytest.warns(RuntimeWarning):
            Dm, Dp = ps.fluctuations(A, np.array([1.0, 0.0]), "roe", 0.1, 0.01)
        assert np.allclose(Dm + Dp, A @ np.array([1.0, 0.0]), atol=1e-13)


class TestWeno:
    def test_constant(self):
        vals = ps.weno5_reconstruct(np.ones(5), xi=(-0.5, -0.1, 0.3, 0.5))
        assert np.allclose(vals, 1.0, atol=1e-14)

    def test_linear_exact(self):
        vals = ps.weno5_reconstruct(np.arange(-2.0, 3.0), xi=(-0.5, 0.5))
        assert np.allclose(vals, [-0.5, 0.5], atol=1e-13)

    def test_degree4_exact_with_optimal_weights(self):
        avgs = np.array([((c + 0.5) ** 5 - (c - 0.5) ** 5) / 5 for c in range(-2, 3)])
        xi = (-0.5, -0.5 / np.sqrt(5), 0.5 / np.sqrt(5), 0.5)
        vals = ps.weno5_reconstruct(avgs, xi=xi, nonlinear=False)
        assert np.abs(vals - np.array(xi) ** 4).max() < 1e-12

    def test_nonlinear_fifth_order_on_smooth(self):
        # exact cell averages of cos(2 pi x) via the sine antiderivative
        errs = []
        for n in (20, 40, 80, 160):
            h = 1.0 / n
            x = (np.arange(-2, 3) * h)[None, :] + (np.arange(n) * h)[:, None]
            avgs = (np.sin(2 * np.pi * (x + h / 2)) - np.sin(2 * np.pi * (x - h / 2))) / (2 * np.pi * h)
            vals = ps.weno5_reconstruct(avgs, xi=(0.5,))
            exact = np.cos(2 * np.pi * (x[:, 2] + h / 2))
            errs.append(np.abs(vals[:, 0] - exact).max())
        order = np.log2(errs[-2] / errs[-1])
        assert order > 4.5

    def test_gauss_lobatto_rule_exactness(self):
        # the in-cell rule integrates x^4 over [-1/2, 1/2] exactly: 1/80
        val = np.sum(ps._GL_WEIGHTS * ps._GL_NODES**4)
        assert val == pytest.approx(0.0125, abs=1e-16)
        assert np.sum(ps._GL_WEIGHTS) == pytest.approx(1.0, abs=1e-15)


class TestFirstOrder:
    def test_constant_equilibrium_unchanged(self):
        grid = mc.Grid1D(-0.5, 0.5, 16)
        W0 = np.tile([1.0, 0.2, 0.8, 0.0, 0.0], (16, 1))
        cfg = ps.SolverConfig(scheme="force", tau=1.0)
        res = ps.run(grid, W0, M, ps.HmeClosure(), cfg, 0.05)
        assert np.abs(res.final.primitive() - W0).max() < 1e-14

    @pytest.mark.parametrize("scheme", ["roe", "lax_friedrichs", "force"])
    def test_mass_conserved_per_step(self, scheme):
        grid, W0 = _wave_state(32)
        st = ps.FieldState.from_primitive(grid, W0, M)
        cfg = ps.SolverConfig(scheme=scheme, tau=1.0)
        dt, _ = ps.compute_dt(st, ps.HmeClosure(), cfg)
        new, _ = ps.step_first_order(st, ps.HmeClosure(), cfg, dt)
        for c in range(3):
            before = st.conserved[:, c].sum()
            after = new.conserved[:, c].sum()
            assert abs(after - before) <= 1e-13 * max(1.0, abs(before))

    def test_positivity_failure_reports_cell(self):
        grid, W0 = _wave_state(16)
        st = ps.FieldState.from_primitive(grid, W0, M)
        cfg = ps.SolverConfig(scheme="force", tau=1.0)
        with pytest.raises(ps.SolverFailure):
            ps.step_first_order(st, ps.HmeClosure(), cfg, dt=50.0)

    def test_self_convergence_first_order(self):
        T = 0.08
        sols = {}
        for n in (128, 256, 512):
            grid, W0 = _wave_state(n)
            cfg = ps.SolverConfig(scheme="force", tau=1.0, dt_fixed=0.1 / n)
            sols[n] = ps.run(grid, W0, M, ps.HmeClosure(), cfg, T).final.conserved
        e1 = np.abs(restrict_averages(sols[256]) - sols[128]).max()
        e2 = np.abs(restrict_averages(sols[512]) - sols[256]).max()
        order = np.log2(e1 / e2)
        assert 0.6 < order < 1.4


class TestHighOrder:
    def test_constant_zero_rhs(self):
        grid = mc.Grid1D(-0.5, 0.5, 16)
        W0 = np.tile([1.0, 0.2, 0.8, 0.0, 0.0], (16, 1))
        st = ps.FieldState.from_primitive(grid, W0, M)
        cfg = ps.SolverConfig(scheme="high_order_roe", tau=1.0)
        rhs, _ = ps.high_order_rhs(st, ps.HmeClosure(), cfg, dt=1e-3)
        assert np.abs(rhs).max() < 1e-13

    def test_self_convergence(self):
        T = 0.02
        sols = {}
        for n in (32, 64, 128):
            grid, W0 = _wave_state(n)
            cfg = ps.SolverConfig(scheme="high_order_roe", tau=1.0, dt_fixed=0.05 / n)
            sols[n] = ps.run(grid, W0, M, ps.HmeClosure(), cfg, T).final.conserved
        e1 = np.abs(restrict_averages(sols[64]) - sols[32]).max()
        e2 = np.abs(restrict_averages(sols[128]) - sols[64]).max()
        assert np.log2(e1 / e2) >= 2.5

    def test_conservation_over_many_steps(self):
        grid, W0 = _wave_state(32)
        cfg = ps.SolverConfig(scheme="high_order_roe", tau=0.5, collision="split_exact")
        res = ps.run(grid, W0, M, ps.HmeClosure(), cfg, 0.5)
        V0 = ps.FieldState.from_primitive(grid, W0, M).conserved
        for c in range(3):
            before, after = V0[:, c].sum(), res.final.conserved[:, c].sum()
            assert abs(after - before) <= 1e-12 * max(1.0, abs(before))


class TestComputeDt:
    def test_equilibrium_speed(self):
        grid = mc.Grid1D(-0.5, 0.5, 8)
        W0 = np.tile([1.0, 0.0, 1.0, 0.0, 0.0], (8, 1))
        st = ps.FieldState.from_primitive(grid, W0, M)
        _, speed = ps.compute_dt(st, ps.HmeClosure(), ps.SolverConfig(scheme="force", tau=1.0))
        assert speed == pytest.approx(np.sqrt(5 + np.sqrt(10)), abs=1e-10)

    def test_cfl_scaling(self):
        grid, W0 = _wave_state(16)
        st = ps.FieldState.from_primitive(grid, W0, M)
        dt1, _ = ps.compute_dt(st, ps.HmeClosure(), ps.SolverConfig(scheme="force", cfl=0.25, tau=1.0))
        dt2, _ = ps.compute_dt(st, ps.HmeClosure(), ps.SolverConfig(scheme="force", cfl=0.5, tau=1.0))
        assert dt2 == pytest.approx(2 * dt1, rel=1e-14)

    def test_stiffness_cap(self):
        grid, W0 = _wave_state(16)
        st = ps.FieldState.from_primitive(grid, W0, M)
        dt, _ = ps.compute_dt(st, ps.HmeClosure(), ps.SolverConfig(scheme="force", tau=1e-4))
        assert dt <= 9e-5 + 1e-18

    def test_hyperbolic_closure_rejects_complex_spectrum(self):
        from helpers import detuned_coefficient_network

        weights, config = detuned_coefficient_network(M)
        closure = ps.MlNonhyperbolicClosure(weights, config)
        grid = mc.Grid1D(-0.5, 0.5, 8)
        W0 = np.tile([1.0, 0.0, 0.6, 0.0, 0.0], (8, 1))
        st = ps.FieldState.from_primitive(grid, W0, M)
        # the non-hyperbolic closure tolerates the complex spectrum
        dt, _ = ps.compute_dt(st, closure, ps.SolverConfig(scheme="force", tau=1.0))
        assert dt > 0

        class Strict(ps.MlNonhyperbolicClosure):
            hyperbolic = True

        with pytest.raises(ps.HyperbolicityError):
            ps.compute_dt(st, Strict(weights, config), ps.SolverConfig(scheme="force", tau=1.0))


class TestRun:
    def test_free_stream_homogeneous_constant(self):
        grid = mc.Grid1D(-0.5, 0.5, 16)
        W0 = np.tile([1.2, 0.4, 0.9, 0.03, -0.01], (16, 1))
        cfg = ps.SolverConfig(scheme="high_order_roe", tau=1e12, collision="explicit")
        res = ps.run(grid, W0, M, ps.HmeClosure(), cfg, 0.05)
        assert np.abs(res.final.primitive() - W0).max() < 1e-10

    def test_homogeneous_split_exact_decay(self):
        grid = mc.Grid1D(-0.5, 0.5, 8)
        f0 = np.array([0.05, -0.02])
        W0 = np.tile(np.concatenate(([1.0, 0.3, 1.1], f0)), (8, 1))
        tau = 0.2
        cfg = ps.SolverConfig(scheme="high_order_roe", tau=tau, collision="split_exact")
        res = ps.run(grid, W0, M, ps.HmeClosure(), cfg, 0.3)
        exact = f0 * np.exp(-res.final.time / tau)
        assert np.abs(res.final.primitive()[:, 3:] - exact).max() < 1e-8

    def test_ml_closure_matches_hme_on_homogeneous_run(self):
        weights, config = constant_offsets_network(M, mc.hermite_roots(M + 1))
        grid = mc.Grid1D(-0.5, 0.5, 16)
        W0 = np.tile([1.4, 0.3, 1.0, 0.08, -0.05], (16, 1))
        cfg = ps.SolverConfig(scheme="high_order_roe", tau=0.3, collision="explicit")
        res_ml = ps.run(grid, W0, M, ps.MlClosure(weights, config), cfg, 0.3)
        res_hme = ps.run(grid, W0, M, ps.HmeClosure(), cfg, 0.3)
        assert np.abs(res_ml.final.conserved - res_hme.final.conserved).max() < 1e-10

    def test_nonhyperbolic_hme_network_matches_hme_on_wave(self):
        weights, config = hme_coefficient_network(M)
        grid, W0 = _wave_state(24)
        cfg = ps.SolverConfig(scheme="high_order_roe", tau=0.5, collision="explicit")
        res_nh = ps.run(grid, W0, M, ps.MlNonhyperbolicClosure(weights, config), cfg, 0.1)
        res_h = ps.run(grid, W0, M, ps.HmeClosure(), cfg, 0.1)
        assert np.abs(res_nh.final.conserved - res_h.final.conserved).max() < 1e-12

    def test_failure_recorded_not_raised(self):
        grid, W0 = _wave_state(16)
        cfg = ps.SolverConfig(scheme="force", tau=1.0, dt_fixed=5.0)
        res = ps.run(grid, W0, M, ps.HmeClosure(), cfg, 10.0)
        assert res.failures
        assert not res.completed
        assert {"kind", "cell", "time"} <= set(res.failures[0])

    def test_galilean_co_moving_frame(self):
        # boost the IC by c and compare in the co-moving frame after a time
        # that shifts the profile by an integer cell count
        n, c = 64, 0.5
        T = 0.25  # c*T = 0.125 = 8 cells
        shift_cells = int(round(c * T * n))
        assert abs(shift_cells - c * T * n) < 1e-12
        grid, W0 = _wave_state(n)
        cfg = ps.SolverConfig(scheme="high_order_roe", tau=1.0, collision="explicit")
        base = ps.run(grid, W0, M, ps.HmeClosure(), cfg, T).final.primitive()
        Wb = W0.copy()
        Wb[:, 1] += c
        boosted = ps.run(grid, Wb, M, ps.HmeClosure(), cfg, T).final.primitive()
        comoving = np.roll(boosted, -shift_cells, axis=0)
        comoving[:, 1] -= c
        mismatch = np.abs(comoving - base).max()

        # truncation scale estimated by grid refinement of the base run
        grid2, W2 = _wave_state(2 * n)
        fine = ps.run(grid2, W2, M, ps.HmeClosure(), cfg, T).final.primitive()
        fine_on_coarse = 0.5 * (fine[0::2] + fine[1::2])
        trunc = np.abs(fine_on_coarse - base).max()
        assert mismatch <= 2 * max(trunc, 1e-12)
