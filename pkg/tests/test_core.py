import math

import numpy as np
import pytest
from scipy.integrate import quad

from oxidefv import (
    ExponentialProfile,
    InitialMode,
    Mesh,
    ModelParams,
    State,
    TabulatedProfile,
    TimeGrid,
    discretize_initial,
    uniform_mesh,
)
from conftest import make_tc1


class TestMesh:
    def test_two_cells(self):
        m = uniform_mesh(2)
        assert np.array_equal(m.edges, [0.0, 0.5, 1.0])
        assert np.array_equal(m.centers, [0.0, 0.25, 0.75, 1.0])
        assert np.array_equal(m.gaps, [0.25, 0.5, 0.25])
        assert np.array_equal(m.cell_sizes, [0.5, 0.5])

    def test_single_cell(self):
        m = uniform_mesh(1)
        assert np.array_equal(m.edges, [0.0, 1.0])
        assert np.array_equal(m.centers, [0.0, 0.5, 1.0])

    def test_hundred_cells(self):
        m = uniform_mesh(100)
        assert m.num_cells == 100
        assert np.allclose(m.cell_sizes, 0.01, rtol=0, atol=1e-15)
        assert abs(m.cell_sizes.sum() - 1.0) <= 10 * np.finfo(float).eps

    def test_zero_cells_rejected(self):
        with pytest.raises(ValueError):
            uniform_mesh(0)

    def test_cell_sizes_sum_to_one_random(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            interior = np.unique(rng.uniform(0.01, 0.99, rng.integers(1, 40)))
            m = Mesh.from_edges(np.concatenate([[0.0], interior, [1.0]]))
            assert abs(m.cell_sizes.sum() - 1.0) <= 10 * np.finfo(float).eps
            assert np.all(m.gaps > 0.0)

    def test_bad_edges_rejected(self):
        with pytest.raises(ValueError):
            Mesh.from_edges([0.0, 0.5, 0.5, 1.0])
        with pytest.raises(ValueError):
            Mesh.from_edges([0.1, 0.5, 1.0])
        with pytest.raises(ValueError):
            Mesh.from_edges([0.0, 0.5, 0.9])

    def test_arrays_read_only(self):
        m = uniform_mesh(4)
        with pytest.raises(ValueError):
            m.edges[0] = 5.0


class TestTimeGrid:
    def test_from_step(self):
        g = TimeGrid.from_step(0.01, 2000)
        assert g.n_steps == 2000
        assert abs(g.t_final - 20.0) <= 1e-12 * 20.0

    def test_from_step_and_horizon(self):
        g = TimeGrid.from_step_and_horizon(1e-2, 20.0)
        assert g.n_steps == 2000

    def test_nondivisible_rejected(self):
        with pytest.raises(ValueError):
            TimeGrid.from_step_and_horizon(0.3, 1.0)

    def test_invalid_rejected(self):
        with pytest.raises(ValueError):
            TimeGrid(dt=-0.1, n_steps=10, t_final=-1.0)
        with pytest.raises(ValueError):
            TimeGrid(dt=0.1, n_steps=0, t_final=0.0)
        with pytest.raises(ValueError):
            TimeGrid(dt=0.1, n_steps=10, t_final=2.0)

    def test_times(self):
        g = TimeGrid.from_step(0.5, 4)
        assert np.allclose(g.times, [0.0, 0.5, 1.0, 1.5, 2.0])


class TestProfiles:
    def test_exponential_values(self):
        f = ExponentialProfile(2.0, -1.0, 3.0)
        assert f(0.0) == 5.0
        assert abs(f(1.0) - (2.0 * math.exp(-1.0) + 3.0)) < 1e-15

    def test_exponential_average_exact(self):
        f = ExponentialProfile(1.3, 0.7, 0.4)
        oracle, _ = quad(f, 0.2, 0.9)
        assert abs(f.integral(0.2, 0.9) - oracle) <= 1e-12 * abs(oracle)

    def test_exponential_bounds_monotone(self):
        f = ExponentialProfile(1.0, -0.5, 2.0)
        lo, hi = f.bounds(0.0, 1.0)
        assert lo == pytest.approx(math.exp(-0.5) + 2.0, rel=1e-15)
        assert hi == 3.0

    def test_constant_profile(self):
        f = ExponentialProfile(0.0, 1.0, 4.0)
        assert f.average(0.0, 1.0) == 4.0
        assert f.bounds(0.0, 2.0) == (4.0, 4.0)

    def test_tabulated_interpolation(self):
        f = TabulatedProfile(x=(0.0, 1.0, 2.0), values=(1.0, 3.0, 0.0))
        assert f(0.5) == 2.0
        lo, hi = f.bounds(0.0, 2.0)
        assert (lo, hi) == (0.0, 3.0)

    def test_tabulated_average_gauss(self):
        f = TabulatedProfile(x=(0.0, 2.0), values=(1.0, 3.0))
        # linear data: 3-point Gauss is exact
        assert abs(f.average(0.0, 2.0) - 2.0) < 1e-14

    def test_tabulated_validation(self):
        with pytest.raises(ValueError):
            TabulatedProfile(x=(0.0, 0.0, 1.0), values=(1.0, 2.0, 3.0))
        with pytest.raises(ValueError):
            TabulatedProfile(x=(0.0, 1.0), values=(1.0,))


class TestModelParams:
    def test_positivity_enforced(self):
        with pytest.raises(ValueError):
            ModelParams(a=-1.0, b=1.0, alpha0=1.0, beta0=1.0, alpha1=1.0, beta1=1.0,
                        R=1.0, L0=1.0, u_init=ExponentialProfile(0.0, 0.0, 1.0))
        with pytest.raises(ValueError):
            ModelParams(a=1.0, b=1.0, alpha0=1.0, beta0=0.0, alpha1=1.0, beta1=1.0,
                        R=1.0, L0=1.0, u_init=ExponentialProfile(0.0, 0.0, 1.0))


class TestDiscretizeInitial:
    def test_constant_profile_both_modes(self):
        params = ModelParams(a=1.0, b=1.0, alpha0=1.0, beta0=1.0, alpha1=1.0, beta1=1.0,
                             R=2.0, L0=1.5, u_init=ExponentialProfile(0.0, 0.0, 2.5))
        mesh = uniform_mesh(7)
        for mode in InitialMode:
            s = discretize_initial(params, mesh, mode)
            assert np.allclose(s.u, 2.5, rtol=0, atol=1e-15)
            assert s.X0 == 0.0 and s.X1 == 1.5 and s.L == 1.5

    def test_center_sample_reference_profile(self):
        # offset reference profile exp(-x/2) + 2 sampled at centers {0, .25, .75, 1}
        params = make_tc1(offset=2.0)
        s = discretize_initial(params, uniform_mesh(2), InitialMode.CENTER_SAMPLE)
        expected = [3.0, math.exp(-0.125) + 2.0, math.exp(-0.375) + 2.0, math.exp(-0.5) + 2.0]
        assert np.allclose(s.u, expected, rtol=1e-15, atol=0)

    def test_cell_average_first_cell(self):
        params = make_tc1(offset=2.0)
        s = discretize_initial(params, uniform_mesh(2), InitialMode.CELL_AVERAGE)
        # exact antiderivative over [0, 0.5]: 2 + 4 (1 - e^{-1/4})
        expected = 2.0 + 4.0 * (1.0 - math.exp(-0.25))
        assert abs(s.u[1] - expected) <= 1e-14
        oracle, _ = quad(params.u_init, 0.0, 0.5)
        assert abs(s.u[1] - oracle / 0.5) <= 1e-12

    def test_boundary_traces(self):
        params = make_tc1(offset=2.0)
        s = discretize_initial(params, uniform_mesh(5), InitialMode.CELL_AVERAGE)
        assert s.u[0] == 3.0
        assert abs(s.u[-1] - (math.exp(-0.5) + 2.0)) < 1e-15

    def test_mass_preserved_exactly_for_exponential_family(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            c1, c2, c3 = rng.uniform(0.1, 2.0), rng.uniform(-2.0, 2.0), rng.uniform(0.0, 3.0)
            L0 = rng.uniform(0.5, 3.0)
            params = ModelParams(a=1, b=1, alpha0=1, beta0=1, alpha1=1, beta1=1, R=1,
                                 L0=L0, u_init=ExponentialProfile(c1, c2, c3))
            interior = np.unique(rng.uniform(0.05, 0.95, 12))
            mesh = Mesh.from_edges(np.concatenate([[0.0], interior, [1.0]]))
            s = discretize_initial(params, mesh, InitialMode.CELL_AVERAGE)
            mass = L0 * np.dot(mesh.cell_sizes, s.u[1:-1])
            exact = params.u_init.integral(0.0, L0)
            assert abs(mass - exact) <= 1e-13 * max(1.0, abs(exact))

    def test_negative_initial_data_rejected(self):
        params = ModelParams(a=1, b=1, alpha0=1, beta0=1, alpha1=1, beta1=1, R=1,
                             L0=1.0, u_init=ExponentialProfile(1.0, 1.0, -5.0))
        with pytest.raises(ValueError):
            discretize_initial(params, uniform_mesh(4))


class TestState:
    def test_validation(self):
        with pytest.raises(ValueError):
            State(u=np.array([1.0, -0.1, 1.0]), X0=0.0, X1=1.0, L=1.0)
        with pytest.raises(ValueError):
            State(u=np.array([1.0, 1.0, 1.0]), X0=0.0, X1=1.0, L=-1.0)
        with pytest.raises(ValueError):
            State(u=np.array([1.0, np.nan, 1.0]), X0=0.0, X1=1.0, L=1.0)

    def test_closure_defect(self):
        s = State(u=np.ones(4), X0=0.5, X1=2.0, L=1.5)
        assert s.closure_defect() == 0.0
        s2 = State(u=np.ones(4), X0=0.5, X1=2.0, L=1.6)
        assert abs(s2.closure_defect() - 0.1) < 1e-15

    def test_immutable(self):
        s = State(u=np.ones(4), X0=0.0, X1=1.0, L=1.0)
        with pytest.raises(ValueError):
            s.u[0] = 2.0
