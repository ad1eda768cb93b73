"""
Test the full-order Burgers and KdV solvers.
"""
import numpy as np
import pytest

from app.core.exceptions import NonFiniteStateError, SolverConvergenceError, ValidationError
from app.models.snapshot import Grid1D, KdvIcSpec
from app.services import fom


@pytest.fixture
def burgers_grid():
    return Grid1D(-1.0, 3.0, 81)


@pytest.fixture
def pulse(burgers_grid):
    return fom.burgers_ic(burgers_grid, amplitude=0.8, width=0.3, centers=[0.5])


def _refined_peak(grid, q):
    """Sub-cell peak location from a parabola through the maximum and its neighbours."""
    i = int(np.argmax(q))
    left, mid, right = q[i - 1], q[i], q[(i + 1) % q.size]
    shift = 0.5 * (left - right) / (left - 2.0 * mid + right)
    return grid.nodes[i] + shift * grid.dx


class TestStepCount:
    """Snapshot counts from dt and t_end."""

    def test_exact_multiple(self):
        assert fom.step_count(0.01, 0.05) == 5
        assert fom.step_count(1e-3, 1.0) == 1000

    @pytest.mark.parametrize("dt,t_end", [(0.0, 1.0), (0.01, -1.0), (0.3, 1.0)])
    def test_invalid(self, dt, t_end):
        with pytest.raises(ValidationError):
            fom.step_count(dt, t_end)


class TestBurgers:
    """Implicit upwind Burgers solver."""

    def test_ic_is_sum_of_pulses(self, burgers_grid):
        single = fom.burgers_ic(burgers_grid, 0.8, 0.3, [0.5])
        double = fom.burgers_ic(burgers_grid, 0.8, 0.3, [0.5, 2.0])
        assert single.max() == pytest.approx(0.8)
        np.testing.assert_allclose(double - single, fom.burgers_ic(burgers_grid, 0.8, 0.3, [2.0]))
        assert not fom.burgers_ic(burgers_grid, 0.8, 0.3, []).any()

    def test_snapshot_shape(self, burgers_grid, pulse):
        result = fom.burgers_solve(pulse, burgers_grid, dt=0.01, t_end=0.1)
        assert result.shape == (81, 11)
        np.testing.assert_allclose(result.times[-1], 0.1)
        assert not result.values[0, 1:].any() and not result.values[-1, 1:].any()

    def test_zero_state_is_steady(self, burgers_grid):
        result = fom.burgers_solve(np.zeros(81), burgers_grid, dt=0.01, t_end=0.05)
        assert not result.values.any()

    def test_maximum_principle(self, burgers_grid, pulse):
        values = fom.burgers_solve(pulse, burgers_grid, dt=0.01, t_end=0.5).values
        assert values.max() <= pulse.max() + 1e-9
        assert values.min() >= -1e-9
        assert np.all(np.diff(values.max(axis=0)) <= 1e-9)

    def test_peak_amplitude_before_shock(self):
        # amplitude is constant along characteristics until the front steepens into a shock
        grid = Grid1D(-4.0, 8.0, 2048)
        q0 = fom.burgers_ic(grid, amplitude=0.8, width=1.0, centers=[0.0])
        peaks = fom.burgers_solve(q0, grid, dt=1e-3, t_end=0.5).values.max(axis=0)
        assert peaks.shape == (501,)
        assert peaks.min() >= 0.98 * 0.8
        assert peaks.max() <= 1.02 * 0.8

    def test_pulse_travels_right(self, burgers_grid, pulse):
        values = fom.burgers_solve(pulse, burgers_grid, dt=0.01, t_end=0.5).values
        assert np.argmax(values[:, -1]) > np.argmax(values[:, 0])

    def test_newton_matches_picard(self, burgers_grid, pulse):
        picard = fom.burgers_solve(pulse, burgers_grid, 0.01, 0.2, method="picard").values
        newton = fom.burgers_solve(pulse, burgers_grid, 0.01, 0.2, method="newton").values
        np.testing.assert_allclose(newton, picard, atol=1e-8)

    def test_non_convergence(self, burgers_grid, pulse):
        with pytest.raises(SolverConvergenceError) as exc_info:
            fom.burgers_solve(pulse, burgers_grid, 0.01, 0.05, solver_tol=1e-14, max_inner_iters=1)
        assert exc_info.value.step == 1

    def test_rejects_periodic_grid(self, pulse):
        with pytest.raises(ValidationError):
            fom.burgers_solve(pulse, Grid1D(-1.0, 3.0, 81, periodic=True), 0.01, 0.05)

    def test_rejects_non_finite_ic(self, burgers_grid, pulse):
        pulse[10] = np.nan
        with pytest.raises(NonFiniteStateError):
            fom.burgers_solve(pulse, burgers_grid, 0.01, 0.05)


class TestKdv:
    """Periodic RK4 KdV solver and soliton initial conditions."""

    @pytest.fixture
    def soliton_grid(self):
        return Grid1D(-20.0, 20.0, 800, periodic=True)

    def test_single_soliton_speed(self, soliton_grid):
        # 2 sech^2(x - 4t) is an exact travelling wave
        q0 = 2.0 / np.cosh(soliton_grid.nodes) ** 2
        result = fom.kdv_solve(q0, soliton_grid, dt_snapshot=0.05, t_end=0.5)
        speed = _refined_peak(soliton_grid, result.values[:, -1]) / 0.5
        assert speed == pytest.approx(4.0, rel=0.01)
        assert result.values[:, -1].max() == pytest.approx(2.0, rel=0.01)

    def test_mass_conserved(self, ring_grid, ring_layout):
        q0, _ = fom.kdv_ic(ring_grid, ring_layout, seed=5)
        values = fom.kdv_solve(q0, ring_grid, dt_snapshot=0.01, t_end=0.1).values
        mass = values.sum(axis=0)
        np.testing.assert_allclose(mass, mass[0], rtol=1e-11)

    def test_field_uses_minimum_image(self, ring_grid):
        spec = KdvIcSpec(amplitudes=(1,), centers=(7.9,), seed=0)
        field = fom.kdv_field(ring_grid, spec)
        # node 0 sits 0.1 to the right of the wrapped center
        assert field[0] == pytest.approx(6.0 / np.cosh(0.1) ** 2)

    def test_ic_is_reproducible(self, ring_grid, ring_layout):
        first, spec_a = fom.kdv_ic(ring_grid, ring_layout, seed=11)
        second, spec_b = fom.kdv_ic(ring_grid, ring_layout, seed=11)
        np.testing.assert_array_equal(first, second)
        assert spec_a == spec_b
        assert spec_a.active >= 1
        np.testing.assert_allclose(first, fom.kdv_field(ring_grid, spec_a))

    def test_ic_draws_differ_between_seeds(self, ring_grid, ring_layout):
        specs = {fom.kdv_ic(ring_grid, ring_layout, seed=s)[1].centers for s in range(5)}
        assert len(specs) == 5

    def test_ic_exhausted_attempts(self, ring_grid, ring_layout, mocker):
        generator = mocker.patch("app.services.fom.np.random.default_rng")
        generator.return_value.integers.return_value = np.zeros(4, dtype=int)
        generator.return_value.normal.return_value = np.zeros(4)
        with pytest.raises(ValidationError):
            fom.kdv_ic(ring_grid, ring_layout, seed=0, max_attempts=3)
        assert generator.call_count == 3

    def test_substeps_grow_with_amplitude(self):
        policy = fom.SubstepPolicy()
        small = policy.substeps(np.full(10, 0.1), dx=0.1, dt_snapshot=0.01)
        large = policy.substeps(np.full(10, 100.0), dx=0.1, dt_snapshot=0.01)
        assert large > small >= 1
        assert fom.SubstepPolicy(refine=2).substeps(np.full(10, 0.1), 0.1, 0.01) == 2 * small

    def test_refined_substeps_agree(self):
        grid = Grid1D(-15.0, 15.0, 400, periodic=True)
        q0 = 2.0 / np.cosh(grid.nodes) ** 2
        default = fom.kdv_solve(q0, grid, dt_snapshot=0.1, t_end=1.0).values[:, -1]
        refined = fom.kdv_solve(
            q0, grid, dt_snapshot=0.1, t_end=1.0, substep_policy=fom.SubstepPolicy(refine=2)
        ).values[:, -1]
        assert np.max(np.abs(refined - default)) <= 1e-4

    def test_rhs_of_constant_is_zero(self):
        assert not fom.kdv_rhs(np.full(16, 3.0), dx=0.5).any()

    def test_rejects_non_periodic_grid(self, chain_grid):
        with pytest.raises(ValidationError):
            fom.kdv_solve(np.zeros(chain_grid.n_points), chain_grid, 0.01, 0.02)

    def test_rejects_non_finite_ic(self, ring_grid):
        q0 = np.zeros(ring_grid.n_points)
        q0[3] = np.inf
        with pytest.raises(NonFiniteStateError):
            fom.kdv_solve(q0, ring_grid, 0.01, 0.02)
