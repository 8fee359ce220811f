from __future__ import annotations

import math

import numpy as np
import pytest
from numpy.polynomial import Polynomial

from edlab.dynamics import PotentialSpec, gaussian_state, madelung_compose
from edlab.errors import DesignError, EscapeError, ToleranceError, ValidationError
from edlab.kinematics import RandomStream
from edlab.system import ConfigGrid, GridField, build_system
from edlab.trajectories import (
    StaticGuidance,
    classical_limit_case,
    classical_reference,
    clt_scaling_study,
    compare_cm_vs_classical,
    core_max_abs,
    default_threads,
    density_chi2_test,
    equivariance_check,
    joint_cm_run,
    qpotential_mass_scaling_study,
    sample_initial_positions,
    simulate_ensemble,
    weighted_loglog_fit,
)

HARMONIC = Polynomial([0.0, 0.0, 0.5])


def test_pure_diffusion_variance():
    spec = build_system(1, 2.0, dt=0.01)
    ens = simulate_ensemble(spec, lambda x: np.zeros_like(x), 20_000, 50, seed=1, x0=0.0)
    var = np.var(ens.paths[-1, :, 0], ddof=1)
    expected = spec.eta * 0.5 / 2.0
    assert abs(var - expected) < 4 * expected * math.sqrt(2 / 20_000)


def test_constant_drift_mean():
    spec = build_system(1, 1.0, eta=2.0, dt=0.01)
    ens = simulate_ensemble(spec, lambda x: np.full_like(x, 0.5), 10_000, 100, seed=2, x0=1.0)
    mean = ens.paths[-1, :, 0].mean()
    se = math.sqrt(2.0 * 1.0) / math.sqrt(10_000)
    assert abs(mean - (1.0 + 2.0 * 0.5 * 1.0)) < 4 * se


def test_paths_depend_only_on_seed_and_index():
    spec = build_system(2, 1.0, dt=0.01)
    f = lambda x: -x  # noqa: E731
    a = simulate_ensemble(spec, f, 5, 30, seed=7, x0=[0.0, 1.0])
    b = simulate_ensemble(spec, f, 9, 30, seed=7, x0=[0.0, 1.0])
    np.testing.assert_array_equal(a.paths, b.paths[:, :5])
    c = simulate_ensemble(spec, f, 5, 30, seed=8, x0=[0.0, 1.0])
    assert not np.allclose(a.paths, c.paths)
    assert a.cm_paths.shape == (31, 5, 1)


def test_grid_guidance_and_escape():
    spec = build_system(1, 1.0, dt=0.01)
    g = ConfigGrid.uniform(-1, 1, 41)
    phi = GridField(g, 50.0 * g.coords(0), "drift_potential")
    with pytest.raises(EscapeError):
        simulate_ensemble(spec, StaticGuidance(phi), 200, 50, seed=1, x0=0.0)
    ens = simulate_ensemble(spec, StaticGuidance(phi), 200, 50, seed=1, x0=0.0, max_escape_fraction=1.0)
    assert ens.n_escaped > 0
    assert np.all(np.isnan(ens.paths[-1][ens.escaped]))


def test_static_guidance_needs_start_points():
    with pytest.raises(ValidationError):
        simulate_ensemble(build_system(1, 1.0), lambda x: x, 10, 1, seed=0)


def test_initial_sampling_matches_density():
    g = ConfigGrid.uniform(-8, 8, 801)
    x = g.coords(0)
    rho = GridField(g, np.exp(-x ** 2 / 2), "density").normalized()
    pos = sample_initial_positions(rho, 50_000, RandomStream(3))
    assert density_chi2_test(pos, rho).p_value > 0.001
    assert abs(pos.mean()) < 4 / math.sqrt(50_000)


def test_chi2_rejects_wrong_density():
    g = ConfigGrid.uniform(-8, 8, 801)
    x = g.coords(0)
    rho = GridField(g, np.exp(-x ** 2 / 2), "density").normalized()
    pos = RandomStream(4).generator().normal(0.2, 1.0, 10_000)
    assert density_chi2_test(pos, rho).p_value < 1e-6
    with pytest.raises(DesignError):
        density_chi2_test(pos[:20], rho, n_bins=10)


def test_equivariance_ground_state():
    spec = build_system(1, 1.0, dt=1e-3)
    g = ConfigGrid.uniform(-10, 10, 256, boundary="periodic")
    wf = madelung_compose(gaussian_state(g, 0.0, 0.0, math.sqrt(0.5)), 1.0)
    res = equivariance_check(spec, wf, PotentialSpec(v_ext=HARMONIC), 4000, 0.2, seed=5)
    assert res.passed(0.01)
    assert res.n_escaped == 0


def test_weighted_fit_exact_power_law():
    x = np.array([1.0, 10.0, 100.0, 1000.0])
    slope, se, icpt = weighted_loglog_fit(x, 3.0 * x ** -0.5, 0.01 * x ** -0.5)
    assert slope == pytest.approx(-0.5, abs=1e-12)
    assert icpt == pytest.approx(math.log(3.0), abs=1e-12)


def test_clt_small_study_and_thread_invariance():
    kw = dict(n_values=[10, 30, 100, 1000], n_samples=20_000, seed=11, drift_coefficient=1.0)
    a = clt_scaling_study(threads=1, **kw)
    b = clt_scaling_study(threads=3, **kw)
    assert a.slope == b.slope
    assert abs(a.slope + 0.5) < 4 * a.slope_stderr + 1e-3
    assert a.drift_p_value > 0.001
    for r in a.rows:
        assert abs(r.cm_std - r.expected_std) < 4 * r.stderr


@pytest.mark.parametrize("kw", [
    dict(n_values=[10, 100, 1000], n_samples=5000),
    dict(n_values=[10, 20, 30, 40], n_samples=5000),
    dict(n_values=[10, 100, 1000, 10000], n_samples=10),
])
def test_clt_design_errors(kw):
    with pytest.raises(DesignError):
        clt_scaling_study(seed=0, **kw)


def test_qpot_mass_scaling():
    g = ConfigGrid.uniform(-6, 6, 601)
    x = g.coords(0)
    rho = GridField(g, np.exp(-x ** 2 / 2), "density").normalized()
    study = qpotential_mass_scaling_study([1.0, 10.0, 100.0], rho)
    np.testing.assert_allclose([r.max_abs_vq for r in study.rows], [0.25, 0.025, 0.0025], rtol=1e-10)
    assert study.slope == pytest.approx(-1.0, abs=1e-12)
    assert math.isnan(qpotential_mass_scaling_study([1.0, 10.0], rho, xi=0.0).slope)


def test_qpot_requires_identical_shape():
    g = ConfigGrid.uniform(-6, 6, 61)
    x = g.coords(0)
    a = GridField(g, np.exp(-x ** 2 / 2), "density").normalized()
    b = GridField(g, np.exp(-x ** 2), "density").normalized()
    with pytest.raises(DesignError):
        qpotential_mass_scaling_study([1.0, 2.0], [a, b])


def test_core_max_abs_uses_core_only():
    rho = np.array([0.01, 0.5, 1.0, 0.5, 0.01])
    vals = np.array([100.0, 1.0, -2.0, 1.0, 100.0])
    assert core_max_abs(vals, rho) == 2.0


def test_classical_reference_harmonic():
    t = np.linspace(0, 2 * math.pi, 201)
    ref = classical_reference(2.0, Polynomial([0, 0, 1.0]), 1.0, 0.0, t, dt=1e-4)
    # M = 2, V = X^2 gives omega = 1
    np.testing.assert_allclose(ref.positions, np.cos(t), atol=1e-7)
    assert ref.max_energy_error < 1e-8


def test_classical_reference_free_and_callable():
    t = np.linspace(0, 1, 11)
    free = classical_reference(2.0, None, 0.5, 1.0, t)
    np.testing.assert_allclose(free.positions, 0.5 + 0.5 * t)
    cal = classical_reference(1.0, lambda X: 0.5 * X ** 2, 1.0, 0.0, t, dt=1e-4, grad=lambda X: X)
    np.testing.assert_allclose(cal.positions, np.cos(t), atol=1e-7)


def test_classical_reference_energy_tolerance():
    t = np.linspace(0, 10, 11)
    with pytest.raises(ToleranceError):
        classical_reference(1.0, HARMONIC, 1.0, 0.0, t, dt=0.5, energy_tol=1e-12)


def test_compare_paths():
    t = np.linspace(0, 1, 11)
    ref = classical_reference(1.0, None, 0.0, 1.0, t)
    cmp_ = compare_cm_vs_classical(t, t + 1e-3, ref)
    assert cmp_.max_deviation == pytest.approx(1e-3)


def test_small_joint_run_harmonic_product():
    spec, grid, pot, psi0, vext = classical_limit_case(4.0, "harmonic", n_grid=128, half_width=8.0)
    run = joint_cm_run(spec, psi0, pot, 0.1, record_every=50)
    ref = classical_reference(4.0, vext, 1.0, 0.0, run.times)
    assert compare_cm_vs_classical(run.times, run.mean_cm, ref).max_deviation < 1e-8
    assert run.mutual_information.max() < 1e-8
    assert run.norm_drift < 1e-10


def test_default_threads_env(monkeypatch):
    monkeypatch.setenv("EDLAB_THREADS", "3")
    assert default_threads() == 3
    monkeypatch.setenv("EDLAB_THREADS", "zero")
    with pytest.raises(ValidationError):
        default_threads()
    monkeypatch.delenv("EDLAB_THREADS")
    assert default_threads() == 1


def test_clt_single_particle_row():
    study = clt_scaling_study([1, 10, 100, 1000], 20_000, seed=3, mass=2.0, dt=1e-3)
    row = study.rows[0]
    assert row.n == 1
    assert row.expected_std == pytest.approx(math.sqrt(1e-3 / 2.0))
    assert abs(row.cm_std - row.expected_std) < 4 * row.stderr


def test_qpot_vanishes_without_xi():
    g = ConfigGrid.uniform(-6, 6, 121)
    x = g.coords(0)
    rho = GridField(g, np.exp(-x ** 2 / 2), "density").normalized()
    study = qpotential_mass_scaling_study([1.0, 10.0, 100.0], rho, xi=0.0)
    assert [r.max_abs_vq for r in study.rows] == [0.0, 0.0, 0.0]


def test_harmonic_period_and_long_run_energy():
    periods = 1000
    t = np.linspace(0, 2 * math.pi * periods, 100 * periods + 1)
    ref = classical_reference(1.0, HARMONIC, 1.0, 0.0, t, dt=1e-4)
    assert ref.max_energy_error < 1e-8
    x = ref.positions
    up = np.nonzero((x[:-1] < 0) & (x[1:] >= 0))[0]
    crossings = t[up] - x[up] * (t[up + 1] - t[up]) / (x[up + 1] - x[up])
    period = (crossings[-1] - crossings[0]) / (len(crossings) - 1)
    assert period == pytest.approx(2 * math.pi, abs=1e-6)


def test_free_particle_at_rest():
    t = np.linspace(0, 5, 51)
    ref = classical_reference(3.0, None, 0.4, 0.0, t)
    assert compare_cm_vs_classical(t, np.full(51, 0.4), ref).max_deviation == 0.0


def test_mean_path_converges_first_order_in_dt():
    # b = -x from x0 = 100: the Euler mean is x0 (1 - dt)^(1/dt) against x0 e^-1
    errors = []
    for dt in (0.1, 0.05, 0.025):
        spec = build_system(1, 1.0, dt=dt)
        ens = simulate_ensemble(spec, lambda x: -x, 20_000, round(1 / dt), seed=4, x0=100.0)
        errors.append(abs(ens.paths[-1, :, 0].mean() - 100 * math.exp(-1)))
    ratios = [errors[0] / errors[1], errors[1] / errors[2]]
    for r in ratios:
        assert 1.7 < r < 2.3
