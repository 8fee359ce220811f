from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from edlab.errors import ShapeError, StatisticsError, ValidationError
from edlab.kinematics import (
    RandomStream,
    current_velocity,
    drift_velocity,
    empirical_step_moments,
    information_metric,
    log_normalization,
    noise_scale,
    osmotic_velocity,
    phase_from_drift,
    sample_step,
    sample_steps,
    transition_log_density,
)
from edlab.system import ConfigGrid, EnsembleState, GridField, build_system


def test_kernel_is_normalized():
    spec = build_system(1, 2.0, dt=0.01)
    dx = np.linspace(-1, 1, 4001)[:, None]
    p = np.exp(transition_log_density(spec, [0.03], dx))
    assert np.trapezoid(p, dx[:, 0]) == pytest.approx(1.0, abs=1e-10)


def test_log_normalization_closed_form():
    spec = build_system(2, [1.0, 4.0], dt=0.1, spatial_dim=2)
    var = np.array([0.1, 0.1, 0.025, 0.025])
    assert log_normalization(spec) == pytest.approx(0.5 * np.sum(np.log(2 * math.pi * var)))


def test_transition_density_peaks_at_mean():
    spec = build_system(1, 1.0)
    assert transition_log_density(spec, [0.1], [0.1]) > transition_log_density(spec, [0.1], [0.0])
    with pytest.raises(ShapeError):
        transition_log_density(spec, [0.1, 0.2], [0.1, 0.2])


def test_drift_velocity_scales_inverse_mass():
    spec = build_system(2, [1.0, 4.0], eta=2.0)
    np.testing.assert_allclose(drift_velocity(spec, [1.0, 1.0]), [2.0, 0.5])


def test_osmotic_velocity_of_gaussian():
    spec = build_system(1, 2.0, eta=1.5)
    g = ConfigGrid.uniform(-6, 6, 241)
    x = g.coords(0)
    s = 0.8
    rho = GridField(g, np.exp(-x ** 2 / (2 * s ** 2)), "density").normalized()
    u = osmotic_velocity(spec, rho).values[0]
    np.testing.assert_allclose(u, 1.5 * x / (2 * 2.0 * s ** 2), atol=1e-10)


def test_current_velocity_of_plane_wave():
    spec = build_system(1, 2.0)
    g = ConfigGrid.uniform(-5, 5, 64, boundary="periodic")
    state = EnsembleState.from_arrays(g, np.full(64, 0.1), 0.7 * g.coords(0))
    np.testing.assert_allclose(current_velocity(spec, state).values[0], 0.35)


def test_phase_from_drift_counts_clamped_nodes():
    spec = build_system(1, 1.0)
    g = ConfigGrid.uniform(-1, 1, 16)
    rho = np.ones(16)
    rho[:3] = 0.0
    diag: dict = {}
    phase_from_drift(spec, GridField(g, np.zeros(16), "drift_potential"),
                     GridField(g, rho, "density"), diag)
    assert diag["floor_clamped"] == 3


def test_random_stream_reproducible_and_distinct():
    a = RandomStream(7, 3).generator(0).standard_normal(5)
    b = RandomStream(7, 3).generator(0).standard_normal(5)
    c = RandomStream(7, 4).generator(0).standard_normal(5)
    d = RandomStream(7, 3).generator(1).standard_normal(5)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)
    assert not np.allclose(a, d)
    with pytest.raises(ValidationError):
        RandomStream(-1)


def test_sample_step_is_first_draw_of_block():
    spec = build_system(3, 1.0, spatial_dim=2)
    s = RandomStream(11)
    one = sample_step(spec, np.zeros(6), s, step=4)
    many = sample_steps(spec, np.zeros(6), s, 10, step=4)
    np.testing.assert_array_equal(one.dx, many.dx[0])


def test_step_second_moment_matches_kernel():
    spec = build_system(2, [1.0, 5.0], dt=0.01, spatial_dim=3)
    grad = np.full(6, 2.0)
    s = sample_steps(spec, grad, RandomStream(5), 200_000)
    mom = empirical_step_moments(s, spatial_dim=3)
    b = drift_velocity(spec, grad).reshape(2, 3) * spec.dt
    expected = 3 * spec.eta * spec.dt / np.array([1.0, 5.0]) + np.sum(b ** 2, axis=1)
    assert np.all(np.abs(mom.second_moment - expected) < 4 * mom.stderr)


def test_moments_need_enough_samples():
    spec = build_system(1, 1.0)
    s = sample_steps(spec, [0.0], RandomStream(1), 10)
    with pytest.raises(StatisticsError):
        empirical_step_moments(s)


def test_information_metric_analytic_is_mass_tensor():
    spec = build_system(2, [1.0, 3.0], dt=0.02, spatial_dim=2)
    g = information_metric(spec)
    np.testing.assert_allclose(g.metric, np.diag(spec.coord_masses()))
    assert g.scale == pytest.approx(spec.eta * spec.dt)


def test_information_metric_mc_within_two_percent():
    spec = build_system(2, [1.0, 3.0], dt=0.01)
    g = information_metric(spec, "mc", 100_000, RandomStream(3))
    np.testing.assert_allclose(np.diag(g.metric), [1.0, 3.0], rtol=0.02)
    assert abs(g.metric[0, 1]) < 4 * g.stderr[0, 1]


def test_information_metric_mc_independent_of_drift():
    spec = build_system(1, 2.0, dt=0.01)
    g = information_metric(spec, "mc", 50_000, RandomStream(4), grad_phi_fn=lambda x: 0.5 * x)
    assert g.metric[0, 0] == pytest.approx(2.0, rel=0.03)


def test_information_metric_rejects_small_samples():
    with pytest.raises(StatisticsError):
        information_metric(build_system(1, 1.0), "mc", 100)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 10), st.floats(1e-4, 0.1))
def test_noise_scale_formula(m, dt):
    spec = build_system(1, m, dt=dt)
    assert noise_scale(spec)[0] == pytest.approx(math.sqrt(dt / m))


def test_log_density_reference_values():
    spec = build_system(1, 1.0, eta=1.0, dt=1.0)
    assert transition_log_density(spec, [0.0], [1.0]) == pytest.approx(-0.5 - math.log(math.sqrt(2 * math.pi)))
    assert transition_log_density(spec, [0.3], [0.3]) == pytest.approx(-log_normalization(spec))


def test_drift_reference_values():
    assert drift_velocity(build_system(1, 2.0), [3.0])[0] == pytest.approx(1.5)
    assert drift_velocity(build_system(1, 2.0, eta=2.0), [3.0])[0] == pytest.approx(3.0)
    np.testing.assert_array_equal(drift_velocity(build_system(2, 1.0), [0.0, 0.0]), 0.0)


def test_osmotic_reference_values():
    spec = build_system(1, 1.0)
    g = ConfigGrid.uniform(-6, 6, 121)
    x = g.coords(0)
    u = osmotic_velocity(spec, GridField(g, np.exp(-x ** 2 / 2), "density").normalized()).values[0]
    assert u[70] == pytest.approx(0.5, abs=1e-12)  # x = 1
    np.testing.assert_allclose(u, -u[::-1], atol=1e-12)
    flat = osmotic_velocity(spec, GridField(g, np.full(121, 1 / 12), "density")).values
    np.testing.assert_allclose(flat, 0.0, atol=1e-12)


def test_current_velocity_equals_drift_plus_osmotic():
    spec = build_system(1, 2.0, eta=1.3)
    g = ConfigGrid.uniform(-6, 6, 121)
    x = g.coords(0)
    rho = GridField(g, np.exp(-x ** 2 / 2 + 0.1 * x ** 3 / 10), "density").normalized()
    phi = GridField(g, np.sin(x), "drift_potential")
    phase = phase_from_drift(spec, phi, rho)
    state = EnsembleState(rho, phase)
    from edlab.kinematics import drift_velocity_field

    v = current_velocity(spec, state).values
    bu = drift_velocity_field(spec, phi).values + osmotic_velocity(spec, rho).values
    np.testing.assert_allclose(v[:, 1:-1], bu[:, 1:-1], atol=1e-8)
    const = EnsembleState(rho, GridField(g, np.full(121, 2.0), "phase"))
    np.testing.assert_allclose(current_velocity(spec, const).values, 0.0)


def test_phase_from_drift_reference_values():
    g = ConfigGrid.uniform(-6, 6, 121)
    x = g.coords(0)
    rho = GridField(g, np.exp(-x ** 2 / 2), "density").normalized()
    zero = GridField(g, np.zeros(121), "drift_potential")
    phase = phase_from_drift(build_system(1, 1.0), zero, rho).values
    c = phase[60]  # x = 0
    assert phase[80] - c == pytest.approx(1.0, abs=1e-12)  # x = 2
    doubled = phase_from_drift(build_system(1, 1.0, eta=2.0), zero, rho).values
    np.testing.assert_allclose(doubled - doubled[60], 2 * (phase - c), atol=1e-12)
    flat = GridField(g, np.full(121, 1 / 12), "density")
    assert np.ptp(phase_from_drift(build_system(1, 1.0), zero, flat).values) == 0.0


def test_noise_moments_million_draws():
    spec = build_system(1, 1.0, dt=1e-3)
    s = sample_steps(spec, [0.0], RandomStream(21), 1_000_000)
    w = s.noise_part[:, 0]
    assert abs(w.mean()) < 3 * w.std() / 1000
    assert w.var() == pytest.approx(1e-3, rel=0.01)
    np.testing.assert_array_equal(s.dx, s.drift_part + s.noise_part)


def test_moment_examples():
    spec = build_system(1, 1.0, dt=1e-3, spatial_dim=3)
    mom = empirical_step_moments(sample_steps(spec, np.zeros(3), RandomStream(2), 100_000), 3)
    assert abs(mom.second_moment[0] - 3e-3) < 4 * mom.stderr[0]
    half = spec.replace(dt=5e-4)
    mom2 = empirical_step_moments(sample_steps(half, np.zeros(3), RandomStream(2), 100_000), 3)
    assert mom2.second_moment[0] == pytest.approx(mom.second_moment[0] / 2, rel=1e-12)


def test_single_mass_metric():
    spec = build_system(1, [2.0], eta=1.0, dt=0.01)
    assert information_metric(spec).metric[0, 0] == pytest.approx(2.0)
    mc = information_metric(spec, "mc", 100_000, RandomStream(8))
    assert mc.metric[0, 0] == pytest.approx(2.0, rel=0.02)
