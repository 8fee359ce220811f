from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.polynomial import Polynomial

from edlab.dynamics import (
    MadelungIntegrator,
    PotentialSpec,
    SchrodingerPropagator,
    Wavefunction,
    ensemble_hamiltonian,
    fp_residual,
    gaussian_packet,
    gaussian_state,
    hamilton_step,
    hamiltonian_terms,
    hj_residual,
    l2_distance,
    madelung_compose,
    madelung_decompose,
    quantum_potential,
    stability_limit,
    wavefunction_energy,
)
from edlab.errors import DomainError, InputError, StepSizeError, ValidationError
from edlab.system import ConfigGrid, EnsembleState, GridField, build_system, integrate

HARMONIC = PotentialSpec(v_ext=Polynomial([0.0, 0.0, 0.5]))


@pytest.fixture(scope="module")
def spec1():
    return build_system(1, 1.0)


@pytest.fixture(scope="module")
def grid1():
    return ConfigGrid.uniform(-10, 10, 256, boundary="periodic")


def test_potential_two_particles():
    spec = build_system(2, [1.0, 3.0])
    pot = PotentialSpec(Polynomial([0, 0, 1.0]), Polynomial([0, 0, 2.0]))
    x = np.array([[1.0, -1.0]])
    X = (1.0 - 3.0) / 4
    assert pot.evaluate(spec, x)[0] == pytest.approx(X ** 2 + 2 * 4.0)


def test_pair_potential_must_be_even():
    with pytest.raises(ValidationError):
        PotentialSpec(v_int=Polynomial([0, 1.0]))


def test_pair_sum_over_unordered_pairs():
    spec = build_system(3, 1.0)
    pot = PotentialSpec(v_int=lambda r: np.ones_like(r))
    assert pot.evaluate(spec, np.zeros((1, 3)))[0] == 3.0


def test_quantum_potential_gaussian(spec1):
    g = ConfigGrid.uniform(-6, 6, 241)
    x = g.coords(0)
    s = 0.9
    rho = GridField(g, np.exp(-x ** 2 / (2 * s ** 2)), "density").normalized()
    vq = quantum_potential(spec1, rho).values
    exact = 1 / (4 * s ** 2) - x ** 2 / (8 * s ** 4)
    np.testing.assert_allclose(vq, exact, atol=1e-9)


def test_ground_state_hamiltonian_is_half(spec1, grid1):
    state = gaussian_state(grid1, 0.0, 0.0, math.sqrt(0.5))
    terms = hamiltonian_terms(spec1, state, HARMONIC)
    assert terms["kinetic"] == pytest.approx(0.0, abs=1e-14)
    assert terms["potential"] == pytest.approx(0.25, rel=1e-10)
    assert terms["quantum"] == pytest.approx(0.25, rel=1e-8)
    assert ensemble_hamiltonian(spec1, state, HARMONIC) == pytest.approx(0.5, rel=1e-8)
    wf = madelung_compose(state, spec1.hbar)
    assert wavefunction_energy(spec1, wf, HARMONIC) == pytest.approx(0.5, rel=1e-10)


def test_moving_packet_kinetic_term(spec1, grid1):
    state = gaussian_state(grid1, 0.0, 0.8, 1.0)
    assert hamiltonian_terms(spec1, state)["kinetic"] == pytest.approx(0.32, rel=1e-12)


def test_spectral_free_packet_matches_analytic(spec1):
    # box wide enough that the periodic images do not overlap the tails
    g = ConfigGrid.uniform(-16, 16, 512, boundary="periodic")
    wf0 = gaussian_packet(g, 1.0, 1.0, -1.0, 0.7, 1.0)
    wf = SchrodingerPropagator(spec1, g, None, 0.01).step(wf0, 100)
    exact = gaussian_packet(g, 1.0, 1.0, -1.0, 0.7, 1.0, t=1.0)
    assert wf.time == pytest.approx(1.0)
    assert l2_distance(wf, exact) < 1e-10


def test_crank_nicolson_free_packet():
    spec = build_system(1, 1.0)
    g = ConfigGrid.uniform(-15, 15, 1201, boundary="reflecting")
    wf0 = gaussian_packet(g, 1.0, 1.0, 0.0, 0.5, 1.0)
    wf = SchrodingerPropagator(spec, g, None, 0.005).step(wf0, 200)
    exact = gaussian_packet(g, 1.0, 1.0, 0.0, 0.5, 1.0, t=1.0)
    assert l2_distance(wf, exact) < 1e-3
    assert wf.norm() == pytest.approx(1.0, abs=1e-10)


def test_free_packet_width(spec1):
    g = ConfigGrid.uniform(-12, 12, 512, boundary="periodic")
    wf = SchrodingerPropagator(spec1, g, None, 0.01).step(gaussian_packet(g, 1, 1, 0, 0, 1.0), 200)
    x = g.coords(0)
    rho = np.abs(wf.values) ** 2
    assert integrate(x ** 2 * rho, g) == pytest.approx(2.0, rel=1e-8)


def test_propagator_rejects_classical_xi(grid1):
    with pytest.raises(DomainError):
        SchrodingerPropagator(build_system(1, 1.0, xi=0.0), grid1)


def test_madelung_matches_schrodinger_harmonic(spec1):
    g = ConfigGrid.uniform(-10, 10, 512, boundary="periodic")
    state = gaussian_state(g, 1.0, 0.5, 0.9)
    dt = 2.5e-4
    assert dt <= stability_limit(spec1, g)
    final = MadelungIntegrator(spec1, g, HARMONIC, dt).run(state, 800)[-1]
    wf = SchrodingerPropagator(spec1, g, HARMONIC, dt).step(madelung_compose(state, 1.0), 800)
    assert l2_distance(madelung_compose(final, 1.0), wf) < 1e-6
    h0 = ensemble_hamiltonian(spec1, state, HARMONIC)
    assert ensemble_hamiltonian(spec1, final, HARMONIC) == pytest.approx(h0, rel=1e-6)
    assert integrate(final.rho) == pytest.approx(1.0, abs=1e-8)


def test_stability_bound_is_enforced(spec1, grid1):
    limit = stability_limit(spec1, grid1)
    assert limit == pytest.approx(0.2 * (20 / 256) ** 2)
    with pytest.raises(StepSizeError, match="stability bound"):
        MadelungIntegrator(spec1, grid1, None, 1.01 * limit)
    state = gaussian_state(grid1, 0, 0, 1.0)
    stepped = hamilton_step(spec1, state, None, limit)
    assert stepped.time == pytest.approx(limit)


def test_decompose_compose_roundtrip(spec1, grid1):
    wf = gaussian_packet(grid1, 1.0, 1.0, 0.5, 3.0, 1.2, t=0.3)
    diag: dict = {}
    state = madelung_decompose(wf, 1.0, diag)
    assert l2_distance(madelung_compose(state, 1.0), wf) < 1e-12
    # the unwrapped phase of a fast packet exceeds 2 pi across the support
    assert np.ptp(state.phi_big.values[~diag["mask"]]) > 2 * math.pi


def test_decompose_masks_nodes():
    g = ConfigGrid.uniform(-5, 5, 101, boundary="reflecting")
    x = g.coords(0)
    wf = Wavefunction.from_array(g, x * np.exp(-x ** 2 / 2), normalize=True)
    diag: dict = {}
    madelung_decompose(wf, 1.0, diag)
    assert diag["mask"][50]


def test_residuals_on_exact_evolution(spec1, grid1):
    s = math.sqrt(0.5)
    states = [gaussian_state(grid1, 0.0, 0.0, s, time=t, phase_offset=-0.5 * t) for t in (0.0, 0.01, 0.02)]
    hj = hj_residual(spec1, states, HARMONIC).values
    fp = fp_residual(spec1, states).values
    core = np.abs(grid1.coords(0)) < 3
    assert np.max(np.abs(hj[core])) < 1e-8
    assert np.max(np.abs(fp[core])) < 1e-8


def test_residuals_need_history(spec1, grid1):
    state = gaussian_state(grid1, 0, 0, 1.0)
    with pytest.raises(InputError):
        hj_residual(spec1, [state, state])
    with pytest.raises(InputError):
        fp_residual(spec1, [state, state, state])


@settings(max_examples=15, deadline=None)
@given(st.floats(-2, 2), st.floats(-3, 3), st.floats(0.5, 1.5))
def test_packet_norm_and_mean(x0, p0, sigma):
    g = ConfigGrid.uniform(-16, 16, 512, boundary="periodic")
    wf = gaussian_packet(g, 1.0, 1.0, x0, p0, sigma, t=0.5)
    assert wf.norm() == pytest.approx(1.0, abs=1e-9)
    mean = integrate(g.coords(0) * np.abs(wf.values) ** 2, g)
    assert mean == pytest.approx(x0 + 0.5 * p0, abs=1e-9)


def test_hamiltonian_reference_values(spec1, grid1):
    state = gaussian_state(grid1, 0.0, 0.0, 1.0)
    assert ensemble_hamiltonian(spec1, state) == pytest.approx(0.125, rel=1e-10)
    flat = EnsembleState.from_arrays(grid1, np.full(256, 1 / 20), np.zeros(256))
    assert ensemble_hamiltonian(spec1, flat) == pytest.approx(0.0, abs=1e-15)
    np.testing.assert_allclose(quantum_potential(spec1, flat.rho).values, 0.0, atol=1e-12)


def test_quantum_potential_linear_in_xi(grid1):
    rho = gaussian_state(grid1, 0.3, 0.0, 0.8).rho
    a = quantum_potential(build_system(1, 1.0, xi=0.1), rho).values
    b = quantum_potential(build_system(1, 1.0, xi=0.3), rho).values
    np.testing.assert_allclose(b, 3 * a, rtol=1e-12, atol=1e-14)


def test_quantum_potential_is_functional_derivative():
    # d(H_quantum)/d(rho_i) / w_i against V_Q(x_i) in the core
    spec = build_system(1, 1.0)
    g = ConfigGrid.uniform(-8, 8, 401, boundary="periodic")
    state = gaussian_state(g, 0.0, 0.0, 1.0)
    rho = state.rho.values
    vq = quantum_potential(spec, state.rho).values
    h = g.spacing[0]
    for i in (180, 200, 230):
        eps = 1e-6 * rho[i]
        vals = []
        for sgn in (1, -1):
            r = rho.copy()
            r[i] += sgn * eps
            s = EnsembleState(GridField(g, r, "density"), state.phi_big, tol=1.0)
            vals.append(hamiltonian_terms(spec, s)["quantum"])
        deriv = (vals[0] - vals[1]) / (2 * eps * h)
        assert deriv == pytest.approx(vq[i], abs=5e-3)


def test_ground_state_is_stationary(spec1, grid1):
    state = gaussian_state(grid1, 0.0, 0.0, math.sqrt(0.5))
    rho0 = state.rho.values
    for _ in range(100):
        state = hamilton_step(spec1, state, HARMONIC, 1e-3)
    assert np.max(np.abs(state.rho.values - rho0)) < 1e-6


def test_plane_wave_is_eigenstate(spec1):
    g = ConfigGrid.uniform(0, 2 * math.pi, 64, boundary="periodic")
    k = 3.0
    wf0 = Wavefunction.from_array(g, np.exp(1j * k * g.coords(0)), normalize=True)
    wf = SchrodingerPropagator(spec1, g, None, 0.01).step(wf0, 50)
    np.testing.assert_allclose(wf.values, wf0.values * np.exp(-1j * 0.5 * k ** 2 * 0.5), atol=1e-12)


def test_norm_after_thousand_steps(spec1, grid1):
    wf = madelung_compose(gaussian_state(grid1, 1.0, 0.5, 0.9), 1.0)
    wf = SchrodingerPropagator(spec1, grid1, HARMONIC, 1e-3).step(wf, 1000)
    assert wf.norm() == pytest.approx(1.0, abs=1e-8)


def test_decompose_phase_examples(grid1):
    x = grid1.coords(0)
    real = Wavefunction.from_array(grid1, np.exp(-x ** 2 / 4), normalize=True)
    np.testing.assert_array_equal(madelung_decompose(real, 1.0).phi_big.values, 0.0)
    p = 1.7
    moving = gaussian_packet(grid1, 1.0, 1.0, 0.0, p, 1.0)
    phase = madelung_decompose(moving, 1.0).phi_big.values
    core = np.abs(x) < 4
    offset = phase[core] - p * x[core]
    assert np.ptp(offset) < 1e-9


def test_residuals_converge_on_evolved_free_packet(spec1):
    maxima = []
    for n, dt in ((256, 0.02), (512, 0.01)):
        g = ConfigGrid.uniform(-12, 12, n, boundary="periodic")
        states = [madelung_decompose(gaussian_packet(g, 1.0, 1.0, 0.0, 0.6, 1.0, t=t), 1.0)
                  for t in (1 - dt, 1.0, 1 + dt)]
        core = np.abs(g.coords(0) - 0.6) < 3
        maxima.append([np.max(np.abs(hj_residual(spec1, states).values[core])),
                       np.max(np.abs(fp_residual(spec1, states).values[core]))])
    coarse, fine = maxima
    for c, f in zip(coarse, fine):
        assert f < 1e-3
        assert c / f > 3.0
