from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from edlab.errors import DomainError, ShapeError, ValidationError
from edlab.system import (
    ConfigGrid,
    EnsembleState,
    GridField,
    build_system,
    integrate,
    planck_from_xi,
)


def test_hbar_from_xi():
    assert planck_from_xi(0.125) == pytest.approx(1.0)
    assert build_system(1, 1.0).hbar == pytest.approx(1.0)
    with pytest.raises(DomainError):
        planck_from_xi(-1.0)


def test_scalar_mass_broadcast_and_totals():
    spec = build_system(4, 2.5)
    assert spec.masses == (2.5,) * 4
    assert spec.total_mass == 10.0
    assert spec.mean_mass == 2.5


def test_coord_masses_spatial_index_fastest():
    spec = build_system(2, [1.0, 3.0], spatial_dim=3)
    assert spec.n_coords == 6
    np.testing.assert_array_equal(spec.coord_masses(), [1, 1, 1, 3, 3, 3])
    np.testing.assert_allclose(np.diag(spec.inverse_mass_tensor()), 1 / spec.coord_masses())


@pytest.mark.parametrize("kwargs, field", [
    ({"masses": [1.0, -1.0]}, "masses"),
    ({"masses": [1.0, 0.0]}, "masses"),
    ({"masses": [1.0, math.inf]}, "masses"),
    ({"n_particles": 3, "masses": [1.0, 2.0]}, "masses"),
    ({"n_particles": 0}, "n_particles"),
    ({"eta": 0.0}, "eta"),
    ({"xi": -0.1}, "xi"),
    ({"dt": 0.0}, "dt"),
    ({"spatial_dim": 0}, "spatial_dim"),
])
def test_build_system_rejects(kwargs, field):
    with pytest.raises(ValidationError) as err:
        build_system(**kwargs)
    assert err.value.field == field
    assert field in str(err.value)


def test_replace_revalidates():
    spec = build_system(1, 1.0)
    assert spec.replace(xi=0.5).hbar == pytest.approx(2.0)
    with pytest.raises(ValidationError):
        spec.replace(dt=-1.0)


def test_grid_periodic_excludes_upper_end():
    g = ConfigGrid.uniform(-1.0, 1.0, 10, boundary="periodic")
    assert g.spacing == (0.2,)
    assert g.coords(0)[-1] == pytest.approx(0.8)
    r = ConfigGrid.uniform(-1.0, 1.0, 11, boundary="reflecting")
    assert r.coords(0)[-1] == pytest.approx(1.0)


@pytest.mark.parametrize("axes", [[], [(0.0, 1.0, 4)], [(1.0, 0.0, 16)]])
def test_grid_rejects_bad_axes(axes):
    with pytest.raises(ValidationError):
        ConfigGrid(tuple(axes))


def test_grid_memory_cap():
    with pytest.raises(ValidationError, match="memory cap"):
        ConfigGrid(((0, 1, 1000),) * 3, max_nodes=10**6)


def test_integrate_gaussian_both_rules():
    for boundary, n in (("periodic", 256), ("reflecting", 257)):
        g = ConfigGrid.uniform(-10, 10, n, boundary=boundary)
        x = g.coords(0)
        rho = np.exp(-x ** 2 / 2) / math.sqrt(2 * math.pi)
        assert integrate(rho, g) == pytest.approx(1.0, abs=1e-12)


def test_integrate_needs_matching_grid():
    g = ConfigGrid.uniform(0, 1, 16)
    with pytest.raises(ShapeError):
        integrate(np.ones(8), g)
    with pytest.raises(ShapeError):
        integrate(np.ones(16))


def test_density_field_checks():
    g = ConfigGrid.uniform(0, 1, 16)
    with pytest.raises(ValidationError):
        GridField(g, -np.ones(16), "density")
    with pytest.raises(ShapeError):
        GridField(g, np.ones(15), "density")
    f = GridField(g, np.ones(16), "density")
    assert not f.values.flags.writeable


def test_ensemble_state_requires_normalization():
    g = ConfigGrid.uniform(-5, 5, 64, boundary="periodic")
    rho = np.full(64, 0.1)
    EnsembleState.from_arrays(g, rho, np.zeros(64))
    with pytest.raises(ValidationError):
        EnsembleState.from_arrays(g, 2 * rho, np.zeros(64))
    bad_phase = np.zeros(64)
    bad_phase[3] = np.nan
    with pytest.raises(ValidationError):
        EnsembleState.from_arrays(g, rho, bad_phase)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.01, 100.0), min_size=1, max_size=6))
def test_total_mass_is_sum(masses):
    spec = build_system(len(masses), masses)
    assert spec.total_mass == pytest.approx(sum(masses))
    assert spec.n_coords == len(masses)


def test_two_particle_reference_spec():
    spec = build_system(2, [1.0, 1.0], eta=1.0, xi=0.125, dt=1e-3)
    assert (spec.total_mass, spec.mean_mass, spec.hbar) == (2.0, 1.0, 1.0)
    single = build_system(1, [3.0])
    assert (single.total_mass, single.mean_mass) == (3.0, 3.0)


@pytest.mark.parametrize("xi, hbar", [(0.125, 1.0), (0.0, 0.0), (2.0, 4.0)])
def test_planck_values(xi, hbar):
    assert planck_from_xi(xi) == pytest.approx(hbar)


def test_integrate_reference_cases():
    g = ConfigGrid.uniform(0, 1, 101)
    assert integrate(np.ones(101), g) == pytest.approx(1.0, abs=1e-12)
    p = ConfigGrid.uniform(-10, 10, 512, boundary="periodic")
    x = p.coords(0)
    assert integrate(np.exp(-x ** 2 / 2) / math.sqrt(2 * math.pi), p) == pytest.approx(1.0, abs=1e-8)
    s = ConfigGrid.uniform(-3, 3, 61)
    assert integrate(s.coords(0) ** 3, s) == pytest.approx(0.0, abs=1e-12)
