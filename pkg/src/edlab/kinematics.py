"""Short-step transition kernel, velocity fields and step sampling.

With alpha_n = m_n / (eta dt) the maximum-entropy kernel is a Gaussian with
mean b dt and covariance (eta / m_n) dt per coordinate.  Coordinates are
flattened as A = (n, a), spatial index fastest, everywhere in this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np
from numpy.random import Generator, Philox

from .errors import DegenerateDensityError, ShapeError, StatisticsError, ValidationError
from .stencils import gradient, log_density
from .system import DENSITY_FLOOR, EnsembleState, GridField, SystemSpec

_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class RandomStream:
    """Counter-based random stream keyed by (seed, stream_id).

    ``generator(block)`` returns a fresh Philox generator whose key is the
    pair and whose counter starts at ``block`` in the second counter word, so
    blocks never overlap and any (seed, stream_id, block) can be regenerated
    independently of scheduling.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if int(v) != v or not 0 <= v <= _U64:
                raise ValidationError(name, f"must be an unsigned 64-bit integer, got {v}")

    def generator(self, block: int = 0) -> Generator:
        return Generator(Philox(key=[self.seed, self.stream_id], counter=[0, int(block), 0, 0]))

    def child(self, stream_id: int) -> "RandomStream":
        return RandomStream(self.seed, stream_id)


@dataclass(frozen=True)
class StepSample:
    """Displacements Delta x = b dt + Delta w.

    Arrays have shape (..., N*d); a leading axis indexes independent draws.
    """

    drift_part: np.ndarray
    noise_part: np.ndarray

    @property
    def dx(self) -> np.ndarray:
        return self.drift_part + self.noise_part

    def __len__(self) -> int:
        return 1 if self.noise_part.ndim == 1 else self.noise_part.shape[0]


def _check_coords(spec: SystemSpec, v: np.ndarray, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[-1:] != (spec.n_coords,):
        raise ShapeError(f"{name} must have trailing length N*d = {spec.n_coords}, got {v.shape}")
    return v


def log_normalization(spec: SystemSpec) -> float:
    """log Z_N of the Gaussian short-step kernel."""
    var = spec.eta * spec.dt / spec.coord_masses()
    return 0.5 * float(np.sum(np.log(2 * math.pi * var)))


def transition_log_density(spec: SystemSpec, drift_mean, dx) -> np.ndarray | float:
    """log P(x'|x) for a step ``dx`` given the expected step ``drift_mean``.

    Both arguments have trailing length N*d and broadcast against each other.
    """
    drift_mean = _check_coords(spec, drift_mean, "drift_mean")
    dx = _check_coords(spec, dx, "dx")
    alpha = spec.coord_masses() / (spec.eta * spec.dt)
    quad = 0.5 * np.sum(alpha * (dx - drift_mean) ** 2, axis=-1)
    out = -quad - log_normalization(spec)
    return float(out) if np.ndim(out) == 0 else out


def drift_velocity(spec: SystemSpec, grad_phi) -> np.ndarray:
    """b^A = eta m^{AB} d_B phi."""
    grad_phi = _check_coords(spec, grad_phi, "grad_phi")
    return spec.eta * grad_phi / spec.coord_masses()


def _grid_masses(spec: SystemSpec, grid) -> np.ndarray:
    if grid.ndim != spec.n_coords:
        raise ShapeError(f"grid has {grid.ndim} axes but the system has N*d = {spec.n_coords}")
    return spec.coord_masses()


def osmotic_velocity(spec: SystemSpec, rho: GridField) -> GridField:
    """u^A = -eta m^{AB} d_B log rho^(1/2), by finite differences."""
    masses = _grid_masses(spec, rho.grid)
    if not np.any(rho.values > DENSITY_FLOOR):
        raise DegenerateDensityError("density is below the floor everywhere")
    logr, _ = log_density(rho.values)
    g = gradient(logr, rho.grid)
    u = -spec.eta * 0.5 * g / masses.reshape((-1,) + (1,) * rho.grid.ndim)
    return GridField(rho.grid, u, "velocity")


def current_velocity(spec: SystemSpec, state: EnsembleState) -> GridField:
    """v^A = m^{AB} d_B Phi."""
    masses = _grid_masses(spec, state.grid)
    g = gradient(state.phi_big.values, state.grid)
    return GridField(state.grid, g / masses.reshape((-1,) + (1,) * state.grid.ndim), "velocity")


def drift_velocity_field(spec: SystemSpec, phi_small: GridField) -> GridField:
    """Drift velocity b^A on a grid from a drift-potential field."""
    masses = _grid_masses(spec, phi_small.grid)
    g = gradient(phi_small.values, phi_small.grid)
    return GridField(phi_small.grid, spec.eta * g / masses.reshape((-1,) + (1,) * phi_small.grid.ndim),
                     "velocity")


def phase_from_drift(spec: SystemSpec, phi_small: GridField, rho: GridField,
                     diagnostics: dict | None = None) -> GridField:
    """Phi = eta phi - eta log rho^(1/2), node-wise.

    Nodes where rho is below the floor are clamped; their count is added to
    ``diagnostics["floor_clamped"]`` when a dict is supplied.
    """
    if phi_small.grid != rho.grid:
        raise ShapeError("phi and rho live on different grids")
    logr, clamped = log_density(rho.values)
    if diagnostics is not None:
        diagnostics["floor_clamped"] = diagnostics.get("floor_clamped", 0) + clamped
    return GridField(rho.grid, spec.eta * phi_small.values - 0.5 * spec.eta * logr, "phase")


def noise_scale(spec: SystemSpec) -> np.ndarray:
    """Per-coordinate standard deviation sqrt(eta dt / m_n) of Delta w."""
    return np.sqrt(spec.eta * spec.dt / spec.coord_masses())


def sample_steps(spec: SystemSpec, grad_phi, stream: RandomStream, n_samples: int,
                 step: int = 0) -> StepSample:
    """Draw ``n_samples`` independent steps from the kernel.

    ``grad_phi`` is either one gradient (N*d,) shared by all draws or one per
    draw (n_samples, N*d).
    """
    grad_phi = _check_coords(spec, grad_phi, "grad_phi")
    drift = np.broadcast_to(drift_velocity(spec, grad_phi) * spec.dt, (n_samples, spec.n_coords))
    z = stream.generator(step).standard_normal((n_samples, spec.n_coords))
    return StepSample(np.array(drift), z * noise_scale(spec))


def sample_step(spec: SystemSpec, grad_phi, stream: RandomStream, step: int = 0) -> StepSample:
    """One step Delta x = b dt + Delta w at the current point.

    The noise for (stream, step) is the first N*d normals of that block.
    """
    s = sample_steps(spec, grad_phi, stream, 1, step)
    return StepSample(s.drift_part[0], s.noise_part[0])


class StepMoments(NamedTuple):
    second_moment: np.ndarray  # <|Delta x_n|^2> per particle
    stderr: np.ndarray
    n_samples: int


def _stack_samples(samples) -> np.ndarray:
    if isinstance(samples, StepSample):
        dx = samples.dx
        return dx[None, :] if dx.ndim == 1 else dx
    return np.stack([np.asarray(s.dx if isinstance(s, StepSample) else s) for s in samples])


def empirical_step_moments(samples: StepSample | Sequence[StepSample], spatial_dim: int = 1,
                           min_samples: int = 1000) -> StepMoments:
    """Monte-Carlo estimate of <Delta x_n . Delta x_n> with standard errors."""
    dx = _stack_samples(samples)
    n = dx.shape[0]
    if n < min_samples:
        raise StatisticsError(f"need at least {min_samples} samples, got {n}")
    if dx.shape[1] % spatial_dim:
        raise ShapeError("sample length is not a multiple of spatial_dim")
    sq = np.sum(dx.reshape(n, -1, spatial_dim) ** 2, axis=-1)
    return StepMoments(sq.mean(axis=0), sq.std(axis=0, ddof=1) / math.sqrt(n), n)


class InformationMetric(NamedTuple):
    metric: np.ndarray  # C * Fisher information, shape (N*d, N*d)
    scale: float        # the factor C
    stderr: np.ndarray | None = None


def information_metric(
    spec: SystemSpec,
    method: str = "analytic",
    n_samples: int = 100_000,
    stream: RandomStream | None = None,
    grad_phi_fn: Callable[[np.ndarray], np.ndarray] | None = None,
    x0=None,
    min_samples: int = 10_000,
) -> InformationMetric:
    """Information metric of the short-step kernel, scaled by C = eta dt.

    ``method="analytic"`` uses the closed form Fisher information
    (m_n / eta dt) delta_AB.  ``method="mc"`` samples steps x' ~ P(x'|x0)
    and averages outer products of the score d log P(x'|x)/dx at x0, the
    score being taken by central differences of
    :func:`transition_log_density` in the starting point.  ``grad_phi_fn``
    (gradient of the drift potential, vectorized over leading axes) makes the
    kernel mean depend on x; without it phi = 0.
    """
    scale = spec.eta * spec.dt
    if method == "analytic":
        return InformationMetric(np.diag(spec.coord_masses() / spec.dt / spec.eta) * scale, scale)
    if method != "mc":
        raise ValidationError("method", f"unknown method {method!r}")
    if n_samples < min_samples:
        raise StatisticsError(f"Monte-Carlo metric needs at least {min_samples} samples, got {n_samples}")
    stream = stream or RandomStream(0)
    nc = spec.n_coords
    x0 = np.zeros(nc) if x0 is None else _check_coords(spec, x0, "x0")

    def mean_step(x):
        if grad_phi_fn is None:
            return np.zeros_like(x)
        return drift_velocity(spec, grad_phi_fn(x)) * spec.dt

    step = sample_steps(spec, np.zeros(nc) if grad_phi_fn is None else grad_phi_fn(x0), stream, n_samples)
    x_new = x0 + step.dx
    eps = 1e-3 * noise_scale(spec)
    score = np.empty((n_samples, nc))
    for a in range(nc):
        e = np.zeros(nc)
        e[a] = eps[a]
        lp = transition_log_density(spec, mean_step(x0 + e), x_new - (x0 + e))
        lm = transition_log_density(spec, mean_step(x0 - e), x_new - (x0 - e))
        score[:, a] = (lp - lm) / (2 * eps[a])
    outer = score[:, :, None] * score[:, None, :]
    fisher = outer.mean(axis=0)
    se = outer.std(axis=0, ddof=1) / math.sqrt(n_samples)
    return InformationMetric(fisher * scale, scale, se * scale)
