"""Stochastic trajectories, classical reference paths and scaling studies."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numba
import numpy as np
from numpy.polynomial import Polynomial
from scipy import stats
from scipy.ndimage import map_coordinates, spline_filter

from .cm import (
    cm_marginals,
    cm_quantum_potential,
    mutual_information_proxy,
    to_cm,
)
from .dynamics import PotentialSpec, SchrodingerPropagator, Wavefunction
from .errors import (
    DesignError,
    EscapeError,
    SchemeFailure,
    ShapeError,
    ToleranceError,
    ValidationError,
)
from .kinematics import RandomStream, noise_scale, sample_steps
from .stencils import d1
from .system import ConfigGrid, GridField, SystemSpec, build_system

# Abort a simulation when more than this fraction of trajectories leaves the grid.
MAX_ESCAPE_FRACTION = 0.01

# Largest number of normals drawn in one block of a sampling study.
CHUNK_ELEMENTS = 1 << 22

# Stream ids at or above this value are reserved for initial-position draws.
_INIT_STREAM = 1 << 63


def default_threads() -> int:
    env = os.environ.get("EDLAB_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValidationError("EDLAB_THREADS", f"not an integer: {env!r}") from None
        if n < 1:
            raise ValidationError("EDLAB_THREADS", "must be at least 1")
        return n
    return 1


# ------------------------------------------------------------------ guidance

class StaticGuidance:
    """Drift from a fixed drift potential phi.

    ``grad_phi`` is a callable mapping positions (..., N*d) to gradients of
    the same shape, or a drift-potential GridField on a joint grid whose
    finite-difference gradient is interpolated with cubic splines.
    """

    def __init__(self, grad_phi: Callable | GridField):
        self.grid = None
        if isinstance(grad_phi, GridField):
            self.grid = grad_phi.grid
            f = np.asarray(grad_phi.values, dtype=float)
            self._coeffs = [spline_filter(d1(f, h, a), order=3, mode="nearest")
                            for a, h in enumerate(self.grid.spacing)]
            self._fn = None
        elif callable(grad_phi):
            self._fn = grad_phi
        else:
            raise ValidationError("guidance", "expected a callable or a GridField")

    def drift(self, spec: SystemSpec, x: np.ndarray, t: float) -> np.ndarray:
        if self._fn is not None:
            g = np.asarray(self._fn(x), dtype=float)
        else:
            g = _interp_components(self.grid, self._coeffs, x)
        return spec.eta * g / spec.coord_masses()

    def advance(self, dt: float) -> None:
        pass


class CoEvolvedGuidance:
    """Drift b = v - u read off a wavefunction evolved alongside the paths.

    With Psi = rho^1/2 exp(i Phi/hbar): dPhi = hbar Im(dPsi/Psi) and
    d log rho^1/2 = Re(dPsi/Psi), so b = dPhi/m + (eta/m) d log rho^1/2.
    Spatial derivatives are spectral on periodic grids and finite
    differences otherwise; b is interpolated with cubic splines.
    """

    def __init__(self, spec: SystemSpec, wavefunction: Wavefunction, potential=None,
                 substeps: int = 1):
        if spec.n_coords > 3:
            raise ShapeError("co-evolved guidance needs N*d <= 3")
        if spec.hbar <= 0:
            raise ValidationError("xi", "co-evolved guidance needs hbar > 0")
        if substeps < 1:
            raise ValidationError("substeps", "must be at least 1")
        self.spec = spec
        self.grid = wavefunction.grid
        self.wavefunction = wavefunction
        self.substeps = substeps
        self._prop = SchrodingerPropagator(spec, self.grid, potential, spec.dt / substeps)
        self._coeffs = None

    def _refresh(self) -> None:
        grid = self.grid
        psi = np.asarray(self.wavefunction.values)
        inv_m = 1.0 / self.spec.coord_masses()
        mag2 = np.maximum(np.abs(psi) ** 2, 1e-300)
        coeffs = []
        for a, h in enumerate(grid.spacing):
            if grid.periodic:
                k = 2 * np.pi * np.fft.fftfreq(grid.shape[a], h)
                shape = [1] * grid.ndim
                shape[a] = -1
                dpsi = np.fft.ifft(1j * k.reshape(shape) * np.fft.fft(psi, axis=a), axis=a)
            else:
                dpsi = d1(psi, h, a)
            ratio = dpsi * np.conj(psi) / mag2
            b = inv_m[a] * (self.spec.hbar * ratio.imag + self.spec.eta * ratio.real)
            coeffs.append(spline_filter(b, order=3, mode="nearest"))
        self._coeffs = coeffs

    def drift(self, spec: SystemSpec, x: np.ndarray, t: float) -> np.ndarray:
        if self._coeffs is None:
            self._refresh()
        return _interp_components(self.grid, self._coeffs, x)

    def advance(self, dt: float) -> None:
        self.wavefunction = self._prop.step(self.wavefunction, self.substeps)
        self._coeffs = None


def _interp_components(grid: ConfigGrid, coeffs, x: np.ndarray) -> np.ndarray:
    idx = np.stack([(x[..., a] - grid.axes[a][0]) / grid.spacing[a] for a in range(grid.ndim)])
    return np.stack([map_coordinates(c, idx, order=3, mode="nearest", prefilter=False)
                     for c in coeffs], axis=-1)


# -------------------------------------------------------------- trajectories

@dataclass(frozen=True)
class TrajectoryEnsemble:
    """Sampled paths; ``paths`` has shape (n_steps + 1, n_traj, N*d).

    Escaped trajectories are NaN from the step at which they left the
    guidance grid on; summaries use the surviving ones.
    """

    spec: SystemSpec
    times: np.ndarray
    paths: np.ndarray
    escaped: np.ndarray
    seed: int

    @property
    def n_traj(self) -> int:
        return self.paths.shape[1]

    @property
    def n_steps(self) -> int:
        return self.paths.shape[0] - 1

    @property
    def n_escaped(self) -> int:
        return int(np.count_nonzero(self.escaped))

    @property
    def cm_paths(self) -> np.ndarray:
        """CM positions, shape (n_steps + 1, n_traj, d)."""
        return to_cm(self.spec, self.paths).x_cm

    def summary(self) -> dict[str, np.ndarray]:
        """Per-step mean and covariance of positions and CM std over survivors."""
        keep = ~self.escaped
        p = self.paths[:, keep, :]
        cm = self.cm_paths[:, keep, :]
        mean = p.mean(axis=1)
        c = p - mean[:, None, :]
        cov = np.einsum("tja,tjb->tab", c, c) / max(p.shape[1] - 1, 1)
        return {
            "mean": mean,
            "covariance": cov,
            "cm_mean": cm.mean(axis=1),
            "cm_std": cm.std(axis=1, ddof=1),
        }


def _noise_block(gens: list, n: int, nc: int) -> np.ndarray:
    out = np.empty((n, len(gens), nc))
    for j, g in enumerate(gens):
        out[:, j, :] = g.standard_normal((n, nc))
    return out


def sample_initial_positions(rho: GridField, n: int, stream: RandomStream) -> np.ndarray:
    """Inverse-CDF draws from a 1D grid density (piecewise-linear CDF)."""
    if rho.grid.ndim != 1:
        raise ShapeError("initial sampling from a grid density is implemented for 1D grids")
    x = rho.grid.coords(0)
    r = np.asarray(rho.values)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (r[1:] + r[:-1]) * np.diff(x))])
    cdf /= cdf[-1]
    u = stream.generator(0).random(n)
    return np.interp(u, cdf, x)[:, None]


def simulate_ensemble(spec: SystemSpec, guidance, n_traj: int, n_steps: int, seed: int,
                      x0=None, max_escape_fraction: float = MAX_ESCAPE_FRACTION) -> TrajectoryEnsemble:
    """Euler-Maruyama paths x_{k+1} = x_k + b(x_k, t_k) dt + dW_k.

    Trajectory j draws its noise sequentially from RandomStream(seed, j), so
    each path depends only on (seed, j) and the guidance.  ``x0`` is a single
    start point, one per trajectory, or None to draw from the initial
    density of a co-evolved guidance.
    """
    if n_traj < 1 or n_steps < 0:
        raise ValidationError("n_traj", "need n_traj >= 1 and n_steps >= 0")
    if not isinstance(guidance, (StaticGuidance, CoEvolvedGuidance)):
        guidance = StaticGuidance(guidance)
    nc = spec.n_coords
    if x0 is None:
        if not isinstance(guidance, CoEvolvedGuidance):
            raise ValidationError("x0", "start points are required for static guidance")
        x = sample_initial_positions(guidance.wavefunction.density(), n_traj,
                                     RandomStream(seed, _INIT_STREAM))
    else:
        x = np.array(np.broadcast_to(np.asarray(x0, dtype=float), (n_traj, nc)))
    dt = spec.dt
    scale = noise_scale(spec)
    paths = np.empty((n_steps + 1, n_traj, nc))
    paths[0] = x
    escaped = np.zeros(n_traj, dtype=bool)
    grid = guidance.grid
    if grid is not None:
        escaped |= ~grid.contains(x)
    gens = [RandomStream(seed, j).generator(0) for j in range(n_traj)]
    block = max(1, CHUNK_ELEMENTS // (n_traj * nc))
    noise = None
    for k in range(n_steps):
        if k % block == 0:
            noise = _noise_block(gens, min(block, n_steps - k), nc)
        live = ~escaped
        b = np.zeros_like(x)
        if live.any():
            b[live] = guidance.drift(spec, x[live], k * dt)
        x = x + b * dt + noise[k % block] * scale
        if grid is not None:
            escaped |= ~grid.contains(x)
        x[escaped] = np.nan
        paths[k + 1] = x
        guidance.advance(dt)
    if escaped.mean() > max_escape_fraction:
        raise EscapeError(f"{int(escaped.sum())} of {n_traj} trajectories left the guidance grid")
    return TrajectoryEnsemble(spec, dt * np.arange(n_steps + 1), paths, escaped, seed)


class EquivarianceResult(NamedTuple):
    chi2: float
    dof: int
    p_value: float
    n_used: int
    n_escaped: int

    def passed(self, alpha: float = 0.01) -> bool:
        return self.p_value > alpha


def density_chi2_test(positions: np.ndarray, rho: GridField, n_bins: int | None = None,
                      min_expected: float = 5.0) -> EquivarianceResult:
    """Pearson chi^2 of 1D sample positions against a grid density.

    Bins have equal probability under rho (piecewise-linear CDF); their
    number defaults to the largest one keeping every expected count >= 20.
    """
    if rho.grid.ndim != 1:
        raise ShapeError("chi^2 test is implemented for 1D densities")
    pos = np.asarray(positions, dtype=float).ravel()
    n_nan = int(np.count_nonzero(~np.isfinite(pos)))
    pos = pos[np.isfinite(pos)]
    n = pos.size
    if n_bins is None:
        n_bins = max(2, min(100, n // 20))
    if n / n_bins < min_expected:
        raise DesignError(f"{n} samples give fewer than {min_expected} expected per bin")
    x = rho.grid.coords(0)
    r = np.asarray(rho.values)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (r[1:] + r[:-1]) * np.diff(x))])
    cdf /= cdf[-1]
    u = np.interp(pos, x, cdf)
    counts = np.bincount(np.minimum((u * n_bins).astype(int), n_bins - 1), minlength=n_bins)
    expected = n / n_bins
    chi2 = float(np.sum((counts - expected) ** 2) / expected)
    dof = n_bins - 1
    return EquivarianceResult(chi2, dof, float(stats.chi2.sf(chi2, dof)), n, n_nan)


def equivariance_check(spec: SystemSpec, wavefunction: Wavefunction, potential, n_traj: int,
                       t_final: float, seed: int, n_bins: int | None = None) -> EquivarianceResult:
    """Co-evolve paths with Psi from rho(x, 0) and compare their histogram with rho(x, t_final)."""
    n_steps = int(round(t_final / spec.dt))
    if not math.isclose(n_steps * spec.dt, t_final, rel_tol=1e-9):
        raise ValidationError("t_final", "must be a whole number of time steps")
    guide = CoEvolvedGuidance(spec, wavefunction, potential)
    ens = simulate_ensemble(spec, guide, n_traj, n_steps, seed)
    return density_chi2_test(ens.paths[-1], guide.wavefunction.density(), n_bins)


# ------------------------------------------------------------------ studies

class CltRow(NamedTuple):
    n: int
    cm_std: float
    stderr: float
    drift: float
    drift_stderr: float
    expected_std: float
    expected_drift: float


@dataclass(frozen=True)
class CltStudy:
    rows: list[CltRow]
    slope: float
    slope_stderr: float
    ci95: tuple[float, float]
    drift_chi2: float
    drift_p_value: float


def clt_stream(seed: int, n: int, chunk: int) -> RandomStream:
    """Stream for block ``chunk`` of the N = ``n`` row of a CLT study."""
    return RandomStream(seed, (int(n) << 32) | int(chunk))


def _clt_row(spec: SystemSpec, grad: np.ndarray, n_samples: int, seed: int,
             pool: ThreadPoolExecutor | None) -> np.ndarray:
    n, d = spec.n_particles, spec.spatial_dim
    rows = max(1, CHUNK_ELEMENTS // (n * d))
    starts = list(range(0, n_samples, rows))
    m = np.asarray(spec.masses)
    M = spec.total_mass

    def one(ci):
        k = min(rows, n_samples - starts[ci])
        dx = sample_steps(spec, grad, clt_stream(seed, n, ci), k).dx.reshape(k, n, d)
        return np.einsum("n,knd->kd", m, dx) / M

    parts = list(pool.map(one, range(len(starts)))) if pool else [one(i) for i in range(len(starts))]
    return np.concatenate(parts)


def weighted_loglog_fit(x, y, y_stderr=None) -> tuple[float, float, float]:
    """Weighted least squares of log y on log x: (slope, slope stderr, intercept)."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    if y_stderr is None:
        w = np.ones_like(lx)
    else:
        sl = np.asarray(y_stderr, dtype=float) / np.asarray(y, dtype=float)
        w = 1.0 / sl ** 2
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    cov = np.linalg.inv(A.T @ (w[:, None] * A))
    beta = cov @ (A.T @ (w * ly))
    return float(beta[0]), float(math.sqrt(cov[0, 0])), float(beta[1])


def clt_scaling_study(n_values: Sequence[int], n_samples: int, seed: int, mass: float = 1.0,
                      eta: float = 1.0, xi: float = 0.125, dt: float = 1e-3, spatial_dim: int = 1,
                      drift_coefficient: float = 0.0, threads: int | None = None) -> CltStudy:
    """One-step CM fluctuation and drift versus N for i.i.d. particles.

    Each particle takes one kernel step under phi = c * sum_n x_n; the CM
    step is projected and its std (pooled over spatial axes) fitted
    against N in log-log space with weights from the standard errors.
    """
    n_values = [int(n) for n in n_values]
    if len(n_values) < 4 or len(set(n_values)) < 4:
        raise DesignError("need at least 4 distinct N values")
    if max(n_values) / min(n_values) < 100:
        raise DesignError("N values must span at least two decades")
    if n_samples < 1000:
        raise DesignError("need at least 1000 samples per N")
    threads = threads or default_threads()
    rows = []
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        for n in n_values:
            spec = build_system(n, mass, eta, xi, dt, spatial_dim)
            grad = np.full(spec.n_coords, drift_coefficient)
            dX = _clt_row(spec, grad, n_samples, seed, pool).ravel()
            k = dX.size
            std = float(dX.std(ddof=1))
            kurt = float(np.mean((dX - dX.mean()) ** 4)) / std ** 4
            se = std * math.sqrt(max(kurt - 1.0, 0.0) / (4 * k))
            expected_drift = eta * dt * drift_coefficient / mass
            rows.append(CltRow(n, std, se, float(dX.mean()), std / math.sqrt(k),
                               math.sqrt(eta * dt / (n * mass)), expected_drift))
    finally:
        if pool:
            pool.shutdown()
    slope, slope_se, _ = weighted_loglog_fit([r.n for r in rows], [r.cm_std for r in rows],
                                             [r.stderr for r in rows])
    drifts = np.array([r.drift for r in rows])
    dse = np.array([r.drift_stderr for r in rows])
    w = 1 / dse ** 2
    wmean = float(np.sum(w * drifts) / np.sum(w))
    chi2 = float(np.sum(w * (drifts - wmean) ** 2))
    p = float(stats.chi2.sf(chi2, len(rows) - 1))
    return CltStudy(rows, slope, slope_se, (slope - 1.96 * slope_se, slope + 1.96 * slope_se), chi2, p)


class QpotRow(NamedTuple):
    mass: float
    max_abs_vq: float


@dataclass(frozen=True)
class QpotStudy:
    rows: list[QpotRow]
    slope: float


def core_max_abs(values: np.ndarray, rho: np.ndarray) -> float:
    """max |values| over the core rho >= rho_max / e."""
    core = rho >= np.max(rho) * math.exp(-1.0)
    return float(np.max(np.abs(values[core])))


def qpotential_mass_scaling_study(masses: Sequence[float], rho_cm: GridField | Sequence[GridField],
                                  xi: float = 0.125, eta: float = 1.0) -> QpotStudy:
    """max |V_Q_CM| over the core of a fixed rho_CM, for each total mass M.

    The log-log slope is an ordinary least-squares fit; it is NaN when any
    value is zero (xi = 0).
    """
    masses = [float(m) for m in masses]
    if isinstance(rho_cm, GridField):
        shapes = [rho_cm] * len(masses)
    else:
        shapes = list(rho_cm)
        if len(shapes) != len(masses):
            raise DesignError("need one density per mass")
        ref = shapes[0]
        for s in shapes[1:]:
            if s.grid != ref.grid or not np.array_equal(s.values, ref.values):
                raise DesignError("rho_CM shape must be identical across masses")
    if len(masses) < 2:
        raise DesignError("need at least two masses")
    rows = []
    for M, rho in zip(masses, shapes):
        spec = build_system(1, M, eta, xi, 1.0, rho.grid.ndim)
        vq = cm_quantum_potential(spec, rho)
        rows.append(QpotRow(M, core_max_abs(vq.values, rho.values)))
    vals = np.array([r.max_abs_vq for r in rows])
    if np.any(vals <= 0):
        slope = math.nan
    else:
        slope = weighted_loglog_fit(masses, vals)[0]
    return QpotStudy(rows, slope)


# ----------------------------------------------------------- classical paths

@dataclass(frozen=True)
class ClassicalPath:
    times: np.ndarray
    positions: np.ndarray
    momenta: np.ndarray
    mass: float
    max_energy_error: float = 0.0  # max |E - E0| / max(|E0|, 1e-300) over all steps

    def energy(self, v_ext=None) -> np.ndarray:
        pot = 0.0 if v_ext is None else np.asarray(v_ext(self.positions), dtype=float)
        return self.momenta ** 2 / (2 * self.mass) + pot


@numba.njit(cache=True)
def _horner(c, x):
    acc = 0.0
    for i in range(c.shape[0] - 1, -1, -1):
        acc = acc * x + c[i]
    return acc


@numba.njit(cache=True)
def _verlet_poly(vc, fc, M, x, p, h, n_sub, n_out):
    xs = np.empty(n_out + 1)
    ps = np.empty(n_out + 1)
    xs[0] = x
    ps[0] = p
    e0 = p * p / (2 * M) + _horner(vc, x)
    worst = 0.0
    f = -_horner(fc, x)
    for k in range(n_out):
        for _ in range(n_sub):
            p += 0.5 * h * f
            x += h * p / M
            f = -_horner(fc, x)
            p += 0.5 * h * f
            e = p * p / (2 * M) + _horner(vc, x)
            err = abs(e - e0)
            if err > worst:
                worst = err
        xs[k + 1] = x
        ps[k + 1] = p
    return xs, ps, worst, e0


def classical_reference(M: float, v_ext, X0: float, P0: float, t_grid, dt: float | None = None,
                        grad: Callable | None = None, energy_tol: float | None = None) -> ClassicalPath:
    """Velocity-Verlet integration of M X'' = -V_ext'(X) on a uniform t_grid.

    ``v_ext`` may be None (free motion), a numpy Polynomial (compiled
    kernel) or a callable; callables need ``grad`` or fall back to a
    central difference.  ``dt`` is the internal step (default: the t_grid
    spacing, refined to divide it).  With ``energy_tol`` the relative energy
    drift per unit time is checked and ToleranceError raised if exceeded.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size < 2:
        raise ShapeError("t_grid must be a 1D array with at least two times")
    spacing = np.diff(t)
    if not np.allclose(spacing, spacing[0], rtol=1e-9, atol=0) or spacing[0] <= 0:
        raise ShapeError("t_grid must be uniform and increasing")
    if not M > 0:
        raise ValidationError("M", "mass must be positive")
    out_dt = float(spacing[0])
    n_sub = 1 if dt is None else max(1, math.ceil(out_dt / dt - 1e-9))
    h = out_dt / n_sub
    n_out = t.size - 1
    if v_ext is None:
        v_ext = Polynomial([0.0])
    if isinstance(v_ext, Polynomial):
        vc = np.asarray(v_ext.convert().coef, dtype=float)
        fc = np.asarray(v_ext.deriv().convert().coef, dtype=float) if vc.size > 1 else np.zeros(1)
        xs, ps, worst, e0 = _verlet_poly(vc, fc, float(M), float(X0), float(P0), h, n_sub, n_out)
    else:
        if grad is None:
            def grad(x):
                e = 1e-6 * (1.0 + abs(x))
                return (v_ext(x + e) - v_ext(x - e)) / (2 * e)
        xs = np.empty(n_out + 1)
        ps = np.empty(n_out + 1)
        x, p = float(X0), float(P0)
        xs[0], ps[0] = x, p
        e0 = p * p / (2 * M) + float(v_ext(x))
        worst = 0.0
        f = -float(grad(x))
        for k in range(n_out):
            for _ in range(n_sub):
                p += 0.5 * h * f
                x += h * p / M
                f = -float(grad(x))
                p += 0.5 * h * f
                worst = max(worst, abs(p * p / (2 * M) + float(v_ext(x)) - e0))
            xs[k + 1], ps[k + 1] = x, p
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ps))):
        raise SchemeFailure("classical integration diverged; reduce the step")
    rel = worst / max(abs(e0), 1e-300)
    if energy_tol is not None:
        duration = max(t[-1] - t[0], 1.0)
        if rel / duration > energy_tol:
            raise ToleranceError(f"energy drift {rel:.3g} over t={t[-1] - t[0]:g} exceeds {energy_tol:g} "
                                 f"per unit time; reduce dt={h:g}")
    return ClassicalPath(t, xs, ps, float(M), rel)


class CmComparison(NamedTuple):
    max_deviation: float
    rms_deviation: float
    max_abs_vq_cm: float


def compare_cm_vs_classical(times, mean_path, ref: ClassicalPath, max_abs_vq_cm: float = math.nan
                            ) -> CmComparison:
    """Max and RMS deviation of the quantum CM mean path from a classical path."""
    t = np.asarray(times, dtype=float)
    mp = np.asarray(mean_path, dtype=float)
    if t.shape != ref.times.shape or not np.allclose(t, ref.times, rtol=0, atol=1e-12):
        raise ShapeError("quantum and classical time grids differ")
    if mp.shape != t.shape:
        raise ShapeError("mean path and time grid lengths differ")
    dev = np.abs(mp - ref.positions)
    return CmComparison(float(dev.max()), float(math.sqrt(np.mean(dev ** 2))), float(max_abs_vq_cm))


# -------------------------------------------------------- joint CM evolution

@dataclass(frozen=True)
class JointCmRun:
    times: np.ndarray
    mean_cm: np.ndarray
    mutual_information: np.ndarray
    max_abs_vq_cm: float
    norm_drift: float
    energy_drift: float = math.nan
    extras: dict = field(default_factory=dict)


def product_wavefunction(spec: SystemSpec, grid: ConfigGrid, X0: float, P0: float, sigma_cm: float,
                         sigma_rel: float) -> Wavefunction:
    """Gaussian product state: CM packet (density std sigma_cm, momentum P0)
    times a relative packet in r = x_1 - x_2 (density std sigma_rel)."""
    if spec.n_particles != 2 or spec.spatial_dim != 1:
        raise ShapeError("product wavefunction helper is for N = 2, d = 1")
    x1, x2 = grid.mesh()
    X = to_cm(spec, np.stack([x1, x2], axis=-1)).x_cm[..., 0]
    r = x1 - x2
    psi = np.exp(-(X - X0) ** 2 / (4 * sigma_cm ** 2) + 1j * P0 * X / spec.hbar
                 - r ** 2 / (4 * sigma_rel ** 2))
    return Wavefunction.from_array(grid, psi, normalize=True)


def joint_cm_run(spec: SystemSpec, wavefunction: Wavefunction, potential: PotentialSpec,
                 t_final: float, record_every: int = 50, mi_every: int | None = None) -> JointCmRun:
    """Evolve an N = 2 joint wavefunction and record <X>(t) at every step.

    The mutual-information proxy and max |V_Q_CM| (over the core of the
    resampled rho_CM) are evaluated every ``mi_every`` steps (default
    ``record_every``) and at the final time.
    """
    if spec.n_particles != 2 or spec.spatial_dim != 1:
        raise ShapeError("joint CM runs need N = 2, d = 1")
    n_steps = int(round(t_final / spec.dt))
    if n_steps < 1 or not math.isclose(n_steps * spec.dt, t_final, rel_tol=1e-9):
        raise ValidationError("t_final", "must be a positive whole number of time steps")
    mi_every = mi_every or record_every
    grid = wavefunction.grid
    prop = SchrodingerPropagator(spec, grid, potential, spec.dt)
    x1, x2 = grid.mesh()
    X = to_cm(spec, np.stack([x1, x2], axis=-1)).x_cm[..., 0]
    w = grid.quadrature_weights()
    psi = np.asarray(wavefunction.values)
    means = [float(np.sum(X * np.abs(psi) ** 2 * w))]
    mis, vqs = [], []

    def diagnostics(p):
        rho = GridField(grid, np.abs(p) ** 2, "density")
        mis.append(mutual_information_proxy(spec, rho))
        cm_g, _, _, r_cm, _ = cm_marginals(spec, rho)
        vq = cm_quantum_potential(spec, GridField(cm_g, r_cm, "density"))
        vqs.append(core_max_abs(vq.values, r_cm))

    diagnostics(psi)
    for k in range(1, n_steps + 1):
        psi = prop.step_array(psi)
        means.append(float(np.sum(X * np.abs(psi) ** 2 * w)))
        if k % mi_every == 0 or k == n_steps:
            diagnostics(psi)
    norm = float(np.sum(np.abs(psi) ** 2 * w))
    return JointCmRun(spec.dt * np.arange(n_steps + 1), np.array(means), np.array(mis),
                      float(max(vqs)), abs(norm - wavefunction.norm()))


def classical_limit_case(total_mass: float, kind: str, n_grid: int = 448, half_width: float = 14.0,
                         X0: float = 1.0, P0: float = 0.0, sigma_cm: float = 0.25,
                         sigma_rel: float = 0.4, dt: float = 1e-3, xi: float = 0.125):
    """Two equal masses M/2 in V_ext = M X^2/2 ("harmonic") or M X^4/4
    ("quartic") plus a harmonic bond whose ground state has relative
    density std ``sigma_rel``.  Returns (spec, grid, potential, psi0, v_ext)."""
    if kind not in ("harmonic", "quartic"):
        raise ValidationError("kind", f"unknown potential kind {kind!r}")
    m = total_mass / 2
    spec = build_system(2, [m, m], 1.0, xi, dt)
    hbar = spec.hbar
    mu = m / 2
    omega_r = hbar / (2 * mu * sigma_rel ** 2)
    if kind == "harmonic":
        v_ext = Polynomial([0.0, 0.0, total_mass / 2])
    else:
        v_ext = Polynomial([0.0, 0.0, 0.0, 0.0, total_mass / 4])
    v_int = Polynomial([0.0, 0.0, 0.5 * mu * omega_r ** 2])
    grid = ConfigGrid.uniform(-half_width, half_width, n_grid, 2, boundary="periodic")
    pot = PotentialSpec(v_ext=v_ext, v_int=v_int)
    psi0 = product_wavefunction(spec, grid, X0, P0, sigma_cm, sigma_rel)
    return spec, grid, pot, psi0, v_ext
