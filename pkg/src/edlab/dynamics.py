"""Coupled (rho, Phi) dynamics and the equivalent Schroedinger evolution.

Two independent propagators live here:

* :func:`hamilton_step` integrates the Hamilton pair directly,
  d rho/dt = -d_A(rho m^{AB} d_B Phi) and
  d Phi/dt = -(1/2 m^{AB} d_A Phi d_B Phi + V + V_Q),
  with finite differences and classical RK4.  It works internally with
  l = log rho, in which Gaussian states are quadratic polynomials and the
  second-order stencils are exact.
* :class:`SchrodingerPropagator` evolves Psi = rho^(1/2) exp(i Phi / hbar)
  by Strang-split Fourier stepping (periodic grids) or Crank-Nicolson
  (reflecting grids, hard walls beyond the end nodes).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import (
    DegenerateDensityError,
    DomainError,
    InputError,
    SchemeFailure,
    ShapeError,
    StepSizeError,
    ValidationError,
)
from .stencils import d1, d2, gradient, log_density
from .system import (
    DENSITY_FLOOR,
    ConfigGrid,
    EnsembleState,
    GridField,
    SystemSpec,
    integrate,
)

# Madelung tails: nodes with rho < TAIL_THRESHOLD * max(rho) are slaved to a
# quadratic fit of (log rho, Phi) over the rim band just above the threshold.
TAIL_THRESHOLD = 1e-16
TAIL_RIM_FACTOR = 1e4

# Explicit Madelung stepping requires dt_sub <= STABILITY_FACTOR * m_min dx^2 / hbar.
STABILITY_FACTOR = 0.2


@dataclass(frozen=True)
class PotentialSpec:
    """V(x) = V_ext(X) + sum_{n<l} V_int(xhat_n - xhat_l).

    Callables receive coordinate arrays; for d = 1 the trailing spatial axis
    is dropped, so plain numpy polynomials work as potentials.  With a single
    particle only ``v_ext`` contributes, evaluated at the particle position.
    ``v_int`` must be even in its argument.
    """

    v_ext: Callable | None = None
    v_int: Callable | None = None

    def __post_init__(self):
        if self.v_int is not None:
            r = np.linspace(0.1, 2.3, 7)
            if not np.allclose(self.v_int(r), self.v_int(-r), rtol=1e-12, atol=1e-12):
                raise ValidationError("v_int", "pair potential must be symmetric under r -> -r")

    def evaluate(self, spec: SystemSpec, x: np.ndarray) -> np.ndarray:
        """V at positions x of shape (..., N*d)."""
        x = np.asarray(x, dtype=float)
        n, d = spec.n_particles, spec.spatial_dim
        pos = x.reshape(x.shape[:-1] + (n, d))
        m = np.asarray(spec.masses).reshape((n, 1))
        com = np.sum(m * pos, axis=-2) / spec.total_mass
        out = np.zeros(x.shape[:-1])

        def arg(a):
            return a[..., 0] if d == 1 else a

        if self.v_ext is not None:
            out = out + self.v_ext(arg(com))
        if self.v_int is not None:
            for i, j in itertools.combinations(range(n), 2):
                # xhat_i - xhat_j = x_i - x_j
                out = out + self.v_int(arg(pos[..., i, :] - pos[..., j, :]))
        return out

    def on_grid(self, spec: SystemSpec, grid: ConfigGrid) -> GridField:
        if grid.ndim != spec.n_coords:
            raise ShapeError(f"grid has {grid.ndim} axes, system needs {spec.n_coords}")
        pts = np.stack(grid.mesh(), axis=-1)
        return GridField(grid, self.evaluate(spec, pts), "potential")


def _potential_values(spec: SystemSpec, grid: ConfigGrid, potential) -> np.ndarray:
    if potential is None:
        return np.zeros(grid.shape)
    if isinstance(potential, PotentialSpec):
        return potential.on_grid(spec, grid).values
    if isinstance(potential, GridField):
        if potential.grid != grid:
            raise ShapeError("potential lives on a different grid")
        return potential.values
    v = np.asarray(potential, dtype=float)
    if v.shape != grid.shape:
        raise ShapeError(f"potential of shape {v.shape} does not match grid {grid.shape}")
    return v


@dataclass(frozen=True)
class Wavefunction:
    psi: GridField
    time: float = 0.0
    tol: float = field(default=1e-8, repr=False, compare=False)

    def __post_init__(self):
        if self.psi.kind != "wavefunction":
            raise ValidationError("psi", "expected a wavefunction field")
        norm = integrate(self.psi.with_values(np.abs(self.psi.values) ** 2, "density"))
        if abs(norm - 1.0) > self.tol:
            raise ValidationError("psi", f"norm {norm!r} differs from 1 by more than {self.tol}")

    @property
    def grid(self) -> ConfigGrid:
        return self.psi.grid

    @property
    def values(self) -> np.ndarray:
        return self.psi.values

    @classmethod
    def from_array(cls, grid: ConfigGrid, psi: np.ndarray, time: float = 0.0,
                   normalize: bool = False, tol: float = 1e-8) -> "Wavefunction":
        psi = np.asarray(psi, dtype=complex)
        if normalize:
            psi = psi / math.sqrt(integrate(np.abs(psi) ** 2, grid))
        return cls(GridField(grid, psi, "wavefunction"), time, tol)

    def norm(self) -> float:
        return integrate(np.abs(self.values) ** 2, self.grid)

    def density(self) -> GridField:
        return GridField(self.grid, np.abs(self.values) ** 2, "density")


def gaussian_packet(grid: ConfigGrid, masses, hbar: float, center, momentum, sigma,
                    t: float = 0.0) -> Wavefunction:
    """Freely evolved Gaussian packet, a product over configuration axes.

    ``sigma`` is the initial standard deviation of |Psi|^2 along each axis;
    at time t it is sigma^2 + (hbar t / (2 m sigma))^2.
    """
    nd = grid.ndim
    masses, center, momentum, sigma = (np.broadcast_to(np.asarray(v, dtype=float), (nd,))
                                       for v in (masses, center, momentum, sigma))
    psi = np.ones(grid.shape, dtype=complex)
    for a, xa in enumerate(grid.mesh()):
        m, x0, p0, s0 = masses[a], center[a], momentum[a], sigma[a]
        tau = hbar * t / (2 * m * s0 ** 2) if hbar > 0 else 0.0
        z = 1 + 1j * tau
        psi = psi * ((2 * math.pi * s0 ** 2) ** -0.25 / np.sqrt(z)
                     * np.exp(-(xa - x0 - p0 * t / m) ** 2 / (4 * s0 ** 2 * z)
                              + 1j * (p0 * xa - p0 ** 2 * t / (2 * m)) / hbar))
    return Wavefunction.from_array(grid, psi, time=t, tol=1e-6)


def gaussian_state(grid: ConfigGrid, center, momentum, sigma, time: float = 0.0,
                   phase_offset: float = 0.0) -> EnsembleState:
    """(rho, Phi) of a Gaussian with density std ``sigma`` and Phi = p.x + offset."""
    nd = grid.ndim
    center, momentum, sigma = (np.broadcast_to(np.asarray(v, dtype=float), (nd,))
                               for v in (center, momentum, sigma))
    logr = np.zeros(grid.shape)
    phase = np.full(grid.shape, float(phase_offset))
    for a, xa in enumerate(grid.mesh()):
        logr += -(xa - center[a]) ** 2 / (2 * sigma[a] ** 2) - 0.5 * math.log(2 * math.pi * sigma[a] ** 2)
        phase += momentum[a] * xa
    return EnsembleState.from_arrays(grid, np.exp(logr), phase, time)


def _inverse_masses(spec: SystemSpec, grid: ConfigGrid) -> np.ndarray:
    if grid.ndim != spec.n_coords:
        raise ShapeError(f"grid has {grid.ndim} axes, system needs N*d = {spec.n_coords}")
    return 1.0 / spec.coord_masses()


def _quantum_potential_from_log(spec: SystemSpec, grid: ConfigGrid, logr: np.ndarray) -> np.ndarray:
    # (d^2 rho^1/2) / rho^1/2 = 1/2 d^2 l + 1/4 (d l)^2 with l = log rho
    inv_m = _inverse_masses(spec, grid)
    out = np.zeros(grid.shape)
    for a, h in enumerate(grid.spacing):
        out += inv_m[a] * (0.5 * d2(logr, h, a) + 0.25 * d1(logr, h, a) ** 2)
    return -4.0 * spec.xi * out


def quantum_potential(spec: SystemSpec, rho: GridField) -> GridField:
    """V_Q = -4 xi m^{AB} (d_A d_B rho^(1/2)) / rho^(1/2)."""
    if not np.any(rho.values > DENSITY_FLOOR):
        raise DegenerateDensityError("density is below the floor everywhere")
    logr, _ = log_density(rho.values)
    return GridField(rho.grid, _quantum_potential_from_log(spec, rho.grid, logr), "potential")


def hamiltonian_terms(spec: SystemSpec, state: EnsembleState, potential=None) -> dict[str, float]:
    """Kinetic, potential and quantum parts of the ensemble Hamiltonian."""
    grid = state.grid
    inv_m = _inverse_masses(spec, grid)
    rho = state.rho.values
    if not np.any(rho > DENSITY_FLOOR):
        raise DegenerateDensityError("density is below the floor everywhere")
    logr, _ = log_density(rho)
    gphi = gradient(state.phi_big.values, grid)
    glog = gradient(logr, grid)
    kin = 0.5 * rho * np.einsum("a,a...->...", inv_m, gphi ** 2)
    # (1/rho)(d rho)^2 = rho (d log rho)^2
    qnt = spec.xi * rho * np.einsum("a,a...->...", inv_m, glog ** 2)
    pot = rho * _potential_values(spec, grid, potential)
    return {
        "kinetic": integrate(kin, grid),
        "potential": integrate(pot, grid),
        "quantum": integrate(qnt, grid),
    }


def ensemble_hamiltonian(spec: SystemSpec, state: EnsembleState, potential=None) -> float:
    """H[rho, Phi] = int 1/2 rho m^{AB} dPhi dPhi + rho V + xi m^{AB} d rho d rho / rho."""
    return math.fsum(hamiltonian_terms(spec, state, potential).values())


def stability_limit(spec: SystemSpec, grid: ConfigGrid) -> float:
    """Largest dt_sub accepted by :func:`hamilton_step`."""
    hbar = spec.hbar
    if hbar == 0:
        return math.inf
    return STABILITY_FACTOR * min(spec.masses) * min(grid.spacing) ** 2 / hbar


def _quadratic_design(points: np.ndarray) -> np.ndarray:
    cols = [np.ones(len(points))]
    nd = points.shape[1]
    cols += [points[:, a] for a in range(nd)]
    cols += [points[:, a] * points[:, b] for a in range(nd) for b in range(a, nd)]
    return np.stack(cols, axis=1)


def _close_tails(grid: ConfigGrid, logr: np.ndarray, phase: np.ndarray,
                 threshold: float = TAIL_THRESHOLD) -> tuple[np.ndarray, np.ndarray]:
    """Replace far-tail values of (log rho, Phi) by a quadratic rim fit."""
    rel = logr - logr.max()
    tail = rel < math.log(threshold)
    if not tail.any():
        return logr, phase
    rim = ~tail & (rel < math.log(threshold * TAIL_RIM_FACTOR))
    n_terms = 1 + grid.ndim + grid.ndim * (grid.ndim + 1) // 2
    if np.count_nonzero(rim) < 3 * n_terms:
        return logr, phase
    pts = np.stack([m for m in grid.mesh()], axis=-1)
    A = _quadratic_design(pts[rim])
    coef, *_ = np.linalg.lstsq(A, np.stack([logr[rim], phase[rim]], axis=1), rcond=None)
    fill = _quadratic_design(pts[tail]) @ coef
    logr = logr.copy()
    phase = phase.copy()
    logr[tail] = fill[:, 0]
    phase[tail] = fill[:, 1]
    return logr, phase


class MadelungIntegrator:
    """RK4 integrator for (log rho, Phi) on a fixed grid and potential."""

    def __init__(self, spec: SystemSpec, grid: ConfigGrid, potential=None, dt_sub: float = 1e-3,
                 check_stability: bool = True, close_tails: bool = True):
        if not dt_sub > 0:
            raise DomainError(f"dt_sub must be positive, got {dt_sub}")
        limit = stability_limit(spec, grid)
        if check_stability and dt_sub > limit:
            raise StepSizeError(
                f"dt_sub={dt_sub:g} exceeds the stability bound 0.2*min(m)*dx^2/hbar = {limit:g}"
            )
        self.spec = spec
        self.grid = grid
        self.dt = dt_sub
        self.inv_m = _inverse_masses(spec, grid)
        self.V = _potential_values(spec, grid, potential)
        self.close_tails = close_tails

    def rhs(self, logr: np.ndarray, phase: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        dl = np.zeros_like(logr)
        kin = np.zeros_like(phase)
        for a, h in enumerate(self.grid.spacing):
            gl = d1(logr, h, a)
            gp = d1(phase, h, a)
            # d_t rho = -d(rho v)  <=>  d_t l = -(dl . v + div v)
            dl -= self.inv_m[a] * (gl * gp + d2(phase, h, a))
            kin += 0.5 * self.inv_m[a] * gp ** 2
        vq = _quantum_potential_from_log(self.spec, self.grid, logr)
        return dl, -(kin + self.V + vq)

    def step(self, logr: np.ndarray, phase: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        h = self.dt
        k1 = self.rhs(logr, phase)
        k2 = self.rhs(logr + 0.5 * h * k1[0], phase + 0.5 * h * k1[1])
        k3 = self.rhs(logr + 0.5 * h * k2[0], phase + 0.5 * h * k2[1])
        k4 = self.rhs(logr + h * k3[0], phase + h * k3[1])
        logr = logr + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        phase = phase + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        if self.close_tails:
            logr, phase = _close_tails(self.grid, logr, phase)
        if not (np.all(np.isfinite(logr)) and np.all(np.isfinite(phase))):
            raise SchemeFailure("Madelung step produced non-finite values")
        return logr, phase

    def run(self, state: EnsembleState, n_steps: int,
            every: int | None = None) -> list[EnsembleState]:
        """Advance ``n_steps``; returns the states recorded every ``every`` steps
        (always including the initial and final state)."""
        logr, _ = log_density(state.rho.values)
        phase = np.array(state.phi_big.values, dtype=float)
        t0 = state.time
        out = [state]
        for i in range(1, n_steps + 1):
            logr, phase = self.step(logr, phase)
            if (every and i % every == 0) or i == n_steps:
                out.append(self._to_state(logr, phase, t0 + i * self.dt))
        return out

    def _to_state(self, logr, phase, t) -> EnsembleState:
        rho = np.exp(logr)
        try:
            return EnsembleState.from_arrays(self.grid, rho, phase, t)
        except ValidationError as exc:
            raise SchemeFailure(f"Madelung state invalid at t={t:g}: {exc}") from exc


def hamilton_step(spec: SystemSpec, state: EnsembleState, potential=None,
                  dt_sub: float = 1e-3) -> EnsembleState:
    """Advance the Hamilton pair (rho, Phi) by one RK4 step of size ``dt_sub``."""
    integ = MadelungIntegrator(spec, state.grid, potential, dt_sub)
    return integ.run(state, 1)[-1]


class SchrodingerPropagator:
    """i hbar dPsi/dt = -(hbar^2/2) m^{AB} d_A d_B Psi + V Psi.

    Periodic grids: Strang splitting V/2 - T - V/2 with exact Fourier
    kinetic factors.  Reflecting grids: Crank-Nicolson with the second-order
    Laplacian and Psi = 0 beyond the end nodes.
    """

    def __init__(self, spec: SystemSpec, grid: ConfigGrid, potential=None, dt_sub: float = 1e-3):
        if not dt_sub > 0:
            raise DomainError(f"dt_sub must be positive, got {dt_sub}")
        hbar = spec.hbar
        if hbar <= 0:
            raise DomainError("Schroedinger evolution needs hbar > 0 (xi > 0)")
        self.spec, self.grid, self.dt, self.hbar = spec, grid, dt_sub, hbar
        inv_m = _inverse_masses(spec, grid)
        V = _potential_values(spec, grid, potential)
        if grid.periodic:
            self._half = np.exp(-0.5j * V * dt_sub / hbar)
            ks = np.meshgrid(*(2 * np.pi * np.fft.fftfreq(n, h) for n, h in zip(grid.shape, grid.spacing)),
                             indexing="ij")
            t_k = 0.5 * hbar * sum(w * k ** 2 for w, k in zip(inv_m, ks))
            self._kin = np.exp(-1j * t_k * dt_sub)
        else:
            H = self._hamiltonian_matrix(inv_m, V)
            eye = sp.identity(H.shape[0], format="csc", dtype=complex)
            a = 0.5j * dt_sub / hbar
            self._lhs = splu((eye + a * H).tocsc())
            self._rhs = (eye - a * H).tocsr()

    def _hamiltonian_matrix(self, inv_m, V):
        grid = self.grid
        ops = []
        for a, (n, h) in enumerate(zip(grid.shape, grid.spacing)):
            lap = sp.diags([np.ones(n - 1), -2 * np.ones(n), np.ones(n - 1)], [-1, 0, 1]) / h ** 2
            term = None
            for b, nb in enumerate(grid.shape):
                blk = lap if b == a else sp.identity(nb)
                term = blk if term is None else sp.kron(term, blk)
            ops.append(-0.5 * self.hbar ** 2 * inv_m[a] * term)
        return (sum(ops) + sp.diags(V.ravel())).astype(complex)

    def step_array(self, psi: np.ndarray, n_steps: int = 1) -> np.ndarray:
        if self.grid.periodic:
            axes = tuple(range(self.grid.ndim))
            for _ in range(n_steps):
                psi = self._half * np.fft.ifftn(self._kin * np.fft.fftn(self._half * psi, axes=axes),
                                                axes=axes)
            return psi
        flat = psi.ravel()
        for _ in range(n_steps):
            flat = self._lhs.solve(self._rhs @ flat)
        return flat.reshape(self.grid.shape)

    def step(self, wf: Wavefunction, n_steps: int = 1) -> Wavefunction:
        if wf.grid != self.grid:
            raise ShapeError("wavefunction lives on a different grid")
        psi = self.step_array(np.asarray(wf.values), n_steps)
        return Wavefunction(GridField(self.grid, psi, "wavefunction"), wf.time + n_steps * self.dt, wf.tol)


def schrodinger_step(spec: SystemSpec, wavefunction: Wavefunction, potential=None,
                     dt_sub: float = 1e-3) -> Wavefunction:
    """One propagation step of size ``dt_sub``."""
    return SchrodingerPropagator(spec, wavefunction.grid, potential, dt_sub).step(wavefunction)


def _unwrap_from_reference(psi: np.ndarray, ref: tuple[int, ...]) -> np.ndarray:
    """Phase of psi integrated from node ``ref`` along axes 0, 1, ... in turn."""
    phase = np.zeros(psi.shape)
    phase[ref] = np.angle(psi[ref])
    # fill line through ref along axis 0, then sweep the remaining axes
    filled = [slice(ref[a], ref[a] + 1) for a in range(psi.ndim)]
    for a in range(psi.ndim):
        filled[a] = slice(None)
        sub = psi[tuple(filled)]
        # increments between neighbours along axis a, wrapped to (-pi, pi]
        inc = np.angle(np.take(sub, range(1, sub.shape[a]), axis=a)
                       * np.conj(np.take(sub, range(0, sub.shape[a] - 1), axis=a)))
        base_idx = list(filled)
        base_idx[a] = slice(ref[a], ref[a] + 1)
        base = phase[tuple(base_idx)]
        fwd = np.cumsum(np.take(inc, range(ref[a], sub.shape[a] - 1), axis=a), axis=a)
        bwd = -np.cumsum(np.flip(np.take(inc, range(0, ref[a]), axis=a), axis=a), axis=a)
        line = np.concatenate([np.flip(bwd, axis=a) + base, base, fwd + base], axis=a)
        phase[tuple(filled)] = line
    return phase


def madelung_decompose(wavefunction: Wavefunction, hbar: float,
                       diagnostics: dict | None = None) -> EnsembleState:
    """rho = |Psi|^2 and Phi = hbar * (unwrapped arg Psi).

    The phase is integrated outward from the node of largest |Psi|.  Nodes
    where |Psi|^2 is below the density floor, or where a neighbour increment
    is ambiguous (|dphase| > 0.9 pi, i.e. a sign change across a node of
    Psi), are reported in ``diagnostics["mask"]``/``["masked_nodes"]``.
    """
    psi = np.asarray(wavefunction.values)
    rho = np.abs(psi) ** 2
    if not np.any(rho > DENSITY_FLOOR):
        raise DegenerateDensityError("wavefunction vanishes everywhere")
    ref = np.unravel_index(np.argmax(rho), rho.shape)
    phase = _unwrap_from_reference(psi, ref)
    mask = rho < DENSITY_FLOOR
    for a in range(psi.ndim):
        inc = np.angle(np.take(psi, range(1, psi.shape[a]), axis=a)
                       * np.conj(np.take(psi, range(0, psi.shape[a] - 1), axis=a)))
        bad = np.abs(inc) > 0.9 * math.pi
        pad = [(0, 0)] * psi.ndim
        pad[a] = (1, 0)
        mask |= np.pad(bad, pad)
        pad[a] = (0, 1)
        mask |= np.pad(bad, pad)
    if diagnostics is not None:
        diagnostics["mask"] = mask
        diagnostics["masked_nodes"] = int(np.count_nonzero(mask))
    grid = wavefunction.grid
    return EnsembleState(GridField(grid, rho, "density"), GridField(grid, hbar * phase, "phase"),
                         wavefunction.time, tol=max(wavefunction.tol, 1e-6))


def madelung_compose(state: EnsembleState, hbar: float) -> Wavefunction:
    """Psi = rho^(1/2) exp(i Phi / hbar)."""
    if hbar <= 0:
        raise DomainError("composition needs hbar > 0")
    psi = np.sqrt(state.rho.values) * np.exp(1j * state.phi_big.values / hbar)
    return Wavefunction(GridField(state.grid, psi, "wavefunction"), state.time, tol=max(state.tol, 1e-8))


def l2_distance(a: Wavefunction | np.ndarray, b: Wavefunction | np.ndarray,
                grid: ConfigGrid | None = None) -> float:
    """L2 norm of the difference of two wavefunctions on the same grid."""
    if isinstance(a, Wavefunction):
        grid = a.grid
        a = a.values
    if isinstance(b, Wavefunction):
        if grid is not None and b.grid != grid:
            raise ShapeError("wavefunctions live on different grids")
        grid = b.grid
        b = b.values
    return math.sqrt(integrate(np.abs(np.asarray(a) - np.asarray(b)) ** 2, grid))


def wavefunction_energy(spec: SystemSpec, wavefunction: Wavefunction, potential=None) -> float:
    """<Psi|H|Psi>; Fourier kinetic energy on periodic grids, finite differences otherwise."""
    grid = wavefunction.grid
    inv_m = _inverse_masses(spec, grid)
    psi = np.asarray(wavefunction.values)
    hbar = spec.hbar
    if grid.periodic:
        axes = tuple(range(grid.ndim))
        pk = np.fft.fftn(psi, axes=axes)
        kin = 0.0
        for a, (n, h) in enumerate(zip(grid.shape, grid.spacing)):
            k = 2 * np.pi * np.fft.fftfreq(n, h)
            shape = [1] * grid.ndim
            shape[a] = -1
            dpsi = np.fft.ifftn(1j * k.reshape(shape) * pk, axes=axes)
            kin += 0.5 * hbar ** 2 * inv_m[a] * integrate(np.abs(dpsi) ** 2, grid)
    else:
        kin = sum(0.5 * hbar ** 2 * inv_m[a] * integrate(np.abs(d1(psi, h, a)) ** 2, grid)
                  for a, h in enumerate(grid.spacing))
    pot = integrate(np.abs(psi) ** 2 * _potential_values(spec, grid, potential), grid)
    return float(kin + pot)


def _history(states: Sequence[EnsembleState]):
    if len(states) < 3:
        raise InputError(f"need at least 3 consecutive states, got {len(states)}")
    k = len(states) // 2
    prev, mid, nxt = states[k - 1], states[k], states[k + 1]
    if not (prev.grid == mid.grid == nxt.grid):
        raise ShapeError("history states live on different grids")
    dt_a, dt_b = mid.time - prev.time, nxt.time - mid.time
    if not dt_a > 0 or not math.isclose(dt_a, dt_b, rel_tol=1e-9):
        raise InputError("history must be equally spaced in time")
    return prev, mid, nxt, dt_a


def _align_phase(phase: np.ndarray, ref: np.ndarray, hbar: float) -> np.ndarray:
    # remove 2 pi hbar branch jumps between time slices
    if hbar <= 0:
        return phase
    period = 2 * math.pi * hbar
    return phase - period * np.round((phase - ref) / period)


def hj_residual(spec: SystemSpec, states: Sequence[EnsembleState], potential=None) -> GridField:
    """-dPhi/dt - (1/2 m^{AB} dPhi dPhi + V + V_Q) at the middle history slice.

    The time derivative is a central difference over the neighbouring slices.
    """
    prev, mid, nxt, dt = _history(states)
    grid = mid.grid
    hbar = spec.hbar
    p_prev = _align_phase(prev.phi_big.values, mid.phi_big.values, hbar)
    p_next = _align_phase(nxt.phi_big.values, mid.phi_big.values, hbar)
    dphi_dt = (p_next - p_prev) / (2 * dt)
    inv_m = _inverse_masses(spec, grid)
    g = gradient(mid.phi_big.values, grid)
    kin = 0.5 * np.einsum("a,a...->...", inv_m, g ** 2)
    vq = quantum_potential(spec, mid.rho).values
    res = -dphi_dt - (kin + _potential_values(spec, grid, potential) + vq)
    return GridField(grid, res, "residual")


def fp_residual(spec: SystemSpec, states: Sequence[EnsembleState]) -> GridField:
    """drho/dt + d_A(rho m^{AB} d_B Phi) at the middle history slice."""
    prev, mid, nxt, dt = _history(states)
    grid = mid.grid
    inv_m = _inverse_masses(spec, grid)
    rho = mid.rho.values
    logr, _ = log_density(rho)
    div = np.zeros(grid.shape)
    for a, h in enumerate(grid.spacing):
        div += inv_m[a] * (d1(logr, h, a) * d1(mid.phi_big.values, h, a) + d2(mid.phi_big.values, h, a))
    res = (nxt.rho.values - prev.rho.values) / (2 * dt) + rho * div
    return GridField(grid, res, "residual")
