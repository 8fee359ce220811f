"""Centre-of-mass reduction.

Coordinates: X = sum_n m_n x_n / M and xhat_n = x_n - X, with xhat_N
eliminated through sum_n m_n xhat_n = 0.  At fixed internal coordinates
d/dX is the direction (1, ..., 1) in particle space; at fixed X and other
internal coordinates d/dxhat_l is e_l - (m_l/m_N) e_N.  The internal part of
d/dx_n is D_n = sum_{l<N} (delta_ln - m_n/M) d/dxhat_l.

Grid-based operations need a joint grid with one axis per particle
coordinate and N*d <= 3, so they are restricted to d = 1 (N = 2 or 3).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.interpolate import CubicSpline, RegularGridInterpolator
from scipy.ndimage import map_coordinates
from scipy.sparse.linalg import spsolve

from .dynamics import PotentialSpec, hj_residual, quantum_potential
from .errors import DegenerateDensityError, InputError, ShapeError, ValidationError
from .kinematics import RandomStream, sample_steps
from .stencils import d1, d2, directional_d1, log_density
from .system import (
    DENSITY_FLOOR,
    ConfigGrid,
    EnsembleState,
    GridField,
    SystemSpec,
    build_system,
    integrate,
)

MAX_JOINT_DIM = 3

# Support used for node-wise comparisons of product states.
SUPPORT_FRACTION = 1e-15


@dataclass(frozen=True)
class CmDecomposition:
    """X with shape (..., d) and independent internal coordinates (..., N-1, d)."""

    x_cm: np.ndarray
    x_rel: np.ndarray
    masses: tuple[float, ...]

    @property
    def total_mass(self) -> float:
        return math.fsum(self.masses)

    def x_hat(self) -> np.ndarray:
        """All N internal coordinates, including the dependent last one."""
        m = np.asarray(self.masses)
        last = -np.sum(m[:-1, None] * self.x_rel, axis=-2) / m[-1]
        return np.concatenate([self.x_rel, last[..., None, :]], axis=-2)


def to_cm(spec: SystemSpec, x) -> CmDecomposition:
    """Split positions of shape (..., N*d) into X and xhat_1..xhat_{N-1}."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (spec.n_coords,):
        raise ShapeError(f"positions need trailing length N*d = {spec.n_coords}, got {x.shape}")
    pos = x.reshape(x.shape[:-1] + (spec.n_particles, spec.spatial_dim))
    m = np.asarray(spec.masses)[:, None]
    X = np.sum(m * pos, axis=-2) / spec.total_mass
    rel = pos[..., :-1, :] - X[..., None, :]
    return CmDecomposition(X, rel, spec.masses)


def from_cm(decomp: CmDecomposition) -> np.ndarray:
    """Inverse of :func:`to_cm`, positions of shape (..., N*d)."""
    pos = decomp.x_cm[..., None, :] + decomp.x_hat()
    return pos.reshape(pos.shape[:-2] + (-1,))


class CmKernelMoments(NamedTuple):
    mean_step: np.ndarray   # expected CM step, shape (d,)
    covariance: np.ndarray  # <dW^a dW^b>, shape (d, d)


def cm_kernel_moments(spec: SystemSpec, grad_phi_per_particle) -> CmKernelMoments:
    """Mean (eta dt / M) sum_n dphi/dx_n and covariance (eta/M) dt delta^{ab}."""
    g = np.asarray(grad_phi_per_particle, dtype=float)
    if g.shape != (spec.n_coords,):
        raise ShapeError(f"need {spec.n_coords} gradient components, got shape {g.shape}")
    d = spec.spatial_dim
    total = g.reshape(spec.n_particles, d).sum(axis=0)
    M = spec.total_mass
    return CmKernelMoments(spec.eta * spec.dt / M * total, spec.eta * spec.dt / M * np.eye(d))


class CmSampleMoments(NamedTuple):
    mean_step: np.ndarray
    mean_stderr: np.ndarray
    covariance: np.ndarray
    covariance_stderr: np.ndarray
    n_samples: int


def sampled_cm_moments(spec: SystemSpec, grad_phi_per_particle, stream: RandomStream,
                       n_samples: int, chunk: int = 100_000) -> CmSampleMoments:
    """Brute force: draw full N*d kernel steps and project them onto the CM."""
    if n_samples < 2:
        raise InputError("need at least 2 samples")
    d = spec.spatial_dim
    m = np.asarray(spec.masses)
    steps = []
    for block, start in enumerate(range(0, n_samples, chunk)):
        k = min(chunk, n_samples - start)
        s = sample_steps(spec, grad_phi_per_particle, stream, k, step=block)
        dx = s.dx.reshape(k, spec.n_particles, d)
        steps.append(np.einsum("n,knd->kd", m, dx) / spec.total_mass)
    dX = np.concatenate(steps)
    mean = dX.mean(axis=0)
    c = dX - mean
    prods = c[:, :, None] * c[:, None, :]
    cov = prods.sum(axis=0) / (n_samples - 1)
    return CmSampleMoments(
        mean, dX.std(axis=0, ddof=1) / math.sqrt(n_samples),
        cov, prods.std(axis=0, ddof=1) / math.sqrt(n_samples), n_samples,
    )


def cm_classical_force_law(spec: SystemSpec, grad_phi_X) -> np.ndarray | float:
    """Large-N CM velocity dX/dt = (eta/M) dphi/dX."""
    v = spec.eta * np.asarray(grad_phi_X, dtype=float) / spec.total_mass
    return float(v) if v.ndim == 0 else v


def cm_system(spec: SystemSpec) -> SystemSpec:
    """One body of mass M carrying the CM degrees of freedom."""
    return build_system(1, spec.total_mass, spec.eta, spec.xi, spec.dt, spec.spatial_dim)


# ---------------------------------------------------------------- joint grids

def _check_joint(spec: SystemSpec, grid: ConfigGrid) -> None:
    if spec.spatial_dim != 1:
        raise ShapeError("grid-based CM operations are implemented for d = 1")
    if spec.n_particles < 2:
        raise ShapeError("CM decomposition on a grid needs at least two particles")
    if grid.ndim != spec.n_coords or grid.ndim > MAX_JOINT_DIM:
        raise ShapeError(f"joint grid must have N*d = {spec.n_coords} <= {MAX_JOINT_DIM} axes")


def cm_direction(spec: SystemSpec) -> np.ndarray:
    """Particle-space direction of d/dX at fixed internal coordinates."""
    return np.ones(spec.n_coords)


def internal_direction(spec: SystemSpec, ell: int) -> np.ndarray:
    """Particle-space direction of d/dxhat_ell (0-based ell < N-1)."""
    m = spec.masses
    w = np.zeros(spec.n_coords)
    w[ell] = 1.0
    w[-1] = -m[ell] / m[-1]
    return w


def internal_operator(spec: SystemSpec) -> np.ndarray:
    """Coefficients c[n, l] = delta_ln - m_n/M of D_n = sum_l c[n, l] d/dxhat_l."""
    n = spec.n_particles
    m = np.asarray(spec.masses)
    c = np.zeros((n, n - 1))
    c[: n - 1] = np.eye(n - 1)
    return c - (m / spec.total_mass)[:, None]


def _axis_bound(f: np.ndarray, grid: ConfigGrid, a: int) -> np.ndarray:
    return np.abs(d1(f, grid.spacing[a], a, 1) - d1(f, grid.spacing[a], a, 2)) / 3.0


def _dir_bound(f: np.ndarray, grid: ConfigGrid, w) -> np.ndarray:
    return np.abs(directional_d1(f, grid, w, 1) - directional_d1(f, grid, w, 2)) / 3.0


def _roundoff(f: np.ndarray, grid: ConfigGrid) -> float:
    # difference quotients lose about |f| eps / h
    return 64 * np.finfo(float).eps * float(np.nanmax(np.abs(f))) / min(grid.spacing)


class IdentityCheck(NamedTuple):
    residual: float    # max-norm of the node-wise residual
    bound: float       # max-norm of the propagated Richardson truncation estimate
    roundoff: float    # floating-point floor of the residual
    residual_field: GridField

    @property
    def passed(self) -> bool:
        return self.residual <= 10 * self.bound + self.roundoff


def _valid(*arrays) -> np.ndarray:
    mask = np.ones(arrays[0].shape, dtype=bool)
    for a in arrays:
        mask &= np.isfinite(a)
    return mask


def cm_gradient_sum_identity(spec: SystemSpec, phi: GridField) -> IdentityCheck:
    """max |dPhi/dX - sum_n dPhi/dx_n| with both sides by finite differences.

    The left side differences along the CM direction of particle space, the
    right side along the coordinate axes.  Only nodes where the stride-2
    stencils of both sides stay on the grid are compared.
    """
    _check_joint(spec, phi.grid)
    f = np.asarray(phi.values, dtype=float)
    grid = phi.grid
    w = cm_direction(spec)
    lhs = directional_d1(f, grid, w, 1)
    rhs = sum(d1(f, h, a) for a, h in enumerate(grid.spacing))
    bound = _dir_bound(f, grid, w) + sum(_axis_bound(f, grid, a) for a in range(grid.ndim))
    res = lhs - rhs
    mask = _valid(res, bound)
    return IdentityCheck(float(np.max(np.abs(res[mask]))), float(np.max(bound[mask])),
                         _roundoff(f, grid), GridField(grid, np.where(mask, res, 0.0), "residual"))


class KineticDecomposition(NamedTuple):
    k_total: GridField
    k_cm: GridField
    k_internal: GridField
    residual: GridField
    check: IdentityCheck


def kinetic_decomposition(spec: SystemSpec, phi: GridField) -> KineticDecomposition:
    """Split sum_n |dPhi/dx_n|^2/(2 m_n) into CM and internal parts.

    K_cm = |dPhi/dX|^2/(2M); K_internal = sum_l |dPhi/dxhat_l|^2/(2 m_l)
    - |sum_l dPhi/dxhat_l|^2/(2M).  CM and internal derivatives are
    differenced along their own particle-space directions.
    """
    _check_joint(spec, phi.grid)
    grid = phi.grid
    f = np.asarray(phi.values, dtype=float)
    m = spec.masses
    M = spec.total_mass
    grads = [d1(f, h, a) for a, h in enumerate(grid.spacing)]
    errs = [_axis_bound(f, grid, a) for a in range(grid.ndim)]
    k_total = sum(g ** 2 / (2 * m[n]) for n, g in enumerate(grads))
    bound = sum(np.abs(g) * e / m[n] for n, (g, e) in enumerate(zip(grads, errs)))

    w = cm_direction(spec)
    p_cm = directional_d1(f, grid, w, 1)
    k_cm = p_cm ** 2 / (2 * M)
    bound = bound + np.abs(p_cm) * _dir_bound(f, grid, w) / M

    q = []
    for ell in range(spec.n_particles - 1):
        w = internal_direction(spec, ell)
        q.append(directional_d1(f, grid, w, 1))
        bound = bound + np.abs(q[-1]) * _dir_bound(f, grid, w) / m[ell]
    s = sum(q)
    k_int = sum(qi ** 2 / (2 * m[ell]) for ell, qi in enumerate(q)) - s ** 2 / (2 * M)
    s_err = sum(_dir_bound(f, grid, internal_direction(spec, ell)) for ell in range(len(q)))
    bound = bound + np.abs(s) * s_err / M

    res = k_total - k_cm - k_int
    mask = _valid(res, bound)
    scale = max(float(np.max(np.abs(k_total))), 1.0)
    roundoff = 64 * np.finfo(float).eps * scale + _roundoff(f, grid) * float(
        np.max(np.abs(np.stack(grads)))) / min(m)
    check = IdentityCheck(float(np.max(np.abs(res[mask]))), float(np.max(bound[mask])), roundoff,
                          GridField(grid, np.where(mask, res, 0.0), "residual"))

    def fld(v):
        return GridField(grid, np.where(np.isfinite(v), v, np.nan), "potential")

    return KineticDecomposition(fld(k_total), fld(k_cm), fld(k_int), check.residual_field, check)


# ------------------------------------------------------------- product states

@dataclass(frozen=True)
class ProductState:
    """rho(x) = rho_CM(X) rho_hat(xhat) and Phi(x) = Phi_CM(X) + Phi_hat(xhat).

    ``rho_cm``/``phi_cm`` live on a d-axis grid over X and
    ``rho_hat``/``phi_hat`` on an (N-1)*d-axis grid over xhat_1..xhat_{N-1}.
    """

    rho_cm: GridField
    rho_hat: GridField
    phi_cm: GridField
    phi_hat: GridField

    def __post_init__(self):
        for name in ("rho_cm", "rho_hat"):
            f = getattr(self, name)
            if f.kind != "density":
                raise ValidationError(name, "expected a density field")
            f.require_normalized(1e-6)
        if self.phi_cm.grid != self.rho_cm.grid:
            raise ShapeError("phi_cm and rho_cm live on different grids")
        if self.phi_hat.grid != self.rho_hat.grid:
            raise ShapeError("phi_hat and rho_hat live on different grids")

    @classmethod
    def from_functions(cls, cm_grid: ConfigGrid, hat_grid: ConfigGrid,
                       rho_cm: Callable, rho_hat: Callable,
                       phi_cm: Callable | None = None, phi_hat: Callable | None = None,
                       normalize: bool = True) -> "ProductState":
        """Sample callables (taking one array per axis) on the two grids."""
        def sample(fn, grid, kind):
            if fn is None:
                return GridField(grid, np.zeros(grid.shape), kind)
            f = GridField(grid, np.asarray(fn(*grid.mesh()), dtype=float), kind)
            return f.normalized() if (normalize and kind == "density") else f

        return cls(sample(rho_cm, cm_grid, "density"), sample(rho_hat, hat_grid, "density"),
                   sample(phi_cm, cm_grid, "phase"), sample(phi_hat, hat_grid, "phase"))

    def joint_logs(self, spec: SystemSpec, joint_grid: ConfigGrid) -> tuple[np.ndarray, np.ndarray]:
        """log rho_CM(X) and log rho_hat(xhat) interpolated to the joint nodes."""
        X, xh = _joint_cm_coords(spec, joint_grid)
        return (_interp(self.rho_cm.grid, log_density(self.rho_cm.values)[0], [X],
                        self.rho_cm.values > DENSITY_FLOOR),
                _interp(self.rho_hat.grid, log_density(self.rho_hat.values)[0], xh,
                        self.rho_hat.values > DENSITY_FLOOR))

    def materialize(self, spec: SystemSpec, joint_grid: ConfigGrid) -> EnsembleState:
        """Joint (rho, Phi) on a particle-coordinate grid.

        log rho and Phi are interpolated with not-a-knot cubic splines along
        the sub-grid axes (exact for quadratic logs); the density picks up
        the Jacobian of the (X, xhat) -> x map.
        """
        _check_joint(spec, joint_grid)
        X, xh = _joint_cm_coords(spec, joint_grid)
        log_cm, log_hat = self.joint_logs(spec, joint_grid)
        rho = np.exp(log_cm + log_hat) / cm_jacobian(spec)
        phase = (_interp(self.phi_cm.grid, self.phi_cm.values, [X])
                 + _interp(self.phi_hat.grid, self.phi_hat.values, xh))
        rho_field = GridField(joint_grid, rho, "density")
        total = integrate(rho_field)
        return EnsembleState(rho_field.with_values(rho / total), GridField(joint_grid, phase, "phase"))


def cm_jacobian(spec: SystemSpec) -> float:
    """|det d(x_1..x_N)/d(X, xhat_1..xhat_{N-1})| for d = 1."""
    n = spec.n_particles
    J = np.zeros((n, n))
    J[:, 0] = 1.0
    for ell in range(n - 1):
        J[:, ell + 1] = internal_direction(spec, ell)
    return abs(float(np.linalg.det(J)))


def _joint_cm_coords(spec: SystemSpec, grid: ConfigGrid):
    pts = np.stack(grid.mesh(), axis=-1)
    dec = to_cm(spec, pts)
    return dec.x_cm[..., 0], [dec.x_rel[..., ell, 0] for ell in range(spec.n_particles - 1)]


def _interp(grid: ConfigGrid, values: np.ndarray, coords: Sequence[np.ndarray],
            where: np.ndarray | None = None) -> np.ndarray:
    """Cubic interpolation; in 1D the spline may be restricted to nodes ``where``
    (and extrapolated beyond them) so that clamped values cannot leak in."""
    values = np.asarray(values, dtype=float)
    if grid.ndim == 1:
        x = grid.coords(0)
        if where is not None and np.count_nonzero(where) >= 4:
            x, values = x[where], values[where]
        return CubicSpline(x, values, bc_type="not-a-knot", extrapolate=True)(coords[0])
    axes = tuple(grid.coords(a) for a in range(grid.ndim))
    fn = RegularGridInterpolator(axes, values, method="cubic", bounds_error=False, fill_value=None,
                                 solver=spsolve)
    pts = np.stack(coords, axis=-1)
    return fn(pts.reshape(-1, grid.ndim)).reshape(pts.shape[:-1])


def product_grids(spec: SystemSpec, joint_grid: ConfigGrid, n_points: int | None = None
                  ) -> tuple[ConfigGrid, ConfigGrid]:
    """Reflecting X and xhat grids covering the image of ``joint_grid``."""
    _check_joint(spec, joint_grid)
    corners = np.array(np.meshgrid(*[[lo, hi] for lo, hi, _ in joint_grid.axes], indexing="ij"))
    corners = corners.reshape(spec.n_coords, -1).T
    dec = to_cm(spec, corners)
    n = n_points or max(joint_grid.shape)
    cm = ConfigGrid(((dec.x_cm.min(), dec.x_cm.max(), n),))
    hat = ConfigGrid(tuple((dec.x_rel[:, ell, 0].min(), dec.x_rel[:, ell, 0].max(), n)
                           for ell in range(spec.n_particles - 1)))
    return cm, hat


def _support(rho: np.ndarray) -> np.ndarray:
    return rho > SUPPORT_FRACTION * np.max(rho)


def _internal_qpot(spec: SystemSpec, rho_hat: GridField) -> np.ndarray:
    """-4 xi sum_n (1/m_n) (D_n^2 rho_hat^1/2) / rho_hat^1/2 via log rho_hat."""
    grid = rho_hat.grid
    L, _ = log_density(rho_hat.values)
    c = internal_operator(spec)
    h = grid.spacing
    first = [d1(L, h[a], a) for a in range(grid.ndim)]
    second = {}
    for a in range(grid.ndim):
        for b in range(a, grid.ndim):
            second[a, b] = d2(L, h[a], a) if a == b else d1(first[a], h[b], b)
    out = np.zeros(grid.shape)
    for n, mn in enumerate(spec.masses):
        dl = sum(c[n, a] * first[a] for a in range(grid.ndim))
        d2l = sum(c[n, a] * c[n, b] * second[min(a, b), max(a, b)]
                  for a in range(grid.ndim) for b in range(grid.ndim))
        out += (0.5 * d2l + 0.25 * dl ** 2) / mn
    return -4.0 * spec.xi * out


def cm_quantum_potential(spec: SystemSpec, rho_cm: GridField) -> GridField:
    """V_Q_CM = -(4 xi / M) (laplacian rho_CM^1/2) / rho_CM^1/2."""
    return quantum_potential(cm_system(spec), rho_cm)


class QuantumPotentialSplit(NamedTuple):
    v_q_cm: GridField
    v_q_hat: GridField
    joint_residual: GridField
    check: IdentityCheck


def split_quantum_potential(spec: SystemSpec, product: ProductState,
                            joint_grid: ConfigGrid | None = None) -> QuantumPotentialSplit:
    """V_Q_CM over X, the internal V_Q_hat over xhat, and the joint residual.

    The residual V_Q(joint rho) - V_Q_CM(X) - V_Q_hat(xhat) is evaluated on
    ``joint_grid`` (default: the joint grid spanned by the CM grid), at nodes
    where both factors exceed ``SUPPORT_FRACTION`` of their peak values.
    """
    if not np.any(product.rho_cm.values > DENSITY_FLOOR) or not np.any(product.rho_hat.values > DENSITY_FLOOR):
        raise DegenerateDensityError("product density is below the floor everywhere")
    vcm = cm_quantum_potential(spec, product.rho_cm)
    vhat = GridField(product.rho_hat.grid, _internal_qpot(spec, product.rho_hat), "potential")
    if joint_grid is None:
        lo, hi, n = product.rho_cm.grid.axes[0]
        joint_grid = ConfigGrid(tuple((lo, hi, n) for _ in range(spec.n_coords)))
    state = product.materialize(spec, joint_grid)
    vq = quantum_potential(spec, state.rho).values
    X, xh = _joint_cm_coords(spec, joint_grid)
    res = (vq - _interp(vcm.grid, vcm.values, [X], _support(product.rho_cm.values))
           - _interp(vhat.grid, vhat.values, xh, _support(product.rho_hat.values)))

    L, _ = log_density(state.rho.values)
    inv_m = 1.0 / np.asarray(spec.masses)
    bound = np.zeros(joint_grid.shape)
    for a, h in enumerate(joint_grid.spacing):
        e2 = np.abs(d2(L, h, a, 1) - d2(L, h, a, 2)) / 3.0
        e1 = _axis_bound(L, joint_grid, a)
        bound += inv_m[a] * (0.5 * e2 + 0.5 * np.abs(d1(L, h, a)) * e1)
    bound *= 4 * spec.xi
    # compare on the support where each factor exceeds SUPPORT_FRACTION of its
    # peak; further out, clamped logs leak into the splines
    cut = math.log(SUPPORT_FRACTION)
    log_cm, log_hat = product.joint_logs(spec, joint_grid)
    mask = (log_cm - log_cm.max() > cut) & (log_hat - log_hat.max() > cut)
    roundoff = 4 * spec.xi * float(np.sum(inv_m)) * 64 * np.finfo(float).eps * float(
        np.max(np.abs(L[mask]))) / min(joint_grid.spacing) ** 2
    check = IdentityCheck(float(np.max(np.abs(res[mask]))), float(np.max(bound[mask])), roundoff,
                          GridField(joint_grid, np.where(mask, res, 0.0), "residual"))
    return QuantumPotentialSplit(vcm, vhat, check.residual_field, check)


class IntegralDecoupling(NamedTuple):
    lhs: float
    rhs_cm_term: float
    rhs_internal_term: float

    @property
    def discrepancy(self) -> float:
        return abs(self.lhs - self.rhs_cm_term - self.rhs_internal_term)


def integral_decoupling_check(spec: SystemSpec, product: ProductState,
                              joint_grid: ConfigGrid | None = None) -> IntegralDecoupling:
    """sum_n (1/m_n) int rho (d log rho/dx_n)^2 on the joint grid versus
    (1/M) int rho_CM (d log rho_CM)^2 + sum_n (1/m_n) int rho_hat (D_n log rho_hat)^2."""
    if joint_grid is None:
        lo, hi, n = product.rho_cm.grid.axes[0]
        joint_grid = ConfigGrid(tuple((lo, hi, n) for _ in range(spec.n_coords)))
    state = product.materialize(spec, joint_grid)
    rho = state.rho.values
    L, _ = log_density(rho)
    lhs = math.fsum(integrate(rho * d1(L, h, a) ** 2, joint_grid) / spec.masses[a]
                    for a, h in enumerate(joint_grid.spacing))

    gcm = product.rho_cm.grid
    Lc, _ = log_density(product.rho_cm.values)
    rhs_cm = integrate(product.rho_cm.values * d1(Lc, gcm.spacing[0]) ** 2, gcm) / spec.total_mass

    gh = product.rho_hat.grid
    Lh, _ = log_density(product.rho_hat.values)
    first = [d1(Lh, h, a) for a, h in enumerate(gh.spacing)]
    c = internal_operator(spec)
    rhs_int = math.fsum(
        integrate(product.rho_hat.values * sum(c[n, a] * first[a] for a in range(gh.ndim)) ** 2, gh) / mn
        for n, mn in enumerate(spec.masses)
    )
    return IntegralDecoupling(lhs, rhs_cm, rhs_int)


def cm_marginals(spec: SystemSpec, rho: GridField, n_points: int | None = None):
    """Resample a joint N = 2 density onto (X, xhat_1) axes.

    Returns (cm_grid, hat_grid, rho_(X,xhat), rho_CM, rho_hat); the joint
    density is interpolated with cubic splines along the exact linear map
    and renormalized on the new grid.
    """
    _check_joint(spec, rho.grid)
    if spec.n_particles != 2:
        raise ShapeError("CM marginals are implemented for N = 2")
    grid = rho.grid
    h = min(grid.spacing)
    cm_g, hat_g = product_grids(spec, grid)
    n_cm = int(round((cm_g.axes[0][1] - cm_g.axes[0][0]) / h)) + 1
    n_hat = int(round((hat_g.axes[0][1] - hat_g.axes[0][0]) / h)) + 1
    cm_g = ConfigGrid(((cm_g.axes[0][0], cm_g.axes[0][1], n_cm),))
    hat_g = ConfigGrid(((hat_g.axes[0][0], hat_g.axes[0][1], n_hat),))
    XX, HH = np.meshgrid(cm_g.coords(0), hat_g.coords(0), indexing="ij")
    x = from_cm(CmDecomposition(XX[..., None], HH[..., None, None], spec.masses))
    idx = np.stack([(x[..., a] - grid.axes[a][0]) / grid.spacing[a] for a in range(2)])
    vals = map_coordinates(np.asarray(rho.values), idx, order=3, mode="constant", cval=0.0)
    vals = np.maximum(vals, 0.0) * cm_jacobian(spec)
    both = ConfigGrid((cm_g.axes[0], hat_g.axes[0]))
    vals = vals / integrate(vals, both)
    w_hat = hat_g.quadrature_weights()
    w_cm = cm_g.quadrature_weights()
    return cm_g, hat_g, GridField(both, vals, "density"), vals @ w_hat, w_cm @ vals


def mutual_information_proxy(spec: SystemSpec, rho: GridField) -> float:
    """int rho log[rho / (rho_CM rho_hat)] in (X, xhat) coordinates (N = 2, d = 1)."""
    _, _, joint, r_cm, r_hat = cm_marginals(spec, rho)
    vals = joint.values
    prod = np.outer(r_cm, r_hat)
    mask = (vals > DENSITY_FLOOR) & (prod > DENSITY_FLOOR)
    integrand = np.zeros_like(vals)
    integrand[mask] = vals[mask] * np.log(vals[mask] / prod[mask])
    return float(integrate(integrand, joint.grid))


def cm_hj_residual(spec: SystemSpec, states: Sequence[EnsembleState], v_ext: Callable | None = None,
                   include_quantum: bool = True) -> GridField:
    """Residual of -dPhi_CM/dt = |dPhi_CM/dX|^2/(2M) + V_ext + [V_Q_CM].

    ``states`` are >= 3 equally spaced (rho_CM, Phi_CM) slices on an X grid.
    With ``include_quantum=False`` the classical HJ residual is returned; it
    differs from the full one by exactly V_Q_CM at the middle slice.
    """
    if len(states) < 3:
        raise InputError(f"need at least 3 consecutive states, got {len(states)}")
    cspec = cm_system(spec)
    res = hj_residual(cspec, states, PotentialSpec(v_ext=v_ext) if v_ext is not None else None)
    if include_quantum:
        return res
    mid = states[len(states) // 2]
    return res.with_values(res.values + quantum_potential(cspec, mid.rho).values)
