"""Static physical configuration, grids and field containers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Mapping, Sequence

import numpy as np

from .errors import DegenerateDensityError, DomainError, ShapeError, ValidationError

# Absolute floor applied wherever log(rho) or 1/rho is evaluated.
DENSITY_FLOOR = 1e-30

# Upper bound on the number of nodes of a single grid (complex128 field ~ 256 MB).
MAX_GRID_NODES = 1 << 24

FieldKind = Literal[
    "density", "phase", "drift_potential", "potential", "wavefunction", "velocity", "residual"
]
_FIELD_KINDS = {
    "density", "phase", "drift_potential", "potential", "wavefunction", "velocity", "residual",
}


def planck_from_xi(xi: float) -> float:
    """Return hbar = sqrt(8 xi)."""
    if not xi >= 0:
        raise DomainError(f"xi must be nonnegative, got {xi}")
    return math.sqrt(8.0 * xi)


@dataclass(frozen=True)
class SystemSpec:
    """N particles with diagonal mass tensor m_AB = m_n delta_AB.

    ``eta`` fixes the time units (step covariance eta*dt/m_n) and ``xi`` the
    strength of the quantum potential; hbar is derived from xi.
    """

    n_particles: int
    masses: tuple[float, ...]
    eta: float
    xi: float
    dt: float
    spatial_dim: int = 1

    @property
    def total_mass(self) -> float:
        return math.fsum(self.masses)

    @property
    def mean_mass(self) -> float:
        return self.total_mass / self.n_particles

    @property
    def hbar(self) -> float:
        return planck_from_xi(self.xi)

    @property
    def n_coords(self) -> int:
        """Configuration-space dimension N*d."""
        return self.n_particles * self.spatial_dim

    def coord_masses(self) -> np.ndarray:
        """Diagonal of m_AB, ordered A = (n, a) with the spatial index fastest."""
        return np.repeat(np.asarray(self.masses, dtype=float), self.spatial_dim)

    def inverse_mass_tensor(self) -> np.ndarray:
        """m^{AB} as a dense (N*d, N*d) matrix."""
        return np.diag(1.0 / self.coord_masses())

    def replace(self, **changes) -> "SystemSpec":
        raw = {
            "n_particles": self.n_particles,
            "masses": list(self.masses),
            "eta": self.eta,
            "xi": self.xi,
            "dt": self.dt,
            "spatial_dim": self.spatial_dim,
        }
        raw.update(changes)
        if "masses" in changes and "n_particles" not in changes:
            raw["n_particles"] = len(raw["masses"])
        return build_system(**raw)


def build_system(
    n_particles: int | None = None,
    masses: Sequence[float] | float | None = None,
    eta: float = 1.0,
    xi: float = 0.125,
    dt: float = 1e-3,
    spatial_dim: int = 1,
) -> SystemSpec:
    """Validate raw parameters and return a :class:`SystemSpec`.

    ``masses`` may be a scalar, in which case all ``n_particles`` share it.
    The defaults give eta = hbar = 1.
    """
    if masses is None:
        masses = 1.0
    if np.ndim(masses) == 0:
        if n_particles is None:
            n_particles = 1
        if int(n_particles) != n_particles or n_particles < 1:
            raise ValidationError("n_particles", f"must be a positive integer, got {n_particles}")
        masses = [float(masses)] * int(n_particles)
    masses = tuple(float(m) for m in masses)
    if n_particles is None:
        n_particles = len(masses)
    if int(n_particles) != n_particles or n_particles < 1:
        raise ValidationError("n_particles", f"must be a positive integer, got {n_particles}")
    if len(masses) != n_particles:
        raise ValidationError(
            "masses", f"expected {n_particles} masses, got {len(masses)}"
        )
    if not all(math.isfinite(m) and m > 0 for m in masses):
        raise ValidationError("masses", "all masses must be positive and finite")
    if not (math.isfinite(eta) and eta > 0):
        raise ValidationError("eta", f"must be positive, got {eta}")
    if not (math.isfinite(xi) and xi >= 0):
        raise ValidationError("xi", f"must be nonnegative, got {xi}")
    if not (math.isfinite(dt) and dt > 0):
        raise ValidationError("dt", f"must be positive, got {dt}")
    if int(spatial_dim) != spatial_dim or spatial_dim < 1:
        raise ValidationError("spatial_dim", f"must be a positive integer, got {spatial_dim}")
    return SystemSpec(int(n_particles), masses, float(eta), float(xi), float(dt), int(spatial_dim))


@dataclass(frozen=True)
class ConfigGrid:
    """Uniform rectangular grid over configuration space.

    ``axes`` holds one ``(lower, upper, n_points)`` triple per configuration
    coordinate.  Reflecting grids include both end points; periodic grids
    exclude the upper one so that the period is ``upper - lower``.
    """

    axes: tuple[tuple[float, float, int], ...]
    boundary: Literal["periodic", "reflecting"] = "reflecting"
    max_nodes: int = MAX_GRID_NODES

    def __post_init__(self):
        axes = tuple((float(lo), float(hi), int(n)) for lo, hi, n in self.axes)
        object.__setattr__(self, "axes", axes)
        if not axes:
            raise ValidationError("axes", "grid needs at least one axis")
        if self.boundary not in ("periodic", "reflecting"):
            raise ValidationError("boundary", f"unknown boundary {self.boundary!r}")
        for lo, hi, n in axes:
            if n < 8:
                raise ValidationError("axes", f"need at least 8 points per axis, got {n}")
            if not hi > lo:
                raise ValidationError("axes", f"upper bound {hi} must exceed lower bound {lo}")
        if math.prod(n for _, _, n in axes) > self.max_nodes:
            raise ValidationError("axes", f"grid exceeds the memory cap of {self.max_nodes} nodes")

    @classmethod
    def uniform(cls, lower: float, upper: float, n: int, ndim: int = 1,
                boundary: str = "reflecting") -> "ConfigGrid":
        return cls(tuple((lower, upper, n) for _ in range(ndim)), boundary)

    @property
    def periodic(self) -> bool:
        return self.boundary == "periodic"

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(n for _, _, n in self.axes)

    @property
    def spacing(self) -> tuple[float, ...]:
        if self.periodic:
            return tuple((hi - lo) / n for lo, hi, n in self.axes)
        return tuple((hi - lo) / (n - 1) for lo, hi, n in self.axes)

    @property
    def cell_volume(self) -> float:
        return math.prod(self.spacing)

    def coords(self, axis: int = 0) -> np.ndarray:
        lo, _, n = self.axes[axis]
        return lo + self.spacing[axis] * np.arange(n)

    def mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*(self.coords(a) for a in range(self.ndim)), indexing="ij"))

    def points(self) -> np.ndarray:
        """All nodes as an array of shape (n_nodes, ndim), C order."""
        return np.stack([m.ravel() for m in self.mesh()], axis=-1)

    def quadrature_weights(self) -> np.ndarray:
        """Node weights: rectangle rule (periodic) or trapezoid rule (reflecting)."""
        w = np.ones(self.shape)
        for a, h in enumerate(self.spacing):
            wa = np.full(self.shape[a], h)
            if not self.periodic:
                wa[0] = wa[-1] = 0.5 * h
            shape = [1] * self.ndim
            shape[a] = -1
            w = w * wa.reshape(shape)
        return w

    def contains(self, pts: np.ndarray) -> np.ndarray:
        """Boolean mask of points (..., ndim) lying inside the grid box."""
        pts = np.asarray(pts)
        inside = np.ones(pts.shape[:-1], dtype=bool)
        for a, (lo, hi, _) in enumerate(self.axes):
            top = hi if not self.periodic else hi - self.spacing[a]
            inside &= (pts[..., a] >= lo) & (pts[..., a] <= top)
        return inside


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GridField:
    """Real or complex values on the nodes of a :class:`ConfigGrid`.

    Velocity fields carry a leading component axis of length ``grid.ndim``.
    """

    grid: ConfigGrid
    values: np.ndarray
    kind: FieldKind = "potential"

    def __post_init__(self):
        if self.kind not in _FIELD_KINDS:
            raise ValidationError("kind", f"unknown field kind {self.kind!r}")
        values = np.asarray(self.values)
        expected = self.grid.shape
        if self.kind == "velocity":
            expected = (self.grid.ndim,) + expected
        if values.shape != expected:
            raise ShapeError(f"{self.kind} field has shape {values.shape}, grid needs {expected}")
        if self.kind == "density":
            if np.iscomplexobj(values) or not np.all(np.isfinite(values)):
                raise ValidationError("rho", "density must be real and finite")
            if np.any(values < 0):
                raise ValidationError("rho", "density must be nonnegative")
        object.__setattr__(self, "values", _frozen(values))

    def integral(self) -> float:
        return integrate(self)

    def require_normalized(self, tol: float = 1e-6) -> None:
        total = integrate(self)
        if abs(total - 1.0) > tol:
            raise ValidationError("rho", f"density integrates to {total!r}, not 1 within {tol}")

    def normalized(self) -> "GridField":
        total = integrate(self)
        if not total > 0:
            raise DegenerateDensityError("density has zero mass")
        return GridField(self.grid, self.values / total, self.kind)

    def with_values(self, values: np.ndarray, kind: FieldKind | None = None) -> "GridField":
        return GridField(self.grid, values, kind or self.kind)


def integrate(field_: GridField | np.ndarray, grid: ConfigGrid | None = None) -> float | complex:
    """Quadrature of a scalar field over its grid.

    Rectangle rule on periodic grids, trapezoid rule on reflecting ones.
    """
    if isinstance(field_, GridField):
        if grid is not None and grid != field_.grid:
            raise ShapeError("field is defined on a different grid")
        grid = field_.grid
        values = field_.values
        if field_.kind == "velocity":
            raise ShapeError("integrate expects a scalar field")
    else:
        if grid is None:
            raise ShapeError("a grid is required to integrate a bare array")
        values = np.asarray(field_)
    if values.shape != grid.shape:
        raise ShapeError(f"values of shape {values.shape} do not match grid {grid.shape}")
    total = np.sum(values * grid.quadrature_weights())
    return complex(total) if np.iscomplexobj(total) else float(total)


@dataclass(frozen=True)
class EnsembleState:
    """Canonical pair (rho, Phi) at time t."""

    rho: GridField
    phi_big: GridField
    time: float = 0.0
    tol: float = field(default=1e-6, repr=False, compare=False)

    def __post_init__(self):
        if self.rho.kind != "density":
            raise ValidationError("rho", "rho must be a density field")
        if self.rho.grid != self.phi_big.grid:
            raise ShapeError("rho and Phi live on different grids")
        self.rho.require_normalized(self.tol)
        support = self.rho.values > DENSITY_FLOOR
        if np.iscomplexobj(self.phi_big.values) or not np.all(np.isfinite(self.phi_big.values[support])):
            raise ValidationError("phi_big", "Phi must be real and finite where rho is above the floor")

    @property
    def grid(self) -> ConfigGrid:
        return self.rho.grid

    @classmethod
    def from_arrays(cls, grid: ConfigGrid, rho: np.ndarray, phi_big: np.ndarray,
                    time: float = 0.0, tol: float = 1e-6) -> "EnsembleState":
        return cls(GridField(grid, rho, "density"), GridField(grid, phi_big, "phase"), time, tol)


def spec_summary(spec: SystemSpec) -> Mapping[str, float]:
    """Derived quantities of a spec, handy for reports."""
    return {
        "N": spec.n_particles,
        "M": spec.total_mass,
        "mean_mass": spec.mean_mass,
        "hbar": spec.hbar,
        "eta": spec.eta,
        "xi": spec.xi,
        "dt": spec.dt,
    }
