"""Scenario configs and runners.

A scenario config is a JSON object with keys ``scenario``, ``system``,
``grid``, ``potential``, ``study``, ``seed`` and ``output_dir``; unknown
keys are rejected at every level.  Units: lengths and times are in the
units fixed by ``eta`` and the masses; ``xi`` has action^2 units and sets
hbar = sqrt(8 xi).  Potentials are polynomials given by ascending
coefficients, V_ext in the CM coordinate X and V_int in the pair
separation.

Each runner returns tidy result rows plus named criteria whose pass/fail
follows from the stored value, operator and threshold alone.
"""

from __future__ import annotations

import math
import operator
from dataclasses import dataclass, field
from typing import Any, Callable, Literal

import numpy as np
from numpy.polynomial import Polynomial
from pydantic import BaseModel, ConfigDict, Field, SerializeAsAny, field_validator, model_validator

from . import cm as cmmod
from .dynamics import (
    MadelungIntegrator,
    PotentialSpec,
    SchrodingerPropagator,
    ensemble_hamiltonian,
    gaussian_packet,
    gaussian_state,
    l2_distance,
    madelung_compose,
    stability_limit,
    wavefunction_energy,
)
from .errors import ValidationError
from .kinematics import RandomStream, information_metric
from .system import ConfigGrid, GridField, SystemSpec, build_system, integrate
from .trajectories import (
    classical_limit_case,
    classical_reference,
    clt_scaling_study,
    compare_cm_vs_classical,
    equivariance_check,
    joint_cm_run,
    qpotential_mass_scaling_study,
)

SCENARIOS = (
    "madelung-check", "free-packet", "info-metric", "clt-scaling", "decoupling-check",
    "qpot-scaling", "classical-limit", "cm-kernel-moments", "equivariance",
)


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SystemConfig(Strict):
    n_particles: int | None = Field(None, description="particle count N")
    masses: list[float] | float = Field(1.0, description="m_n, mass units")
    eta: float = Field(1.0, description="eta, action units")
    xi: float = Field(0.125, description="xi, action^2 units; hbar = sqrt(8 xi)")
    dt: float = Field(1e-3, description="time step, time units")
    spatial_dim: int = Field(1, description="spatial dimension d")

    @model_validator(mode="after")
    def _check(self):
        self.build()
        return self

    def build(self) -> SystemSpec:
        return build_system(self.n_particles, self.masses, self.eta, self.xi, self.dt, self.spatial_dim)


class GridConfig(Strict):
    axes: list[tuple[float, float, int]] = Field(description="(lower, upper, points) per axis, length units")
    boundary: Literal["periodic", "reflecting"] = "periodic"

    @model_validator(mode="after")
    def _check(self):
        self.build()
        return self

    def build(self) -> ConfigGrid:
        return ConfigGrid(tuple(tuple(a) for a in self.axes), self.boundary)


class PotentialConfig(Strict):
    v_ext: list[float] = Field(default_factory=list, description="ascending coefficients of V_ext(X), energy units")
    v_int: list[float] = Field(default_factory=list, description="ascending coefficients of V_int(r), even powers only")

    @field_validator("v_int")
    @classmethod
    def _even(cls, v):
        if any(c != 0 for c in v[1::2]):
            raise ValueError("v_int: pair potential must contain even powers only")
        return v

    def build(self) -> PotentialSpec | None:
        if not self.v_ext and not self.v_int:
            return None
        return PotentialSpec(Polynomial(self.v_ext) if self.v_ext else None,
                             Polynomial(self.v_int) if self.v_int else None)


# --------------------------------------------------------------- study knobs

class Packet(Strict):
    center: float | list[float] = 0.0
    momentum: float | list[float] = 0.0
    sigma: float | list[float] = Field(1.0, description="density std, length units")

    @field_validator("sigma")
    @classmethod
    def _pos(cls, v):
        if any(s <= 0 for s in np.atleast_1d(v)):
            raise ValueError("sigma must be positive")
        return v


class MadelungStudy(Strict):
    cases: list[Packet] = Field(min_length=1)
    t_final: float = Field(1.0, gt=0)
    checkpoints: int = Field(4, ge=1)
    potentials: list[Literal["free", "config"]] = Field(["free", "config"], min_length=1)
    dt_sub: float | None = Field(None, gt=0, description="step; null picks the largest stable step")
    l2_tol: float = 1e-6
    energy_tol: float = 1e-6
    norm_tol: float = 1e-8


class FreePacketStudy(Strict):
    sigma0: float = Field(1.0, gt=0)
    center: float = 0.0
    momentum: float = 0.0
    t_final: float = Field(2.0, gt=0)
    sigma2_rel_tol: float = 1e-4
    madelung_crosscheck: bool = True
    l2_tol: float = 1e-6


class InfoMetricStudy(Strict):
    n_samples: int = Field(100_000, ge=1)
    rel_tol: float = 0.02
    n_se: float = 4.0


class CltStudyConfig(Strict):
    n_values: list[int] = Field(default_factory=lambda: [10, 100, 1000, 10000])
    n_samples: int = 100_000
    drift_coefficient: float = 1.0
    slope_target: float = -0.5
    slope_tol: float = 0.02
    drift_alpha: float = 0.01


class DecouplingStudy(Strict):
    sigma_cm: float = Field(1.0, gt=0)
    sigma_rel: float = Field(0.6, gt=0, description="std of rho_hat over xhat_1")
    cm_momentum: float = 0.4
    rel_curvature: float = 0.2
    random_modes: int = Field(4, ge=1)
    truncation_factor: float = 10.0
    integral_tol: float = 1e-6
    split_abs_tol: float = 1e-8


class QpotStudyConfig(Strict):
    masses: list[float] = Field(default_factory=lambda: [1.0, 10.0, 100.0])
    sigma: float = Field(1.0, gt=0)
    expected: list[float] | None = None
    value_rel_tol: float = 1e-9
    slope_tol: float = 1e-6


class ClassicalLimitStudy(Strict):
    masses: list[float] = Field(default_factory=lambda: [1.0, 4.0, 16.0])
    X0: float = 1.0
    P0: float = 0.0
    sigma_cm: float = Field(0.25, gt=0)
    sigma_rel: float = Field(0.4, gt=0)
    t_final: float = Field(1.5, gt=0)
    n_grid: int = 448
    half_width: float = 14.0
    record_every: int = 50
    harmonic_tol: float = 1e-4
    mi_tol: float = 1e-6


class CmMomentsStudy(Strict):
    n_samples: int = 100_000
    grad_phi: list[float] | float = 1.0
    n_se: float = 4.0


class EquivarianceStudy(Strict):
    packet: Packet = Field(default_factory=lambda: Packet(center=1.0, momentum=0.5, sigma=0.9))
    n_traj: int = 10_000
    t_final: float = 0.5
    alpha: float = 0.01


STUDY_MODELS: dict[str, type[Strict]] = {
    "madelung-check": MadelungStudy,
    "free-packet": FreePacketStudy,
    "info-metric": InfoMetricStudy,
    "clt-scaling": CltStudyConfig,
    "decoupling-check": DecouplingStudy,
    "qpot-scaling": QpotStudyConfig,
    "classical-limit": ClassicalLimitStudy,
    "cm-kernel-moments": CmMomentsStudy,
    "equivariance": EquivarianceStudy,
}

NEEDS_GRID = {"madelung-check", "free-packet", "decoupling-check", "qpot-scaling", "equivariance"}


class ScenarioConfig(Strict):
    scenario: Literal[SCENARIOS]
    system: SystemConfig = Field(default_factory=SystemConfig)
    grid: GridConfig | None = None
    potential: PotentialConfig = Field(default_factory=PotentialConfig)
    study: SerializeAsAny[Strict] | dict[str, Any] = Field(default_factory=dict)
    seed: int = Field(0, ge=0, lt=1 << 64)
    output_dir: str | None = None

    @model_validator(mode="after")
    def _study(self):
        model = STUDY_MODELS[self.scenario]
        raw = self.study.model_dump() if isinstance(self.study, BaseModel) else self.study
        self.study = model.model_validate(raw)
        if self.scenario in NEEDS_GRID and self.grid is None:
            raise ValueError(f"grid: scenario {self.scenario} needs a grid")
        _REQUIREMENTS.get(self.scenario, lambda c: None)(self)
        return self


def _need_joint(cfg: ScenarioConfig, allowed_n: tuple[int, ...]):
    spec = cfg.system.build()
    grid = cfg.grid.build()
    if spec.n_particles not in allowed_n:
        raise ValueError(f"system: scenario {cfg.scenario} needs N in {allowed_n}")
    if grid.ndim != spec.n_coords:
        raise ValueError(f"grid: needs {spec.n_coords} axes for N*d = {spec.n_coords}")


def _req_madelung(cfg):
    _need_joint(cfg, (1, 2))
    if cfg.system.build().n_coords > 3:
        raise ValueError("system: joint grids support N*d <= 3")


def _req_free(cfg):
    _need_joint(cfg, (1,))
    if cfg.system.build().spatial_dim != 1:
        raise ValueError("system: free-packet is one-dimensional")


def _req_decoupling(cfg):
    _need_joint(cfg, (2,))
    if cfg.system.build().spatial_dim != 1:
        raise ValueError("system: decoupling-check needs d = 1")


def _req_qpot(cfg):
    if cfg.grid.build().ndim != 1:
        raise ValueError("grid: qpot-scaling uses a 1D CM grid")


def _req_equiv(cfg):
    _need_joint(cfg, (1,))
    if cfg.system.build().spatial_dim != 1:
        raise ValueError("system: equivariance is one-dimensional")


_REQUIREMENTS: dict[str, Callable] = {
    "madelung-check": _req_madelung,
    "free-packet": _req_free,
    "decoupling-check": _req_decoupling,
    "qpot-scaling": _req_qpot,
    "equivariance": _req_equiv,
}


# ------------------------------------------------------------------ results

_OPS = {"<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge}


@dataclass(frozen=True)
class Criterion:
    name: str
    value: float
    op: str
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(math.isfinite(self.value) and _OPS[self.op](self.value, self.threshold))

    def as_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "op": self.op,
                "threshold": self.threshold, "passed": self.passed}


@dataclass
class ScenarioResult:
    scenario: str
    rows: list[tuple[str, str, float, float | None]] = field(default_factory=list)
    criteria: list[Criterion] = field(default_factory=list)

    def row(self, variable: str, metric: str, value: float, stderr: float | None = None) -> None:
        self.rows.append((variable, metric, float(value), None if stderr is None else float(stderr)))

    def check(self, name: str, value: float, op: str, threshold: float) -> Criterion:
        c = Criterion(name, float(value), op, float(threshold))
        self.criteria.append(c)
        return c

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.criteria)


# ------------------------------------------------------------------ runners

def _largest_stable_step(spec: SystemSpec, grid: ConfigGrid, t_final: float, chunks: int) -> float:
    limit = stability_limit(spec, grid)
    n = max(chunks, math.ceil(t_final / limit - 1e-12))
    n = chunks * math.ceil(n / chunks)
    return t_final / n


def run_madelung_check(cfg: ScenarioConfig, threads: int = 1) -> ScenarioResult:
    st: MadelungStudy = cfg.study
    spec = cfg.system.build()
    grid = cfg.grid.build()
    config_pot = cfg.potential.build()
    dt = st.dt_sub or _largest_stable_step(spec, grid, st.t_final, st.checkpoints)
    n_steps = int(round(st.t_final / dt))
    if not math.isclose(n_steps * dt, st.t_final, rel_tol=1e-9) or n_steps % st.checkpoints:
        raise ValidationError("study.dt_sub", "t_final must be a whole number of steps per checkpoint")
    every = n_steps // st.checkpoints
    res = ScenarioResult(cfg.scenario)
    hbar = spec.hbar
    worst = {"l2": 0.0, "h_madelung": 0.0, "e_schrodinger": 0.0, "norm": 0.0}
    cases = [(p, i, c) for p in st.potentials for i, c in enumerate(st.cases)]
    for label, i, case in cases:
        pot = None if label == "free" else config_pot
        state = gaussian_state(grid, case.center, case.momentum, case.sigma)
        wf = madelung_compose(state, hbar)
        integ = MadelungIntegrator(spec, grid, pot, dt)
        hist = integ.run(state, n_steps, every)
        prop = SchrodingerPropagator(spec, grid, pot, dt)
        h0 = ensemble_hamiltonian(spec, state, pot)
        e0 = wavefunction_energy(spec, wf, pot)
        l2 = dh = de = dn = 0.0
        w = wf
        for st_k in hist[1:]:
            w = prop.step(w, every)
            l2 = max(l2, l2_distance(madelung_compose(st_k, hbar), w))
            dh = max(dh, abs(ensemble_hamiltonian(spec, st_k, pot) - h0) / abs(h0) / st_k.time)
            de = max(de, abs(wavefunction_energy(spec, w, pot) - e0) / abs(e0) / w.time)
            dn = max(dn, abs(w.norm() - 1.0), abs(integrate(st_k.rho) - 1.0))
        var = f"potential={label},case={i}"
        res.row(var, "l2_discrepancy", l2)
        res.row(var, "hamiltonian_drift_madelung", dh)
        res.row(var, "energy_drift_schrodinger", de)
        res.row(var, "norm_drift", dn)
        res.row(var, "dt_sub", dt)
        worst["l2"] = max(worst["l2"], l2)
        worst["h_madelung"] = max(worst["h_madelung"], dh)
        worst["e_schrodinger"] = max(worst["e_schrodinger"], de)
        worst["norm"] = max(worst["norm"], dn)
    res.check("l2_discrepancy", worst["l2"], "<", st.l2_tol)
    res.check("hamiltonian_drift_madelung", worst["h_madelung"], "<", st.energy_tol)
    res.check("energy_drift_schrodinger", worst["e_schrodinger"], "<", st.energy_tol)
    res.check("norm_drift", worst["norm"], "<", st.norm_tol)
    return res


def run_free_packet(cfg: ScenarioConfig, threads: int = 1) -> ScenarioResult:
    st: FreePacketStudy = cfg.study
    spec = cfg.system.build()
    grid = cfg.grid.build()
    m, hbar = spec.masses[0], spec.hbar
    dt = spec.dt
    n_steps = int(round(st.t_final / dt))
    if not math.isclose(n_steps * dt, st.t_final, rel_tol=1e-9):
        raise ValidationError("system.dt", "t_final must be a whole number of steps")
    # the stability bound is checked before any compute
    integ = MadelungIntegrator(spec, grid, None, dt) if st.madelung_crosscheck else None
    wf0 = gaussian_packet(grid, m, hbar, st.center, st.momentum, st.sigma0)
    wf = SchrodingerPropagator(spec, grid, None, dt).step(wf0, n_steps)
    x = grid.coords(0)
    rho = np.abs(wf.values) ** 2
    mean = integrate(x * rho, grid)
    sigma2 = integrate((x - mean) ** 2 * rho, grid)
    exact = st.sigma0 ** 2 + (hbar * st.t_final / (2 * m * st.sigma0)) ** 2
    res = ScenarioResult(cfg.scenario)
    res.row(f"t={st.t_final:g}", "sigma2", sigma2)
    res.row(f"t={st.t_final:g}", "sigma2_exact", exact)
    res.row(f"t={st.t_final:g}", "mean", mean)
    res.check("sigma2_rel_error", abs(sigma2 - exact) / exact, "<", st.sigma2_rel_tol)
    res.check("norm_drift", abs(wf.norm() - 1.0), "<", 1e-8)
    if integ is not None:
        state = gaussian_state(grid, st.center, st.momentum, st.sigma0)
        final = integ.run(state, n_steps)[-1]
        l2 = l2_distance(madelung_compose(final, hbar), wf)
        res.row(f"t={st.t_final:g}", "l2_madelung_vs_schrodinger", l2)
        res.check("l2_madelung_vs_schrodinger", l2, "<", st.l2_tol)
    return res


def run_info_metric(cfg: ScenarioConfig, threads: int = 1) -> ScenarioResult:
    st: InfoMetricStudy = cfg.study
    spec = cfg.system.build()
    mc = information_metric(spec, "mc", st.n_samples, RandomStream(cfg.seed, 0))
    exact = information_metric(spec, "analytic").metric
    res = ScenarioResult(cfg.scenario)
    nc = spec.n_coords
    worst_rel, worst_off = 0.0, 0.0
    for a in range(nc):
        for b in range(nc):
            var = f"A={a},B={b}"
            res.row(var, "metric", mc.metric[a, b], mc.stderr[a, b])
            if a == b:
                worst_rel = max(worst_rel, abs(mc.metric[a, a] - exact[a, a]) / exact[a, a])
            else:
                worst_off = max(worst_off, abs(mc.metric[a, b]) / mc.stderr[a, b])
    res.row("all", "scale_C", mc.scale)
    res.check("diagonal_rel_error", worst_rel, "<", st.rel_tol)
    if nc > 1:
        res.check("offdiagonal_in_stderr", worst_off, "<", st.n_se)
    return res


def run_clt(cfg: ScenarioConfig, threads: int = 1) -> ScenarioResult:
    st: CltStudyConfig = cfg.study
    s = cfg.system
    masses = s.masses if isinstance(s.masses, float) else s.masses[0]
    study = clt_scaling_study(st.n_values, st.n_samples, cfg.seed, masses, s.eta, s.xi, s.dt,
                              s.spatial_dim, st.drift_coefficient, threads)
    res = ScenarioResult(cfg.scenario)
    for r in study.rows:
        res.row(f"N={r.n}", "cm_std", r.cm_std, r.stderr)
        res.row(f"N={r.n}", "cm_drift", r.drift, r.drift_stderr)
    res.row("fit", "slope", study.slope, study.slope_stderr)
    res.row("fit", "drift_flatness_p", study.drift_p_value)
    res.check("slope_abs_error", abs(study.slope - st.slope_target), "<=", st.slope_tol)
    res.check("drift_flatness_p", study.drift_p_value, ">", st.drift_alpha)
    return res


def _smooth_phase(rng: np.random.Generator, grid: ConfigGrid, modes: int) -> np.ndarray:
    x = np.stack(grid.mesh(), axis=-1)
    out = np.zeros(grid.shape)
    for _ in range(modes):
        k = rng.uniform(-0.8, 0.8, grid.ndim)
        out += rng.uniform(0.2, 1.0) * np.cos(x @ k + rng.uniform(0, 2 * np.pi))
    return out


def run_decoupling(cfg: ScenarioConfig, threads: int = 1) -> ScenarioResult:
    st: DecouplingStudy = cfg.study
    spec = cfg.system.build()
    grid = cfg.grid.build()
    cm_g, hat_g = cmmod.product_grids(spec, grid)
    product = cmmod.ProductState.from_functions(
        cm_g, hat_g,
        lambda X: np.exp(-X ** 2 / (2 * st.sigma_cm ** 2)),
        lambda h: np.exp(-h ** 2 / (2 * st.sigma_rel ** 2)),
        lambda X: st.cm_momentum * X,
        lambda h: st.rel_curvature * h ** 2,
    )
    state = product.materialize(spec, grid)
    phases = {"product": state.phi_big.values,
              "random": _smooth_phase(np.random.default_rng(cfg.seed), grid, st.random_modes)}
    res = ScenarioResult(cfg.scenario)
    f = st.truncation_factor
    for name, phi in phases.items():
        field_ = GridField(grid, phi, "phase")
        g = cmmod.cm_gradient_sum_identity(spec, field_)
        k = cmmod.kinetic_decomposition(spec, field_).check
        for label, chk in (("gradient_sum", g), ("kinetic", k)):
            res.row(f"phi={name}", f"{label}_residual", chk.residual)
            res.row(f"phi={name}", f"{label}_bound", chk.bound)
            res.check(f"{label}_residual[{name}]", chk.residual, "<=", f * chk.bound + chk.roundoff)
    split = cmmod.split_quantum_potential(spec, product, grid).check
    res.row("product", "qpot_split_residual", split.residual)
    res.row("product", "qpot_split_bound", split.bound)
    res.check("qpot_split_residual", split.residual, "<=",
              max(f * split.bound + split.roundoff, st.split_abs_tol))
    dec = cmmod.integral_decoupling_check(spec, product, grid)
    res.row("product", "integral_lhs", dec.lhs)
    res.row("product", "integral_rhs_cm", dec.rhs_cm_term)
    res.row("product", "integral_rhs_internal", dec.rhs_internal_term)
    res.check("integral_decoupling", dec.discrepancy, "<", st.integral_tol)
    return res


def run_qpot(cfg: ScenarioConfig, threads: int = 1) -> ScenarioResult:
    st: QpotStudyConfig = cfg.study
    spec = cfg.system.build()
    grid = cfg.grid.build()
    x = grid.coords(0)
    rho = GridField(grid, np.exp(-x ** 2 / (2 * st.sigma ** 2)), "density").normalized()
    study = qpotential_mass_scaling_study(st.masses, rho, spec.xi, spec.eta)
    expected = st.expected or [spec.hbar ** 2 / (4 * M * st.sigma ** 2) for M in st.masses]
    res = ScenarioResult(cfg.scenario)
    worst = 0.0
    for r, e in zip(study.rows, expected):
        res.row(f"M={r.mass:g}", "max_abs_vq_cm", r.max_abs_vq)
        res.row(f"M={r.mass:g}", "expected", e)
        worst = max(worst, abs(r.max_abs_vq - e) / e if e else abs(r.max_abs_vq))
    res.row("fit", "slope", study.slope)
    res.check("value_rel_error", worst, "<", st.value_rel_tol)
    res.check("slope_abs_error", abs(study.slope + 1.0), "<=", st.slope_tol)
    return res


def run_classical_limit(cfg: ScenarioConfig, threads: int = 1) -> ScenarioResult:
    st: ClassicalLimitStudy = cfg.study
    xi, dt = cfg.system.xi, cfg.system.dt
    res = ScenarioResult(cfg.scenario)
    quartic_dev = []
    worst_mi = 0.0
    for kind in ("harmonic", "quartic"):
        for M in st.masses:
            spec, grid, pot, psi0, vext = classical_limit_case(
                M, kind, st.n_grid, st.half_width, st.X0, st.P0, st.sigma_cm, st.sigma_rel, dt, xi)
            run = joint_cm_run(spec, psi0, pot, st.t_final, st.record_every)
            ref = classical_reference(M, vext, st.X0, st.P0, run.times)
            cmp_ = compare_cm_vs_classical(run.times, run.mean_cm, ref, run.max_abs_vq_cm)
            var = f"kind={kind},M={M:g}"
            res.row(var, "max_deviation", cmp_.max_deviation)
            res.row(var, "rms_deviation", cmp_.rms_deviation)
            res.row(var, "max_abs_vq_cm", cmp_.max_abs_vq_cm)
            res.row(var, "max_mutual_information", float(run.mutual_information.max()))
            res.row(var, "norm_drift", run.norm_drift)
            for k in range(0, run.times.size, st.record_every):
                tv = f"{var},t={run.times[k]:.6g}"
                res.row(tv, "mean_cm", run.mean_cm[k])
                res.row(tv, "classical_x", ref.positions[k])
            worst_mi = max(worst_mi, float(run.mutual_information.max()))
            if kind == "harmonic":
                res.check(f"harmonic_deviation[M={M:g}]", cmp_.max_deviation, "<", st.harmonic_tol)
            else:
                quartic_dev.append(cmp_.max_deviation)
    steps = [b - a for a, b in zip(quartic_dev[:-1], quartic_dev[1:])]
    res.check("quartic_deviation_max_increment", max(steps), "<", 0.0)
    res.check("mutual_information", worst_mi, "<", st.mi_tol)
    return res


def run_cm_moments(cfg: ScenarioConfig, threads: int = 1) -> ScenarioResult:
    st: CmMomentsStudy = cfg.study
    spec = cfg.system.build()
    grad = np.broadcast_to(np.asarray(st.grad_phi, dtype=float), (spec.n_coords,))
    exact = cmmod.cm_kernel_moments(spec, grad)
    mc = cmmod.sampled_cm_moments(spec, grad, RandomStream(cfg.seed, 0), st.n_samples)
    res = ScenarioResult(cfg.scenario)
    d = spec.spatial_dim
    z_mean = np.abs(mc.mean_step - exact.mean_step) / mc.mean_stderr
    z_cov = np.abs(mc.covariance - exact.covariance) / mc.covariance_stderr
    for a in range(d):
        res.row(f"a={a}", "mean_step", mc.mean_step[a], mc.mean_stderr[a])
        res.row(f"a={a}", "mean_step_exact", exact.mean_step[a])
        for b in range(d):
            res.row(f"a={a},b={b}", "covariance", mc.covariance[a, b], mc.covariance_stderr[a, b])
            res.row(f"a={a},b={b}", "covariance_exact", exact.covariance[a, b])
    res.check("mean_max_z", float(z_mean.max()), "<", st.n_se)
    res.check("covariance_max_z", float(z_cov.max()), "<", st.n_se)
    return res


def run_equivariance(cfg: ScenarioConfig, threads: int = 1) -> ScenarioResult:
    st: EquivarianceStudy = cfg.study
    spec = cfg.system.build()
    grid = cfg.grid.build()
    pot = cfg.potential.build()
    p = st.packet
    wf = madelung_compose(gaussian_state(grid, p.center, p.momentum, p.sigma), spec.hbar)
    r = equivariance_check(spec, wf, pot, st.n_traj, st.t_final, cfg.seed)
    res = ScenarioResult(cfg.scenario)
    var = f"t={st.t_final:g}"
    res.row(var, "chi2", r.chi2)
    res.row(var, "dof", r.dof)
    res.row(var, "p_value", r.p_value)
    res.row(var, "n_escaped", r.n_escaped)
    res.check("chi2_p_value", r.p_value, ">", st.alpha)
    return res


RUNNERS: dict[str, Callable[[ScenarioConfig, int], ScenarioResult]] = {
    "madelung-check": run_madelung_check,
    "free-packet": run_free_packet,
    "info-metric": run_info_metric,
    "clt-scaling": run_clt,
    "decoupling-check": run_decoupling,
    "qpot-scaling": run_qpot,
    "classical-limit": run_classical_limit,
    "cm-kernel-moments": run_cm_moments,
    "equivariance": run_equivariance,
}


def run(cfg: ScenarioConfig, threads: int = 1) -> ScenarioResult:
    return RUNNERS[cfg.scenario](cfg, threads)


# -------------------------------------------------------- reference configs

DEFAULT_CONFIGS: dict[str, dict] = {
    "madelung-check": {
        "scenario": "madelung-check",
        "system": {"n_particles": 1, "masses": [1.0]},
        "grid": {"axes": [[-10.0, 10.0, 512]], "boundary": "periodic"},
        "potential": {"v_ext": [0.0, 0.0, 0.5]},
        "study": {"cases": [
            {"center": 0.0, "momentum": 0.0, "sigma": 0.7071067811865476},
            {"center": 1.0, "momentum": 0.0, "sigma": 0.7071067811865476},
            {"center": 1.0, "momentum": 0.5, "sigma": 0.9},
        ]},
    },
    "free-packet": {
        "scenario": "free-packet",
        "system": {"n_particles": 1, "masses": [1.0], "dt": 4e-4},
        "grid": {"axes": [[-12.0, 12.0, 512]], "boundary": "periodic"},
        "study": {"sigma0": 1.0, "t_final": 2.0},
    },
    "info-metric": {
        "scenario": "info-metric",
        "system": {"n_particles": 2, "masses": [1.0, 3.0], "dt": 0.01},
        "study": {"n_samples": 100_000},
        "seed": 11,
    },
    "clt-scaling": {
        "scenario": "clt-scaling",
        "system": {"masses": 1.0},
        "study": {"n_values": [10, 100, 1000, 10000], "n_samples": 100_000, "drift_coefficient": 1.0},
        "seed": 2024,
    },
    "decoupling-check": {
        "scenario": "decoupling-check",
        "system": {"n_particles": 2, "masses": [1.0, 1.0]},
        "grid": {"axes": [[-8.0, 8.0, 128], [-8.0, 8.0, 128]], "boundary": "reflecting"},
        "seed": 3,
    },
    "qpot-scaling": {
        "scenario": "qpot-scaling",
        "system": {"n_particles": 1, "masses": [1.0]},
        "grid": {"axes": [[-6.0, 6.0, 601]], "boundary": "reflecting"},
        "study": {"masses": [1.0, 10.0, 100.0], "sigma": 1.0, "expected": [0.25, 0.025, 0.0025]},
    },
    "classical-limit": {
        "scenario": "classical-limit",
        "system": {"n_particles": 2, "masses": [0.5, 0.5]},
        "study": {"masses": [1.0, 4.0, 16.0]},
    },
    "cm-kernel-moments": {
        "scenario": "cm-kernel-moments",
        "system": {"n_particles": 10, "masses": 1.0, "spatial_dim": 3},
        "study": {"n_samples": 100_000, "grad_phi": 2.0},
        "seed": 5,
    },
    "equivariance": {
        "scenario": "equivariance",
        "system": {"n_particles": 1, "masses": [1.0], "dt": 1e-3},
        "grid": {"axes": [[-10.0, 10.0, 512]], "boundary": "periodic"},
        "potential": {"v_ext": [0.0, 0.0, 0.5]},
        "study": {"n_traj": 10_000, "t_final": 0.5},
        "seed": 17,
    },
}


def default_config(name: str) -> ScenarioConfig:
    return ScenarioConfig.model_validate(DEFAULT_CONFIGS[name])
