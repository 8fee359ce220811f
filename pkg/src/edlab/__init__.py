"""Entropic-dynamics simulator and classical-limit lab."""

from __future__ import annotations

from .errors import (
    DegenerateDensityError,
    DesignError,
    DomainError,
    EdlabError,
    EscapeError,
    InputError,
    NumericalError,
    SchemeFailure,
    ShapeError,
    StatisticsError,
    StepSizeError,
    ToleranceError,
    ValidationError,
)
from .system import ConfigGrid, EnsembleState, GridField, SystemSpec, build_system, integrate
from .kinematics import RandomStream, information_metric, sample_step, sample_steps
from .dynamics import (
    MadelungIntegrator,
    PotentialSpec,
    SchrodingerPropagator,
    Wavefunction,
    ensemble_hamiltonian,
    gaussian_packet,
    gaussian_state,
    hamilton_step,
    madelung_compose,
    madelung_decompose,
    quantum_potential,
    schrodinger_step,
)
from .cm import (
    ProductState,
    cm_kernel_moments,
    cm_quantum_potential,
    integral_decoupling_check,
    kinetic_decomposition,
    split_quantum_potential,
    to_cm,
)
from .trajectories import (
    classical_reference,
    clt_scaling_study,
    equivariance_check,
    qpotential_mass_scaling_study,
    simulate_ensemble,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigGrid", "DegenerateDensityError", "DesignError", "DomainError", "EdlabError",
    "EnsembleState", "EscapeError", "GridField", "InputError", "MadelungIntegrator",
    "NumericalError", "PotentialSpec", "ProductState", "RandomStream", "SchemeFailure",
    "SchrodingerPropagator", "ShapeError", "StatisticsError", "StepSizeError", "SystemSpec",
    "ToleranceError", "ValidationError", "Wavefunction", "build_system", "classical_reference",
    "clt_scaling_study", "cm_kernel_moments", "cm_quantum_potential", "ensemble_hamiltonian",
    "equivariance_check", "gaussian_packet", "gaussian_state", "hamilton_step",
    "information_metric", "integral_decoupling_check", "integrate", "kinetic_decomposition",
    "madelung_compose", "madelung_decompose", "qpotential_mass_scaling_study",
    "quantum_potential", "sample_step", "sample_steps", "schrodinger_step",
    "simulate_ensemble", "split_quantum_potential", "to_cm",
]
