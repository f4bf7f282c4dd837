"""Grassmann phase-space simulation of fermionic lattice gases.

The package provides a Grassmann algebra with Berezin calculus, the fermion
B distribution and its Fokker-Planck coefficients, discretised stochastic
field equations with c-number Theta-matrix propagation, moment-tensor
observables, and an exact Fock-space oracle for small mode counts.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import (
    ConfigurationError,
    FactorizationError,
    GrassfieldError,
    NumericalAbort,
    StructuralError,
    ValidationError,
)
from .grassmann import (
    CorrespondenceRules,
    FFPECoefficients,
    GeneratorSet,
    GrassmannElement,
    LinearSuperOperator,
    b_distribution,
    berezin_derivative,
    berezin_integrate,
    canonical_moment,
    density_from_b,
    moments_from_state,
    phase_space_integral,
    product,
    symbolic_ffpe,
)
from .models import (
    DriftNoiseCoefficients,
    GridSpec,
    MultiComponentModel,
    TwoComponentModel,
    channel_map,
    discretize_multi_component,
    discretize_two_component,
    mode_hamiltonian,
    remap_channels,
)
from .observables import (
    EnsembleEstimate,
    MomentTensor,
    evolve_moment,
    momentum_fock_coherence,
    position_coherence,
    position_population,
    total_population,
)
from .oracle import build_fock_operators, evolve_exact, exact_coherence
from .propagator import (
    StepScheme,
    TrajectoryPropagator,
    propagate_trajectory,
    run_ensemble,
    theta_step,
)
from .rng import draw_wiener
from .takagi import TakagiFactor, takagi_factor

__all__ = [
    "ConfigurationError",
    "CorrespondenceRules",
    "DriftNoiseCoefficients",
    "EnsembleEstimate",
    "FFPECoefficients",
    "FactorizationError",
    "GeneratorSet",
    "GrassfieldError",
    "GrassmannElement",
    "GridSpec",
    "LinearSuperOperator",
    "MomentTensor",
    "MultiComponentModel",
    "NumericalAbort",
    "StepScheme",
    "StructuralError",
    "TakagiFactor",
    "TrajectoryPropagator",
    "TwoComponentModel",
    "ValidationError",
    "b_distribution",
    "berezin_derivative",
    "berezin_integrate",
    "build_fock_operators",
    "canonical_moment",
    "channel_map",
    "density_from_b",
    "discretize_multi_component",
    "discretize_two_component",
    "draw_wiener",
    "evolve_exact",
    "evolve_moment",
    "exact_coherence",
    "mode_hamiltonian",
    "moments_from_state",
    "momentum_fock_coherence",
    "phase_space_integral",
    "position_coherence",
    "position_population",
    "product",
    "propagate_trajectory",
    "remap_channels",
    "run_ensemble",
    "symbolic_ffpe",
    "takagi_factor",
    "theta_step",
    "total_population",
]
