"""Stochastic potential Burgers turbulence on the torus.

Pseudo-spectral simulation of a viscous forced Burgers flow written for
its potential, together with the small-scale observables (norms,
structure functions, spectra, flatness) and the ensemble machinery used
to measure how they scale with viscosity.
"""
from .diagnostics import (DiagnosticsPlan, DiagnosticsRecord, RangeSpec, energy_spectrum, flatness,
                          kruzhkov_max, sphere_averaged_increment, structure_functions)
from .dynamics import (DtPolicy, FluxSpec, PotentialState, SimConfig, integrate, load_checkpoint,
                       save_checkpoint, step)
from .ensemble import (ExperimentConfig, ScalingFit, bracket, coupling_experiment, fit_scaling,
                       initial_potential, run_campaign)
from .forcing import NoiseSpec, NoiseState
from .poly_basis import DirectionBasis, LinearForm, construct_basis
from .torus import SpectralField, TorusGrid, from_function, gradient

__version__ = "0.1.0"

__all__ = [
    "DiagnosticsPlan", "DiagnosticsRecord", "DirectionBasis", "DtPolicy", "ExperimentConfig", "FluxSpec",
    "LinearForm", "NoiseSpec", "NoiseState", "PotentialState", "RangeSpec", "ScalingFit", "SimConfig",
    "SpectralField", "TorusGrid", "bracket", "construct_basis", "coupling_experiment", "energy_spectrum",
    "fit_scaling", "flatness", "from_function", "gradient", "initial_potential", "integrate", "kruzhkov_max",
    "load_checkpoint", "run_campaign", "save_checkpoint", "sphere_averaged_increment", "step",
    "structure_functions",
]
