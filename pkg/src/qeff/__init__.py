"""Quantum-efficiency extraction for dispersive qubit readout, on simulated data.

Modules: ``cavity_dynamics`` (linear resonator fields), ``homodyne_sim``
(stochastic records and Ramsey fringes), ``estimation`` (fits and
eta_e = a^2 sigma_m^2 / 2), ``depletion_opt`` (Nelder-Mead depletion
tune-up), ``chain_model`` (amplifier-chain efficiency budget),
``pipeline`` (the three-step method end to end) and ``cli``.
"""

__version__ = "0.1.0"

from .cavity_dynamics import (EXCITED, GROUND, FieldTrajectory, ReadoutParams, WeightFunctions,
                              analytic_snr, compute_trajectory, dephasing_exponent,
                              eta_identity, evolve_field, optimal_weights, solve_depletion,
                              square_weights)
from .errors import (DegenerateWeightsError, FitFailure, InvalidInputError, QeffError,
                     SingularSystemError)
from .estimation import extract_eta
from .pipeline import PipelineConfig, run_extraction
from .pulses import PulseEnvelope, PulseSegment

__all__ = [
    "EXCITED", "GROUND", "FieldTrajectory", "ReadoutParams", "WeightFunctions", "analytic_snr",
    "compute_trajectory", "dephasing_exponent", "eta_identity", "evolve_field",
    "optimal_weights", "solve_depletion", "square_weights", "DegenerateWeightsError",
    "FitFailure", "InvalidInputError", "QeffError", "SingularSystemError", "extract_eta",
    "PipelineConfig", "run_extraction", "PulseEnvelope", "PulseSegment",
]
