"""Adiabatic refocusing of inhomogeneously broadened spin ensembles.

Closed-form adiabatic-passage propagators, an RK4 Bloch integrator used as
their oracle, ensemble averaging with a Beer-Lambert optical readout, and
the fits that extract inhomogeneous width, decay rate, refocusing
efficiency and Rabi calibration from transmission traces.
"""

__version__ = "0.1.0"

from ._accel import backend

from .model import (CalibrationModel, ChirpedPulse, FreeEvolution, InhomogeneousDistribution,
                    Magnetization, OpticalProbe, PulseKind, PulseSequence, RelaxationParams,
                    SequenceError, TransmissionTrace, ValidationReport, refocusing_block,
                    refocusing_sequence, validate_sequence)
from .propagator import (accumulated_phase, afp_mz_profile, ahp_final_state, arp_propagator,
                         hard_pulse, refocusing_propagator, rotation_r1, rotation_r2)
from .bloch import BlochIntegrationError, bloch_derivative, integrate, nutation_trace
from .ensemble import (EnsembleState, absorption, bump_min_absorption, mean_mz,
                       propagate_ensemble, refocusing_trace, transmission)
from .fitting import (FitResult, bootstrap_errors, efficiency, extract_rabi_from_nutation,
                      fit_bump_width, fit_decay_rate, fit_rabi_calibration)

__all__ = [
    "backend",
    "CalibrationModel", "ChirpedPulse", "FreeEvolution", "InhomogeneousDistribution",
    "Magnetization", "OpticalProbe", "PulseKind", "PulseSequence", "RelaxationParams",
    "SequenceError", "TransmissionTrace", "ValidationReport", "refocusing_block",
    "refocusing_sequence", "validate_sequence", "accumulated_phase", "afp_mz_profile",
    "ahp_final_state", "arp_propagator", "hard_pulse", "refocusing_propagator", "rotation_r1",
    "rotation_r2", "BlochIntegrationError", "bloch_derivative", "integrate", "nutation_trace",
    "EnsembleState", "absorption", "bump_min_absorption", "mean_mz", "propagate_ensemble",
    "refocusing_trace", "transmission", "FitResult", "bootstrap_errors", "efficiency",
    "extract_rabi_from_nutation", "fit_bump_width", "fit_decay_rate", "fit_rabi_calibration",
]
