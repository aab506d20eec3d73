"""Measurement-based feedback control of a collective two-component spin.

Two engines integrate the same conditional dynamics: an exact
density-matrix filter on the permutation-symmetric subspace (dimension
N+1) and a closed system of nine normalized spin moments.  On top of
them sit linear control laws with Lyapunov diagnostics, batch
experiments (sweeps, tuning, engine cross-validation, collapse
statistics), and a CLI that writes deterministic CSV/JSON/SVG
artifacts.
"""

__version__ = "0.1.0"

from .config import (CollapseConfig, CompareConfig, RunConfig, SweepConfig,
                     TuneConfig, load_collapse_config, load_compare_config,
                     load_run_config, load_sweep_config, load_tune_config)
from .controls import (ControlLaw, TargetSpec, SteadyStateEstimate,
                       control_signal, lyapunov_distance, lyapunov_density,
                       steady_state_estimate, steady_state_from_series,
                       steering_sign_expectation)
from .dicke import (DensityMatrix, PureState, SpinOperators, ValidationReport,
                    build_spin_operators, dicke_state, expectation,
                    moments_from_density, purity, spin_coherent_state,
                    validate_density, variance_sz)
from .errors import CollapseError, ConfigError, DivergenceError, IntegratorError
from .harness import (CollapseReport, CompareReport, SweepResult, SweepSpec,
                      TuneResult, TuneSpec, auto_stride, collapse_statistics,
                      compare_engines, run_sweep, tune_gains)
from .moments import (MomentState, commutator_residual, ensemble_moments,
                      initial_moments, moment_diffusion, moment_drift,
                      simulate_moments)
from .params import SimParams
from .records import (EnsembleResult, InnovationSequence, TrajectoryRecord,
                      generator_for, sample_times)
from .sme import (ensemble_sme, hamiltonian_matrix, innovations_from_record,
                  lindblad_D, measurement_record, noise_step_factor,
                  simulate_sme, sme_step, stochastic_H)

__all__ = [
    "__version__",
    "CollapseError", "ConfigError", "DivergenceError", "IntegratorError",
    "SimParams",
    "SpinOperators", "PureState", "DensityMatrix", "ValidationReport",
    "build_spin_operators", "dicke_state", "spin_coherent_state",
    "expectation", "purity", "moments_from_density", "validate_density",
    "variance_sz",
    "ControlLaw", "TargetSpec", "SteadyStateEstimate", "control_signal",
    "lyapunov_distance", "lyapunov_density", "steady_state_estimate",
    "steady_state_from_series", "steering_sign_expectation",
    "MomentState", "initial_moments", "moment_drift", "moment_diffusion",
    "commutator_residual", "simulate_moments", "ensemble_moments",
    "InnovationSequence", "TrajectoryRecord", "EnsembleResult",
    "generator_for", "sample_times",
    "lindblad_D", "stochastic_H", "hamiltonian_matrix", "sme_step",
    "noise_step_factor", "simulate_sme", "ensemble_sme",
    "measurement_record", "innovations_from_record",
    "SweepSpec", "SweepResult", "TuneSpec", "TuneResult", "CompareReport",
    "CollapseReport", "auto_stride", "run_sweep", "tune_gains",
    "compare_engines", "collapse_statistics",
    "RunConfig", "SweepConfig", "TuneConfig", "CompareConfig",
    "CollapseConfig", "load_run_config", "load_sweep_config",
    "load_tune_config", "load_compare_config", "load_collapse_config",
]
