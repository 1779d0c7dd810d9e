"""Monte Carlo effective diffusivity of inertial particles in modulated periodic flows."""

__version__ = "0.1.0"

from .diffusivity import DiffusivityEstimate, DriftEstimate, estimate_drift, estimate_K
from .dynamics import (
    ModelKind,
    ModelParams,
    NumericalError,
    ParticleState,
    check_hypoellipticity_rank,
    colored_inertial_step,
    colored_tracer_step,
    step_particle,
    white_inertial_step,
    white_tracer_step,
)
from .ensemble import EnsembleStats, RunConfig, merge, run_ensemble, simulate_trajectories
from .flow import (
    FlowField,
    FlowKind,
    Mode,
    check_divergence_free,
    check_parity,
    eval_F,
    eval_F_batch,
    from_coefficient_table,
    from_stream_modes,
    taylor_green,
)
from .limits import SweepSpec, run_sweep, white_noise_limit_study
from .ou import OUParams, ou_exact_step, sample_stationary, stationary_covariance
from .verify import (
    LyapunovSpec,
    centering_check,
    generator_fd_check,
    lyapunov_drift_check,
    symmetry_check,
)
