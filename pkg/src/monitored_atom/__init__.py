"""Stochastic trajectories of a homodyne-monitored two-level atom.

The package simulates a single decaying two-level atom whose emission is
watched, interval by interval, with balanced homodyne detection.  Each
observed photon-number difference conditions the atomic state; feeding a
field proportional to the fluctuation part of the record back onto the
atom cancels the induced diffusion to first order and pins the state to a
chosen point on the Bloch sphere.

Layout
------
state
    Pure states, Bloch vectors, polar-angle parametrization.
homodyne
    Outcome laws, conditioned state updates, first-order diffusion steps.
feedback
    The diffusion-cancelling law, its residual rotation, delay queue.
trajectory
    Vectorized trajectory kernels, ensemble statistics, the closed-form
    unconditional-evolution oracle.
cli
    Command-line presets and CSV/JSON emission.
"""

from .state import (
    BlochAngle,
    BlochVector,
    PureState,
    angle_of,
    bloch_from_state,
    state_from_bloch,
)
from .homodyne import (
    CoherentAmplitude,
    HomodyneConfig,
    MeasurementOutcome,
    UpdateMode,
    coherent_outcome_pdf,
    conditioned_update_exact,
    decompose_step,
    delta_theta,
    diffusion_step_first_order,
    sample_outcome,
    sample_outcome_conditioned,
    vacuum_outcome_pdf,
)
from .feedback import (
    FeedbackLaw,
    FeedbackState,
    advance_feedback,
    combined_diffusion_step,
    feedback_amplitude,
    next_shift,
    residual_rotation,
)
from .trajectory import (
    DensityMatrix2,
    EnsembleStats,
    SimConfig,
    TrajectoryRecord,
    angle_variance,
    master_evolve,
    run_ensemble,
    run_trajectory,
    step_trajectory,
    trajectory_seed,
)

__version__ = "0.1.0"

__all__ = [
    "BlochAngle",
    "BlochVector",
    "CoherentAmplitude",
    "DensityMatrix2",
    "EnsembleStats",
    "FeedbackLaw",
    "FeedbackState",
    "HomodyneConfig",
    "MeasurementOutcome",
    "PureState",
    "SimConfig",
    "TrajectoryRecord",
    "UpdateMode",
    "advance_feedback",
    "angle_of",
    "angle_variance",
    "bloch_from_state",
    "coherent_outcome_pdf",
    "combined_diffusion_step",
    "conditioned_update_exact",
    "decompose_step",
    "delta_theta",
    "diffusion_step_first_order",
    "feedback_amplitude",
    "master_evolve",
    "next_shift",
    "residual_rotation",
    "run_ensemble",
    "run_trajectory",
    "sample_outcome",
    "sample_outcome_conditioned",
    "state_from_bloch",
    "step_trajectory",
    "trajectory_seed",
    "vacuum_outcome_pdf",
]
