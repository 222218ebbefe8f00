"""Monte Carlo trajectories of the monitored atom and ensemble statistics.

A trajectory alternates measurement intervals with optional feedback.
Each interval: the pending feedback field (if any) drives the atom, the
interval's record dn is drawn, the state update conditioned on the record
is applied, and the fluctuation part of the record is pushed into the
delay queue as the shift a later interval will apply.  Two update modes:

* EXACT: the renormalized amplitude update.  The record mean carries the
  atomic dipole signal (see homodyne.sample_outcome_conditioned) so that
  trajectory averages reproduce the unconditional decay; the pending
  shift acts as a coherent drive (a rotation about s_y by
  sqrt(gamma*tau)*shift/alpha) and the conditioned update sees only
  dn_qf = dn_total - shift, since the known classical offset carries no
  information about the atom.
* FIRST_ORDER: the tangent diffusion step driven by the centered outcome
  law, with the feedback law folded into the same interval as the record
  (the zero-delay idealization).  With the law enabled, the target state
  is a strict fixed point of this mode.  The emitted records still honor
  the configured delay: the shift column is the head of the queue and
  dn_total = dn_qf + shift holds exactly in every row.

Reproducibility
---------------
Trajectory i draws its noise from
``numpy.random.default_rng(SeedSequence(master_seed, spawn_key=(i,)))``,
one standard normal per interval.  Every trajectory owns its stream, all
reductions run over arrays reassembled in index order, so any partition
of an ensemble over worker processes yields bitwise identical statistics.
"""

from __future__ import annotations

import math
import multiprocessing
import warnings
from dataclasses import dataclass

import numpy as np

from .state import (
    PLANE_TOL,
    UNIT_TOL,
    BlochVector,
    PureState,
    bloch_from_state,
    state_from_bloch,
)
from .homodyne import (
    HomodyneConfig,
    MeasurementOutcome,
    UpdateMode,
    _record_mean,
    _step_field,
    conditioned_update_exact,
    sample_outcome,
    sample_outcome_conditioned,
)
from .feedback import (
    FeedbackLaw,
    FeedbackState,
    advance_feedback,
    combined_diffusion_step,
    feedback_amplitude,
)

LONG_RUN_CEILING = 1.0

_REC_NAMES = ("sx", "sy", "sz", "dn_total", "dn_qf", "shift")


@dataclass(frozen=True)
class DensityMatrix2:
    """Mixed single-atom state as the triple of Bloch expectation values."""

    ux: float
    uy: float
    uz: float

    def __post_init__(self):
        for name in ("ux", "uy", "uz"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"component {name} must be finite, got {v!r}")
        n = math.sqrt(self.ux**2 + self.uy**2 + self.uz**2)
        if n > 1.0 + 1e-12:
            raise ValueError(f"Bloch expectation length {n!r} exceeds 1")

    def purity(self) -> float:
        return 0.5 * (1.0 + self.ux**2 + self.uy**2 + self.uz**2)


def master_evolve(rho: DensityMatrix2, gamma_t: float) -> DensityMatrix2:
    """Unconditional (record-averaged) evolution after a time gamma_t.

    Closed form of free decay: the transverse components shrink by
    exp(-gamma_t/2) and the inversion relaxes to -1 as
    u_z(t) = -1 + (u_z(0) + 1) * exp(-gamma_t).  This is the oracle that
    trajectory averages must reproduce.
    """
    if not (math.isfinite(gamma_t) and gamma_t >= 0.0):
        raise ValueError(f"gamma_t must be nonnegative, got {gamma_t!r}")
    h = math.exp(-0.5 * gamma_t)
    g = math.exp(-gamma_t)
    # u_z * g + (g - 1) rather than -1 + (u_z + 1) * g: algebraically the
    # same, but this form is the exact identity at gamma_t = 0 and exactly
    # stationary at the ground state, where 1 + u_z would round.
    return DensityMatrix2(rho.ux * h, rho.uy * h, rho.uz * g + (g - 1.0))


@dataclass(frozen=True)
class SimConfig:
    """Complete description of a trajectory experiment.

    Parameters
    ----------
    homodyne : HomodyneConfig
        Detection parameters and update mode.
    law : FeedbackLaw
        Feedback target and switch.
    initial : BlochVector
        Initial pure state (unit vector within 1e-9).
    steps : int
        Number of measurement intervals; 0 records only the initial state.
    trajectories : int
        Ensemble size.
    master_seed : int
        Root of all per-trajectory noise streams.
    delay : int
        Feedback latency in intervals, at least 1.
    record_stride : int
        Record every this-many steps (step 0 and the final step always).
    allow_long_run : bool
        steps*gamma_tau above 1 accumulates unchecked per-interval error
        and is rejected unless this flag is set (then it only warns).
    """

    homodyne: HomodyneConfig = HomodyneConfig()
    law: FeedbackLaw = FeedbackLaw(enabled=False)
    initial: BlochVector = BlochVector(0.0, 0.0, 1.0)
    steps: int = 100
    trajectories: int = 1
    master_seed: int = 0
    delay: int = 1
    record_stride: int = 1
    allow_long_run: bool = False

    def __post_init__(self):
        if not isinstance(self.steps, int) or self.steps < 0:
            raise ValueError(f"steps must be a nonnegative int, got {self.steps!r}")
        if not isinstance(self.trajectories, int) or self.trajectories < 1:
            raise ValueError(f"trajectories must be a positive int, got {self.trajectories!r}")
        if not isinstance(self.delay, int) or self.delay < 1:
            raise ValueError(f"delay must be an int >= 1, got {self.delay!r}")
        if not isinstance(self.record_stride, int) or self.record_stride < 1:
            raise ValueError(f"record_stride must be a positive int, got {self.record_stride!r}")
        if abs(self.initial.norm() - 1.0) > UNIT_TOL:
            raise ValueError(
                f"initial Bloch vector must be unit length within {UNIT_TOL:g}, "
                f"got |s| = {self.initial.norm()!r}"
            )
        total = self.steps * self.homodyne.gamma_tau
        if total > LONG_RUN_CEILING:
            msg = (
                f"steps * gamma_tau = {total:g} exceeds {LONG_RUN_CEILING:g}; "
                f"per-interval truncation error accumulates unchecked"
            )
            if self.allow_long_run:
                warnings.warn(msg, stacklevel=2)
            else:
                raise ValueError(msg + " (set allow_long_run=True to override)")


@dataclass(frozen=True)
class TrajectoryRecord:
    """One trajectory's recorded history.

    ``bloch`` has shape (n_recorded, 3); the record rows for step 0 hold
    the initial state and zero record values.  ``dn_total - dn_qf ==
    shift`` holds exactly in every row.
    """

    trajectory_index: int
    steps: np.ndarray
    gamma_t: np.ndarray
    bloch: np.ndarray
    dn_total: np.ndarray
    dn_qf: np.ndarray
    shift: np.ndarray
    final_state: PureState


@dataclass(frozen=True)
class EnsembleStats:
    """Across-trajectory statistics at each recorded step.

    ``mean``, ``var`` and ``se`` have shape (n_recorded, 3) in Bloch
    order (x, y, z); ``var`` is the unbiased sample variance and
    ``se = sqrt(var / n_trajectories)``.  ``fidelity`` is the mean of
    1 - |s - target|^2 / 4 over trajectories, which for unit vectors
    equals the state overlap with the target and is exactly 1 when every
    trajectory sits on it.  ``purity`` is the purity of the ensemble-mean
    Bloch vector, (1 + |mean|^2)/2.  ``angle_var`` is the variance of the
    polar angle atan2(s_x, s_z), available (not None) only when every
    recorded sample stayed in the s_y = 0 plane.
    """

    n_trajectories: int
    target: BlochVector
    steps: np.ndarray
    gamma_t: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    se: np.ndarray
    fidelity: np.ndarray
    purity: np.ndarray
    angle_var: np.ndarray | None


def trajectory_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    """Per-trajectory seed: SeedSequence(master_seed, spawn_key=(index,)).

    This rule is part of the reproducibility contract; it gives every
    trajectory an independent stream addressable by index alone.
    """
    return np.random.SeedSequence(master_seed, spawn_key=(int(index),))


def _noise_matrix(cfg: SimConfig, indices) -> np.ndarray:
    # One standard normal per interval per trajectory, drawn in full up
    # front; a scalar one-at-a-time consumer of the same generator sees
    # the identical sequence.
    out = np.empty((len(indices), cfg.steps), dtype=np.float64)
    for row, idx in enumerate(indices):
        gen = np.random.default_rng(trajectory_seed(cfg.master_seed, idx))
        out[row] = gen.standard_normal(cfg.steps)
    return out


def _recorded_steps(steps: int, stride: int) -> np.ndarray:
    ks = list(range(0, steps + 1, stride))
    if ks[-1] != steps:
        ks.append(steps)
    return np.asarray(ks, dtype=np.int64)


def _canonical_phase(cE: np.ndarray, cG: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Rotate the global phase so c_e is real >= 0 (c_g real >= 0 when
    # c_e = 0), matching the PureState convention elementwise.
    m = np.sqrt(cE.real * cE.real + cE.imag * cE.imag)
    mg = np.sqrt(cG.real * cG.real + cG.imag * cG.imag)
    pos = m > 0.0
    num = np.where(pos, np.conj(cE), np.conj(cG))
    den = np.where(pos, m, np.where(mg > 0.0, mg, 1.0))
    rot = num / den
    return cE * rot, cG * rot


def _simulate(cfg: SimConfig, indices):
    """Advance the given trajectory indices in lockstep.

    Returns (recorded_steps, rec, final) where rec maps each of
    ``_REC_NAMES`` to an array of shape (n_recorded, len(indices)) and
    final holds the final amplitudes (EXACT) or Bloch components
    (FIRST_ORDER).
    """
    hom = cfg.homodyne
    law = cfg.law
    alpha = hom.alpha_mag
    sgt = hom.sqrt_gamma_tau
    n = len(indices)
    xi = _noise_matrix(cfg, indices)
    ks = _recorded_steps(cfg.steps, cfg.record_stride)
    row_of = {int(k): r for r, k in enumerate(ks)}
    rec = {name: np.zeros((len(ks), n), dtype=np.float64) for name in _REC_NAMES}
    pending = np.zeros((n, cfg.delay), dtype=np.float64)

    def record(r, sx, sy, sz, dn_total, dn_qf, shift):
        rec["sx"][r] = sx
        rec["sy"][r] = sy
        rec["sz"][r] = sz
        rec["dn_total"][r] = dn_total
        rec["dn_qf"][r] = dn_qf
        rec["shift"][r] = shift

    if hom.mode is UpdateMode.EXACT:
        psi0 = state_from_bloch(cfg.initial)
        cE = np.full(n, complex(psi0.c_e), dtype=np.complex128)
        cG = np.full(n, complex(psi0.c_g), dtype=np.complex128)
        damp = 1.0 - 0.5 * hom.gamma_tau
        # Step 0 is the initial condition itself; record it verbatim rather
        # than the amplitude round trip, which can be off by an ulp.
        record(0, cfg.initial.sx, cfg.initial.sy, cfg.initial.sz, 0.0, 0.0, 0.0)
        for k in range(cfg.steps):
            shift = pending[:, 0]
            if law.enabled:
                phi = sgt * (shift / alpha)
                hc = np.cos(0.5 * phi)
                hs = np.sin(0.5 * phi)
                cE, cG = hc * cE - hs * cG, hs * cE + hc * cG
            prod = np.conj(cE) * cG
            dn_qf = _record_mean(2.0 * prod.real, hom) + alpha * xi[:, k]
            dn_total = dn_qf + shift
            kap = sgt * (dn_qf / alpha)
            cE, cG = cE * damp, cG + cE * kap
            nrm = np.sqrt(cE.real**2 + cE.imag**2 + cG.real**2 + cG.imag**2)
            cE = cE / nrm
            cG = cG / nrm
            cE, cG = _canonical_phase(cE, cG)
            if law.enabled:
                new = (2.0 * alpha) * feedback_amplitude(dn_qf, law, hom)
                pending = np.concatenate((pending[:, 1:], new[:, None]), axis=1)
            r = row_of.get(k + 1)
            if r is not None:
                prod = np.conj(cE) * cG
                record(r, 2.0 * prod.real, 2.0 * prod.imag,
                       (cE.real**2 + cE.imag**2) - (cG.real**2 + cG.imag**2),
                       dn_total, dn_qf, shift)
        final = ("exact", cE, cG)
    else:
        sx = np.full(n, cfg.initial.sx, dtype=np.float64)
        sy = np.full(n, cfg.initial.sy, dtype=np.float64)
        sz = np.full(n, cfg.initial.sz, dtype=np.float64)
        cz = law.cos_theta_bar if law.enabled else -1.0
        record(0, sx, sy, sz, 0.0, 0.0, 0.0)
        for k in range(cfg.steps):
            shift = pending[:, 0]
            dn_qf = alpha * xi[:, k]
            dn_total = dn_qf + shift
            kap = sgt * (dn_qf / alpha)
            fx, fy, fz = _step_field(sx, sy, sz, cz)
            sx = sx + kap * fx
            sy = sy + kap * fy
            sz = sz + kap * fz
            nrm = np.sqrt(sx * sx + sy * sy + sz * sz)
            sx = sx / nrm
            sy = sy / nrm
            sz = sz / nrm
            if law.enabled:
                new = (2.0 * alpha) * feedback_amplitude(dn_qf, law, hom)
                pending = np.concatenate((pending[:, 1:], new[:, None]), axis=1)
            r = row_of.get(k + 1)
            if r is not None:
                record(r, sx, sy, sz, dn_total, dn_qf, shift)
        final = ("first", sx, sy, sz)

    for name in _REC_NAMES:
        if not np.all(np.isfinite(rec[name])):
            raise RuntimeError(f"trajectory kernel produced non-finite {name}")
    return ks, rec, final


def _simulate_chunk(args):
    # Worker entry point: statistics need only the recorded arrays.
    cfg, indices = args
    _, rec, _ = _simulate(cfg, indices)
    return rec


def step_trajectory(
    psi: PureState, fb: FeedbackState, cfg: SimConfig, rng: np.random.Generator
) -> tuple[PureState, FeedbackState, MeasurementOutcome]:
    """Advance a single trajectory by one measurement interval.

    Scalar reference cycle: drive by the pending shift (EXACT mode, law
    enabled), draw the record, apply the conditioned update, advance the
    feedback queue.  :func:`run_trajectory` applies the same cycle in
    vectorized form; consuming one standard normal per call from ``rng``
    keeps the two paths on the same noise sequence.
    """
    hom = cfg.homodyne
    law = cfg.law
    shift = fb.pending[0]
    if hom.mode is UpdateMode.EXACT:
        if law.enabled:
            psi = _drive(psi, shift, hom)
        out = sample_outcome_conditioned(psi, shift, hom, rng)
        psi = conditioned_update_exact(psi, out.dn_qf, hom)
    else:
        out = sample_outcome(shift, hom, rng)
        s = bloch_from_state(psi)
        ds = combined_diffusion_step(s, out.dn_qf, law, hom)
        vx, vy, vz = s.sx + ds.sx, s.sy + ds.sy, s.sz + ds.sz
        nrm = math.sqrt(vx * vx + vy * vy + vz * vz)
        psi = state_from_bloch(BlochVector(vx / nrm, vy / nrm, vz / nrm))
    if law.enabled:
        fb = advance_feedback(fb, out.dn_qf, law, hom)
    return psi, fb, out


def _drive(psi: PureState, shift: float, hom: HomodyneConfig) -> PureState:
    # Coherent rotation about s_y by sqrt(gamma tau) * shift / alpha, the
    # first-order effect of the fed-back field on the atom.
    phi = hom.sqrt_gamma_tau * (shift / hom.alpha_mag)
    hc = math.cos(0.5 * phi)
    hs = math.sin(0.5 * phi)
    return PureState(hc * psi.c_e - hs * psi.c_g, hs * psi.c_e + hc * psi.c_g)


def run_trajectory(cfg: SimConfig, trajectory_index: int = 0) -> TrajectoryRecord:
    """Run one trajectory and return its recorded history.

    The result is bitwise identical to the corresponding column of an
    ensemble run containing the same index.
    """
    if trajectory_index < 0:
        raise ValueError(f"trajectory_index must be nonnegative, got {trajectory_index!r}")
    ks, rec, final = _simulate(cfg, [trajectory_index])
    if final[0] == "exact":
        final_state = PureState(complex(final[1][0]), complex(final[2][0]))
    else:
        final_state = state_from_bloch(
            BlochVector(float(final[1][0]), float(final[2][0]), float(final[3][0]))
        )
    bloch = np.column_stack((rec["sx"][:, 0], rec["sy"][:, 0], rec["sz"][:, 0]))
    return TrajectoryRecord(
        trajectory_index=trajectory_index,
        steps=ks,
        gamma_t=ks * cfg.homodyne.gamma_tau,
        bloch=bloch,
        dn_total=rec["dn_total"][:, 0].copy(),
        dn_qf=rec["dn_qf"][:, 0].copy(),
        shift=rec["shift"][:, 0].copy(),
        final_state=final_state,
    )


def _row_var(x: np.ndarray) -> np.ndarray:
    # Unbiased variance along axis 1, pivoted on the first column so that
    # identical columns give exactly 0.0 rather than rounding residue.
    d = x - x[:, :1]
    m = np.mean(d, axis=1, keepdims=True)
    return np.sum((d - m) ** 2, axis=1) / (x.shape[1] - 1)


def _row_mean(x: np.ndarray) -> np.ndarray:
    # Mean along axis 1, pivoted the same way, so identical columns
    # average to exactly their common value (summing 10^4 equal floats
    # directly can land an ulp off while the variance is exactly zero).
    return x[:, 0] + np.mean(x - x[:, :1], axis=1)


def run_ensemble(cfg: SimConfig, workers: int = 1) -> EnsembleStats:
    """Run the configured ensemble and aggregate per-step statistics.

    Parameters
    ----------
    cfg : SimConfig
        Needs ``trajectories >= 2`` for meaningful variances.
    workers : int
        Process count.  Any value yields bitwise identical statistics:
        trajectories own index-keyed streams, chunks are reassembled in
        index order, and every reduction runs over the full arrays.
    """
    if cfg.trajectories < 2:
        raise ValueError("ensemble statistics need at least 2 trajectories")
    if workers < 1:
        raise ValueError(f"workers must be a positive int, got {workers!r}")
    idx = np.arange(cfg.trajectories)
    if workers == 1 or cfg.trajectories < 2 * workers:
        parts = [_simulate_chunk((cfg, idx))]
    else:
        chunks = np.array_split(idx, workers)
        methods = multiprocessing.get_all_start_methods()
        ctx = multiprocessing.get_context("fork" if "fork" in methods else None)
        with ctx.Pool(processes=workers) as pool:
            parts = pool.map(_simulate_chunk, [(cfg, c) for c in chunks])
    ks = _recorded_steps(cfg.steps, cfg.record_stride)
    stacked = {
        name: np.concatenate([p[name] for p in parts], axis=1) for name in _REC_NAMES
    }
    comps = ("sx", "sy", "sz")
    mean = np.column_stack([_row_mean(stacked[c]) for c in comps])
    var = np.column_stack([_row_var(stacked[c]) for c in comps])
    se = np.sqrt(var / cfg.trajectories)
    target = cfg.law.target if cfg.law.enabled else cfg.initial
    # 1 - |s - t|^2/4 equals the target overlap for unit vectors; the
    # subtracted form is exactly 1.0 for trajectories sitting on the target.
    dev = (
        (stacked["sx"] - target.sx) ** 2
        + (stacked["sy"] - target.sy) ** 2
        + (stacked["sz"] - target.sz) ** 2
    )
    fidelity = np.mean(1.0 - 0.25 * dev, axis=1)
    purity = 0.5 * (1.0 + mean[:, 0] ** 2 + mean[:, 1] ** 2 + mean[:, 2] ** 2)
    if np.all(np.abs(stacked["sy"]) <= PLANE_TOL):
        angle_var = _row_var(np.arctan2(stacked["sx"], stacked["sz"]))
    else:
        angle_var = None
    return EnsembleStats(
        n_trajectories=cfg.trajectories,
        target=target,
        steps=ks,
        gamma_t=ks * cfg.homodyne.gamma_tau,
        mean=mean,
        var=var,
        se=se,
        fidelity=fidelity,
        purity=purity,
        angle_var=angle_var,
    )


def angle_variance(stats: EnsembleStats, step: int) -> float:
    """Across-trajectory variance of the polar angle at a recorded step.

    Raises
    ------
    ValueError
        If the run left the s_y = 0 plane (the polar angle does not
        capture the state then) or the step was not recorded.
    """
    if stats.angle_var is None:
        raise ValueError(
            "angle statistics are defined only for runs confined to the s_y = 0 plane"
        )
    rows = np.nonzero(stats.steps == step)[0]
    if rows.size == 0:
        raise ValueError(f"step {step!r} is not among the recorded steps")
    return float(stats.angle_var[rows[0]])
