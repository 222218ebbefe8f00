"""Coherent feedback that cancels record-driven diffusion to first order.

Each interval's record dn moves the atom as if a classical field of
amplitude dn/(2*alpha) had driven it, plus a smaller nonlinear
back-action.  Feeding a compensating field

    f(dn_qf) = -(1 + cos(theta_bar)) * dn_qf / (2*alpha)

back onto the atom in a later interval turns the net first-order effect
of fluctuation plus feedback into

    ds = kappa * (1 - s_x^2 - cos(theta_bar)*s_z,
                  -s_x*s_y,
                  cos(theta_bar)*s_x - s_x*s_z),

whose stationary set is the whole circle s_z = cos(theta_bar); the target
state (sin(theta_bar), 0, cos(theta_bar)) is a fixed point for every
record value.  The net rotation amplitude left after feedback is
-cos(theta_bar) * dn/(2*alpha): full cancellation at theta_bar = pi/2,
sign reversal at theta_bar = 0, and no feedback at all at theta_bar = pi
(the ground state needs none).

Only the fluctuation part dn_qf of a record may enter the law: the shift
contributed by the previously applied feedback field is known and carries
no information, and compensating it would cancel the feedback itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .state import BlochVector
from .homodyne import HomodyneConfig, _kappa, _step_field

RESIDUAL_GUARD = 1e-12


@dataclass(frozen=True)
class FeedbackLaw:
    """Feedback target and switch.

    Parameters
    ----------
    theta_bar : float
        Polar angle of the state to stabilize, in [0, pi].
    enabled : bool
        Disabled law contributes no field and leaves records unshifted.
    """

    theta_bar: float = math.pi
    enabled: bool = True

    def __post_init__(self):
        if not (math.isfinite(self.theta_bar) and 0.0 <= self.theta_bar <= math.pi):
            raise ValueError(f"theta_bar must lie in [0, pi], got {self.theta_bar!r}")

    @property
    def cos_theta_bar(self) -> float:
        return math.cos(self.theta_bar)

    @property
    def target(self) -> BlochVector:
        """The stabilized state (sin(theta_bar), 0, cos(theta_bar))."""
        return BlochVector(math.sin(self.theta_bar), 0.0, math.cos(self.theta_bar))


@dataclass(frozen=True)
class FeedbackState:
    """Queue of record shifts not yet applied to the atom, earliest first.

    The queue length equals the feedback delay in intervals; a fresh
    queue of zeros means no feedback is pending.
    """

    pending: tuple = (0.0,)

    def __post_init__(self):
        if len(self.pending) < 1:
            raise ValueError("pending queue needs at least one slot (delay >= 1)")
        vals = tuple(float(p) for p in self.pending)
        if not all(math.isfinite(p) for p in vals):
            raise ValueError(f"pending shifts must be finite, got {vals!r}")
        object.__setattr__(self, "pending", vals)

    @property
    def pending_shift(self) -> float:
        """The shift the next interval will apply."""
        return self.pending[0]


def feedback_amplitude(dn_qf, law: FeedbackLaw, cfg: HomodyneConfig):
    """Feedback field amplitude for the fluctuation part of a record.

    f = -(1 + cos(theta_bar)) * dn_qf / (2*alpha); exactly 0 when the law
    is disabled or theta_bar = pi.  Accepts scalar or array dn_qf.
    """
    if not law.enabled:
        return 0.0
    return -(1.0 + law.cos_theta_bar) * (dn_qf / (2.0 * cfg.alpha_mag))


def next_shift(dn_qf, law: FeedbackLaw, cfg: HomodyneConfig) -> FeedbackState:
    """Feedback state whose queue holds the shift this record generates.

    The applied field f displaces the next record's mean by 2*alpha*f,
    so the stored shift is 2*alpha*feedback_amplitude(dn_qf).
    """
    return FeedbackState(((2.0 * cfg.alpha_mag) * feedback_amplitude(dn_qf, law, cfg),))


def advance_feedback(
    fb: FeedbackState, dn_qf, law: FeedbackLaw, cfg: HomodyneConfig
) -> FeedbackState:
    """Pop the shift just applied and append the one this record generates.

    Generalizes :func:`next_shift` to delays longer than one interval
    while keeping the queue length fixed.
    """
    new = (2.0 * cfg.alpha_mag) * feedback_amplitude(dn_qf, law, cfg)
    return FeedbackState(fb.pending[1:] + (new,))


def residual_rotation(dn, law: FeedbackLaw, cfg: HomodyneConfig) -> float:
    """Net rotation amplitude after feedback, dn/(2*alpha) + f(dn).

    Algebraically equal to -cos(theta_bar) * dn/(2*alpha) (or to the bare
    dn/(2*alpha) when the law is disabled); the identity is checked to
    rounding and a violation raises, since it would mean the law and the
    step bookkeeping disagree.

    Raises
    ------
    RuntimeError
        If the computed residual deviates from the closed form by more
        than 1e-12 relative (internal error).
    """
    r = dn / (2.0 * cfg.alpha_mag)
    out = r + feedback_amplitude(dn, law, cfg)
    ref = (-law.cos_theta_bar * r) if law.enabled else r
    if abs(out - ref) > RESIDUAL_GUARD * max(1.0, abs(r)):
        raise RuntimeError(
            f"feedback residual {out!r} deviates from closed form {ref!r} "
            f"beyond rounding"
        )
    return out


def combined_diffusion_step(
    s: BlochVector, dn, law: FeedbackLaw, cfg: HomodyneConfig
) -> BlochVector:
    """First-order increment with feedback folded into the same interval.

    This is the zero-delay idealization: the record's rotation and the
    compensating field act together, leaving the stationary circle
    s_z = cos(theta_bar).  With the law disabled it reduces exactly to
    :func:`diffusion_step_first_order`.

    Returns
    -------
    BlochVector
        The increment ds, not the updated vector.
    """
    cz = law.cos_theta_bar if law.enabled else -1.0
    k = _kappa(dn, cfg)
    fx, fy, fz = _step_field(s.sx, s.sy, s.sz, cz)
    return BlochVector(k * fx, k * fy, k * fz)
