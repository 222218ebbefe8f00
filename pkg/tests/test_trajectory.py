"""Trajectory, ensemble, and reproducibility tests.

Oracles:
* the closed-form unconditional evolution (master_evolve) for ensemble
  means;
* frozen golden trajectory files under tests/data/ that pin the exact
  noise-to-state mapping bit for bit (regenerate only after an intended
  behavior change, never to make a failing test pass);
* the scalar step_trajectory cycle as an independent route through the
  same physics as the vectorized kernel.
"""

import json
import math
import pathlib

import numpy as np
import pytest

from monitored_atom import (
    BlochVector,
    DensityMatrix2,
    FeedbackLaw,
    FeedbackState,
    HomodyneConfig,
    PureState,
    SimConfig,
    UpdateMode,
    angle_variance,
    bloch_from_state,
    master_evolve,
    run_ensemble,
    run_trajectory,
    step_trajectory,
    trajectory_seed,
)
from monitored_atom.trajectory import _simulate

DATA = pathlib.Path(__file__).parent / "data"

EXACT_CFG = HomodyneConfig(alpha_mag=100.0, gamma_tau=1e-4, mode=UpdateMode.EXACT)
FO_CFG = HomodyneConfig(alpha_mag=100.0, gamma_tau=1e-4, mode=UpdateMode.FIRST_ORDER)


def test_master_evolve_closed_form():
    rho = DensityMatrix2(0.3, -0.4, 0.5)
    out = master_evolve(rho, 0.7)
    assert math.isclose(out.ux, 0.3 * math.exp(-0.35), rel_tol=1e-15)
    assert math.isclose(out.uy, -0.4 * math.exp(-0.35), rel_tol=1e-15)
    assert math.isclose(out.uz, -1.0 + 1.5 * math.exp(-0.7), rel_tol=1e-14)
    ident = master_evolve(rho, 0.0)
    assert math.isclose(ident.ux, 0.3, rel_tol=1e-15)
    assert math.isclose(ident.uz, 0.5, rel_tol=1e-15)


def test_master_evolve_excited_half_life():
    """After gamma*t = ln 2 the excited state has half its population left,
    so the inversion crosses zero."""
    out = master_evolve(DensityMatrix2(0.0, 0.0, 1.0), math.log(2.0))
    assert abs(out.uz) <= 1e-15


def test_master_evolve_ground_is_stationary():
    out = master_evolve(DensityMatrix2(0.0, 0.0, -1.0), 3.0)
    assert (out.ux, out.uy, out.uz) == (0.0, 0.0, -1.0)


def test_density_matrix_validation():
    with pytest.raises(ValueError, match="exceeds 1"):
        DensityMatrix2(1.0, 1.0, 0.0)
    with pytest.raises(ValueError, match="nonnegative"):
        master_evolve(DensityMatrix2(0.0, 0.0, 0.0), -0.1)
    assert DensityMatrix2(0.0, 0.0, 1.0).purity() == 1.0
    assert DensityMatrix2(0.0, 0.0, 0.0).purity() == 0.5


def test_seed_rule_gives_distinct_reproducible_streams():
    a1 = np.random.default_rng(trajectory_seed(5, 0)).standard_normal(8)
    a2 = np.random.default_rng(trajectory_seed(5, 0)).standard_normal(8)
    b = np.random.default_rng(trajectory_seed(5, 1)).standard_normal(8)
    assert np.array_equal(a1, a2)
    assert not np.array_equal(a1, b)


def test_scalar_and_vector_draws_agree():
    """The kernels pre-draw noise vectors while step_trajectory consumes one
    draw per call; both must see the same sequence from the same stream."""
    g1 = np.random.default_rng(trajectory_seed(17, 3))
    g2 = np.random.default_rng(trajectory_seed(17, 3))
    scalars = np.array([g1.standard_normal() for _ in range(64)])
    assert np.array_equal(scalars, g2.standard_normal(64))


def test_stream_independence():
    draws = np.stack(
        [np.random.default_rng(trajectory_seed(0, i)).standard_normal(5000)
         for i in range(8)]
    )
    corr = np.corrcoef(draws)
    off = corr[~np.eye(8, dtype=bool)]
    assert np.max(np.abs(off)) < 0.05


def _golden_cfg(mode):
    return SimConfig(
        homodyne=HomodyneConfig(alpha_mag=100.0, gamma_tau=1e-4, mode=mode),
        law=FeedbackLaw(enabled=False),
        initial=BlochVector(1.0, 0.0, 0.0),
        steps=100,
        trajectories=1,
        master_seed=20260822,
        record_stride=1,
    )


@pytest.mark.parametrize(
    "mode,fname",
    [
        (UpdateMode.EXACT, "golden_exact.json"),
        (UpdateMode.FIRST_ORDER, "golden_first_order.json"),
    ],
)
def test_golden_trajectory_bitwise(mode, fname):
    """The noise-to-record mapping is pinned bit for bit."""
    blob = json.loads((DATA / fname).read_text())
    rec = run_trajectory(_golden_cfg(mode), 0)
    assert [int(k) for k in rec.steps] == blob["steps"]
    assert np.array_equal(rec.bloch, np.array(blob["bloch"]))
    assert np.array_equal(rec.dn_qf, np.array(blob["dn_qf"]))
    assert np.array_equal(rec.dn_total, np.array(blob["dn_total"]))
    assert np.array_equal(rec.shift, np.array(blob["shift"]))
    assert rec.final_state.c_e == complex(*blob["final_c_e"])
    assert rec.final_state.c_g == complex(*blob["final_c_g"])


def _stats_fields(st):
    return [st.mean, st.var, st.se, st.fidelity, st.purity, st.gamma_t,
            st.angle_var if st.angle_var is not None else np.zeros(1)]


def test_rerun_is_bitwise_identical():
    cfg = SimConfig(
        homodyne=EXACT_CFG,
        law=FeedbackLaw(theta_bar=math.pi / 2.0),
        initial=FeedbackLaw(theta_bar=math.pi / 2.0).target,
        steps=60,
        trajectories=40,
        master_seed=404,
        record_stride=20,
    )
    a = run_ensemble(cfg)
    b = run_ensemble(cfg)
    for x, y in zip(_stats_fields(a), _stats_fields(b)):
        assert np.array_equal(x, y)


@pytest.mark.parametrize("hom,law", [
    (EXACT_CFG, FeedbackLaw(theta_bar=math.pi / 2.0)),
    (FO_CFG, FeedbackLaw(enabled=False)),
])
def test_worker_count_does_not_change_results(hom, law):
    initial = law.target if law.enabled else BlochVector(1.0, 0.0, 0.0)
    cfg = SimConfig(
        homodyne=hom, law=law, initial=initial,
        steps=50, trajectories=30, master_seed=11, record_stride=10,
    )
    serial = run_ensemble(cfg, workers=1)
    parallel = run_ensemble(cfg, workers=3)
    for x, y in zip(_stats_fields(serial), _stats_fields(parallel)):
        assert np.array_equal(x, y)


def test_single_trajectory_matches_its_ensemble_column():
    """Membership in a larger batch must not change a trajectory."""
    cfg = SimConfig(
        homodyne=EXACT_CFG, law=FeedbackLaw(enabled=False),
        initial=BlochVector(1.0, 0.0, 0.0),
        steps=40, trajectories=7, master_seed=2718, record_stride=5,
    )
    _, rec, _ = _simulate(cfg, np.arange(cfg.trajectories))
    for i in (0, 3, 6):
        single = run_trajectory(cfg, i)
        assert np.array_equal(single.bloch[:, 0], rec["sx"][:, i])
        assert np.array_equal(single.bloch[:, 2], rec["sz"][:, i])
        assert np.array_equal(single.dn_qf, rec["dn_qf"][:, i])


@pytest.mark.parametrize("mode", [UpdateMode.EXACT, UpdateMode.FIRST_ORDER])
def test_step_trajectory_agrees_with_kernel(mode):
    """The scalar cycle and the vectorized kernel are independent routes
    through the same update; they share the noise stream and must land on
    the same states to rounding."""
    law = FeedbackLaw(theta_bar=math.pi / 3.0)
    hom = HomodyneConfig(alpha_mag=100.0, gamma_tau=1e-4, mode=mode)
    initial = law.target
    steps = 30
    cfg = SimConfig(
        homodyne=hom, law=law, initial=initial,
        steps=steps, trajectories=1, master_seed=55, delay=2, record_stride=1,
    )
    kernel = run_trajectory(cfg, 0)

    from monitored_atom import state_from_bloch

    psi = state_from_bloch(initial)
    fb = FeedbackState((0.0,) * cfg.delay)
    rng = np.random.default_rng(trajectory_seed(cfg.master_seed, 0))
    for k in range(steps):
        psi, fb, out = step_trajectory(psi, fb, cfg, rng)
        s = bloch_from_state(psi)
        assert np.allclose(
            [s.sx, s.sy, s.sz], kernel.bloch[k + 1], rtol=0.0, atol=2e-11
        )
        assert math.isclose(out.dn_qf, kernel.dn_qf[k + 1], rel_tol=0.0, abs_tol=1e-8)
        assert math.isclose(out.shift, kernel.shift[k + 1], rel_tol=0.0, abs_tol=1e-8)


def test_states_stay_on_the_sphere():
    cfg = SimConfig(
        homodyne=EXACT_CFG, law=FeedbackLaw(theta_bar=2.0),
        initial=FeedbackLaw(theta_bar=2.0).target,
        steps=200, trajectories=3, master_seed=9, record_stride=1,
    )
    rec = run_trajectory(cfg, 1)
    norms = np.linalg.norm(rec.bloch, axis=1)
    assert np.all(np.abs(norms - 1.0) < 1e-12)


def test_record_bookkeeping_and_strides():
    cfg = SimConfig(
        homodyne=FO_CFG, law=FeedbackLaw(theta_bar=0.8),
        initial=FeedbackLaw(theta_bar=0.8).target,
        steps=95, trajectories=1, master_seed=31, delay=4, record_stride=20,
    )
    rec = run_trajectory(cfg, 0)
    assert list(rec.steps) == [0, 20, 40, 60, 80, 95]
    assert np.array_equal(rec.gamma_t, rec.steps * cfg.homodyne.gamma_tau)
    # the identity dn_total = dn_qf + shift holds exactly in every row
    assert np.array_equal(rec.dn_total - rec.shift, rec.dn_qf)
    assert rec.dn_qf[0] == 0.0 and rec.shift[0] == 0.0


def test_zero_steps_records_only_the_initial_state():
    cfg = SimConfig(
        homodyne=EXACT_CFG, law=FeedbackLaw(enabled=False),
        initial=BlochVector(0.0, 1.0, 0.0), steps=0,
        trajectories=1, master_seed=1,
    )
    rec = run_trajectory(cfg, 0)
    assert list(rec.steps) == [0]
    assert np.array_equal(rec.bloch[0], [0.0, 1.0, 0.0])
    s = bloch_from_state(rec.final_state)
    assert np.allclose([s.sx, s.sy, s.sz], [0.0, 1.0, 0.0], atol=1e-12)


def test_delay_queue_shifts_arrive_late():
    """With delay d and theta_bar = pi/2 the shift applied at step k is
    exactly minus the fluctuation recorded at step k - d."""
    delay = 3
    law = FeedbackLaw(theta_bar=math.pi / 2.0)
    cfg = SimConfig(
        homodyne=EXACT_CFG, law=law, initial=law.target,
        steps=12, trajectories=1, master_seed=77, delay=delay, record_stride=1,
    )
    rec = run_trajectory(cfg, 0)
    # rows are steps 0..12; shifts are zero until the queue fills
    for k in range(1, delay + 1):
        assert rec.shift[k] == 0.0
    for k in range(delay + 1, 13):
        assert rec.shift[k] == -rec.dn_qf[k - delay]


def test_ensemble_matches_unconditional_decay():
    """Law-off exact-mode means must follow the closed-form decay; 3
    standard errors with a fixed seed (an out-of-plane state exercises the
    s_y channel too)."""
    for initial in (BlochVector(1.0, 0.0, 0.0), BlochVector(0.0, 1.0, 0.0)):
        cfg = SimConfig(
            homodyne=EXACT_CFG, law=FeedbackLaw(enabled=False), initial=initial,
            steps=300, trajectories=1500, master_seed=6021, record_stride=100,
        )
        st = run_ensemble(cfg)
        rho0 = DensityMatrix2(initial.sx, initial.sy, initial.sz)
        for r in range(st.steps.size):
            want = master_evolve(rho0, float(st.gamma_t[r]))
            for c, w in enumerate((want.ux, want.uy, want.uz)):
                assert abs(st.mean[r, c] - w) <= 3.0 * st.se[r, c] + 1e-14


def test_angle_variance_requires_in_plane_runs():
    cfg = SimConfig(
        homodyne=EXACT_CFG, law=FeedbackLaw(enabled=False),
        initial=BlochVector(0.0, 1.0, 0.0),
        steps=50, trajectories=10, master_seed=3, record_stride=50,
    )
    st = run_ensemble(cfg)
    assert st.angle_var is None
    with pytest.raises(ValueError, match="s_y = 0"):
        angle_variance(st, 50)


def test_angle_variance_lookup():
    law = FeedbackLaw(theta_bar=math.pi / 2.0)
    cfg = SimConfig(
        homodyne=FO_CFG, law=law, initial=law.target,
        steps=40, trajectories=20, master_seed=8, record_stride=10,
    )
    st = run_ensemble(cfg)
    assert angle_variance(st, 0) == 0.0
    assert angle_variance(st, 40) == st.angle_var[-1]
    with pytest.raises(ValueError, match="not among"):
        angle_variance(st, 7)


def test_first_order_law_on_target_is_strictly_fixed():
    """Started on the target, a first-order feedback run never leaves it:
    fidelity is exactly 1 and angle variance exactly 0 at every record."""
    law = FeedbackLaw(theta_bar=2.0 * math.pi / 5.0)
    cfg = SimConfig(
        homodyne=FO_CFG, law=law, initial=law.target,
        steps=300, trajectories=40, master_seed=123, record_stride=75,
    )
    st = run_ensemble(cfg)
    assert np.all(st.fidelity == 1.0)
    assert np.all(st.angle_var == 0.0)
    assert np.all(st.se == 0.0)


def test_exact_mode_stabilization_fidelity():
    """The physical update leaks at second order, so demand mean fidelity
    >= 1 - 10*gamma_tau after 0.01/gamma of feedback."""
    for theta_bar in (0.0, math.pi / 2.0, 3.0 * math.pi / 4.0):
        law = FeedbackLaw(theta_bar=theta_bar)
        cfg = SimConfig(
            homodyne=EXACT_CFG, law=law, initial=law.target,
            steps=100, trajectories=200, master_seed=31415, record_stride=100,
        )
        st = run_ensemble(cfg)
        assert st.fidelity[-1] >= 1.0 - 10.0 * EXACT_CFG.gamma_tau


def test_angle_variance_grows_like_gamma_tau_per_step():
    """At the equator each record kicks the angle by kappa, so the
    variance grows by gamma_tau per step while the walk stays local."""
    law = FeedbackLaw(enabled=False)
    cfg = SimConfig(
        homodyne=FO_CFG, law=law, initial=BlochVector(1.0, 0.0, 0.0),
        steps=100, trajectories=3000, master_seed=271828, record_stride=25,
    )
    st = run_ensemble(cfg)
    for r in range(1, st.steps.size):
        n = float(st.steps[r])
        ratio = st.angle_var[r] / (n * FO_CFG.gamma_tau)
        assert abs(ratio - 1.0) <= 0.1


def test_long_run_guard():
    with pytest.raises(ValueError, match="exceeds"):
        SimConfig(homodyne=EXACT_CFG, law=FeedbackLaw(enabled=False),
                  initial=BlochVector(0.0, 0.0, 1.0), steps=20000, trajectories=1)
    with pytest.warns(UserWarning, match="exceeds"):
        cfg = SimConfig(homodyne=EXACT_CFG, law=FeedbackLaw(enabled=False),
                        initial=BlochVector(0.0, 0.0, -1.0), steps=10001,
                        trajectories=1, allow_long_run=True, record_stride=10001)
    rec = run_trajectory(cfg, 0)
    # the ground state survives arbitrarily long monitoring untouched
    assert np.array_equal(rec.bloch[-1], [0.0, 0.0, -1.0])


def test_sim_config_validation():
    good = dict(homodyne=EXACT_CFG, law=FeedbackLaw(enabled=False),
                initial=BlochVector(0.0, 0.0, 1.0), steps=10, trajectories=2)
    SimConfig(**good)
    with pytest.raises(ValueError, match="steps"):
        SimConfig(**{**good, "steps": -1})
    with pytest.raises(ValueError, match="trajectories"):
        SimConfig(**{**good, "trajectories": 0})
    with pytest.raises(ValueError, match="delay"):
        SimConfig(**{**good, "delay": 0})
    with pytest.raises(ValueError, match="record_stride"):
        SimConfig(**{**good, "record_stride": 0})
    with pytest.raises(ValueError, match="unit length"):
        SimConfig(**{**good, "initial": BlochVector(0.0, 0.0, 0.5)})
    with pytest.raises(ValueError, match="at least 2"):
        run_ensemble(SimConfig(**{**good, "trajectories": 1}))
    with pytest.raises(ValueError, match="workers"):
        run_ensemble(SimConfig(**good), workers=0)
    with pytest.raises(ValueError, match="nonnegative"):
        run_trajectory(SimConfig(**good), -1)


def test_final_state_consistent_with_last_record():
    cfg = SimConfig(
        homodyne=EXACT_CFG, law=FeedbackLaw(enabled=False),
        initial=BlochVector(1.0, 0.0, 0.0),
        steps=25, trajectories=1, master_seed=14, record_stride=25,
    )
    rec = run_trajectory(cfg, 0)
    s = bloch_from_state(rec.final_state)
    assert np.allclose([s.sx, s.sy, s.sz], rec.bloch[-1], rtol=0.0, atol=1e-12)
