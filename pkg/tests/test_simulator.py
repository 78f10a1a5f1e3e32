import math

import numpy as np
import pytest

from qstab.errors import DivergedError, InvalidArgument
from qstab.linalg import LinearSystem
from qstab.noise import NoiseModel, run_seed
from qstab.policy import PolicyKind
from qstab.quantizer import RadialQuantizer, design_bins, uniform_circle
from qstab.simulator import (
    Experiment,
    drift_report,
    ensemble,
    ensemble_compare,
    no_growth,
    replay_residual,
    rollout,
    run_ensemble,
    step,
)

from .conftest import rot

SQ3 = math.sqrt(3.0)


@pytest.fixture
def ref_exp(ref_sys, q8, gauss2):
    return Experiment(ref_sys, q8, gauss2, [10.0, 10.0], 200, 42)


def test_step_examples(ref_sys):
    assert np.array_equal(step(ref_sys, [0, 0], [0], [0, 0]), [0.0, 0.0])
    x1 = step(ref_sys, [10.0, 10.0], [0.0], [0.0, 0.0])
    assert np.allclose(x1, [5 - 5 * SQ3, 5 * SQ3 + 5], atol=1e-12)
    assert np.array_equal(step(ref_sys, [0, 0], [1.0], [0, 0]), [1.0, 0.0])
    with pytest.raises(InvalidArgument):
        step(ref_sys, [0, 0, 0], [0], [0, 0])


def test_rollout_inside_ball_uncontrolled(ref_sys, q8):
    x0 = np.array([3.0, 4.0])
    exp = Experiment(ref_sys, q8, NoiseModel.zero(2), x0, 40, 0)
    tr = rollout(exp)
    assert np.array_equal(tr.controls, np.zeros((40, 1)))
    norms = np.linalg.norm(tr.states, axis=1)
    assert np.max(np.abs(norms - 5.0)) <= 1e-9
    for t in range(40):
        assert np.allclose(tr.states[t + 1], ref_sys.A @ tr.states[t], atol=1e-12)


def test_rollout_baseline_dead_beat(ref_sys, q8):
    rng = np.random.default_rng(0)
    for _ in range(20):
        x0 = rng.standard_normal(2)
        x0 *= 7 * rng.random() / np.linalg.norm(x0)
        tr = rollout(Experiment(ref_sys, q8, NoiseModel.zero(2), x0, 10, 0, "baseline"))
        assert np.max(np.abs(tr.states[2])) <= 1e-12
        assert np.max(np.abs(tr.states[2:])) <= 1e-12


def test_rollout_quantized_first_block(ref_exp):
    exp = Experiment(ref_exp.sys, ref_exp.q, NoiseModel.zero(2), [10.0, 10.0], 2, 0)
    tr = rollout(exp)
    assert np.linalg.norm(tr.states[2]) == pytest.approx(math.sqrt(200) - 7, abs=1e-12)


def test_orthogonal_noiseless_norm_invariant():
    rng = np.random.default_rng(1)
    Q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    sys = LinearSystem(Q, np.eye(4))
    q = RadialQuantizer(1e9, np.eye(4))  # huge ball, so u = 0 everywhere
    x0 = rng.standard_normal(4)
    tr = rollout(Experiment(sys, q, NoiseModel.zero(4), x0, 500, 0))
    norms = np.linalg.norm(tr.states, axis=1)
    assert np.max(np.abs(norms - np.linalg.norm(x0))) <= 1e-9


def test_horizon_truncated_to_blocks(ref_exp):
    exp = Experiment(ref_exp.sys, ref_exp.q, ref_exp.noise, ref_exp.x0, 11, 1)
    tr = rollout(exp)
    assert tr.states.shape == (11, 2) and tr.controls.shape == (10, 1)


def test_replay(ref_exp):
    tr = rollout(ref_exp, seed=77, record_noise=True)
    assert replay_residual(ref_exp.sys, tr) <= 1e-12
    again = rollout(ref_exp, seed=77)
    assert again.states.tobytes() == tr.states.tobytes()
    assert again.controls.tobytes() == tr.controls.tobytes()
    with pytest.raises(InvalidArgument):
        replay_residual(ref_exp.sys, again)


def test_ensemble_single_run_equals_trajectory(ref_exp):
    st = ensemble(ref_exp, 1)
    tr = rollout(ref_exp, seed=run_seed(ref_exp.seed, 0))
    sq = tr.states[:, 0] ** 2 + tr.states[:, 1] ** 2
    assert np.array_equal(st.mean_sq_norm, sq)


def test_ensemble_zero_noise_baseline(ref_sys, q8):
    exp = Experiment(ref_sys, q8, NoiseModel.zero(2), [2.0, -1.0], 50, 3, "baseline")
    st = ensemble(exp, 10)
    assert st.mean_sq_norm[0] == 5.0
    assert np.max(st.mean_sq_norm[2:]) <= 1e-24


def test_ensemble_reference_start(ref_exp):
    st = ensemble(ref_exp, 20)
    assert st.mean_sq_norm[0] == 200.0
    assert np.all(st.mean_sq_norm >= 0)


def test_ensemble_thread_independent(ref_exp, monkeypatch):
    monkeypatch.delenv("QSTAB_THREADS", raising=False)
    a = ensemble_compare(ref_exp, 97, threads=1)
    b = ensemble_compare(ref_exp, 97, threads=6)
    for kind in PolicyKind:
        assert a[kind].mean_sq_norm.tobytes() == b[kind].mean_sq_norm.tobytes()
        assert a[kind].drift_deltas.tobytes() == b[kind].drift_deltas.tobytes()
        assert a[kind].max_control_norm == b[kind].max_control_norm


def test_threads_env_cap(ref_exp, monkeypatch):
    monkeypatch.setenv("QSTAB_THREADS", "2")
    a = ensemble(ref_exp, 30, threads=8)
    monkeypatch.setenv("QSTAB_THREADS", "nope")
    with pytest.raises(InvalidArgument):
        ensemble(ref_exp, 30)
    monkeypatch.delenv("QSTAB_THREADS")
    assert a.mean_sq_norm.tobytes() == ensemble(ref_exp, 30, threads=1).mean_sq_norm.tobytes()


def test_ensemble_rejects_zero_runs(ref_exp):
    with pytest.raises(InvalidArgument):
        ensemble(ref_exp, 0)


def test_compare_common_random_numbers(ref_sys, q8):
    x0 = np.array([1.0, 2.0])
    exp = Experiment(ref_sys, q8, NoiseModel.zero(2), x0, 20, 0)
    st = ensemble_compare(exp, 4)
    assert np.allclose(st[PolicyKind.QUANTIZED].mean_sq_norm, 5.0, atol=1e-12)
    assert np.max(st[PolicyKind.BASELINE].mean_sq_norm[2:]) <= 1e-24
    # noisy: both policies see identical noise, so the first step matches
    noisy = Experiment(ref_sys, q8, NoiseModel("gaussian_isotropic", 2, 1.0), [10.0, 10.0], 20, 4)
    st = ensemble_compare(noisy, 50)
    assert st[PolicyKind.QUANTIZED].mean_sq_norm[0] == st[PolicyKind.BASELINE].mean_sq_norm[0]


def test_divergence_guard():
    sys = LinearSystem(2.0 * np.eye(2), np.eye(2))
    q = RadialQuantizer(1.0, uniform_circle(8))
    exp = Experiment(sys, q, NoiseModel.zero(2), [100.0, 0.0], 200, 0)
    with pytest.raises(DivergedError) as info:
        ensemble(exp, 3)
    assert info.value.run == 0 and 30 < info.value.t < 45


def test_drift_report_reference(ref_exp):
    st = ensemble(ref_exp, 200)
    reach = ref_exp.reach
    dr = drift_report(st, 7.0, 2, reach.sigma_max_RI, 8.0, math.pi / 8)
    assert dr.sufficient and dr.n_samples >= 30
    assert dr.b_theoretical == pytest.approx(0.4248, abs=1e-4)
    assert dr.conditional_drift_mean <= -dr.b_theoretical + 3 * dr.stderr
    assert dr.consistent
    assert dr.J == pytest.approx(math.sqrt(200))
    assert math.isfinite(dr.fourth_moment_bound_observed)
    for line in dr.lines():
        assert len(line.split()) == 2


def test_drift_zero_noise_baseline(ref_sys, q8):
    exp = Experiment(ref_sys, q8, NoiseModel.zero(2), [30.0, -5.0], 40, 0, "baseline")
    st = ensemble(exp, 2)
    mask = st.drift_norms > 7.0
    assert mask.any()
    # outside the ball the baseline removes exactly r from the norm per block
    assert np.allclose(st.drift_deltas[mask], -7.0, atol=1e-12)
    assert np.all(st.drift_deltas[mask] < 0)


def test_drift_insufficient_samples(ref_sys, q8):
    exp = Experiment(ref_sys, q8, NoiseModel.zero(2), [1.0, 0.0], 20, 0)
    dr = drift_report(ensemble(exp, 1), 7.0, 2, math.sqrt(2), 0.0, q8.phi)
    assert not dr.sufficient and dr.n_samples == 0 and not dr.consistent


def test_drift_more_negative_for_larger_radius(ref_sys, gauss2):
    reach = ref_sys.reach
    r_min = 6.2150958961201512
    means = []
    for r in (1.1 * r_min, 10 * r_min):
        q = design_bins(2, r, math.pi / 8)
        exp = Experiment(ref_sys, q, gauss2, [100.0, 100.0], 200, 5)
        st = ensemble(exp, 300)
        means.append(drift_report(st, r, 2, reach.sigma_max_RI, 8.0, q.phi).conditional_drift_mean)
    assert means[1] < means[0]


def test_no_growth_detects_growth():
    t = np.arange(201.0)
    assert no_growth(5 + 0 * t).passed
    assert not no_growth(1 + t).passed
    assert not no_growth(np.exp(t / 20)).passed
    with pytest.raises(InvalidArgument):
        no_growth([1.0, 2.0])


def test_fourth_difference_stable_in_horizon(ref_sys, q8, gauss2):
    vals = []
    for T in (200, 400):
        exp = Experiment(ref_sys, q8, gauss2, [10.0, 10.0], T, 42)
        vals.append(ensemble(exp, 1000).fourth_diff_max)
    assert max(vals) / min(vals) < 2.0


def test_experiment_validation(ref_sys, q8, gauss2):
    with pytest.raises(InvalidArgument):
        Experiment(ref_sys, q8, gauss2, [1.0, 2.0, 3.0])
    with pytest.raises(InvalidArgument):
        Experiment(ref_sys, q8, NoiseModel.zero(3), [1.0, 2.0])


def test_non_orthogonal_simulation_allowed(q8, gauss2):
    sys = LinearSystem(np.diag([0.5, 0.9]), np.eye(2))
    st = run_ensemble(Experiment(sys, q8, gauss2, [10.0, 10.0], 50, 0), 20, ["quantized"])
    assert np.all(np.isfinite(st[PolicyKind.QUANTIZED].mean_sq_norm))
