import numpy as np
import pytest

from lipshare.arbitration import (
    ArbitrationLoop,
    ArbitrationTrace,
    BlendConfig,
    blend,
    reactive_rmse,
    replay,
    voluntary_effort,
    voluntary_ratio,
)
from lipshare.data import Demonstration, apply_standardizer, fit_standardizer, make_windows
from lipshare.errors import InsufficientData, InvalidValue, ShapeMismatch, StreamTooShort
from lipshare.gate import GateConfig, train_gate
from lipshare.hmm import FitConfig, decode, fit_baum_welch
from lipshare.lipschitz import mode_quotients, select_threshold
from lipshare.policy import PolicyConfig, train_policy
from lipshare.segmentation import GateLabels, make_gate_labels, split_rv
from lipshare.synthgen import default_config, generate

W = 3


def test_blend_examples():
    u, a, b = blend([1.0, 2.0], [9.0, 9.0], 1)
    np.testing.assert_array_equal(u, [1.0, 2.0])
    assert (a, b) == (1.0, 0.0)
    u, a, b = blend([7.0, -7.0], [3.0, 4.0], 0, BlendConfig(beta_adjust=0.5))
    np.testing.assert_array_equal(u, [3.0, 4.0])
    assert (a, b) == (0.0, 1.0)
    u, _, _ = blend([1.0, 0.0], [0.0, 2.0], 1, BlendConfig(beta_adjust=0.5))
    np.testing.assert_array_equal(u, [1.0, 1.0])


def test_blend_checks():
    with pytest.raises(ShapeMismatch):
        blend([1.0], [1.0, 2.0], 1)
    with pytest.raises(InvalidValue):
        BlendConfig(beta_adjust=1.5)
    with pytest.raises(InvalidValue):
        BlendConfig(voluntary_source="telepathy")


def _trace(h, u_v, beta_adjust=0.0, u_r=None, u_ref=None):
    h = np.asarray(h)
    n = len(h)
    u_v = np.asarray(u_v, dtype=float)
    u_r = np.zeros_like(u_v) if u_r is None else np.asarray(u_r, dtype=float)
    alpha = np.where(h == 1, 1.0, 0.0)
    beta = np.where(h == 1, beta_adjust, 1.0)
    u_hat = alpha[:, None] * u_r + beta[:, None] * u_v
    return ArbitrationTrace(np.arange(n), np.arange(n) * 0.1, np.zeros(n, dtype=int), h, alpha, beta, u_r, u_v,
                            u_hat, u_v if u_ref is None else np.asarray(u_ref, dtype=float))


def test_metric_examples():
    vol = np.tile([0.0, 2.0], (5, 1))
    assert voluntary_effort(_trace(np.ones(5, dtype=int), vol)) == 0.0
    assert voluntary_effort(_trace(np.zeros(5, dtype=int), vol)) == 2.0
    assert voluntary_ratio(_trace(np.ones(5, dtype=int), vol)) == 0.0
    assert voluntary_ratio(_trace(np.zeros(5, dtype=int), vol)) == 1.0
    assert np.isnan(reactive_rmse(_trace(np.zeros(5, dtype=int), vol)))
    tr = _trace([1, 1, 0], np.zeros((3, 1)), u_r=[[1.0], [-1.0], [50.0]], u_ref=[[0.0], [0.0], [0.0]])
    assert reactive_rmse(tr) == 1.0
    with pytest.raises(InsufficientData):
        voluntary_ratio(_trace(np.zeros(0, dtype=int), np.zeros((0, 2))))


@pytest.fixture(scope="module")
def linear_setup():
    """One noiseless functional mode, a constant-1 gate and an exact linear policy."""
    cfg = default_config(n_modes=1, n_spontaneous=0, sigma_act=0.0, d_raw=3, l=2, T=600, n_demos=2)
    ds = generate(cfg)
    stats = fit_standardizer(ds)
    z = apply_standardizer(ds, stats)
    hmm, _ = fit_baum_welch([d.obs for d in z.demos], 1, FitConfig(restarts=1))
    ss = make_windows(z, W)
    seg = split_rv(mode_quotients(ss, np.zeros(len(ss), dtype=int), 1), np.inf)
    gate_on = train_gate(ss, make_gate_labels(seg))
    gate_off = train_gate(ss, GateLabels(np.zeros(len(ss), dtype=int), np.zeros(len(ss), dtype=int)))
    policy = train_policy(seg, ss, PolicyConfig(ridge=1e-12))
    return ds, hmm, gate_on, gate_off, policy, stats


def test_constant_gate_and_exact_policy(linear_setup):
    ds, hmm, gate_on, _, policy, stats = linear_setup
    trace = replay(ds, hmm, gate_on, policy, stats, W)
    assert len(trace) == sum(len(d) - W + 1 for d in ds.demos)
    assert voluntary_ratio(trace) == 0.0
    assert reactive_rmse(trace) < 1e-6
    assert np.all(trace.u_hat == trace.u_reactive)


def test_gate_off_passes_recorded_action(linear_setup):
    ds, hmm, _, gate_off, policy, stats = linear_setup
    trace = replay(ds, hmm, gate_off, policy, stats, W, BlendConfig(beta_adjust=0.5))
    assert voluntary_ratio(trace) == 1.0
    assert np.array_equal(trace.u_hat, trace.u_ref)


def test_stream_too_short(linear_setup):
    ds, hmm, gate_on, _, policy, stats = linear_setup
    short = ds.demos[0]
    short = Demonstration("s", short.t[: W - 1], short.obs[: W - 1], short.act[: W - 1])
    with pytest.raises(StreamTooShort):
        replay(short, hmm, gate_on, policy, stats, W)


def test_window_mismatch_rejected(linear_setup):
    ds, hmm, gate_on, _, policy, stats = linear_setup
    with pytest.raises(ShapeMismatch):
        replay(ds, hmm, gate_on, policy, stats, W + 1)


@pytest.fixture(scope="module")
def mixed_setup():
    """Small four-mode pipeline with a k-NN gate that switches on and off."""
    ds = generate(default_config(T=1600, n_demos=2, seed=3))
    stats = fit_standardizer(ds)
    z = apply_standardizer(ds, stats)
    feats = [d.obs for d in z.demos]
    hmm, _ = fit_baum_welch(feats, 4, FitConfig(restarts=1, max_iters=30))
    ss = make_windows(z, W)
    modes = ss.lift(decode(hmm, feats))
    reports = mode_quotients(ss, modes, 4)
    seg = split_rv(reports, select_threshold(reports, 70))
    gate = train_gate(ss, make_gate_labels(seg), GateConfig(k=3), n_modes=4)
    policy = train_policy(seg, ss)
    return ds, hmm, gate, policy, stats


@pytest.mark.parametrize("source", ["recorded", "zero", "noise"])
def test_replay_matches_step_loop(mixed_setup, source):
    ds, hmm, gate, policy, stats = mixed_setup
    cfg = BlendConfig(beta_adjust=0.3, voluntary_source=source, seed=11)
    demo = ds.demos[0]
    trace = replay(demo, hmm, gate, policy, stats, W, cfg)
    assert 0 < voluntary_ratio(trace) < 1
    loop = ArbitrationLoop(hmm, gate, policy, stats, W, cfg)
    z_act = (demo.act - stats.act_mean) / stats.act_std
    k = 0
    for t in range(len(demo)):
        step = loop.step(demo.obs[t], trace.u_voluntary[k] if t >= W - 1 else z_act[t])
        if t < W - 1:
            assert step is None
            continue
        assert step.t_index == trace.t_index[k]
        assert step.mode == trace.mode[k] and step.h == trace.h[k]
        np.testing.assert_array_equal(step.u_reactive, trace.u_reactive[k])
        np.testing.assert_array_equal(step.u_hat, trace.u_hat[k])
        k += 1
    assert k == len(trace)


def test_replay_is_causal(mixed_setup):
    ds, hmm, gate, policy, stats = mixed_setup
    demo = ds.demos[1]
    full = replay(demo, hmm, gate, policy, stats, W)
    for cut in (W, 57, len(demo) // 2):
        prefix = Demonstration(demo.id, demo.t[:cut], demo.obs[:cut], demo.act[:cut])
        part = replay(prefix, hmm, gate, policy, stats, W)
        n = len(part)
        assert n == cut - W + 1
        for name in ("mode", "h", "u_reactive", "u_hat"):
            np.testing.assert_array_equal(getattr(part, name), getattr(full, name)[:n])


def test_replay_deterministic_and_seeded(mixed_setup):
    ds, hmm, gate, policy, stats = mixed_setup
    cfg = BlendConfig(voluntary_source="noise", seed=5)
    a = replay(ds, hmm, gate, policy, stats, W, cfg)
    b = replay(ds, hmm, gate, policy, stats, W, cfg)
    np.testing.assert_array_equal(a.u_hat, b.u_hat)
    c = replay(ds, hmm, gate, policy, stats, W, BlendConfig(voluntary_source="noise", seed=6))
    assert not np.array_equal(a.u_voluntary, c.u_voluntary)


def test_blend_identity_in_trace(mixed_setup):
    ds, hmm, gate, policy, stats = mixed_setup
    tr = replay(ds, hmm, gate, policy, stats, W, BlendConfig(beta_adjust=0.25))
    np.testing.assert_array_equal(tr.u_hat, tr.alpha[:, None] * tr.u_reactive + tr.beta[:, None] * tr.u_voluntary)
    on = tr.h == 1
    assert np.all(tr.alpha[on] == 1.0) and np.all(tr.beta[on] == 0.25)
    assert np.all(tr.alpha[~on] == 0.0) and np.all(tr.beta[~on] == 1.0)


def test_trace_csv(tmp_path, mixed_setup):
    ds, hmm, gate, policy, stats = mixed_setup
    tr = replay(ds.demos[0], hmm, gate, policy, stats, W)
    tr.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0].startswith("t,mode,h,alpha,beta,u_r_1,")
    assert len(lines) == len(tr) + 1
    assert set(tr.summary()) == {"steps", "voluntary_ratio", "voluntary_effort", "reactive_rmse"}
