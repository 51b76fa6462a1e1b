"""Predictability-gated blending of reactive and voluntary control.

At each step the commanded action is ``u_hat = alpha * u_r + beta * u_v`` where
``u_r`` comes from the reactive policy and ``u_v`` from the human. When the
gate reports the observation as predictable, ``alpha = 1`` and
``beta = beta_adjust``; otherwise ``alpha = 0`` and ``beta = 1``.
"""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import Demonstration, StandardizationStats, window_frames
from .errors import InsufficientData, InvalidValue, ShapeMismatch, StreamTooShort
from .gate import GateClassifier
from .hmm import ForwardFilter, GaussianHmm
from .lipschitz import _fmt
from .policy import ReactivePolicy, predict_by_mode

RECORDED = "recorded"
ZERO = "zero"
NOISE = "noise"


@dataclass(frozen=True)
class BlendConfig:
    """``voluntary_source`` picks the simulated human input during replay.

    ``recorded`` replays the expert's action, ``zero`` sends nothing and
    ``noise`` adds Gaussian noise of std ``noise_sigma`` to the expert action.
    """

    beta_adjust: float = 0.0
    voluntary_source: str = RECORDED
    noise_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.beta_adjust <= 1.0:
            raise InvalidValue("beta_adjust must lie in [0, 1]")
        if self.voluntary_source not in (RECORDED, ZERO, NOISE):
            raise InvalidValue(f"unknown voluntary source {self.voluntary_source!r}")
        if self.noise_sigma < 0:
            raise InvalidValue("noise_sigma must be nonnegative")


def weights(h: int, cfg: BlendConfig):
    return (1.0, cfg.beta_adjust) if h == 1 else (0.0, 1.0)


def blend(u_r, u_v, h: int, cfg: BlendConfig = BlendConfig()):
    """Return ``(u_hat, alpha, beta)`` for one step."""
    u_r = np.asarray(u_r, dtype=float)
    u_v = np.asarray(u_v, dtype=float)
    if u_r.shape != u_v.shape:
        raise ShapeMismatch(f"reactive {u_r.shape} and voluntary {u_v.shape} commands differ in shape")
    alpha, beta = weights(int(h), cfg)
    return alpha * u_r + beta * u_v, alpha, beta


@dataclass(frozen=True)
class ArbitrationStep:
    t_index: int
    mode: int
    h: int
    alpha: float
    beta: float
    u_reactive: np.ndarray
    u_voluntary: np.ndarray
    u_hat: np.ndarray
    u_ref: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class ArbitrationTrace:
    """Column-wise record of a replay; row ``k`` is stream frame ``t_index[k]``."""

    t_index: np.ndarray
    t: np.ndarray
    mode: np.ndarray
    h: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    u_reactive: np.ndarray
    u_voluntary: np.ndarray
    u_hat: np.ndarray
    u_ref: np.ndarray

    def __len__(self):
        return len(self.t_index)

    def __getitem__(self, k) -> ArbitrationStep:
        return ArbitrationStep(
            int(self.t_index[k]), int(self.mode[k]), int(self.h[k]), float(self.alpha[k]), float(self.beta[k]),
            self.u_reactive[k], self.u_voluntary[k], self.u_hat[k], self.u_ref[k],
        )

    def summary(self) -> dict:
        return {
            "steps": len(self),
            "voluntary_ratio": voluntary_ratio(self),
            "voluntary_effort": voluntary_effort(self),
            "reactive_rmse": reactive_rmse(self),
        }

    def to_csv(self, path) -> None:
        l = self.u_hat.shape[1]
        header = ["t", "mode", "h", "alpha", "beta"]
        for name in ("u_r", "u_v", "u_hat"):
            header += [f"{name}_{k + 1}" for k in range(l)]
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for k in range(len(self)):
                row = [_fmt(self.t[k]), int(self.mode[k]), int(self.h[k]), _fmt(self.alpha[k]), _fmt(self.beta[k])]
                for arr in (self.u_reactive, self.u_voluntary, self.u_hat):
                    row += [_fmt(v) for v in arr[k]]
                writer.writerow(row)


def concat_traces(traces: Sequence[ArbitrationTrace]) -> ArbitrationTrace:
    fields = ArbitrationTrace.__dataclass_fields__
    return ArbitrationTrace(**{name: np.concatenate([getattr(tr, name) for tr in traces]) for name in fields})


def _check_trace(trace: ArbitrationTrace):
    if len(trace) == 0:
        raise InsufficientData("empty trace")


def voluntary_ratio(trace: ArbitrationTrace) -> float:
    _check_trace(trace)
    return float(np.mean(trace.h == 0))


def voluntary_effort(trace: ArbitrationTrace) -> float:
    """Mean weighted magnitude ``beta * |u_v|`` of the human input."""
    _check_trace(trace)
    return float(np.mean(trace.beta * np.linalg.norm(trace.u_voluntary, axis=1)))


def reactive_rmse(trace: ArbitrationTrace) -> float:
    """RMSE of the reactive command against the reference on gated-in steps (nan if none)."""
    _check_trace(trace)
    sel = trace.h == 1
    if not np.any(sel):
        return float("nan")
    err = trace.u_reactive[sel] - trace.u_ref[sel]
    return float(np.sqrt(np.mean(np.sum(err * err, axis=1))))


def _check_models(hmm, gate, policy, stats, window, channels):
    d_raw = stats.d_raw
    n_hmm = d_raw if channels is None else len(channels)
    if hmm.dim != n_hmm:
        raise ShapeMismatch(f"HMM expects {hmm.dim} channels, stream provides {n_hmm}")
    if gate.dim != d_raw * window or policy.dim != d_raw * window:
        raise ShapeMismatch(f"gate/policy dimension does not match window {window} x {d_raw} channels")
    if gate.window not in (None, window) or policy.window not in (None, window):
        raise ShapeMismatch("models were trained with a different window")


def _voluntary(u_ref, cfg: BlendConfig, rng):
    if cfg.voluntary_source == RECORDED:
        return u_ref.copy()
    if cfg.voluntary_source == ZERO:
        return np.zeros_like(u_ref)
    return u_ref + cfg.noise_sigma * rng.normal(size=u_ref.shape)


class ArbitrationLoop:
    """Step-by-step online controller.

    Feed raw frames with :meth:`step`; it returns None until the window is full.
    """

    def __init__(self, hmm: GaussianHmm, gate: GateClassifier, policy: ReactivePolicy,
                 stats: StandardizationStats, window: int, cfg: BlendConfig = BlendConfig(),
                 channels: Optional[Sequence[int]] = None):
        _check_models(hmm, gate, policy, stats, window, channels)
        self.gate, self.policy, self.stats, self.window, self.cfg = gate, policy, stats, window, cfg
        self.channels = None if channels is None else list(channels)
        self.filter = ForwardFilter(hmm)
        self.frames = deque(maxlen=window)
        self.t = -1
        self.rng = np.random.default_rng(cfg.seed)

    def step(self, o_raw, u_voluntary) -> Optional[ArbitrationStep]:
        self.t += 1
        z = (np.asarray(o_raw, dtype=float) - self.stats.obs_mean) / self.stats.obs_std
        self.frames.append(z)
        post = self.filter.update(z if self.channels is None else z[self.channels])
        if len(self.frames) < self.window:
            return None
        mode = int(np.argmax(post))
        o = np.concatenate(self.frames)
        h = int(self.gate.predict(mode, o)[0])
        u_r = self.policy.predict(mode, o)[0]
        u_hat, alpha, beta = blend(u_r, u_voluntary, h, self.cfg)
        return ArbitrationStep(self.t, mode, h, alpha, beta, u_r, np.asarray(u_voluntary, dtype=float), u_hat)


def replay_stream(demo: Demonstration, hmm: GaussianHmm, gate: GateClassifier, policy: ReactivePolicy,
                  stats: StandardizationStats, window: int, cfg: BlendConfig = BlendConfig(),
                  channels: Optional[Sequence[int]] = None) -> ArbitrationTrace:
    """Run the shared-control loop over one recorded stream (raw units).

    The mode estimate is the argmax of the causal forward filter. Gate and
    policy are evaluated for all steps at once; since each of them only sees
    the window ending at its own step, the result equals the step-by-step
    :class:`ArbitrationLoop`.
    """
    _check_models(hmm, gate, policy, stats, window, channels)
    T = len(demo)
    if T < window:
        raise StreamTooShort(f"stream has {T} frames, window is {window}")
    if demo.d_raw != stats.d_raw or demo.l != len(stats.act_mean):
        raise ShapeMismatch("stream channels do not match the standardizer")
    z_obs = (demo.obs - stats.obs_mean) / stats.obs_std
    z_act = (demo.act - stats.act_mean) / stats.act_std
    filt = ForwardFilter(hmm)
    feats = z_obs if channels is None else z_obs[:, list(channels)]
    post = np.array([filt.update(f) for f in feats])
    mode = np.argmax(post[window - 1 :], axis=1)
    X = window_frames(z_obs, window)
    u_ref = z_act[window - 1 :]
    h = np.empty(len(X), dtype=np.int64)
    for j in np.unique(mode):
        sel = mode == j
        h[sel] = gate.predict(int(j), X[sel])
    u_r = predict_by_mode(policy, X, mode)
    rng = np.random.default_rng(cfg.seed)
    u_v = _voluntary(u_ref, cfg, rng)
    alpha = np.where(h == 1, 1.0, 0.0)
    beta = np.where(h == 1, cfg.beta_adjust, 1.0)
    u_hat = alpha[:, None] * u_r + beta[:, None] * u_v
    idx = np.arange(window - 1, T)
    return ArbitrationTrace(idx, demo.t[idx], mode, h, alpha, beta, u_r, u_v, u_hat, u_ref)


def replay(ds, hmm, gate, policy, stats, window, cfg: BlendConfig = BlendConfig(), channels=None) -> ArbitrationTrace:
    """Replay a DemoSet (or a single Demonstration).

    Each stream starts from a fresh filter; stream ``k`` draws its voluntary
    noise from seed ``cfg.seed + k``. Traces are concatenated in stream order.
    """
    if isinstance(ds, Demonstration):
        return replay_stream(ds, hmm, gate, policy, stats, window, cfg, channels)
    traces = []
    for k, demo in enumerate(ds.demos):
        sub = BlendConfig(cfg.beta_adjust, cfg.voluntary_source, cfg.noise_sigma, cfg.seed + k)
        traces.append(replay_stream(demo, hmm, gate, policy, stats, window, sub, channels))
    return concat_traces(traces)
