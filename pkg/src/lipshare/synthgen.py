"""Synthetic multi-mode demonstrations with known ground truth.

Modes follow a Markov chain. In a *functional* mode the observation is a
low-pass filtered excitation around a mode-specific mean and the action is an
affine function of the current frame plus noise. A slow latent drift, shared
by all modes of a demonstration, shifts the last observation channel and
scales that noise, so predictability is graded across the observation space. In a *spontaneous* mode the observation is held almost
still while the action oscillates with a random phase and frequency per visit,
which no function of the observation can reproduce.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .data import DemoSet, Demonstration
from .errors import InsufficientData, InvalidValue

FUNCTIONAL = "functional"
SPONTANEOUS = "spontaneous"
DRIFT_CLIP = 2.0


@dataclass
class ModeSpec:
    kind: str = FUNCTIONAL
    mean: list = field(default_factory=list)
    gain: list = field(default_factory=list)  # l x d_raw
    offset: list = field(default_factory=list)  # l
    amplitude: float = 1.0  # stationary std of the excitation (functional)
    sigma_obs: float = 0.0
    sigma_act: float = 0.0
    noise_slope: float = 0.0  # log-scale change of sigma_act per unit of drift
    drift_scale: float = 0.0  # shift of the last observation channel per unit of drift
    osc_amplitude: float = 1.0
    freq_range: tuple = (0.3, 1.0)


@dataclass
class SynthConfig:
    modes: list
    transition: list
    T: int = 20000
    n_demos: int = 4
    dt: float = 0.1
    d_raw: int = 9
    l: int = 6
    lowpass: float = 0.9
    drift_ar: float = 0.99
    seed: int = 0

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    def validate(self) -> None:
        A = np.asarray(self.transition, dtype=float)
        n = self.n_modes
        if A.shape != (n, n) or np.any(A < 0) or np.max(np.abs(A.sum(axis=1) - 1.0)) > 1e-9:
            raise InvalidValue("transition matrix must be row stochastic with one row per mode")
        if not any(m.kind == FUNCTIONAL for m in self.modes):
            raise InvalidValue("at least one functional mode is required")
        for j, m in enumerate(self.modes):
            if m.kind not in (FUNCTIONAL, SPONTANEOUS):
                raise InvalidValue(f"mode {j}: unknown kind {m.kind!r}")
            if min(m.sigma_obs, m.sigma_act, m.amplitude) < 0:
                raise InvalidValue(f"mode {j}: negative scale")
            if len(m.mean) != self.d_raw:
                raise InvalidValue(f"mode {j}: mean must have {self.d_raw} entries")
            if m.kind == FUNCTIONAL:
                if np.shape(m.gain) != (self.l, self.d_raw) or len(m.offset) != self.l:
                    raise InvalidValue(f"mode {j}: gain must be {self.l}x{self.d_raw}, offset length {self.l}")
        if self.T < self.n_demos or self.n_demos < 1:
            raise InvalidValue("T must be at least n_demos")
        if not 0 <= self.lowpass < 1 or not 0 <= self.drift_ar < 1:
            raise InvalidValue("lowpass and drift coefficients must lie in [0, 1)")

    def to_dict(self) -> dict:
        out = asdict(self)
        for m in out["modes"]:
            m["freq_range"] = list(m["freq_range"])
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "SynthConfig":
        """Build a config; keys missing from ``obj`` fall back to :func:`default_config`."""
        obj = dict(obj)
        if "modes" not in obj:
            base = default_config(**{k: obj[k] for k in _DEFAULT_KEYS if k in obj})
            for key in ("T", "n_demos", "dt", "lowpass", "drift_ar", "seed"):
                if key in obj:
                    setattr(base, key, obj[key])
            if "transition" in obj:
                base.transition = obj["transition"]
            return base
        modes = [ModeSpec(**{**m, "freq_range": tuple(m.get("freq_range", (0.3, 1.0)))}) for m in obj.pop("modes")]
        return cls(modes=modes, **obj)

    @classmethod
    def load(cls, path) -> "SynthConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


_DEFAULT_KEYS = (
    "n_modes", "n_spontaneous", "d_raw", "l", "separation", "stay", "sigma_act", "noise_slope", "drift_scale",
    "offset_scale", "osc_amplitude",
)


def default_config(
    n_modes: int = 4,
    n_spontaneous: int = 1,
    d_raw: int = 9,
    l: int = 6,
    separation: float = 8.0,
    stay: float = 0.98,
    sigma_act: float = 0.05,
    noise_slope: float = 2.0,
    drift_scale: float = 3.0,
    offset_scale: float = 5.0,
    osc_amplitude: float = 0.3,
    seed: int = 0,
    T: int = 20000,
    n_demos: int = 4,
    dt: float = 0.1,
) -> SynthConfig:
    """Desk-scale task: 9 observation channels, 6 action channels, 10 Hz.

    The last ``n_spontaneous`` modes are spontaneous. Mode means sit on a
    simplex of edge ``separation`` (in excitation standard deviations). The
    task structure (means, gains, offsets) is fixed; ``seed`` only drives the
    sampled trajectories.
    """
    if n_spontaneous >= n_modes:
        raise InvalidValue("need at least one functional mode")
    structure = np.random.default_rng(20240917)
    modes = []
    for j in range(n_modes):
        mean = np.zeros(d_raw)
        mean[j % d_raw] = separation / np.sqrt(2.0)
        if j >= n_modes - n_spontaneous:
            modes.append(ModeSpec(kind=SPONTANEOUS, mean=mean.tolist(), sigma_obs=0.0, osc_amplitude=osc_amplitude))
            continue
        gain = structure.normal(scale=1.0 / np.sqrt(d_raw), size=(l, d_raw))
        offset = structure.normal(scale=offset_scale, size=l)
        modes.append(
            ModeSpec(
                kind=FUNCTIONAL,
                mean=mean.tolist(),
                gain=gain.tolist(),
                offset=offset.tolist(),
                amplitude=1.0,
                sigma_obs=0.0,
                sigma_act=sigma_act,
                noise_slope=noise_slope,
                drift_scale=drift_scale,
            )
        )
    A = np.full((n_modes, n_modes), (1.0 - stay) / max(n_modes - 1, 1))
    np.fill_diagonal(A, stay if n_modes > 1 else 1.0)
    return SynthConfig(modes=modes, transition=A.tolist(), T=T, n_demos=n_demos, dt=dt, d_raw=d_raw, l=l, seed=seed)


def _mode_chain(A, T, rng, start_dist):
    cum = np.cumsum(A, axis=1)
    states = np.empty(T, dtype=np.int64)
    states[0] = rng.choice(len(start_dist), p=start_dist)
    u = rng.random(T)
    for t in range(1, T):
        states[t] = min(int(np.searchsorted(cum[states[t - 1]], u[t], side="right")), len(A) - 1)
    return states


def _stationary(A):
    vals, vecs = np.linalg.eig(A.T)
    v = np.real(vecs[:, np.argmin(np.abs(vals - 1.0))])
    v = np.abs(v)
    return v / v.sum()


def _generate_demo(cfg: SynthConfig, T: int, rng: np.random.Generator, demo_id: str) -> Demonstration:
    A = np.asarray(cfg.transition, dtype=float)
    states = _mode_chain(A, T, rng, _stationary(A))
    d, l, a = cfg.d_raw, cfg.l, cfg.lowpass
    drive = rng.normal(size=(T, d)) * np.sqrt(1.0 - a * a)
    excitation = np.empty((T, d))
    excitation[0] = rng.normal(size=d)
    for t in range(1, T):
        excitation[t] = a * excitation[t - 1] + drive[t]
    # unit-variance AR(1) drift
    b = cfg.drift_ar
    drift_drive = rng.normal(size=T) * np.sqrt(1.0 - b * b)
    drift = np.empty(T)
    drift[0] = rng.normal()
    for t in range(1, T):
        drift[t] = b * drift[t - 1] + drift_drive[t]
    drift = np.clip(drift, -DRIFT_CLIP, DRIFT_CLIP)[:, None]
    obs_noise = rng.normal(size=(T, d))
    act_noise = rng.normal(size=(T, l))
    t_axis = np.arange(T) * cfg.dt
    obs = np.empty((T, d))
    act = np.empty((T, l))
    visit_start = np.flatnonzero(np.r_[True, states[1:] != states[:-1]])
    visit_end = np.r_[visit_start[1:], T]
    for s, e in zip(visit_start, visit_end):
        spec = cfg.modes[states[s]]
        mean = np.asarray(spec.mean, dtype=float)
        sl = slice(s, e)
        if spec.kind == FUNCTIONAL:
            o = mean + spec.amplitude * excitation[sl] + spec.sigma_obs * obs_noise[sl]
            o[:, -1] += spec.drift_scale * drift[sl, 0]
            scale = spec.sigma_act * np.exp(spec.noise_slope * drift[sl])
            act[sl] = o @ np.asarray(spec.gain).T + np.asarray(spec.offset) + scale * act_noise[sl]
        else:
            o = mean + spec.sigma_obs * obs_noise[sl]
            freq = rng.uniform(*spec.freq_range)
            phase = rng.uniform(0.0, 2.0 * np.pi, size=l)
            act[sl] = spec.osc_amplitude * np.sin(2.0 * np.pi * freq * (t_axis[sl, None] - t_axis[s]) + phase)
        obs[sl] = o
    return Demonstration(demo_id, t_axis, obs, act, states)


def generate(cfg: SynthConfig) -> DemoSet:
    """Sample ``cfg.n_demos`` demonstrations totalling ``cfg.T`` steps."""
    cfg.validate()
    lengths = np.full(cfg.n_demos, cfg.T // cfg.n_demos)
    lengths[: cfg.T % cfg.n_demos] += 1
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.n_demos)
    demos = [
        _generate_demo(cfg, int(n), np.random.default_rng(child), f"demo{k:03d}")
        for k, (n, child) in enumerate(zip(lengths, children))
    ]
    return DemoSet(tuple(demos))


def mode_proportions(ds: DemoSet, n_modes: Optional[int] = None) -> np.ndarray:
    if not ds.has_modes:
        raise InsufficientData("dataset has no ground-truth mode labels")
    labels = np.concatenate([d.mode for d in ds.demos])
    n = n_modes or int(labels.max()) + 1
    return np.bincount(labels, minlength=n) / len(labels)


def transition_counts(ds: DemoSet, n_modes: Optional[int] = None) -> np.ndarray:
    """Row-normalized empirical transition matrix of the ground-truth labels."""
    n = n_modes or int(max(d.mode.max() for d in ds.demos)) + 1
    counts = np.zeros((n, n))
    for d in ds.demos:
        np.add.at(counts, (d.mode[:-1], d.mode[1:]), 1)
    rows = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, rows, out=np.zeros_like(counts), where=rows > 0)
