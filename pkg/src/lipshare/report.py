"""Offline pipeline, threshold sweeps, segmentation comparison and report bundles."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .arbitration import BlendConfig, replay
from .data import (
    DemoSet,
    SampleSet,
    StandardizationStats,
    apply_standardizer,
    fit_standardizer,
    make_windows,
    window_length,
)
from .errors import InsufficientData, InvalidValue, ShapeMismatch
from .gate import GateConfig, train_gate
from .hmm import FitConfig, GaussianHmm, decode, fit_baum_welch
from .lipschitz import (
    QuotientReport,
    Threshold,
    _fmt,
    merge_reports,
    mode_quotients,
    pointwise_quotients,
    quotient_histogram,
    select_threshold,
    set_threads,
)
from .policy import PolicyConfig, train_policy
from .segmentation import make_gate_labels, random_segmentation, split_rv
from .stats import TTestResult, welch_t_test

log = logging.getLogger(__name__)

DEFAULT_PERCENTILES = (100, 90, 80, 70, 60, 50)


@dataclass(frozen=True)
class PipelineConfig:
    """Everything the offline pipeline and the replay need besides the data.

    ``hmm_channels`` restricts the HMM to a subset of raw observation channels
    (None uses all). The last ``holdout_demos`` demonstrations are replayed and
    never trained on.
    """

    window_seconds: float = 1.0
    n_states: int = 4
    percentile: float = 90.0
    hmm_channels: Optional[tuple] = None
    holdout_demos: int = 1
    seed: int = 0
    threads: Optional[int] = None
    fit: FitConfig = field(default_factory=FitConfig)
    gate: GateConfig = field(default_factory=GateConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    blend: BlendConfig = field(default_factory=BlendConfig)

    def __post_init__(self):
        if self.window_seconds <= 0:
            raise InvalidValue("window_seconds must be positive")
        if self.n_states < 1:
            raise InvalidValue("n_states must be >= 1")
        if not 0 < self.percentile <= 100:
            raise InvalidValue("percentile must lie in (0, 100]")
        if self.holdout_demos < 0:
            raise InvalidValue("holdout_demos must be >= 0")

    def window(self, dt: float) -> int:
        return window_length(dt, self.window_seconds)

    def with_seed(self, seed: int) -> "PipelineConfig":
        """Copy whose every stochastic stage derives from ``seed``."""
        return PipelineConfig(
            self.window_seconds, self.n_states, self.percentile, self.hmm_channels, self.holdout_demos, seed,
            self.threads, FitConfig(**{**asdict(self.fit), "seed": seed}), self.gate, self.policy,
            BlendConfig(**{**asdict(self.blend), "seed": seed}),
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        out["hmm_channels"] = None if self.hmm_channels is None else list(self.hmm_channels)
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "PipelineConfig":
        obj = dict(obj)
        nested = {"fit": FitConfig, "gate": GateConfig, "policy": PolicyConfig, "blend": BlendConfig}
        for key, kind in nested.items():
            if key in obj:
                obj[key] = kind(**obj[key])
        if obj.get("hmm_channels") is not None:
            obj["hmm_channels"] = tuple(int(c) for c in obj["hmm_channels"])
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidValue(f"unknown pipeline config keys: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def split_holdout(ds: DemoSet, holdout: int):
    """``(train, test)``; with too few demonstrations both are the full set."""
    if holdout == 0 or len(ds) <= holdout:
        if holdout:
            log.warning("only %d demonstrations; replaying on the training data", len(ds))
        return ds, ds
    ids = [d.id for d in ds.demos]
    return ds.subset(ids[:-holdout]), ds.subset(ids[-holdout:])


def hmm_features(z: DemoSet, channels=None) -> list:
    """Per-demonstration frame sequences fed to the HMM."""
    return [d.obs if channels is None else d.obs[:, list(channels)] for d in z.demos]


@dataclass(eq=False)
class ModeModel:
    """Standardizer, HMM and the decoded modes of its training data."""

    stats: StandardizationStats
    hmm: GaussianHmm
    history: list
    paths: list  # per-demonstration Viterbi states
    standardized: DemoSet
    samples: SampleSet
    modes: np.ndarray  # per-sample states


def fit_mode_model(ds: DemoSet, cfg: PipelineConfig) -> ModeModel:
    stats = fit_standardizer(ds)
    z = apply_standardizer(ds, stats)
    feats = hmm_features(z, cfg.hmm_channels)
    hmm, history = fit_baum_welch(feats, cfg.n_states, cfg.fit)
    paths = decode(hmm, feats)
    ss = make_windows(z, cfg.window(ds.dt))
    return ModeModel(stats, hmm, history, paths, z, ss, ss.lift(paths))


@dataclass(frozen=True)
class TradeoffRow:
    percentile: float
    K: float
    reactive_rmse: float
    voluntary_ratio: float
    voluntary_effort: float
    training_voluntary_ratio: float = math.nan

    def to_dict(self) -> dict:
        return asdict(self)


TRADEOFF_HEADER = ("percentile", "K", "reactive_rmse", "voluntary_ratio", "voluntary_effort", "training_voluntary_ratio")


def write_tradeoff(rows: Sequence[TradeoffRow], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRADEOFF_HEADER)
        for r in rows:
            writer.writerow([_fmt(getattr(r, k)) for k in TRADEOFF_HEADER])


def read_tradeoff(path) -> list:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return [TradeoffRow(**{k: float(v) for k, v in row.items()}) for row in csv.DictReader(fh)]


def tradeoff_sweep(ds: DemoSet, percentiles: Sequence[float] = DEFAULT_PERCENTILES,
                   cfg: PipelineConfig = PipelineConfig(), model: Optional[ModeModel] = None) -> list:
    """Score the reactive/voluntary trade-off at each threshold percentile.

    The HMM, standardizer and mode-conditional quotients are fitted once on
    the training demonstrations. For each percentile the threshold is the
    nearest-rank percentile of the pooled finite mode-conditional quotients;
    gates and policies are retrained on the resulting split and the held-out
    demonstrations are replayed.
    """
    if not percentiles:
        return []
    set_threads(cfg.threads)
    train, test = split_holdout(ds, cfg.holdout_demos)
    if model is None:
        model = fit_mode_model(train, cfg)
    ss = model.samples
    reports = mode_quotients(ss, model.modes, cfg.n_states)
    window = ss.window
    rows = []
    for pct in percentiles:
        threshold = select_threshold(reports, pct)
        seg = split_rv(reports, threshold)
        gate = train_gate(ss, make_gate_labels(seg), cfg.gate, cfg.n_states, window)
        policy = train_policy(seg, ss, cfg.policy)
        trace = replay(test, model.hmm, gate, policy, model.stats, window, cfg.blend, cfg.hmm_channels)
        summary = trace.summary()
        rows.append(
            TradeoffRow(
                float(pct), threshold.K, summary["reactive_rmse"], summary["voluntary_ratio"],
                summary["voluntary_effort"], seg.voluntary_ratio,
            )
        )
        log.info("percentile %g: K=%.4g rmse=%.4g ratio=%.4g", pct, threshold.K, rows[-1].reactive_rmse,
                 rows[-1].voluntary_ratio)
    return rows


# ---------------------------------------------------------------------------
# HMM vs. random segmentation


@dataclass(frozen=True)
class SegmentationComparison:
    """Welch test of the HMM-conditioned against the random-conditioned finite quotients."""

    test: TTestResult
    mean_hmm: float
    mean_random: float
    n_finite_hmm: int
    n_finite_random: int
    K: float = math.nan
    ratio_hmm: float = math.nan
    ratio_random: float = math.nan
    ratio_global: float = math.nan

    def to_dict(self) -> dict:
        out = asdict(self)
        out["test"] = self.test.to_dict()
        return out


def _conditioned(ss, modes, n_modes):
    reports = mode_quotients(ss, modes, n_modes)
    q, _ = merge_reports(reports, len(ss))
    return q


def compare_segmentations(ss: SampleSet, hmm_modes, random_modes, K=None, n_modes: Optional[int] = None,
                          global_q=None) -> SegmentationComparison:
    """Compare two mode assignments of the same samples.

    ``K`` (a float or :class:`Threshold`) enables the voluntary-ratio summary;
    ``global_q`` adds the unconditioned ratio at the same ``K``.
    """
    hmm_modes = np.asarray(getattr(hmm_modes, "states", hmm_modes), dtype=np.int64)
    random_modes = np.asarray(getattr(random_modes, "states", random_modes), dtype=np.int64)
    if len(hmm_modes) != len(ss) or len(random_modes) != len(ss):
        raise ShapeMismatch("assignments must cover every sample")
    if n_modes is None:
        n_modes = int(max(hmm_modes.max(), random_modes.max())) + 1
    q_h = _conditioned(ss, hmm_modes, n_modes)
    q_r = q_h if np.array_equal(hmm_modes, random_modes) else _conditioned(ss, random_modes, n_modes)
    f_h, f_r = q_h[np.isfinite(q_h)], q_r[np.isfinite(q_r)]
    if len(f_h) < 2 or len(f_r) < 2:
        raise InsufficientData("need at least 2 finite quotients per assignment")
    test = welch_t_test(f_h, f_r)
    out = dict(test=test, mean_hmm=float(f_h.mean()), mean_random=float(f_r.mean()),
               n_finite_hmm=len(f_h), n_finite_random=len(f_r))
    if K is not None:
        k = K.K if isinstance(K, Threshold) else float(K)
        out.update(K=k, ratio_hmm=float(np.mean(q_h > k)), ratio_random=float(np.mean(q_r > k)))
        if global_q is not None:
            out["ratio_global"] = float(np.mean(np.asarray(getattr(global_q, "q", global_q)) > k))
    return SegmentationComparison(**out)


def proportion_matched_random(modes, n_modes: int, seed) -> np.ndarray:
    modes = np.asarray(modes)
    props = np.bincount(modes, minlength=n_modes) / len(modes)
    return random_segmentation(len(modes), n_modes, seed, props).states


# ---------------------------------------------------------------------------
# bundles


@dataclass(eq=False)
class ReportArtifacts:
    """Inputs to :func:`emit_report`; every part except the config is optional."""

    config: dict
    seed: int
    samples: Optional[SampleSet] = None
    global_report: Optional[QuotientReport] = None
    mode_reports: Optional[list] = None
    modes: Optional[np.ndarray] = None
    comparison: Optional[SegmentationComparison] = None
    tradeoff: list = field(default_factory=list)
    trace_summary: Optional[dict] = None
    histogram_bins: int = 50
    extra: dict = field(default_factory=dict)


def _versions() -> dict:
    import numba
    import scipy

    return {
        "lipshare": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "python": platform.python_version(),
    }


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else _fmt(x) if not math.isnan(x) else None
    return obj


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_json_safe(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_rows(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _finite_mean(q) -> float:
    f = q[np.isfinite(q)]
    return float(f.mean()) if len(f) else math.nan


def emit_report(art: ReportArtifacts, out_dir) -> dict:
    """Write the report bundle and return the manifest.

    Files (each only when its inputs are present): ``summary.json``,
    ``histogram.csv`` (global quotient distribution), ``quotient_trace.csv``
    (per-sample global and mode-conditioned quotients), ``tradeoff.csv`` and
    ``bars.csv`` (voluntary ratio and mean quotient per conditioning).
    ``manifest.json`` is always written and lists versions, seed, config and
    a SHA-256 per file. Nothing time-dependent is recorded.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    summary = {}
    gq = art.global_report.q if art.global_report is not None else None
    mq = merge_reports(art.mode_reports, len(art.samples))[0] if art.mode_reports is not None else None

    if gq is not None:
        quotient_histogram(art.global_report, art.histogram_bins).to_csv(out / "histogram.csv")
        files.append("histogram.csv")
        summary["global"] = {"n": len(gq), "n_infinite": int(np.sum(np.isinf(gq))), "mean_finite": _finite_mean(gq)}
    if art.samples is not None and (gq is not None or mq is not None):
        ss = art.samples
        rows = []
        for i in range(len(ss)):
            rows.append([
                i, ss.demo_ids[ss.demo[i]], int(ss.t_index[i]),
                "" if art.modes is None else int(art.modes[i]),
                "" if gq is None else _fmt(gq[i]),
                "" if mq is None else _fmt(mq[i]),
            ])
        _write_rows(out / "quotient_trace.csv", ["index", "demo", "t_index", "mode", "q_global", "q_mode"], rows)
        files.append("quotient_trace.csv")
    if mq is not None:
        summary["mode_conditioned"] = {"n_infinite": int(np.sum(np.isinf(mq))), "mean_finite": _finite_mean(mq)}
    if art.comparison is not None:
        c = art.comparison
        summary["comparison"] = c.to_dict()
        bars = [
            ["global", _fmt(c.ratio_global), "" if gq is None else _fmt(_finite_mean(gq))],
            ["random", _fmt(c.ratio_random), _fmt(c.mean_random)],
            ["hmm", _fmt(c.ratio_hmm), _fmt(c.mean_hmm)],
        ]
        _write_rows(out / "bars.csv", ["conditioning", "voluntary_ratio", "mean_finite_q"], bars)
        files.append("bars.csv")
    if art.tradeoff:
        write_tradeoff(art.tradeoff, out / "tradeoff.csv")
        files.append("tradeoff.csv")
        summary["tradeoff"] = [r.to_dict() for r in art.tradeoff]
    if art.trace_summary is not None:
        summary["replay"] = art.trace_summary
    if art.extra:
        summary.update(art.extra)
    if summary:
        _write_json(out / "summary.json", summary)
        files.append("summary.json")

    manifest = {
        "versions": _versions(),
        "seed": art.seed,
        "config": art.config,
        "files": {name: hashlib.sha256((out / name).read_bytes()).hexdigest() for name in sorted(files)},
    }
    _write_json(out / "manifest.json", manifest)
    return manifest
