"""Command-line entry point: ``lipshare <command> [options]``.

Models live in one directory: ``stats.json`` (standardizer), ``hmm.json``,
``pipeline.json`` (window and stage configs), ``gate.json`` and
``policy.json``. Failures exit nonzero with ``{"error", "message"}`` JSON on
stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import arbitration, report
from .data import StandardizationStats, apply_standardizer, fit_standardizer, load_demoset, make_windows, save_demoset
from .errors import InvalidValue, LipshareError, ShapeMismatch
from .gate import GateClassifier, train_gate
from .hmm import GaussianHmm, decode, fit_baum_welch
from .lipschitz import (
    QuotientReport,
    merge_reports,
    mode_quotients,
    pointwise_quotients,
    quotient_histogram,
    read_reports,
    select_threshold,
    set_threads,
    write_reports,
)
from .policy import ReactivePolicy, train_policy
from .segmentation import SegmentationResult, make_gate_labels, split_rv
from .synthgen import SynthConfig, default_config, generate

log = logging.getLogger("lipshare")


# ---------------------------------------------------------------------------
# file helpers


def _pipeline_config(args, models: Path | None = None) -> report.PipelineConfig:
    if getattr(args, "config", None):
        cfg = report.PipelineConfig.load(args.config)
    elif models is not None and (models / "pipeline.json").exists():
        cfg = report.PipelineConfig.load(models / "pipeline.json")
    else:
        cfg = report.PipelineConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _out(args, what: str) -> Path:
    if not args.out:
        raise InvalidValue(f"--out is required ({what})")
    return Path(args.out)


def write_modes(ds, paths, path) -> None:
    """Per-frame ``demo,t_index,mode`` rows."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["demo", "t_index", "mode"])
        for demo, states in zip(ds.demos, paths):
            for t, s in enumerate(states):
                writer.writerow([demo.id, t, int(s)])


def read_modes(ds, path) -> list:
    """Inverse of :func:`write_modes`, checked against ``ds``; one array per demonstration."""
    per_demo: dict = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            per_demo.setdefault(row["demo"], []).append((int(row["t_index"]), int(row["mode"])))
    out = []
    for demo in ds.demos:
        rows = sorted(per_demo.get(demo.id, []))
        if [r[0] for r in rows] != list(range(len(demo))):
            raise ShapeMismatch(f"modes file does not cover every frame of {demo.id!r}")
        out.append(np.array([r[1] for r in rows], dtype=np.int64))
    return out


def _standardized_windows(ds, stats: StandardizationStats, cfg: report.PipelineConfig, window=None):
    z = apply_standardizer(ds, stats)
    return z, make_windows(z, window or cfg.window(ds.dt))


def _sorted_mode_reports(reports) -> list:
    by_mode = {}
    for r in reports:
        if not r.scope.startswith("mode:"):
            raise InvalidValue(f"expected mode-scoped reports, found scope {r.scope!r}")
        by_mode[int(r.scope.split(":", 1)[1])] = r
    return [by_mode.get(j, QuotientReport(np.zeros(0, dtype=np.int64), np.zeros(0), np.zeros(0, dtype=np.int64),
                                          f"mode:{j}")) for j in range(max(by_mode) + 1)]


def _group_by_mode(q, witness, modes, n_modes) -> list:
    out = []
    for j in range(n_modes):
        idx = np.flatnonzero(modes == j)
        out.append(QuotientReport(idx, q[idx], witness[idx], f"mode:{j}"))
    return out


def _resegment(seg: SegmentationResult, percentile) -> SegmentationResult:
    if percentile is None:
        return seg
    reports = _group_by_mode(seg.q, np.zeros(len(seg.q), dtype=np.int64), seg.modes, seg.n_modes)
    return split_rv(reports, select_threshold(reports, percentile))


def _load_models(models: Path, need=("stats", "hmm", "gate", "policy")) -> dict:
    loaders = {"stats": StandardizationStats, "hmm": GaussianHmm, "gate": GateClassifier, "policy": ReactivePolicy}
    return {name: loaders[name].load(models / f"{name}.json") for name in need}


def _print_json(obj) -> None:
    print(json.dumps(report._json_safe(obj), sort_keys=True))


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args):
    cfg = SynthConfig.load(args.config) if args.config else default_config()
    if args.seed is not None:
        cfg.seed = args.seed
    ds = generate(cfg)
    save_demoset(ds, _out(args, "dataset CSV"))


def cmd_quotients(args):
    ds = load_demoset(args.input)
    cfg = _pipeline_config(args)
    stats = StandardizationStats.load(args.stats) if args.stats else fit_standardizer(ds)
    _, ss = _standardized_windows(ds, stats, cfg, args.window)
    if args.modes:
        modes = ss.lift(read_modes(ds, args.modes))
        reports = mode_quotients(ss, modes, args.n_modes)
    else:
        reports = [pointwise_quotients(ss)]
    write_reports(reports, _out(args, "report CSV"))
    if args.histogram:
        quotient_histogram(reports, args.bins).to_csv(args.histogram)


def cmd_hmm_fit(args):
    ds = load_demoset(args.input)
    cfg = _pipeline_config(args)
    if args.states is not None:
        cfg = report.PipelineConfig.from_dict({**cfg.to_dict(), "n_states": args.states})
    models = _out(args, "models directory")
    models.mkdir(parents=True, exist_ok=True)
    stats = fit_standardizer(ds)
    z = apply_standardizer(ds, stats)
    hmm, history = fit_baum_welch(report.hmm_features(z, cfg.hmm_channels), cfg.n_states, cfg.fit)
    stats.save(models / "stats.json")
    hmm.save(models / "hmm.json", loglik_history=history)
    cfg.save(models / "pipeline.json")


def cmd_hmm_decode(args):
    models = Path(args.models)
    m = _load_models(models, ("stats", "hmm"))
    cfg = _pipeline_config(args, models)
    ds = load_demoset(args.input)
    z = apply_standardizer(ds, m["stats"])
    write_modes(ds, decode(m["hmm"], report.hmm_features(z, cfg.hmm_channels)), _out(args, "modes CSV"))


def cmd_segment(args):
    reports = read_reports(args.report)
    if len(reports) == 1 and reports[0].scope == "global":
        # unconditioned quotients grouped by a mode assignment
        if not (args.modes and args.input):
            raise InvalidValue("a global report needs --modes and --input to group samples")
        ds = load_demoset(args.input)
        cfg = _pipeline_config(args, Path(args.models) if args.models else None)
        ss = make_windows(ds, args.window or cfg.window(ds.dt))
        modes = ss.lift(read_modes(ds, args.modes))
        q, w = merge_reports(reports, len(ss))
        reports = _group_by_mode(q, w, modes, int(modes.max()) + 1)
    else:
        reports = _sorted_mode_reports(reports)
    seg = split_rv(reports, select_threshold(reports, args.percentile))
    seg.to_csv(_out(args, "segmentation CSV"))
    _print_json({"K": seg.threshold.K, "percentile": args.percentile, "voluntary_ratio": seg.voluntary_ratio})


def _training_inputs(args):
    models = Path(args.models)
    cfg = _pipeline_config(args, models)
    stats = StandardizationStats.load(models / "stats.json")
    ds = load_demoset(args.input)
    _, ss = _standardized_windows(ds, stats, cfg)
    seg = _resegment(SegmentationResult.from_csv(args.segmentation), args.percentile)
    if seg.n_samples != len(ss):
        raise ShapeMismatch(f"segmentation has {seg.n_samples} rows for {len(ss)} samples")
    return models, cfg, ss, seg


def cmd_train_gate(args):
    models, cfg, ss, seg = _training_inputs(args)
    gate = train_gate(ss, make_gate_labels(seg), cfg.gate, seg.n_modes, ss.window)
    gate.save(Path(args.out) if args.out else models / "gate.json")


def cmd_train_policy(args):
    models, cfg, ss, seg = _training_inputs(args)
    policy = train_policy(seg, ss, cfg.policy)
    policy.save(Path(args.out) if args.out else models / "policy.json")


def cmd_replay(args):
    models = Path(args.models)
    cfg = _pipeline_config(args, models)
    m = _load_models(models)
    ds = load_demoset(args.input)
    blend_cfg = arbitration.BlendConfig(
        cfg.blend.beta_adjust if args.beta is None else args.beta,
        args.source or cfg.blend.voluntary_source,
        cfg.blend.noise_sigma if args.noise_sigma is None else args.noise_sigma,
        cfg.blend.seed,
    )
    trace = arbitration.replay(ds, m["hmm"], m["gate"], m["policy"], m["stats"], cfg.window(ds.dt), blend_cfg,
                               cfg.hmm_channels)
    trace.to_csv(_out(args, "trace CSV"))
    _print_json(trace.summary())


def _percentiles(text):
    return [float(p) for p in text.split(",") if p.strip()]


def cmd_sweep(args):
    ds = load_demoset(args.input)
    cfg = _pipeline_config(args)
    rows = report.tradeoff_sweep(ds, _percentiles(args.percentiles), cfg)
    report.write_tradeoff(rows, _out(args, "trade-off CSV"))


def cmd_report(args):
    models = Path(args.models)
    cfg = _pipeline_config(args, models)
    m = _load_models(models, ("stats", "hmm"))
    ds = load_demoset(args.input)
    z, ss = _standardized_windows(ds, m["stats"], cfg)
    modes = ss.lift(decode(m["hmm"], report.hmm_features(z, cfg.hmm_channels)))
    global_report = pointwise_quotients(ss)
    mode_reports = mode_quotients(ss, modes, m["hmm"].N)
    random_modes = report.proportion_matched_random(modes, m["hmm"].N, cfg.seed)
    K = select_threshold(global_report, cfg.percentile)
    comparison = report.compare_segmentations(ss, modes, random_modes, K, m["hmm"].N, global_report)
    trace_summary = None
    if (models / "gate.json").exists() and (models / "policy.json").exists():
        full = _load_models(models)
        trace = arbitration.replay(ds, full["hmm"], full["gate"], full["policy"], full["stats"], ss.window,
                                   cfg.blend, cfg.hmm_channels)
        trace_summary = trace.summary()
    art = report.ReportArtifacts(
        config=cfg.to_dict(),
        seed=cfg.seed,
        samples=ss,
        global_report=global_report,
        mode_reports=mode_reports,
        modes=modes,
        comparison=comparison,
        tradeoff=report.read_tradeoff(args.tradeoff) if args.tradeoff else [],
        trace_summary=trace_summary,
        histogram_bins=args.bins,
    )
    report.emit_report(art, _out(args, "bundle directory"))


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override every configured seed")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker threads for quotients")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output file or directory")
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="lipshare", parents=[common],
                                     description="Predictability analysis and gated shared control.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(func=func)
        return p

    p = add("gen", cmd_gen, "generate a synthetic dataset CSV")
    p.add_argument("--config", help="synthetic config JSON (defaults if omitted)")

    p = add("quotients", cmd_quotients, "point-wise (optionally mode-conditioned) Lipschitz quotients")
    p.add_argument("--input", required=True)
    p.add_argument("--window", type=int, help="window length in frames (else from --config)")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--stats", help="standardizer JSON (fitted on the input if omitted)")
    p.add_argument("--modes", help="per-frame modes CSV from hmm-decode")
    p.add_argument("--n-modes", type=int)
    p.add_argument("--histogram", help="also write a quotient histogram CSV")
    p.add_argument("--bins", type=int, default=50)

    p = add("hmm-fit", cmd_hmm_fit, "fit the standardizer and the Gaussian HMM into a models directory")
    p.add_argument("--input", required=True)
    p.add_argument("--states", type=int)
    p.add_argument("--config", help="pipeline config JSON")

    p = add("hmm-decode", cmd_hmm_decode, "Viterbi modes per frame")
    p.add_argument("--models", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--config")

    p = add("segment", cmd_segment, "reactive/voluntary split at a percentile threshold")
    p.add_argument("--report", required=True, help="quotient report CSV")
    p.add_argument("--percentile", type=float, default=90.0)
    p.add_argument("--modes", help="modes CSV, required with a global report")
    p.add_argument("--input", help="dataset CSV, required with a global report")
    p.add_argument("--models")
    p.add_argument("--window", type=int)
    p.add_argument("--config")

    for name, func, what in (("train-gate", cmd_train_gate, "gate"), ("train-policy", cmd_train_policy, "policy")):
        p = add(name, func, f"train the per-mode {what} (written into the models directory by default)")
        p.add_argument("--models", required=True)
        p.add_argument("--input", required=True)
        p.add_argument("--segmentation", required=True)
        p.add_argument("--percentile", type=float, help="re-threshold the segmentation's quotients")
        p.add_argument("--config")

    p = add("replay", cmd_replay, "run the gated shared-control loop over recorded streams")
    p.add_argument("--models", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--beta", type=float, help="human weight when the gate is 1")
    p.add_argument("--source", choices=["recorded", "zero", "noise"])
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--config")

    p = add("sweep", cmd_sweep, "trade-off table over threshold percentiles")
    p.add_argument("--input", required=True)
    p.add_argument("--percentiles", default="100,90,80,70,60,50")
    p.add_argument("--config")

    p = add("report", cmd_report, "write the report bundle")
    p.add_argument("--models", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--tradeoff", help="trade-off CSV from sweep")
    p.add_argument("--bins", type=int, default=50)
    p.add_argument("--config")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    # filled here rather than via set_defaults, which would clobber flags given before the subcommand
    for name, default in (("seed", None), ("threads", None), ("out", None), ("verbose", 0)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        set_threads(args.threads)
        args.func(args)
    except LipshareError as exc:
        print(json.dumps(exc.to_dict()), file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
