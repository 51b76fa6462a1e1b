"""Drive the full command-line workflow in a scratch directory."""

import json
import subprocess
import sys
from pathlib import Path

STAGES = ("gen", "hmm-fit", "hmm-decode", "quotients", "segment", "train-gate", "train-policy", "replay", "report")


def lipshare(*args, check=True):
    proc = subprocess.run([sys.executable, "-m", "lipshare.cli", *map(str, args)], capture_output=True, text=True)
    if check and proc.returncode != 0:
        raise AssertionError(f"lipshare {' '.join(map(str, args))} failed:\n{proc.stderr}")
    return proc


def run_pipeline(work: Path, synth: dict, pipeline: dict, seed: int = 0, percentile: float = 90.0) -> Path:
    """Run every stage; returns the report bundle directory."""
    work.mkdir(parents=True, exist_ok=True)
    (work / "synth.json").write_text(json.dumps(synth))
    (work / "pipeline.json").write_text(json.dumps(pipeline))
    data, models = work / "data.csv", work / "models"
    lipshare("gen", "--config", work / "synth.json", "--seed", seed, "--out", data)
    lipshare("hmm-fit", "--input", data, "--config", work / "pipeline.json", "--seed", seed, "--out", models)
    lipshare("hmm-decode", "--models", models, "--input", data, "--out", work / "modes.csv")
    lipshare("quotients", "--input", data, "--config", models / "pipeline.json", "--stats", models / "stats.json",
             "--modes", work / "modes.csv", "--n-modes", pipeline.get("n_states", 4), "--out", work / "q_mode.csv")
    lipshare("segment", "--report", work / "q_mode.csv", "--percentile", percentile, "--out", work / "seg.csv")
    for stage in ("train-gate", "train-policy"):
        lipshare(stage, "--models", models, "--input", data, "--segmentation", work / "seg.csv")
    lipshare("replay", "--models", models, "--input", data, "--beta", 0.3, "--out", work / "trace.csv")
    lipshare("report", "--models", models, "--input", data, "--out", work / "bundle")
    return work / "bundle"


def bundle_bytes(bundle: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(bundle.iterdir())}
