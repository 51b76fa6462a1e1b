import json

import numpy as np
import pytest

from cli_pipeline import bundle_bytes, lipshare, run_pipeline
from lipshare.cli import main, read_modes, write_modes
from lipshare.data import load_demoset
from lipshare.gate import GateClassifier
from lipshare.hmm import GaussianHmm
from lipshare.lipschitz import read_reports
from lipshare.synthgen import default_config, generate

SMALL_SYNTH = {"T": 1200, "n_demos": 2}
SMALL_PIPE = {"window_seconds": 0.5, "n_states": 4, "fit": {"restarts": 1, "max_iters": 40}}


@pytest.fixture(scope="module")
def pipeline_run(tmp_path_factory):
    work = tmp_path_factory.mktemp("cli")
    return work, run_pipeline(work, SMALL_SYNTH, SMALL_PIPE, seed=3)


def test_pipeline_outputs(pipeline_run):
    work, bundle = pipeline_run
    models = work / "models"
    assert sorted(p.name for p in models.iterdir()) == ["gate.json", "hmm.json", "pipeline.json", "policy.json",
                                                        "stats.json"]
    hmm_obj = json.loads((models / "hmm.json").read_text())
    assert "loglik_history" in hmm_obj
    GaussianHmm.load(models / "hmm.json")
    assert GateClassifier.load(models / "gate.json").window == 5
    scopes = {r.scope for r in read_reports(work / "q_mode.csv")}
    assert scopes <= {f"mode:{j}" for j in range(4)}
    assert (work / "seg.csv").read_text().startswith("index,mode,q,label\n")
    assert (work / "trace.csv").read_text().startswith("t,mode,h,alpha,beta,u_r_1")
    names = sorted(p.name for p in bundle.iterdir())
    assert names == ["bars.csv", "histogram.csv", "manifest.json", "quotient_trace.csv", "summary.json"]
    manifest = json.loads((bundle / "manifest.json").read_text())
    assert manifest["seed"] == manifest["config"]["seed"] == 3
    summary = json.loads((bundle / "summary.json").read_text())
    assert summary["replay"]["steps"] > 0


def test_rerun_is_byte_identical(pipeline_run, tmp_path):
    _, bundle = pipeline_run
    again = run_pipeline(tmp_path, SMALL_SYNTH, SMALL_PIPE, seed=3)
    assert bundle_bytes(again) == bundle_bytes(bundle)


def test_replay_prints_summary(pipeline_run):
    work, _ = pipeline_run
    proc = lipshare("replay", "--models", work / "models", "--input", work / "data.csv", "--source", "zero",
                    "--out", work / "trace0.csv")
    summary = json.loads(proc.stdout)
    assert summary["voluntary_effort"] == 0.0


def test_global_report_segment(pipeline_run, capsys):
    work, _ = pipeline_run
    models = work / "models"
    assert main(["quotients", "--input", str(work / "data.csv"), "--config", str(models / "pipeline.json"),
                 "--stats", str(models / "stats.json"), "--out", str(work / "q_glob.csv")]) == 0
    capsys.readouterr()
    assert main(["segment", "--report", str(work / "q_glob.csv"), "--modes", str(work / "modes.csv"),
                 "--input", str(work / "data.csv"), "--models", str(models), "--percentile", "80",
                 "--out", str(work / "seg_glob.csv")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["percentile"] == 80.0 and out["K"] > 0


def test_modes_csv_round_trip(tmp_path):
    ds = generate(default_config(T=300, n_demos=3))
    paths = [d.mode for d in ds.demos]
    write_modes(ds, paths, tmp_path / "m.csv")
    back = read_modes(ds, tmp_path / "m.csv")
    for a, b in zip(paths, back):
        np.testing.assert_array_equal(a, b)


def test_gen_seed_flag_position(tmp_path):
    assert main(["--seed", "5", "gen", "--out", str(tmp_path / "a.csv")]) == 0
    assert main(["gen", "--seed", "5", "--out", str(tmp_path / "b.csv")]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert len(load_demoset(tmp_path / "a.csv")) == 4


def test_error_is_machine_readable(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("demo,t,o_1,u_1\nx,0.0,1.0,NaN\n")
    proc = lipshare("quotients", "--input", bad, "--window", 1, "--out", tmp_path / "r.csv", check=False)
    assert proc.returncode == 2
    err = json.loads(proc.stderr.strip().splitlines()[-1])
    assert err["error"] == "InvalidValue" and "row 1" in err["message"]


def test_missing_file_exit_code(tmp_path):
    proc = lipshare("hmm-decode", "--models", tmp_path, "--input", tmp_path / "none.csv", "--out", tmp_path / "m.csv",
                    check=False)
    assert proc.returncode == 1
    assert "error" in json.loads(proc.stderr.strip().splitlines()[-1])
