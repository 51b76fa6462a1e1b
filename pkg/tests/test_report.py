import json
import math

import numpy as np
import pytest

from lipshare.data import apply_standardizer, fit_standardizer, make_windows
from lipshare.errors import InvalidValue
from lipshare.hmm import FitConfig
from lipshare.lipschitz import mode_quotients, pointwise_quotients, select_threshold
from lipshare.policy import PolicyConfig
from lipshare.report import (
    PipelineConfig,
    ReportArtifacts,
    TradeoffRow,
    compare_segmentations,
    emit_report,
    proportion_matched_random,
    read_tradeoff,
    split_holdout,
    tradeoff_sweep,
    write_tradeoff,
)
from lipshare.synthgen import default_config, generate


def test_config_round_trip(tmp_path):
    cfg = PipelineConfig(n_states=3, hmm_channels=(0, 2), policy=PolicyConfig(kind="knn"))
    cfg.save(tmp_path / "p.json")
    back = PipelineConfig.load(tmp_path / "p.json")
    assert back == cfg
    with pytest.raises(InvalidValue):
        PipelineConfig.from_dict({"window_secs": 1.0})
    seeded = cfg.with_seed(9)
    assert seeded.seed == seeded.fit.seed == seeded.blend.seed == 9
    assert seeded.policy == cfg.policy


def test_split_holdout():
    ds = generate(default_config(T=400, n_demos=4))
    train, test = split_holdout(ds, 1)
    assert [d.id for d in train.demos] == ["demo000", "demo001", "demo002"]
    assert [d.id for d in test.demos] == ["demo003"]
    one = generate(default_config(T=100, n_demos=1))
    a, b = split_holdout(one, 1)
    assert a is one and b is one


@pytest.fixture(scope="module")
def windowed():
    ds = generate(default_config(T=1200, n_demos=2, seed=1))
    z = apply_standardizer(ds, fit_standardizer(ds))
    return make_windows(z, 5)


def test_identical_assignments(windowed):
    modes = windowed.mode_truth
    c = compare_segmentations(windowed, modes, modes)
    assert c.test.t == 0.0 and c.test.p == 1.0
    ones = np.zeros(len(windowed), dtype=int)
    c = compare_segmentations(windowed, ones, ones)
    assert c.test.t == 0.0


def test_truth_modes_beat_random(windowed):
    truth = windowed.mode_truth
    rnd = proportion_matched_random(truth, 4, seed=0)
    glob = pointwise_quotients(windowed)
    K = select_threshold(glob, 80)
    c = compare_segmentations(windowed, truth, rnd, K, 4, glob)
    assert c.mean_hmm < c.mean_random and c.test.p < 1e-3
    assert c.ratio_hmm < c.ratio_global
    assert not math.isnan(c.ratio_random)


def test_proportion_matched_random():
    modes = np.repeat([0, 1, 2], [1000, 3000, 6000])
    rnd = proportion_matched_random(modes, 3, seed=2)
    np.testing.assert_allclose(np.bincount(rnd) / len(rnd), [0.1, 0.3, 0.6], atol=0.02)


def test_tradeoff_csv(tmp_path):
    rows = [TradeoffRow(100.0, 3.5, 0.1, 0.0, 0.0, 0.02), TradeoffRow(50.0, 1.0, math.nan, 1.0, 2.0, 0.5)]
    write_tradeoff(rows, tmp_path / "t.csv")
    back = read_tradeoff(tmp_path / "t.csv")
    assert back[0] == rows[0]
    assert math.isnan(back[1].reactive_rmse)


def test_noiseless_sweep_at_100():
    ds = generate(default_config(n_modes=1, n_spontaneous=0, sigma_act=0.0, T=1200, n_demos=3, seed=2))
    cfg = PipelineConfig(n_states=1, fit=FitConfig(restarts=1), policy=PolicyConfig(ridge=1e-12))
    (row,) = tradeoff_sweep(ds, [100], cfg)
    assert row.voluntary_ratio == 0.0
    assert row.reactive_rmse < 1e-6
    assert tradeoff_sweep(ds, [], cfg) == []


def test_manifest_only_bundle(tmp_path):
    manifest = emit_report(ReportArtifacts(config={"seed": 4}, seed=4), tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["manifest.json"]
    assert manifest["files"] == {}
    assert manifest["seed"] == manifest["config"]["seed"] == 4


def test_bundle_is_reproducible(tmp_path, windowed):
    truth = windowed.mode_truth
    glob = pointwise_quotients(windowed)
    reports = mode_quotients(windowed, truth, 4)
    comp = compare_segmentations(windowed, truth, proportion_matched_random(truth, 4, 0), 1.0, 4, glob)
    rows = [TradeoffRow(90.0, 2.0, 0.3, 0.1, 0.2)]

    def build(path):
        art = ReportArtifacts({"seed": 0}, 0, windowed, glob, reports, truth, comp, rows, {"steps": 3}, 20)
        return emit_report(art, path)

    m = build(tmp_path / "a")
    build(tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == ["bars.csv", "histogram.csv", "manifest.json", "quotient_trace.csv", "summary.json",
                     "tradeoff.csv"]
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["comparison"]["test"]["p"] == comp.test.p
    assert set(m["versions"]) >= {"lipshare", "numpy", "scipy", "numba", "python"}
