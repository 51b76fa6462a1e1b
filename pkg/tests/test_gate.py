import numpy as np
import pytest

from lipshare.errors import ShapeMismatch, UnknownMode
from lipshare.gate import CONSTANT, GateClassifier, GateConfig, gate_predict, train_gate, train_gate_mode
from lipshare.segmentation import GateLabels


def labels(z, modes=None):
    z = np.asarray(z)
    return GateLabels(z, np.zeros(len(z), dtype=np.int64) if modes is None else np.asarray(modes))


def test_single_class_gives_constant():
    g = train_gate(np.random.default_rng(0).normal(size=(10, 2)), labels(np.ones(10, dtype=int)))
    assert g.gates[0].kind == CONSTANT
    assert gate_predict(g, 0, np.array([100.0, -3.0])) == 1


def test_one_nn_recovers_training_labels():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(40, 3))
    z = rng.integers(0, 2, size=40)
    g = train_gate(X, labels(z), GateConfig(k=1))
    assert g.gates[0].training_accuracy == 1.0
    assert all(gate_predict(g, 0, X[i]) == z[i] for i in range(40))


def test_tie_goes_to_voluntary():
    X = np.array([[0.0], [2.0]])
    g = train_gate(X, labels([0, 1]), GateConfig(k=2))
    assert gate_predict(g, 0, np.array([1.0])) == 0
    g = train_gate(X, labels([1, 0]), GateConfig(k=2))
    assert gate_predict(g, 0, np.array([1.0])) == 0


@pytest.mark.parametrize("kind", ["knn", "linear"])
def test_separated_blobs(kind):
    rng = np.random.default_rng(2)
    X = np.vstack([rng.normal(-5, 1, size=(250, 2)), rng.normal(5, 1, size=(250, 2))])
    z = np.repeat([0, 1], 250)
    g = train_gate_mode(X, z, GateConfig(kind=kind))
    assert g.training_accuracy >= 0.99


def test_per_mode_and_empty_mode():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(20, 2))
    modes = np.repeat([0, 2], 10)
    z = np.r_[np.ones(10, dtype=int), np.zeros(10, dtype=int)]
    g = train_gate(X, labels(z, modes), n_modes=3)
    assert gate_predict(g, 0, X[15]) == 1
    assert gate_predict(g, 1, X[0]) == 0
    assert gate_predict(g, 2, X[0]) == 0
    with pytest.raises(UnknownMode):
        gate_predict(g, 5, X[0])


def test_shape_checks():
    with pytest.raises(ShapeMismatch):
        train_gate(np.zeros((3, 2)), labels([0, 1]))
    g = train_gate(np.zeros((2, 2)), labels([1, 1]))
    with pytest.raises(ShapeMismatch):
        gate_predict(g, 0, np.zeros(3))


@pytest.mark.parametrize("kind", ["knn", "linear"])
def test_save_load_predicts_identically(tmp_path, kind):
    rng = np.random.default_rng(4)
    X = rng.normal(size=(60, 3))
    z = (X[:, 0] > 0).astype(int)
    g = train_gate(X, labels(z), GateConfig(kind=kind, k=3), window=1)
    g.save(tmp_path / "g.json")
    back = GateClassifier.load(tmp_path / "g.json")
    Q = rng.normal(size=(30, 3))
    np.testing.assert_array_equal(back.predict(0, Q), g.predict(0, Q))
    assert back.window == 1
