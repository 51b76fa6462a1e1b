"""Per-mode predictability gates: is the current windowed observation reactive?

Two classifier kinds are available. ``knn`` (default) votes among the k
nearest training observations; ``linear`` is an L2-regularized logistic model
fitted by full-batch gradient descent. Every ambiguity resolves to 0, handing
control to the human.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import _neighbors
from .errors import InsufficientData, InvalidValue, ShapeMismatch, UnknownMode
from .segmentation import GateLabels

log = logging.getLogger(__name__)

KNN = "knn"
LINEAR = "linear"
CONSTANT = "constant"


@dataclass(frozen=True)
class GateConfig:
    kind: str = KNN
    k: int = 5
    l2: float = 1e-3
    tol: float = 1e-6
    max_iter: int = 20000
    score_training: bool = True

    def __post_init__(self):
        if self.kind not in (KNN, LINEAR):
            raise InvalidValue(f"unknown gate kind {self.kind!r}")
        if self.k < 1:
            raise InvalidValue("k must be >= 1")


@dataclass(eq=False)
class ModeGate:
    """Classifier for one mode. Only the fields of its ``kind`` are populated."""

    kind: str
    constant: int = 0
    k: int = 0
    ref_obs: Optional[np.ndarray] = None
    ref_labels: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    bias: float = 0.0
    training_accuracy: float = float("nan")
    n_train: int = 0
    _ref_t: Optional[np.ndarray] = field(default=None, repr=False)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kind == CONSTANT:
            return np.full(len(X), self.constant, dtype=np.int64)
        if self.kind == LINEAR:
            score = (X * self.weights).sum(axis=1) + self.bias  # batch-size independent, unlike BLAS
            return (score > 0).astype(np.int64)
        if self._ref_t is None:
            self._ref_t = _neighbors.as_ref(self.ref_obs)
        return _neighbors.knn_vote(np.ascontiguousarray(X), self._ref_t, self.ref_labels, self.k)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "training_accuracy": self.training_accuracy, "n_train": self.n_train}
        if self.kind == CONSTANT:
            out["constant"] = self.constant
        elif self.kind == LINEAR:
            out["weights"] = self.weights.tolist()
            out["bias"] = self.bias
        else:
            out["k"] = self.k
            out["ref_obs"] = self.ref_obs.tolist()
            out["ref_labels"] = self.ref_labels.tolist()
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "ModeGate":
        kind = obj["kind"]
        common = {"training_accuracy": float(obj.get("training_accuracy", "nan")), "n_train": int(obj.get("n_train", 0))}
        if kind == CONSTANT:
            return cls(CONSTANT, constant=int(obj["constant"]), **common)
        if kind == LINEAR:
            return cls(LINEAR, weights=np.array(obj["weights"], dtype=float), bias=float(obj["bias"]), **common)
        if kind == KNN:
            return cls(
                KNN,
                k=int(obj["k"]),
                ref_obs=np.array(obj["ref_obs"], dtype=float),
                ref_labels=np.array(obj["ref_labels"], dtype=np.int64),
                **common,
            )
        raise InvalidValue(f"unknown gate kind {kind!r}")


@dataclass(eq=False)
class GateClassifier:
    gates: dict
    dim: int
    window: Optional[int] = None

    def predict(self, mode: int, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise ShapeMismatch(f"observation dimension {X.shape[1]} != gate dimension {self.dim}")
        try:
            gate = self.gates[int(mode)]
        except KeyError:
            raise UnknownMode(f"no gate for mode {mode}") from None
        return gate.predict(X)

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "window": self.window,
            "gates": {str(m): g.to_dict() for m, g in sorted(self.gates.items())},
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "GateClassifier":
        gates = {int(m): ModeGate.from_dict(g) for m, g in obj["gates"].items()}
        return cls(gates, int(obj["dim"]), obj.get("window"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "GateClassifier":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _fit_logistic(X, y, cfg: GateConfig):
    n, d = X.shape
    Xb = np.hstack([X, np.ones((n, 1))])
    target = y.astype(float)
    # gradient step from the curvature bound of the logistic loss
    lipschitz = 0.25 * np.linalg.norm(Xb, 2) ** 2 / n + cfg.l2
    step = 1.0 / lipschitz
    theta = np.zeros(d + 1)
    penalty = np.r_[np.ones(d), 0.0]
    for _ in range(cfg.max_iter):
        z = Xb @ theta
        p = 0.5 * (1.0 + np.tanh(0.5 * z))
        grad = Xb.T @ (p - target) / n + cfg.l2 * penalty * theta
        theta -= step * grad
        if np.linalg.norm(grad) < cfg.tol:
            break
    else:
        log.warning("logistic gate did not reach tolerance %.1e", cfg.tol)
    return theta[:d], float(theta[d])


def train_gate_mode(obs, labels, cfg: GateConfig = GateConfig()) -> ModeGate:
    """Fit one mode's classifier from windowed observations and 0/1 labels."""
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    labels = np.asarray(labels, dtype=np.int64)
    if len(obs) == 0:
        raise InsufficientData("mode has no samples")
    if len(labels) != len(obs):
        raise ShapeMismatch("labels and observations differ in length")
    classes = np.unique(labels)
    if len(classes) == 1:
        gate = ModeGate(CONSTANT, constant=int(classes[0]), training_accuracy=1.0, n_train=len(obs))
        return gate
    if cfg.kind == LINEAR:
        w, b = _fit_logistic(obs, labels, cfg)
        gate = ModeGate(LINEAR, weights=w, bias=b, n_train=len(obs))
    else:
        gate = ModeGate(KNN, k=min(cfg.k, len(obs)), ref_obs=obs.copy(), ref_labels=labels.copy(), n_train=len(obs))
    if cfg.score_training:
        gate.training_accuracy = float(np.mean(gate.predict(obs) == labels))
    return gate


def train_gate(obs, labels: GateLabels, cfg: GateConfig = GateConfig(), n_modes: Optional[int] = None,
               window: Optional[int] = None) -> GateClassifier:
    """One classifier per mode.

    ``obs`` is a SampleSet or a ``(n, d)`` array aligned with ``labels``. Modes
    without samples get a constant-0 gate so the human keeps control there.
    """
    X = np.asarray(getattr(obs, "obs", obs), dtype=float)
    window = window if window is not None else getattr(obs, "window", None)
    if len(X) != len(labels.z):
        raise ShapeMismatch("labels do not match the sample count")
    n_modes = n_modes if n_modes is not None else int(labels.modes.max()) + 1
    gates = {}
    for j in range(n_modes):
        idx = np.flatnonzero(labels.modes == j)
        if len(idx) == 0:
            log.warning("mode %d has no samples; its gate always returns 0", j)
            gates[j] = ModeGate(CONSTANT, constant=0, training_accuracy=float("nan"))
            continue
        gates[j] = train_gate_mode(X[idx], labels.z[idx], cfg)
    return GateClassifier(gates, X.shape[1], window)


def gate_predict(g: GateClassifier, mode: int, o) -> int:
    """Gate decision for a single windowed observation."""
    return int(g.predict(mode, np.asarray(o, dtype=float)[None, :])[0])
