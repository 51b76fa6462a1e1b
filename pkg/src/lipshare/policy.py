"""Reactive control: per-mode regressors trained on the reactive subsets only."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import linalg

from . import _neighbors
from .errors import InsufficientData, InvalidValue, ShapeMismatch, UnknownMode
from .segmentation import SegmentationResult

log = logging.getLogger(__name__)

RIDGE = "ridge"
KNN = "knn"


@dataclass(frozen=True)
class PolicyConfig:
    kind: str = RIDGE
    ridge: float = 1e-3
    k: int = 5
    min_mode_samples: int = 20
    per_mode: bool = True

    def __post_init__(self):
        if self.kind not in (RIDGE, KNN):
            raise InvalidValue(f"unknown regressor kind {self.kind!r}")
        if self.ridge <= 0:
            raise InvalidValue("ridge regularizer must be positive")
        if self.k < 1:
            raise InvalidValue("k must be >= 1")


@dataclass(eq=False)
class Regressor:
    kind: str
    weights: Optional[np.ndarray] = None  # (l, d + 1), last column is the intercept
    k: int = 0
    ref_obs: Optional[np.ndarray] = None
    ref_act: Optional[np.ndarray] = None
    _ref_t: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0] if self.kind == RIDGE else self.ref_act.shape[1]

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kind == RIDGE:
            # row-wise reduction: a row's output does not depend on the batch size
            return (X[:, None, :] * self.weights[None, :, :-1]).sum(axis=2) + self.weights[:, -1]
        if self._ref_t is None:
            self._ref_t = _neighbors.as_ref(self.ref_obs)
        idx = _neighbors.knn_indices(np.ascontiguousarray(X), self._ref_t, self.k)
        return self.ref_act[idx].mean(axis=1)

    def to_dict(self) -> dict:
        if self.kind == RIDGE:
            return {"kind": RIDGE, "weights": self.weights.tolist()}
        return {"kind": KNN, "k": self.k, "ref_obs": self.ref_obs.tolist(), "ref_act": self.ref_act.tolist()}

    @classmethod
    def from_dict(cls, obj: dict) -> "Regressor":
        if obj["kind"] == RIDGE:
            return cls(RIDGE, weights=np.array(obj["weights"], dtype=float))
        if obj["kind"] == KNN:
            return cls(KNN, k=int(obj["k"]), ref_obs=np.array(obj["ref_obs"], dtype=float),
                       ref_act=np.array(obj["ref_act"], dtype=float))
        raise InvalidValue(f"unknown regressor kind {obj['kind']!r}")


def fit_ridge(X, U, lam: float) -> Regressor:
    """Minimize ``sum |W [x; 1] - u|^2 + lam |W|^2`` via the normal equations."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    U = np.atleast_2d(np.asarray(U, dtype=float))
    Xb = np.hstack([X, np.ones((len(X), 1))])
    gram = Xb.T @ Xb + lam * np.eye(Xb.shape[1])
    W = linalg.solve(gram, Xb.T @ U, assume_a="pos")
    return Regressor(RIDGE, weights=W.T)


def fit_regressor(X, U, cfg: PolicyConfig) -> Regressor:
    if len(X) == 0:
        raise InsufficientData("no training samples")
    if cfg.kind == RIDGE:
        return fit_ridge(X, U, cfg.ridge)
    return Regressor(KNN, k=min(cfg.k, len(X)), ref_obs=np.array(X, dtype=float), ref_act=np.array(U, dtype=float))


@dataclass(eq=False)
class ReactivePolicy:
    """Mode regressors plus a fallback trained on every reactive sample.

    ``models[j]`` is None when mode ``j`` routes to the fallback.
    """

    models: dict
    fallback: Regressor
    dim: int
    counts: dict
    window: Optional[int] = None

    @property
    def routed(self) -> list:
        return sorted(j for j, m in self.models.items() if m is None)

    @property
    def out_dim(self) -> int:
        return self.fallback.out_dim

    def regressor(self, mode: int) -> Regressor:
        try:
            model = self.models[int(mode)]
        except KeyError:
            raise UnknownMode(f"no policy for mode {mode}") from None
        return self.fallback if model is None else model

    def predict(self, mode: int, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise ShapeMismatch(f"observation dimension {X.shape[1]} != policy dimension {self.dim}")
        return self.regressor(mode).predict(X)

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "window": self.window,
            "counts": {str(k): v for k, v in sorted(self.counts.items())},
            "fallback": self.fallback.to_dict(),
            "models": {str(j): (None if m is None else m.to_dict()) for j, m in sorted(self.models.items())},
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ReactivePolicy":
        models = {int(j): (None if m is None else Regressor.from_dict(m)) for j, m in obj["models"].items()}
        return cls(
            models,
            Regressor.from_dict(obj["fallback"]),
            int(obj["dim"]),
            {int(k): int(v) for k, v in obj["counts"].items()},
            obj.get("window"),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ReactivePolicy":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def train_policy(seg: SegmentationResult, ss, cfg: PolicyConfig = PolicyConfig()) -> ReactivePolicy:
    """Fit the reactive control from the reactive sets of ``seg``.

    Modes with fewer than ``cfg.min_mode_samples`` reactive samples, or every
    mode when ``cfg.per_mode`` is false, use the pooled fallback.
    """
    if seg.n_samples != len(ss):
        raise ShapeMismatch("segmentation and sample set differ in length")
    pooled = seg.reactive_indices()
    if len(pooled) == 0:
        raise InsufficientData("no reactive samples to train on")
    fallback = fit_regressor(ss.obs[pooled], ss.act[pooled], cfg)
    models, counts = {}, {}
    for j, idx in enumerate(seg.reactive):
        counts[j] = int(len(idx))
        if not cfg.per_mode or len(idx) < cfg.min_mode_samples:
            if cfg.per_mode:
                log.info("mode %d has %d reactive samples; using the fallback", j, len(idx))
            models[j] = None
        else:
            models[j] = fit_regressor(ss.obs[idx], ss.act[idx], cfg)
    return ReactivePolicy(models, fallback, ss.d, counts, ss.window)


def policy_predict(p: ReactivePolicy, mode: int, o) -> np.ndarray:
    return p.predict(mode, np.asarray(o, dtype=float)[None, :])[0]


def predict_by_mode(p: ReactivePolicy, X, modes) -> np.ndarray:
    """Vectorized prediction where each row uses its own mode's regressor."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    modes = np.asarray(modes)
    out = np.empty((len(X), p.out_dim))
    for j in np.unique(modes):
        sel = modes == j
        out[sel] = p.predict(int(j), X[sel])
    return out


def rmse(pred, target) -> float:
    pred = np.atleast_2d(pred)
    target = np.atleast_2d(target)
    if pred.size == 0:
        raise InsufficientData("empty evaluation set")
    return float(np.sqrt(np.mean(np.sum((pred - target) ** 2, axis=1))))


def eval_rmse(p: ReactivePolicy, ss, modes) -> float:
    """Root of the mean squared action error, in standardized units."""
    if len(ss) == 0:
        raise InsufficientData("empty evaluation set")
    modes = np.asarray(getattr(modes, "states", modes))
    return rmse(predict_by_mode(p, ss.obs, modes), ss.act)
