"""Reactive/voluntary split of each mode's samples and the gate labels derived from it."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidValue, ShapeMismatch
from .hmm import ModeAssignment
from .lipschitz import QuotientReport, Threshold, _fmt


@dataclass(frozen=True, eq=False)
class SegmentationResult:
    """Per-mode reactive (``q <= K``) and voluntary (``q > K``) sample indices.

    ``q`` and ``modes`` are per-sample arrays over the whole sample set.
    """

    reactive: tuple
    voluntary: tuple
    threshold: Threshold
    q: np.ndarray
    modes: np.ndarray

    @property
    def n_modes(self) -> int:
        return len(self.reactive)

    @property
    def n_samples(self) -> int:
        return len(self.q)

    @property
    def voluntary_ratio(self) -> float:
        return sum(len(v) for v in self.voluntary) / self.n_samples if self.n_samples else 0.0

    def reactive_indices(self) -> np.ndarray:
        return np.sort(np.concatenate(self.reactive)) if self.reactive else np.zeros(0, dtype=np.int64)

    def to_csv(self, path) -> None:
        labels = make_gate_labels(self).z
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["index", "mode", "q", "label"])
            for i in range(self.n_samples):
                writer.writerow([i, int(self.modes[i]), _fmt(float(self.q[i])), int(labels[i])])

    @classmethod
    def from_csv(cls, path, threshold: Optional[Threshold] = None) -> "SegmentationResult":
        rows = []
        with Path(path).open(newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                rows.append((int(row["index"]), int(row["mode"]), float(row["q"]), int(row["label"])))
        rows.sort()
        modes = np.array([r[1] for r in rows], dtype=np.int64)
        q = np.array([r[2] for r in rows])
        labels = np.array([r[3] for r in rows], dtype=np.int64)
        n_modes = int(modes.max()) + 1 if len(modes) else 0
        reactive = tuple(np.flatnonzero((modes == j) & (labels == 1)) for j in range(n_modes))
        voluntary = tuple(np.flatnonzero((modes == j) & (labels == 0)) for j in range(n_modes))
        if threshold is None:
            finite_r = q[(labels == 1) & np.isfinite(q)]
            threshold = Threshold(float(finite_r.max()) if len(finite_r) else 0.0, math.nan)
        return cls(reactive, voluntary, threshold, q, modes)


@dataclass(frozen=True, eq=False)
class GateLabels:
    z: np.ndarray
    modes: np.ndarray


def split_rv(mode_reports: Sequence[QuotientReport], K) -> SegmentationResult:
    """Partition every mode's samples by the Lipschitz condition ``q <= K``."""
    threshold = K if isinstance(K, Threshold) else Threshold(float(K), math.nan)
    n = sum(len(r) for r in mode_reports)
    q = np.full(n, np.nan)
    modes = np.full(n, -1, dtype=np.int64)
    reactive, voluntary = [], []
    for j, r in enumerate(mode_reports):
        if len(r) and (r.index.max() >= n or not np.all(np.isnan(q[r.index]))):
            raise InvalidValue("mode reports overlap or leave gaps")
        q[r.index] = r.q
        modes[r.index] = j
        keep = r.q <= threshold.K
        reactive.append(np.sort(r.index[keep]))
        voluntary.append(np.sort(r.index[~keep]))
    if np.any(modes < 0):
        raise InvalidValue("mode reports do not cover every sample")
    return SegmentationResult(tuple(reactive), tuple(voluntary), threshold, q, modes)


def make_gate_labels(seg: SegmentationResult) -> GateLabels:
    z = np.zeros(seg.n_samples, dtype=np.int64)
    for idx in seg.reactive:
        z[idx] = 1
    return GateLabels(z, seg.modes.copy())


def random_segmentation(n_samples, N: int, seed=0, proportions=None) -> ModeAssignment:
    """I.i.d. mode labels drawn with ``proportions`` (uniform by default).

    ``n_samples`` may be a count or any sized collection (e.g. a SampleSet).
    """
    if N < 1:
        raise InvalidValue("N must be >= 1")
    n = n_samples if isinstance(n_samples, (int, np.integer)) else len(n_samples)
    if proportions is None:
        p = np.full(N, 1.0 / N)
    else:
        p = np.asarray(proportions, dtype=float)
        if p.shape != (N,) or np.any(p < 0) or p.sum() <= 0:
            raise ShapeMismatch(f"proportions must be {N} nonnegative weights")
        p = p / p.sum()
    rng = np.random.default_rng(seed)
    states = rng.choice(N, size=n, p=p) if N > 1 else np.zeros(n, dtype=np.int64)
    return ModeAssignment(states, "random", N)
