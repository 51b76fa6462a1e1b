"""Point-wise Lipschitz quotients, percentile thresholds and histograms.

For sample ``i`` the quotient is the largest ``|u_j - u_i| / |o_j - o_i|`` over
every other sample ``j`` (Euclidean norms). Pairs whose observations coincide
to within ``eps_obs`` are either confounding (actions differ by at least
``eps_act``: quotient is ``inf``) or duplicates (skipped).

The engine evaluates row blocks in parallel with numba. Each squared distance
is accumulated coordinate by coordinate in index order, so the result matches
a naive double loop bit for bit and does not depend on the thread count.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numba
import numpy as np

from .data import SampleSet
from .errors import InsufficientData, InvalidValue, ShapeMismatch

log = logging.getLogger(__name__)

# the TBB found on many systems is too old for numba and only produces a warning
numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]

EPS_OBS = 1e-9
EPS_ACT = 1e-9
BLOCK_ROWS = 64


def _quotient_kernel(obs_t, act_t, eps_obs, eps_act, block):
    d, n = obs_t.shape
    l = act_t.shape[0]
    q = np.zeros(n)
    witness = np.full(n, -1, dtype=np.int64)
    n_blocks = (n + block - 1) // block
    for b in numba.prange(n_blocks):
        acc_o = np.empty(n)
        acc_u = np.empty(n)
        stop = min(n, (b + 1) * block)
        for i in range(b * block, stop):
            acc_o[:] = 0.0
            acc_u[:] = 0.0
            for k in range(d):
                row = obs_t[k]
                x = row[i]
                for j in range(n):
                    diff = row[j] - x
                    acc_o[j] += diff * diff
            for k in range(l):
                row = act_t[k]
                x = row[i]
                for j in range(n):
                    diff = row[j] - x
                    acc_u[j] += diff * diff
            best = -1.0
            arg = -1
            for j in range(n):
                if j == i:
                    continue
                dist_o = math.sqrt(acc_o[j])
                dist_u = math.sqrt(acc_u[j])
                if dist_o < eps_obs:
                    if dist_u < eps_act:
                        continue
                    val = np.inf
                else:
                    val = dist_u / dist_o
                if val > best:
                    best = val
                    arg = j
            if arg >= 0:
                q[i] = best
                witness[i] = arg
    return q, witness


_kernel_parallel = numba.njit(parallel=True, cache=True, nogil=True)(_quotient_kernel)
_kernel_serial = numba.njit(cache=True, nogil=True)(_quotient_kernel)


def set_threads(threads: Optional[int]) -> int:
    """Bound numba's worker pool; returns the count actually in effect."""
    if threads is not None:
        numba.set_num_threads(max(1, min(int(threads), numba.config.NUMBA_NUM_THREADS)))
    return numba.get_num_threads()


def quotients_arrays(obs, act, eps_obs=EPS_OBS, eps_act=EPS_ACT, parallel=True, block=BLOCK_ROWS):
    """Raw engine on ``(n, d)`` / ``(n, l)`` arrays; returns ``(q, witness)``.

    ``witness`` is -1 where every partner was a skipped duplicate (``q`` is 0).
    """
    obs = np.asarray(obs, dtype=float)
    act = np.asarray(act, dtype=float)
    if obs.ndim != 2 or act.ndim != 2 or obs.shape[0] != act.shape[0]:
        raise ShapeMismatch("obs and act must be 2-D with equal row counts")
    if obs.shape[0] < 2:
        raise InsufficientData("need at least 2 samples")
    obs_t = np.ascontiguousarray(obs.T)
    act_t = np.ascontiguousarray(act.T)
    kernel = _kernel_parallel if parallel else _kernel_serial
    return kernel(obs_t, act_t, float(eps_obs), float(eps_act), int(block))


@dataclass(frozen=True, eq=False)
class QuotientReport:
    """Quotients for the samples in one scope.

    ``index`` and ``witness`` are sample indices into the originating
    :class:`SampleSet`. ``undefined`` marks samples whose partners were all
    duplicates (or that were alone in their scope); their ``q`` is 0.
    """

    index: np.ndarray
    q: np.ndarray
    witness: np.ndarray
    scope: str = "global"
    eps_obs: float = EPS_OBS
    eps_act: float = EPS_ACT

    @property
    def undefined(self) -> np.ndarray:
        return self.witness < 0

    def __len__(self):
        return len(self.index)

    def to_csv(self, path) -> None:
        write_reports([self], path)


def pointwise_quotients(ss: SampleSet, eps_obs=EPS_OBS, eps_act=EPS_ACT, parallel=True) -> QuotientReport:
    if len(ss) < 2:
        raise InsufficientData("need at least 2 samples")
    q, witness = quotients_arrays(ss.obs, ss.act, eps_obs, eps_act, parallel=parallel)
    n_undef = int(np.sum(witness < 0))
    if n_undef:
        log.warning("%d samples have only duplicate partners; their quotient is reported as 0", n_undef)
    return QuotientReport(np.arange(len(ss)), q, witness, "global", eps_obs, eps_act)


def mode_quotients(ss: SampleSet, modes, n_modes: Optional[int] = None, eps_obs=EPS_OBS, eps_act=EPS_ACT,
                   parallel=True) -> list:
    """Quotients restricted to samples sharing a mode; one report per mode id.

    ``modes`` is a per-sample integer array (or anything with a ``states``
    attribute holding one). Modes with no samples get an empty report.
    """
    modes = np.asarray(getattr(modes, "states", modes), dtype=np.int64)
    if len(modes) != len(ss):
        raise ShapeMismatch(f"mode assignment has {len(modes)} entries for {len(ss)} samples")
    if n_modes is None:
        n_modes = int(modes.max()) + 1 if len(modes) else 0
    if len(modes) and (modes.min() < 0 or modes.max() >= n_modes):
        raise InvalidValue("mode ids out of range")
    reports = []
    for j in range(n_modes):
        idx = np.flatnonzero(modes == j)
        if len(idx) == 0:
            reports.append(QuotientReport(idx, np.zeros(0), np.zeros(0, dtype=np.int64), f"mode:{j}", eps_obs, eps_act))
            continue
        if len(idx) == 1:
            log.warning("mode %d has a single sample; its quotient is reported as 0", j)
            reports.append(
                QuotientReport(idx, np.zeros(1), np.full(1, -1, dtype=np.int64), f"mode:{j}", eps_obs, eps_act)
            )
            continue
        q, local_w = quotients_arrays(ss.obs[idx], ss.act[idx], eps_obs, eps_act, parallel=parallel)
        witness = np.where(local_w >= 0, idx[np.maximum(local_w, 0)], -1)
        reports.append(QuotientReport(idx, q, witness, f"mode:{j}", eps_obs, eps_act))
    return reports


def merge_reports(reports: Sequence[QuotientReport], n: Optional[int] = None):
    """Scatter per-scope reports into per-sample ``(q, witness)`` arrays."""
    if n is None:
        n = sum(len(r) for r in reports)
    q = np.full(n, np.nan)
    witness = np.full(n, -1, dtype=np.int64)
    for r in reports:
        q[r.index] = r.q
        witness[r.index] = r.witness
    if np.isnan(q).any():
        raise InvalidValue("reports do not cover every sample")
    return q, witness


# ---------------------------------------------------------------------------
# Thresholds


@dataclass(frozen=True)
class Threshold:
    K: float
    percentile: float


def nearest_rank(values, percentile: float) -> float:
    """Smallest order statistic covering ``percentile`` percent of ``values``."""
    if not 0 < percentile <= 100:
        raise InvalidValue("percentile must lie in (0, 100]")
    ordered = np.sort(np.asarray(values, dtype=float))
    if len(ordered) == 0:
        raise InsufficientData("no values")
    rank = max(1, math.ceil(percentile * len(ordered) / 100.0 - 1e-9))
    return float(ordered[rank - 1])


def select_threshold(qr, percentile: float) -> Threshold:
    """Nearest-rank percentile of the finite quotients.

    ``qr`` may be a report, a list of reports (pooled) or an array of quotients.
    Infinite quotients are ignored here and stay above every finite ``K``.
    """
    q = _as_quotients(qr)
    finite = q[np.isfinite(q)]
    if len(finite) == 0:
        raise InsufficientData("no finite quotients")
    return Threshold(nearest_rank(finite, percentile), float(percentile))


def _as_quotients(qr) -> np.ndarray:
    if isinstance(qr, QuotientReport):
        return qr.q
    if isinstance(qr, (list, tuple)) and qr and isinstance(qr[0], QuotientReport):
        return np.concatenate([r.q for r in qr])
    return np.asarray(qr, dtype=float)


@dataclass(frozen=True, eq=False)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    overflow: int
    cumulative_pct: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.overflow

    def rows(self) -> list:
        out = [
            (float(self.edges[k]), float(self.edges[k + 1]), int(self.counts[k]), float(self.cumulative_pct[k]))
            for k in range(len(self.counts))
        ]
        out.append((float(self.edges[-1]), math.inf, self.overflow, 100.0 if self.total else 0.0))
        return out

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["bin_lo", "bin_hi", "count", "cumulative_pct"])
            for lo, hi, count, cum in self.rows():
                writer.writerow([_fmt(lo), _fmt(hi), count, _fmt(cum)])


def quotient_histogram(qr, bins: int) -> Histogram:
    """Equal-width bins on ``[0, max finite q]`` plus an overflow bucket for ``inf``."""
    if bins < 1:
        raise InvalidValue("bins must be >= 1")
    q = _as_quotients(qr)
    if len(q) == 0:
        raise InsufficientData("no quotients")
    finite = q[np.isfinite(q)]
    top = float(finite.max()) if len(finite) else 0.0
    if top <= 0.0:
        top = 1.0
    counts, edges = np.histogram(finite, bins=bins, range=(0.0, top))
    overflow = int(len(q) - len(finite))
    cumulative = 100.0 * np.cumsum(counts) / len(q)
    return Histogram(edges, counts, overflow, cumulative)


# ---------------------------------------------------------------------------
# CSV serialization


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(float(x))


def write_reports(reports: Sequence[QuotientReport], path) -> None:
    """Write ``index,q,witness,scope`` rows, sorted by sample index."""
    rows = []
    for r in reports:
        for i, q, w in zip(r.index, r.q, r.witness):
            rows.append((int(i), float(q), int(w), r.scope))
    rows.sort()
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "q", "witness", "scope"])
        for i, q, w, scope in rows:
            writer.writerow([i, _fmt(q), w, scope])


def read_reports(path) -> list:
    """Inverse of :func:`write_reports`; one report per scope, in first-seen order."""
    groups: dict = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            groups.setdefault(row["scope"], []).append((int(row["index"]), float(row["q"]), int(row["witness"])))
    reports = []
    for scope, rows in groups.items():
        reports.append(
            QuotientReport(
                np.array([r[0] for r in rows], dtype=np.int64),
                np.array([r[1] for r in rows], dtype=float),
                np.array([r[2] for r in rows], dtype=np.int64),
                scope,
            )
        )
    return reports
