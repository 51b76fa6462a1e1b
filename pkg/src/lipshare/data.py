"""Demonstration data: CSV I/O, resampling, standardization and windowing.

A dataset CSV has the header ``demo,t,o_1..o_d,u_1..u_l[,mode]``. Rows of one
demonstration are contiguous and ordered in time. Everything downstream works
on :class:`SampleSet`, the windowed form produced by :func:`make_windows`.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import IncompatiblePeriod, InsufficientData, InvalidValue, ShapeMismatch, StreamTooShort

STD_FLOOR = 1e-12
DT_RTOL = 1e-6


def _infer_dt(t: np.ndarray) -> float:
    if len(t) < 2:
        return math.nan
    return round(float(np.median(np.diff(t))), 12)


@dataclass(frozen=True, eq=False)
class Demonstration:
    """One recorded trial.

    Attributes
    ----------
    id : str
        Demonstration identifier (the ``demo`` column).
    t : ndarray of shape (T,)
        Timestamps in seconds, strictly increasing.
    obs : ndarray of shape (T, d_raw)
    act : ndarray of shape (T, l)
    mode : ndarray of shape (T,) or None
        Ground-truth mode labels, synthetic data only.
    """

    id: str
    t: np.ndarray
    obs: np.ndarray
    act: np.ndarray
    mode: Optional[np.ndarray] = None

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        obs = np.asarray(self.obs, dtype=float)
        act = np.asarray(self.act, dtype=float)
        if obs.ndim == 1:
            obs = obs[:, None]
        if act.ndim == 1:
            act = act[:, None]
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "obs", obs)
        object.__setattr__(self, "act", act)
        if self.mode is not None:
            object.__setattr__(self, "mode", np.asarray(self.mode, dtype=np.int64))
        n = len(t)
        if obs.shape[0] != n or act.shape[0] != n or (self.mode is not None and len(self.mode) != n):
            raise ShapeMismatch(f"demonstration {self.id!r}: column lengths differ")
        if obs.shape[1] < 1 or act.shape[1] < 1:
            raise ShapeMismatch(f"demonstration {self.id!r}: need d_raw >= 1 and l >= 1")
        for name, arr in (("t", t), ("obs", obs), ("act", act)):
            if not np.all(np.isfinite(arr)):
                raise InvalidValue(f"demonstration {self.id!r}: non-finite value in {name}")
        if n > 1:
            steps = np.diff(t)
            if np.any(steps <= 0):
                raise InvalidValue(f"demonstration {self.id!r}: timestamps not strictly increasing")

    def __len__(self):
        return len(self.t)

    def __eq__(self, other):
        if not isinstance(other, Demonstration):
            return NotImplemented
        same_mode = (self.mode is None and other.mode is None) or (
            self.mode is not None and other.mode is not None and np.array_equal(self.mode, other.mode)
        )
        return (
            self.id == other.id
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.obs, other.obs)
            and np.array_equal(self.act, other.act)
            and same_mode
        )

    @cached_property
    def dt(self) -> float:
        return _infer_dt(self.t)

    @property
    def d_raw(self) -> int:
        return self.obs.shape[1]

    @property
    def l(self) -> int:  # noqa: E743
        return self.act.shape[1]


@dataclass(frozen=True, eq=True)
class DemoSet:
    """A collection of demonstrations sharing channel counts and sampling period."""

    demos: tuple

    def __post_init__(self):
        demos = tuple(self.demos)
        object.__setattr__(self, "demos", demos)
        if not demos:
            return
        d_raw, l = demos[0].d_raw, demos[0].l
        for demo in demos:
            if demo.d_raw != d_raw or demo.l != l:
                raise ShapeMismatch(
                    f"demonstration {demo.id!r} has (d_raw, l)=({demo.d_raw}, {demo.l}), expected ({d_raw}, {l})"
                )
        dts = [demo.dt for demo in demos if len(demo) > 1]
        for demo, dt in zip([d for d in demos if len(d) > 1], dts):
            if abs(dt - dts[0]) > DT_RTOL * dts[0]:
                raise InvalidValue(f"demonstration {demo.id!r} has dt={dt}, expected {dts[0]}")
            if len(demo) > 2:
                steps = np.diff(demo.t)
                if np.max(np.abs(steps - dt)) > 1e-3 * dt:
                    raise InvalidValue(f"demonstration {demo.id!r} is not uniformly sampled")

    def __len__(self):
        return len(self.demos)

    def __iter__(self):
        return iter(self.demos)

    @property
    def d_raw(self) -> int:
        return self.demos[0].d_raw

    @property
    def l(self) -> int:  # noqa: E743
        return self.demos[0].l

    @property
    def dt(self) -> float:
        for demo in self.demos:
            if len(demo) > 1:
                return demo.dt
        return math.nan

    @property
    def has_modes(self) -> bool:
        return bool(self.demos) and all(d.mode is not None for d in self.demos)

    @property
    def n_records(self) -> int:
        return sum(len(d) for d in self.demos)

    def subset(self, ids: Sequence[str]) -> "DemoSet":
        wanted = set(ids)
        return DemoSet(tuple(d for d in self.demos if d.id in wanted))


# ---------------------------------------------------------------------------
# CSV I/O


def _header(d_raw: int, l: int, with_mode: bool) -> list:
    cols = ["demo", "t"] + [f"o_{k + 1}" for k in range(d_raw)] + [f"u_{k + 1}" for k in range(l)]
    if with_mode:
        cols.append("mode")
    return cols


def _parse_header(header: list) -> tuple:
    if len(header) < 4 or header[0] != "demo" or header[1] != "t":
        raise InvalidValue("header must start with 'demo,t'")
    with_mode = header[-1] == "mode"
    body = header[2:-1] if with_mode else header[2:]
    d_raw = sum(1 for c in body if c.startswith("o_"))
    l = len(body) - d_raw
    if body != _header(d_raw, l, False)[2:] or d_raw < 1 or l < 1:
        raise InvalidValue(f"unexpected column layout: {header}")
    return d_raw, l, with_mode


def load_demoset(path, d_raw: Optional[int] = None, l: Optional[int] = None) -> DemoSet:
    """Read a dataset CSV.

    ``d_raw`` and ``l`` are optional expected channel counts; when given, a
    header that disagrees raises :class:`ShapeMismatch`. Validation errors name
    the offending 1-based data row.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidValue(f"{path}: empty file") from None
        n_raw, n_act, with_mode = _parse_header(header)
        if (d_raw is not None and d_raw != n_raw) or (l is not None and l != n_act):
            raise ShapeMismatch(f"{path}: header has d_raw={n_raw}, l={n_act}")
        width = len(header)
        order: list = []
        rows: dict = {}
        for row_idx, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != width:
                raise InvalidValue(f"row {row_idx}: expected {width} fields, got {len(row)}")
            demo_id = row[0]
            try:
                values = [float(v) for v in row[1 : 2 + n_raw + n_act]]
                mode = int(row[-1]) if with_mode else None
            except ValueError as exc:
                raise InvalidValue(f"row {row_idx}: {exc}") from None
            if not all(math.isfinite(v) for v in values):
                raise InvalidValue(f"row {row_idx}: non-finite value")
            if demo_id not in rows:
                order.append(demo_id)
                rows[demo_id] = []
            elif order[-1] != demo_id:
                raise InvalidValue(f"row {row_idx}: demonstration {demo_id!r} is not contiguous")
            prev = rows[demo_id][-1] if rows[demo_id] else None
            if prev is not None and values[0] <= prev[0][0]:
                raise InvalidValue(f"row {row_idx}: time is not strictly increasing")
            rows[demo_id].append((values, mode))
    if not order:
        raise InsufficientData(f"{path}: no data rows")
    demos = []
    for demo_id in order:
        vals = np.array([r[0] for r in rows[demo_id]], dtype=float)
        mode = np.array([r[1] for r in rows[demo_id]], dtype=np.int64) if with_mode else None
        demos.append(
            Demonstration(
                id=demo_id,
                t=vals[:, 0],
                obs=vals[:, 1 : 1 + n_raw],
                act=vals[:, 1 + n_raw :],
                mode=mode,
            )
        )
    return DemoSet(tuple(demos))


def save_demoset(ds: DemoSet, path) -> None:
    """Write ``ds`` as CSV using shortest round-trip float formatting."""
    with_mode = ds.has_modes
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_header(ds.d_raw, ds.l, with_mode))
        for demo in ds.demos:
            for k in range(len(demo)):
                row = [demo.id, repr(float(demo.t[k]))]
                row += [repr(float(v)) for v in demo.obs[k]]
                row += [repr(float(v)) for v in demo.act[k]]
                if with_mode:
                    row.append(int(demo.mode[k]))
                writer.writerow(row)


# ---------------------------------------------------------------------------
# Resampling


def resample(ds: DemoSet, period: float) -> DemoSet:
    """Decimate every demonstration to ``period`` seconds.

    Only exact integer multiples of the current sampling period are accepted.
    """
    dt = ds.dt
    ratio = period / dt
    factor = int(round(ratio))
    if factor < 1 or abs(ratio - factor) > DT_RTOL * max(ratio, 1.0):
        raise IncompatiblePeriod(f"period {period} is not an integer multiple of dt={dt}")
    if factor == 1:
        return ds
    demos = []
    for d in ds.demos:
        sl = slice(None, None, factor)
        demos.append(
            Demonstration(d.id, d.t[sl], d.obs[sl], d.act[sl], None if d.mode is None else d.mode[sl])
        )
    return DemoSet(tuple(demos))


# ---------------------------------------------------------------------------
# Standardization


@dataclass(frozen=True, eq=False)
class StandardizationStats:
    """Per-channel mean and std, observation channels first then action channels."""

    mean: np.ndarray
    std: np.ndarray
    d_raw: int

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=float))
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ShapeMismatch("mean and std must be vectors of equal length")
        if np.any(self.std < STD_FLOOR):
            raise InvalidValue("std entries must be >= 1e-12")

    @property
    def obs_mean(self):
        return self.mean[: self.d_raw]

    @property
    def obs_std(self):
        return self.std[: self.d_raw]

    @property
    def act_mean(self):
        return self.mean[self.d_raw :]

    @property
    def act_std(self):
        return self.std[self.d_raw :]

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "d_raw": self.d_raw}

    @classmethod
    def from_dict(cls, obj: dict) -> "StandardizationStats":
        return cls(np.array(obj["mean"], dtype=float), np.array(obj["std"], dtype=float), int(obj["d_raw"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "StandardizationStats":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def fit_standardizer(ds: DemoSet) -> StandardizationStats:
    """Global population mean/std over all records; constant channels get std 1."""
    if len(ds) == 0 or ds.n_records < 2:
        raise InsufficientData("need at least 2 records to fit a standardizer")
    data = np.vstack([np.hstack([d.obs, d.act]) for d in ds.demos])
    mean = data.mean(axis=0)
    std = data.std(axis=0)
    std = np.where(std < STD_FLOOR, 1.0, std)
    return StandardizationStats(mean, std, ds.d_raw)


def _check_stats(ds: DemoSet, stats: StandardizationStats) -> None:
    if stats.d_raw != ds.d_raw or len(stats.mean) != ds.d_raw + ds.l:
        raise ShapeMismatch(
            f"stats cover {stats.d_raw}+{len(stats.mean) - stats.d_raw} channels, data has {ds.d_raw}+{ds.l}"
        )


def apply_standardizer(ds: DemoSet, stats: StandardizationStats) -> DemoSet:
    _check_stats(ds, stats)
    return DemoSet(
        tuple(
            Demonstration(
                d.id,
                d.t,
                (d.obs - stats.obs_mean) / stats.obs_std,
                (d.act - stats.act_mean) / stats.act_std,
                d.mode,
            )
            for d in ds.demos
        )
    )


def invert_standardizer(ds: DemoSet, stats: StandardizationStats) -> DemoSet:
    _check_stats(ds, stats)
    return DemoSet(
        tuple(
            Demonstration(
                d.id,
                d.t,
                d.obs * stats.obs_std + stats.obs_mean,
                d.act * stats.act_std + stats.act_mean,
                d.mode,
            )
            for d in ds.demos
        )
    )


# ---------------------------------------------------------------------------
# Windowing


@dataclass(frozen=True)
class Sample:
    demo_id: str
    t_index: int
    o: np.ndarray
    u: np.ndarray
    mode_truth: Optional[int] = None


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Windowed samples stored column-wise.

    ``obs[i]`` concatenates the ``window`` most recent frames, oldest first, so
    ``obs.shape[1] == d_raw * window``. ``demo[i]`` indexes into ``demo_ids``.
    """

    obs: np.ndarray
    act: np.ndarray
    demo: np.ndarray
    t_index: np.ndarray
    window: int
    demo_ids: tuple = ()
    mode_truth: Optional[np.ndarray] = None

    def __len__(self):
        return self.obs.shape[0]

    def __getitem__(self, i) -> Sample:
        return Sample(
            demo_id=self.demo_ids[self.demo[i]],
            t_index=int(self.t_index[i]),
            o=self.obs[i],
            u=self.act[i],
            mode_truth=None if self.mode_truth is None else int(self.mode_truth[i]),
        )

    @property
    def d(self) -> int:
        return self.obs.shape[1]

    @property
    def l(self) -> int:  # noqa: E743
        return self.act.shape[1]

    def lift(self, per_demo: Sequence[np.ndarray]) -> np.ndarray:
        """Pick per-frame values (one array per demonstration) at each sample's frame."""
        if len(per_demo) != len(self.demo_ids):
            raise ShapeMismatch(f"expected {len(self.demo_ids)} per-demonstration arrays, got {len(per_demo)}")
        out = np.empty(len(self), dtype=np.asarray(per_demo[0]).dtype)
        for k, arr in enumerate(per_demo):
            sel = self.demo == k
            out[sel] = np.asarray(arr)[self.t_index[sel]]
        return out

    def take(self, idx) -> "SampleSet":
        idx = np.asarray(idx)
        return SampleSet(
            self.obs[idx],
            self.act[idx],
            self.demo[idx],
            self.t_index[idx],
            self.window,
            self.demo_ids,
            None if self.mode_truth is None else self.mode_truth[idx],
        )


def window_length(dt: float, seconds: float) -> int:
    """Number of frames covering ``seconds`` at period ``dt`` (at least 1)."""
    return max(1, int(round(seconds / dt)))


def window_frames(obs: np.ndarray, window: int) -> np.ndarray:
    """Stack every run of ``window`` consecutive frames into one row, oldest first."""
    views = sliding_window_view(obs, window, axis=0)  # (T-W+1, d_raw, W)
    return np.ascontiguousarray(views.transpose(0, 2, 1)).reshape(views.shape[0], -1)


def make_windows(ds: DemoSet, window: int) -> SampleSet:
    if window < 1:
        raise InvalidValue("window must be >= 1")
    obs, act, demo, t_index, modes = [], [], [], [], []
    for k, d in enumerate(ds.demos):
        if len(d) < window:
            raise StreamTooShort(f"demonstration {d.id!r} has {len(d)} records, window is {window}")
        obs.append(window_frames(d.obs, window))
        act.append(d.act[window - 1 :])
        idx = np.arange(window - 1, len(d))
        t_index.append(idx)
        demo.append(np.full(len(idx), k, dtype=np.int64))
        if ds.has_modes:
            modes.append(d.mode[window - 1 :])
    return SampleSet(
        obs=np.ascontiguousarray(np.vstack(obs)),
        act=np.ascontiguousarray(np.vstack(act)),
        demo=np.concatenate(demo),
        t_index=np.concatenate(t_index),
        window=window,
        demo_ids=tuple(d.id for d in ds.demos),
        mode_truth=np.concatenate(modes) if ds.has_modes else None,
    )
