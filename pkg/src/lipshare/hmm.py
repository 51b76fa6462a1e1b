"""Gaussian-emission hidden Markov model for task-mode discovery.

``A[i, j]`` is the probability of moving from state ``i`` to state ``j`` (rows
sum to one). All recursions run in log space. States are numbered from 0.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional

import numba
import numpy as np
from scipy.linalg import LinAlgError, cho_factor, solve_triangular

from .errors import InsufficientData, InvalidValue, ShapeMismatch, Underflow

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class GaussianHmm:
    A: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        for name in ("A", "means", "covs", "rho"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n, dim = self.means.shape
        if self.A.shape != (n, n) or self.covs.shape != (n, dim, dim) or self.rho.shape != (n,):
            raise ShapeMismatch("inconsistent HMM parameter shapes")
        if np.any(self.A < 0) or np.max(np.abs(self.A.sum(axis=1) - 1.0)) > 1e-12:
            raise InvalidValue("transition matrix must be row stochastic")
        if np.any(self.rho < 0) or abs(self.rho.sum() - 1.0) > 1e-12:
            raise InvalidValue("initial distribution must sum to 1")

    @property
    def N(self) -> int:
        return self.A.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def log_emissions(self, X) -> np.ndarray:
        """Gaussian log-densities, shape ``(T, N)``."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.dim:
            raise ShapeMismatch(f"observation dimension {X.shape[1]} != model dimension {self.dim}")
        out = np.empty((X.shape[0], self.N))
        for j, (chol, logdet) in enumerate(self._factors):
            z = solve_triangular(chol, (X - self.means[j]).T, lower=True)
            # far outliers overflow to -inf, which the filter reports as Underflow
            with np.errstate(over="ignore"):
                out[:, j] = -0.5 * (self.dim * LOG_2PI + logdet + np.sum(z * z, axis=0))
        return out

    @cached_property
    def _factors(self):
        factors = []
        for j in range(self.N):
            try:
                chol, _ = cho_factor(self.covs[j], lower=True)
            except LinAlgError:
                raise InvalidValue(f"covariance of state {j} is not positive definite") from None
            chol = np.tril(chol)
            factors.append((chol, 2.0 * float(np.sum(np.log(np.diag(chol))))))
        return factors

    def permute(self, perm) -> "GaussianHmm":
        """Relabel states so that new state ``k`` is old state ``perm[k]``."""
        perm = np.asarray(perm)
        return GaussianHmm(self.A[np.ix_(perm, perm)], self.means[perm], self.covs[perm], self.rho[perm])

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "A": self.A.tolist(),
            "means": self.means.tolist(),
            "covs": self.covs.tolist(),
            "rho": self.rho.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "GaussianHmm":
        hmm = cls(obj["A"], obj["means"], obj["covs"], obj["rho"])
        if int(obj.get("N", hmm.N)) != hmm.N:
            raise ShapeMismatch("N does not match parameter shapes")
        return hmm

    def save(self, path, **extra) -> None:
        Path(path).write_text(json.dumps({**self.to_dict(), **extra}, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "GaussianHmm":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True, eq=False)
class ModeAssignment:
    states: np.ndarray
    source: str = "viterbi"
    n_modes: Optional[int] = None

    def __post_init__(self):
        states = np.asarray(self.states, dtype=np.int64)
        object.__setattr__(self, "states", states)
        if self.n_modes is None:
            object.__setattr__(self, "n_modes", int(states.max()) + 1 if len(states) else 0)
        if len(states) and (states.min() < 0 or states.max() >= self.n_modes):
            raise InvalidValue("state index out of range")

    def __len__(self):
        return len(self.states)

    def proportions(self) -> np.ndarray:
        return np.bincount(self.states, minlength=self.n_modes) / max(len(self.states), 1)


@dataclass(frozen=True)
class FitConfig:
    max_iters: int = 200
    tol: float = 1e-6
    cov_floor: float = 1e-6
    restarts: int = 5
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if self.tol <= 0 or self.cov_floor <= 0:
            raise InvalidValue("tol and cov_floor must be positive")
        if self.restarts < 1 or self.max_iters < 1:
            raise InvalidValue("restarts and max_iters must be >= 1")


# ---------------------------------------------------------------------------
# log-space recursions


@numba.njit(cache=True, nogil=True)
def _logsumexp(v):
    m = -np.inf
    for x in v:
        if x > m:
            m = x
    if m == -np.inf:
        return m
    s = 0.0
    for x in v:
        s += math.exp(x - m)
    return m + math.log(s)


@numba.njit(cache=True, nogil=True)
def _forward(log_b, log_a, log_rho):
    T, n = log_b.shape
    alpha = np.empty((T, n))
    tmp = np.empty(n)
    for j in range(n):
        alpha[0, j] = log_rho[j] + log_b[0, j]
    for t in range(1, T):
        for j in range(n):
            for i in range(n):
                tmp[i] = alpha[t - 1, i] + log_a[i, j]
            alpha[t, j] = _logsumexp(tmp) + log_b[t, j]
    return alpha, _logsumexp(alpha[T - 1])


@numba.njit(cache=True, nogil=True)
def _backward(log_b, log_a):
    T, n = log_b.shape
    beta = np.zeros((T, n))
    tmp = np.empty(n)
    for t in range(T - 2, -1, -1):
        for i in range(n):
            for j in range(n):
                tmp[j] = log_a[i, j] + log_b[t + 1, j] + beta[t + 1, j]
            beta[t, i] = _logsumexp(tmp)
    return beta


@numba.njit(cache=True, nogil=True)
def _e_step(log_b, log_a, log_rho):
    T, n = log_b.shape
    alpha, ll = _forward(log_b, log_a, log_rho)
    beta = _backward(log_b, log_a)
    gamma = np.empty((T, n))
    for t in range(T):
        for j in range(n):
            gamma[t, j] = math.exp(alpha[t, j] + beta[t, j] - ll)
    xi = np.zeros((n, n))
    for t in range(1, T):
        for i in range(n):
            for j in range(n):
                xi[i, j] += math.exp(alpha[t - 1, i] + log_a[i, j] + log_b[t, j] + beta[t, j] - ll)
    return ll, gamma, xi


@numba.njit(cache=True, nogil=True)
def _viterbi(log_b, log_a, log_rho):
    T, n = log_b.shape
    delta = np.empty((T, n))
    back = np.zeros((T, n), dtype=np.int64)
    for j in range(n):
        delta[0, j] = log_rho[j] + log_b[0, j]
    for t in range(1, T):
        for j in range(n):
            best = -np.inf
            arg = 0
            for i in range(n):
                v = delta[t - 1, i] + log_a[i, j]
                if v > best:
                    best = v
                    arg = i
            delta[t, j] = best + log_b[t, j]
            back[t, j] = arg
    path = np.empty(T, dtype=np.int64)
    best = -np.inf
    arg = 0
    for j in range(n):
        if delta[T - 1, j] > best:
            best = delta[T - 1, j]
            arg = j
    path[T - 1] = arg
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path, best


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


def _as_sequences(sequences) -> list:
    if isinstance(sequences, np.ndarray) and sequences.ndim == 2:
        sequences = [sequences]
    seqs = [np.atleast_2d(np.asarray(s, dtype=float)) for s in sequences]
    if not seqs:
        raise InsufficientData("no sequences")
    dim = seqs[0].shape[1]
    if any(s.shape[1] != dim for s in seqs):
        raise ShapeMismatch("sequences differ in dimension")
    return seqs


def loglik(hmm: GaussianHmm, sequence) -> float:
    """Total log-likelihood; a list of sequences is scored as independent trials."""
    total = 0.0
    for seq in _as_sequences(sequence):
        _, ll = _forward(hmm.log_emissions(seq), _log(hmm.A), _log(hmm.rho))
        total += ll
    return float(total)


def path_log_prob(hmm: GaussianHmm, sequence, path) -> float:
    """Joint log-probability of ``sequence`` and a given state ``path``."""
    log_b = hmm.log_emissions(sequence)
    path = np.asarray(path)
    log_a = _log(hmm.A)
    score = _log(hmm.rho)[path[0]] + log_b[0, path[0]]
    for t in range(1, len(path)):
        score += log_a[path[t - 1], path[t]] + log_b[t, path[t]]
    return float(score)


def viterbi(hmm: GaussianHmm, sequence) -> ModeAssignment:
    """MAP state path; ties go to the lower state index."""
    seq = np.atleast_2d(np.asarray(sequence, dtype=float))
    if len(seq) == 0:
        raise InsufficientData("empty sequence")
    path, _ = _viterbi(hmm.log_emissions(seq), _log(hmm.A), _log(hmm.rho))
    return ModeAssignment(path, "viterbi", hmm.N)


def decode(hmm: GaussianHmm, sequences) -> list:
    """Viterbi path per sequence; each sequence starts from ``rho``."""
    return [viterbi(hmm, s).states for s in _as_sequences(sequences)]


class ForwardFilter:
    """Causal state posterior ``P(X_t | o_1..o_t)``, updated one frame at a time."""

    def __init__(self, hmm: GaussianHmm):
        self.hmm = hmm
        self._log_a = _log(hmm.A)
        self._log_rho = _log(hmm.rho)
        self._log_post = None

    def reset(self):
        self._log_post = None

    def update(self, frame) -> np.ndarray:
        log_b = self.hmm.log_emissions(np.asarray(frame, dtype=float)[None, :])[0]
        if self._log_post is None:
            prior = self._log_rho
        else:
            m = self._log_post[:, None] + self._log_a
            top = m.max(axis=0)
            with np.errstate(invalid="ignore"):
                prior = top + np.log(np.sum(np.exp(m - np.where(np.isfinite(top), top, 0.0)), axis=0))
        joint = prior + log_b
        top = joint.max()
        if not np.isfinite(top):
            raise Underflow("every state has zero likelihood for this frame")
        log_norm = top + math.log(np.sum(np.exp(joint - top)))
        self._log_post = joint - log_norm
        post = np.exp(self._log_post)
        return post / post.sum()


def forward_filter(hmm: GaussianHmm, prefix) -> np.ndarray:
    """Filtering posteriors for every step of ``prefix``, shape ``(T, N)``."""
    seq = np.atleast_2d(np.asarray(prefix, dtype=float))
    if len(seq) == 0:
        raise InsufficientData("empty prefix")
    filt = ForwardFilter(hmm)
    return np.array([filt.update(frame) for frame in seq])


# ---------------------------------------------------------------------------
# training


def _kmeans_pp(X, n, rng):
    centers = np.empty((n, X.shape[1]))
    centers[0] = X[rng.integers(len(X))]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for k in range(1, n):
        total = d2.sum()
        if total <= 0:
            centers[k] = X[rng.integers(len(X))]
        else:
            centers[k] = X[rng.choice(len(X), p=d2 / total)]
        d2 = np.minimum(d2, np.sum((X - centers[k]) ** 2, axis=1))
    return centers


def _sq_dists(X, C):
    return np.maximum(np.sum(X * X, axis=1)[:, None] - 2.0 * X @ C.T + np.sum(C * C, axis=1)[None, :], 0.0)


def kmeans_init(sequences, N: int, seed=0, cov_floor: float = 1e-6, max_iter: int = 50) -> GaussianHmm:
    """k-means++ / Lloyd initialization with uniform ``A`` and ``rho``."""
    X = np.vstack(_as_sequences(sequences))
    if len(X) < N:
        raise InsufficientData(f"{len(X)} frames for {N} states")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(X, N, rng)
    labels = np.argmin(_sq_dists(X, centers), axis=1)
    for _ in range(max_iter):
        for k in range(N):
            members = X[labels == k]
            if len(members):
                centers[k] = members.mean(axis=0)
        new = np.argmin(_sq_dists(X, centers), axis=1)
        if np.array_equal(new, labels):
            break
        labels = new
    dim = X.shape[1]
    pooled = np.atleast_2d(np.cov(X, rowvar=False, bias=True)) if len(X) > 1 else np.zeros((dim, dim))
    covs = np.empty((N, dim, dim))
    for k in range(N):
        members = X[labels == k]
        if len(members) == 0:
            covs[k] = pooled
        else:
            centers[k] = members.mean(axis=0)
            covs[k] = np.atleast_2d(np.cov(members, rowvar=False, bias=True)) if len(members) > 1 else 0.0
        covs[k] += cov_floor * np.eye(dim)
    return GaussianHmm(np.full((N, N), 1.0 / N), centers, covs, np.full(N, 1.0 / N))


def _m_step(seqs, stats, hmm: GaussianHmm, cov_floor: float) -> GaussianHmm:
    n = hmm.N
    dim = hmm.dim
    rho = sum(g[0] for _, g, _ in stats) / len(stats)
    rho = rho / rho.sum()
    xi = sum(x for _, _, x in stats)
    rows = xi.sum(axis=1)
    A = hmm.A.copy()
    live = rows > 0
    A[live] = xi[live] / rows[live, None]
    A = A / A.sum(axis=1, keepdims=True)
    weights = np.zeros(n)
    first = np.zeros((n, dim))
    for seq, (_, g, _) in zip(seqs, stats):
        weights += g.sum(axis=0)
        first += g.T @ seq
    means = hmm.means.copy()
    covs = hmm.covs.copy()
    for j in range(n):
        if weights[j] <= 1e-300:
            continue
        means[j] = first[j] / weights[j]
        scatter = np.zeros((dim, dim))
        for seq, (_, g, _) in zip(seqs, stats):
            centered = seq - means[j]
            scatter += (centered * g[:, j : j + 1]).T @ centered
        cov = scatter / weights[j]
        covs[j] = 0.5 * (cov + cov.T) + cov_floor * np.eye(dim)
    return GaussianHmm(A, means, covs, rho)


def _e_all(hmm: GaussianHmm, seqs):
    log_a = _log(hmm.A)
    log_rho = _log(hmm.rho)
    stats = [_e_step(hmm.log_emissions(s), log_a, log_rho) for s in seqs]
    return sum(s[0] for s in stats), stats


def _run_em(seqs, init: GaussianHmm, cfg: FitConfig):
    hmm = init
    history = []
    for it in range(cfg.max_iters):
        ll, stats = _e_all(hmm, seqs)
        if not np.isfinite(ll):
            raise Underflow("log-likelihood is not finite")
        history.append(float(ll))
        if it > 0:
            prev = history[-2]
            if ll < prev - 1e-6 * abs(prev):
                log.warning("log-likelihood decreased from %.6f to %.6f", prev, ll)
            if ll - prev < cfg.tol * abs(prev):
                break
        if it == cfg.max_iters - 1:
            break
        hmm = _m_step(seqs, stats, hmm, cfg.cov_floor)
    return hmm, history


def fit_baum_welch(sequences, N: int, cfg: FitConfig = FitConfig(), init: Optional[GaussianHmm] = None):
    """Expectation-maximization over one or more observation sequences.

    Each restart is initialized by :func:`kmeans_init` with a seed spawned from
    ``cfg.seed``; the restart with the highest final log-likelihood wins.

    Returns
    -------
    hmm : GaussianHmm
    history : list of float
        Log-likelihood of the parameters at the start of each iteration; the
        last entry belongs to the returned model.
    """
    seqs = _as_sequences(sequences)
    if any(len(s) < 2 for s in seqs):
        raise InsufficientData("every sequence needs at least 2 frames")
    if sum(len(s) for s in seqs) < N:
        raise InsufficientData(f"fewer frames than states ({N})")
    if init is not None:
        return _run_em(seqs, init, cfg)
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.restarts)

    def one(ss):
        start = kmeans_init(seqs, N, np.random.default_rng(ss), cfg.cov_floor)
        return _run_em(seqs, start, cfg)

    if cfg.n_jobs > 1 and cfg.restarts > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_jobs) as pool:
            results = list(pool.map(one, seeds))
    else:
        results = [one(s) for s in seeds]
    best = max(range(len(results)), key=lambda k: (results[k][1][-1], -k))
    return results[best]


def match_states(pred, truth, n_modes: Optional[int] = None):
    """Best one-to-one relabeling of ``pred`` onto ``truth``.

    Returns ``(agreement, mapping)`` where ``mapping[p]`` is the truth label
    assigned to predicted state ``p``.
    """
    from scipy.optimize import linear_sum_assignment

    pred = np.asarray(pred)
    truth = np.asarray(truth)
    n = n_modes or int(max(pred.max(), truth.max())) + 1
    confusion = np.zeros((n, n))
    np.add.at(confusion, (pred, truth), 1)
    rows, cols = linear_sum_assignment(-confusion)
    mapping = np.empty(n, dtype=np.int64)
    mapping[rows] = cols
    return float(confusion[rows, cols].sum() / len(pred)), mapping
