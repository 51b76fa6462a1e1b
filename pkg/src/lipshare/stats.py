"""Welch's unequal-variance t-test with a self-contained Student-t tail."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientData, ZeroVariance

CF_TOL = 1e-12
CF_MAX_ITER = 10000
_TINY = 1e-300


@dataclass(frozen=True)
class TTestResult:
    t: float
    dof: float
    p: float
    mean_a: float = math.nan
    mean_b: float = math.nan

    def to_dict(self) -> dict:
        return {"t": self.t, "dof": self.dof, "p": self.p, "mean_a": self.mean_a, "mean_b": self.mean_b}


def _beta_cf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _TINY else _TINY)
    h = d
    for m in range(1, CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < CF_TOL:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def _log_beta_prefactor(a: float, b: float, x: float) -> float:
    return math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)


def log_betainc(a: float, b: float, x: float) -> float:
    """Log of the regularized incomplete beta ``I_x(a, b)``."""
    if x <= 0.0:
        return -math.inf
    if x >= 1.0:
        return 0.0
    if x < (a + 1.0) / (a + b + 2.0):
        return _log_beta_prefactor(a, b, x) + math.log(_beta_cf(a, b, x)) - math.log(a)
    # symmetric branch converges fast here
    upper = math.exp(_log_beta_prefactor(a, b, x)) * _beta_cf(b, a, 1.0 - x) / b
    return math.log1p(-upper)


def betainc(a: float, b: float, x: float) -> float:
    return math.exp(log_betainc(a, b, x))


def t_two_sided_log_p(t: float, dof: float) -> float:
    """``log P(|T| >= |t|)`` for Student's t with real ``dof``."""
    if math.isinf(t):
        return -math.inf
    x = dof / (dof + t * t)
    return log_betainc(0.5 * dof, 0.5, x)


def t_two_sided_p(t: float, dof: float) -> float:
    return min(1.0, math.exp(t_two_sided_log_p(t, dof)))


def welch_t_test(a, b) -> TTestResult:
    """Two-sided Welch test of equal means.

    Parameters
    ----------
    a, b : array_like
        Samples with at least two values each.

    Returns
    -------
    TTestResult
        ``t`` is positive when ``mean(a) > mean(b)``. When the tail
        probability is smaller than the smallest positive double, ``p`` is
        reported as that smallest value so it stays in (0, 1].
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if len(a) < 2 or len(b) < 2:
        raise InsufficientData(f"need at least 2 values per sample, got {len(a)} and {len(b)}")
    ma, mb = float(a.mean()), float(b.mean())
    va, vb = float(a.var(ddof=1)), float(b.var(ddof=1))
    if va == 0.0 and vb == 0.0:
        raise ZeroVariance("both samples have zero variance")
    sa, sb = va / len(a), vb / len(b)
    se2 = sa + sb
    t = (ma - mb) / math.sqrt(se2)
    dof = se2 * se2 / (sa * sa / (len(a) - 1) + sb * sb / (len(b) - 1))
    p = t_two_sided_p(t, dof)
    if p == 0.0:
        p = math.ulp(0.0)
    return TTestResult(t, dof, p, ma, mb)
