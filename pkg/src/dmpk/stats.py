"""Monte Carlo summary statistics and two-sample tests."""

from dataclasses import dataclass, field

import numpy as np
from scipy import stats as _st

from .errors import ContractError


@dataclass(frozen=True)
class StatSummary:
    name: str
    mean: float
    var: float
    stderr: float
    var_stderr: float
    n: int
    s: float | None = None
    meta: dict = field(default_factory=dict)


def mc_estimate(values, name, s=None, meta=None):
    """Mean, unbiased variance and their standard errors.

    The error of the variance uses the fourth central moment:
    Var(s^2) ~ (m4 - sigma^4 (n - 3)/(n - 1)) / n.
    """
    x = np.asarray(values, dtype=float).ravel()
    n = x.size
    if n < 2:
        raise ContractError(f"{name}: need at least 2 samples, got {n}")
    mean = x.mean()
    d = x - mean
    var = float(np.sum(d * d) / (n - 1))
    m4 = float(np.mean(d**4))
    var_se = np.sqrt(max(m4 - var**2 * (n - 3) / (n - 1), 0.0) / n)
    return StatSummary(name, float(mean), var, float(np.sqrt(var / n)), float(var_se), n, s,
                       dict(meta or {}))


def combined_stderr(*summaries):
    return float(np.sqrt(sum(x.stderr**2 for x in summaries)))


@dataclass(frozen=True)
class KSResult:
    statistic: float
    critical: float
    pvalue: float
    alpha: float

    @property
    def passes(self):
        return self.statistic < self.critical


def ks_two_sample(a, b, alpha=0.01):
    """Two-sample Kolmogorov-Smirnov statistic with its asymptotic critical value."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    res = _st.ks_2samp(a, b)
    n, m = a.size, b.size
    crit = np.sqrt(-np.log(alpha / 2) / 2) * np.sqrt((n + m) / (n * m))
    return KSResult(float(res.statistic), float(crit), float(res.pvalue), alpha)


def correlation_matrix(z):
    """Max of |E[z_a conj z_b]| and |E[z_a z_b]| normalized by sqrt(E|z_a|^2 E|z_b|^2).

    z has shape (samples, entries) and is assumed centered.
    """
    z = np.asarray(z, dtype=complex)
    m = z.shape[0]
    p = np.mean(np.abs(z) ** 2, axis=0)
    norm = np.sqrt(np.outer(p, p))
    czc = z.T @ z.conj() / m
    czz = z.T @ z / m
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(norm > 0, np.maximum(np.abs(czc), np.abs(czz)) / norm, 0.0)
    return out
