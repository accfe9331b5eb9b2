"""Conductance moment hierarchy and its large-N limit.

For finite N the moments of g = sum_k T_k obey
    d/ds E(g^p) = -p gamma_N [E(g^{p+1}) - (1 - 2/beta) E(g^{p-1} g2)
                              - (2(p-1)/beta) E(g^{p-2} (g2 - g3))]
with g_j = sum_k T_k^j and gamma_N = beta / (beta N + 2 - beta).  In the
limit Psi(p, s) = lim E(g^p)/N^p solves Psi(p, s) = 1 - p int_0^s Psi(p+1, t) dt,
whose unique bounded solution is (1 + s)^-p.
"""

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ContractError, DomainError
from .ideal import check_beta

G = "g"        # E(g^p)
G2 = "g2"      # E(g^{p-1} g2)
G23 = "g23"    # E(g^{p-2} (g2 - g3))


def gamma_coefficient(beta, n):
    """gamma_N(beta) = beta / (beta N + 2 - beta) as an exact fraction."""
    beta = check_beta(beta)
    if n < 1:
        raise ContractError("n must be >= 1")
    return Fraction(beta, beta * n + 2 - beta)


def moment_samples(t, p_max):
    """Per-sample moment observables from eigenvalue samples t of shape (M, N).

    Returns {(tag, p): array of M values} for p = 1..p_max (and p + 1 for G).
    """
    t = np.asarray(t, dtype=float)
    g = t.sum(axis=-1)
    g2 = (t**2).sum(axis=-1)
    g3 = (t**3).sum(axis=-1)
    out = {}
    for p in range(1, p_max + 2):
        out[(G, p)] = g**p
    for p in range(1, p_max + 1):
        out[(G2, p)] = g ** (p - 1) * g2
        if p >= 2:
            out[(G23, p)] = g ** (p - 2) * (g2 - g3)
    return out


@dataclass(frozen=True)
class MomentTable:
    """Monte Carlo moments at one length s: {(tag, p): (estimate, stderr, nsamples)}."""

    entries: dict
    s: float
    n: int
    beta: int
    samples: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        for (tag, p), (est, se, _) in self.entries.items():
            if se < 0:
                raise ContractError("negative standard error")
            if tag == G and not -1e-12 <= est <= self.n**p * (1 + 1e-12):
                raise ContractError(f"E(g^{p}) = {est} outside [0, N^p]")

    @classmethod
    def from_samples(cls, t, s, beta, p_max=3, keep_samples=True):
        t = np.asarray(t, dtype=float)
        obs = moment_samples(t, p_max)
        m = t.shape[0]
        entries = {key: (float(v.mean()), float(v.std(ddof=1) / np.sqrt(m)), m)
                   for key, v in obs.items()}
        return cls(entries, float(s), t.shape[-1], check_beta(beta),
                   obs if keep_samples else None)

    def get(self, tag, p):
        try:
            return self.entries[(tag, p)]
        except KeyError:
            raise ContractError(f"moment ({tag}, p={p}) missing from table") from None


def _rhs_weights(p, beta, n):
    gam = float(gamma_coefficient(beta, n))
    w = {(G, p + 1): -p * gam, (G2, p): p * gam * (1.0 - 2.0 / beta)}
    if p >= 2:
        w[(G23, p)] = p * gam * 2.0 * (p - 1) / beta
    return w


def hierarchy_rhs_samples(p, beta, n, samples):
    """Per-sample right-hand side (its mean is hierarchy_rhs)."""
    return sum(c * samples[key] for key, c in _rhs_weights(p, check_beta(beta), n).items())


def hierarchy_rhs(p, beta, n, moments):
    """Right-hand side of the moment hierarchy with its standard error.

    When the table keeps its samples the error accounts for correlations
    between the moments; otherwise the terms are combined in quadrature.
    """
    beta = check_beta(beta)
    if p < 1:
        raise ContractError("p must be >= 1")
    w = _rhs_weights(p, beta, n)
    parts = [moments.get(*key) for key in w]
    est = sum(c * part[0] for c, part in zip(w.values(), parts))
    if moments.samples is not None:
        x = hierarchy_rhs_samples(p, beta, n, moments.samples)
        se = x.std(ddof=1) / np.sqrt(x.size)
    else:
        se = np.sqrt(sum((c * part[1]) ** 2 for c, part in zip(w.values(), parts)))
    return float(est), float(se)


@dataclass(frozen=True)
class IdentityCheck:
    p: int
    derivative: float      # central difference of E(g^p)
    rhs: float
    diff: float
    diff_stderr: float     # paired (same trajectories) standard error
    derivative_stderr: float
    rhs_stderr: float

    @property
    def z(self):
        return self.diff / self.diff_stderr

    def passes(self, n_se=3.0):
        return abs(self.diff) <= n_se * self.diff_stderr


def identity_check(t_lo, t_mid, t_hi, delta, p, beta):
    """Central difference (E g^p(s+d) - E g^p(s-d)) / 2d against the hierarchy at s.

    All three arrays (M, N) must come from the same trajectories so the
    comparison is paired.
    """
    beta = check_beta(beta)
    t_lo, t_mid, t_hi = (np.asarray(a, dtype=float) for a in (t_lo, t_mid, t_hi))
    if not t_lo.shape == t_mid.shape == t_hi.shape:
        raise ContractError("sample arrays must have equal shapes")
    n = t_mid.shape[-1]
    m = t_mid.shape[0]
    fd = (t_hi.sum(-1) ** p - t_lo.sum(-1) ** p) / (2.0 * delta)
    rhs = hierarchy_rhs_samples(p, beta, n, moment_samples(t_mid, p))
    d = fd - rhs
    se = lambda x: float(x.std(ddof=1) / np.sqrt(m))  # noqa: E731
    return IdentityCheck(p, float(fd.mean()), float(rhs.mean()), float(d.mean()), se(d),
                         se(fd), se(rhs))


def limiting_psi(p, s):
    """Ohm's law for all moments: (1 + s)^-p."""
    if p < 1 or np.any(np.asarray(s) < 0):
        raise ContractError("need p >= 1 and s >= 0")
    return (1.0 + np.asarray(s, dtype=float)) ** (-p)


@dataclass(frozen=True)
class PsiTable:
    """Picard iterate k on rows p = 1..p_max; coefficients are exact polynomials in s."""

    p: np.ndarray
    s: np.ndarray
    values: np.ndarray           # (p_max, len(s))
    coefficients: tuple          # coefficients[p-1][j] multiplies s^j
    iterations: int

    def row(self, p):
        return self.values[p - 1]


def _integrate(c):
    """Coefficients of int_0^s sum_j c_j t^j dt."""
    return [Fraction(0)] + [cj / (j + 1) for j, cj in enumerate(c)]


def picard_solve(p_max=25, s_max=0.5, iterations=20, n_s=51):
    """Iterate Psi_{k+1}(p, s) = 1 - p int_0^s Psi_k(p+1, t) dt from Psi_0 = 1.

    Iterates are polynomials and are integrated exactly.  The row p_max + 1
    outside the table is taken from the latest iterate of row p_max (1 at
    the start); rows p <= p_max - k are unaffected by this closure and equal
    the order-k Taylor polynomial of (1 + s)^-p.
    """
    if not 0 < s_max < 1:
        raise DomainError(f"s_max = {s_max} outside (0, 1): the contraction bound "
                          "(p+k)!/((k+1)!(p-1)!) s^(k+1) only vanishes for s < 1")
    if p_max < 1 or iterations < 0:
        raise ContractError("need p_max >= 1 and iterations >= 0")
    rows = [[Fraction(1)] for _ in range(p_max)]
    for _ in range(iterations):
        upper = rows[1:] + [rows[-1]]
        rows = [[Fraction(1)] + [-p * c for c in _integrate(nxt)[1:]]
                for p, nxt in zip(range(1, p_max + 1), upper)]
    s = np.linspace(0.0, s_max, n_s)
    values = np.array([np.polynomial.polynomial.polyval(s, [float(c) for c in r]) for r in rows])
    return PsiTable(np.arange(1, p_max + 1), s, values, tuple(tuple(r) for r in rows), iterations)


def taylor_coefficients(p, order):
    """Exact Taylor coefficients of (1 + s)^-p up to s^order."""
    out = [Fraction(1)]
    for j in range(1, order + 1):
        out.append(out[-1] * Fraction(-(p + j - 1), j))
    return out
