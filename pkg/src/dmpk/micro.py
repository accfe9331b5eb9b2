"""Anderson model on a strip: dispersion, channel basis, layer transfer matrices.

Conventions
-----------
* Channels nu = 0..N-1 are residues mod N; theta_nu = gamma + 2 pi nu / N.
* k^+ is the root with positive group velocity (right mover), k^- the other.
* Channel-basis index m < N is (+, nu=m); index m >= N is (-, slot nu=m-N),
  where slot nu of the (-) block carries the wavevector k^-_{-nu}
  (the permutation Pi acting in that block).
* kappa[m] is the kinetic phase of index m: M0 = diag(exp(i kappa)).
"""

import enum
import warnings
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .errors import (
    ConditioningError,
    ContractError,
    DomainError,
    EvanescentModeError,
    ResourceError,
)
from .linalg import REORTH_PERIOD, FactoredTransfer, stabilized_multiply
from .streams import STREAM_DISORDER, trajectory_rng

H_MIN = 1e-6
VELOCITY_FLOOR = 1e-8
MAX_LAYERS = 1e8
N_GRID = 64
TWO_PI = 2.0 * np.pi


class Distribution(enum.Enum):
    GAUSSIAN = "GAUSSIAN"
    RADEMACHER = "RADEMACHER"
    UNIFORM = "UNIFORM"


def sample_potential(distribution, shape, rng):
    """I.i.d. on-site potentials with mean 0 and variance 1."""
    distribution = Distribution(distribution)
    if distribution is Distribution.GAUSSIAN:
        return rng.standard_normal(shape)
    if distribution is Distribution.RADEMACHER:
        return 2.0 * rng.integers(0, 2, size=shape) - 1.0
    return rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size=shape)


@dataclass(frozen=True)
class LayerDisorder:
    v: np.ndarray
    distribution: Distribution = Distribution.GAUSSIAN

    @classmethod
    def sample(cls, n, rng, distribution=Distribution.GAUSSIAN):
        distribution = Distribution(distribution)
        return cls(sample_potential(distribution, n, rng), distribution)


@dataclass(frozen=True)
class WireGeometry:
    n: int
    gamma: float
    h1: float
    h2: float
    energy: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise DomainError(f"channel count must be a positive integer, got {self.n}")
        if self.energy == 0:
            raise DomainError("energy E = 0 is excluded")
        if min(self.h1, self.h2) < H_MIN:
            raise DomainError(f"hoppings must be >= {H_MIN}, got h1={self.h1}, h2={self.h2}")
        if abs(self.energy) + 2 * self.h1 + 2 * self.h2 >= 2:
            raise DomainError("need |E| + 2 h1 + 2 h2 < 2")
        if not 0 <= self.gamma < np.pi / self.n:
            raise DomainError(f"need 0 <= gamma < pi/N, got {self.gamma}")

    @property
    def theta(self):
        return self.gamma + TWO_PI * np.arange(self.n) / self.n

    @property
    def time_reversal(self):
        return self.gamma == 0


def _wrap(k):
    """Map angles into (-pi, pi]."""
    return np.pi - np.mod(np.pi - k, TWO_PI)


def dispersion_energy(geom, k, nu):
    """Kinetic energy of wavevector k in channel nu."""
    theta = geom.gamma + TWO_PI * np.asarray(nu) / geom.n
    return 2 * np.cos(k) + 2 * geom.h1 * np.cos(theta) + 2 * geom.h2 * np.cos(k - theta)


def group_velocity(geom, k, nu):
    theta = geom.gamma + TWO_PI * np.asarray(nu) / geom.n
    return -2 * np.sin(k) - 2 * geom.h2 * np.sin(k - theta)


@dataclass(frozen=True)
class DispersionData:
    k_plus: np.ndarray
    k_minus: np.ndarray
    v_plus: np.ndarray
    v_minus: np.ndarray
    time_reversal: bool = False

    @cached_property
    def cha(self):
        return chaoticity_from_wavevectors(self.k_plus, self.k_minus, self.time_reversal)

    @property
    def n(self):
        return self.k_plus.size


def solve_dispersion(geom):
    """Both real roots per channel of the kinetic dispersion at energy E.

    2 cos k + 2 h2 cos(k - theta) = R cos(k - delta), so the roots are
    k = delta -/+ arccos(E'/R) with E' = E - 2 h1 cos theta.
    """
    if geom.energy == 0:
        raise DomainError("energy E = 0 is excluded")
    theta = geom.theta
    cx = 2 + 2 * geom.h2 * np.cos(theta)
    cy = 2 * geom.h2 * np.sin(theta)
    r = np.hypot(cx, cy)
    delta = np.arctan2(cy, cx)
    e_red = geom.energy - 2 * geom.h1 * np.cos(theta)
    if np.any(np.abs(e_red) >= r):
        raise EvanescentModeError("some channel has no real wavevector at this energy")
    alpha = np.arccos(e_red / r)
    nu = np.arange(geom.n)
    kp = _wrap(delta - alpha)
    vp = group_velocity(geom, kp, nu)
    if geom.time_reversal:
        # k^-_nu = -k^+_-nu holds exactly; imposing it keeps long products symmetric
        pi = minus_perm(geom.n)
        km, vm = -kp[pi], -vp[pi]
    else:
        km = _wrap(delta + alpha)
        vm = group_velocity(geom, km, nu)
    return DispersionData(kp, km, vp, vm, geom.time_reversal)


# -- chaoticity -----------------------------------------------------------------
#
# A term is (sign, branch, channel); a quadruple of terms is "trivially
# cancelling" when it splits into two pairs that each cancel identically:
# equal wavevector label with opposite signs, or (time-reversal case only)
# equal signs with label (s, nu) paired to (-s, -nu), since k^s_nu = -k^-s_-nu.

def _labels(n):
    """Wavevector labels (branch, channel) in the order k^+_0.., k^-_0.."""
    return [(s, nu) for s in (1, -1) for nu in range(n)]


def _terms(n):
    return [(w, lab) for w in (1, -1) for lab in _labels(n)]


def cancel_matrix(n, time_reversal):
    """Boolean matrix: term a and term b cancel identically as a pair."""
    terms = _terms(n)
    out = np.zeros((len(terms), len(terms)), dtype=bool)
    for i, (wa, (sa, na)) in enumerate(terms):
        for j, (wb, (sb, nb)) in enumerate(terms):
            if wa == -wb and (sa, na) == (sb, nb):
                out[i, j] = True
            elif time_reversal and wa == wb and (sb, nb) == (-sa, (-na) % n):
                out[i, j] = True
    return out


def excluded_quadruples(c, i, j, k, l):
    """True where terms (i, j, k, l) split into two cancelling pairs."""
    return (c[i, j] & c[k, l]) | (c[i, k] & c[j, l]) | (c[i, l] & c[j, k])


def _distance_to_lattice(x):
    return np.abs(x - TWO_PI * np.round(x / TWO_PI))


def chaoticity_from_wavevectors(k_plus, k_minus, time_reversal):
    n = len(k_plus)
    k = np.concatenate([k_plus, k_minus])
    vals = np.concatenate([k, -k])            # term values, ordered like _terms
    c = cancel_matrix(n, time_reversal)
    m = vals.size
    j, kk, ll = np.meshgrid(np.arange(m), np.arange(m), np.arange(m), indexing="ij")
    rest = vals[j] + vals[kk] + vals[ll]
    best = np.inf
    for i in range(m):
        keep = ~excluded_quadruples(c, i, j, kk, ll)
        if keep.any():
            best = min(best, _distance_to_lattice(vals[i] + rest[keep]).min())
    return float(best)


def chaoticity(geom, warn_below=1e-10):
    """Minimal |sum of four signed wavevectors| mod 2 pi over non-trivial quadruples.

    Returns +inf if every quadruple is trivially cancelling.  A warning is
    issued when the value is (numerically) zero, i.e. the kinetic spectrum
    is degenerate.
    """
    cha = solve_dispersion(geom).cha
    if cha <= warn_below:
        warnings.warn(f"chaoticity {cha:.3g} vanishes: degenerate kinetic spectrum",
                      RuntimeWarning, stacklevel=2)
    return cha


# -- channel basis and layer transfer matrices ------------------------------------

def fourier_matrix(n):
    z = np.arange(n)
    return np.exp(2j * np.pi * np.outer(z, z) / n) / np.sqrt(n)


def minus_perm(n):
    """Index map of Pi: slot nu -> channel -nu mod N."""
    return (-np.arange(n)) % n


def kinetic_operators(geom):
    """Position-basis H_perp and the hopping operator P (periodic in z)."""
    n = geom.n
    h_perp = np.zeros((n, n), dtype=complex)
    p = np.eye(n, dtype=complex)
    for z in range(n):
        h_perp[z, (z + 1) % n] += geom.h1 * np.exp(1j * geom.gamma)
        h_perp[z, (z - 1) % n] += geom.h1 * np.exp(-1j * geom.gamma)
        p[z, (z + 1) % n] += geom.h2 * np.exp(1j * geom.gamma)
    return h_perp, p


def position_transfer(geom, v, lam):
    """T_x = [[P*^-1 (E - H_perp - lam V), -P*^-1 P], [1, 0]] in the position basis."""
    n = geom.n
    h_perp, p = kinetic_operators(geom)
    p_star = p.conj().T
    if np.linalg.cond(p_star) > 1e12:
        raise ConditioningError("hopping operator P* is numerically singular")
    top_left = geom.energy * np.eye(n) - h_perp - lam * np.diag(np.asarray(v, dtype=float))
    t = np.zeros((2 * n, 2 * n), dtype=complex)
    t[:n, :n] = np.linalg.solve(p_star, top_left)
    t[:n, n:] = -np.linalg.solve(p_star, p)
    t[n:, :n] = np.eye(n)
    return t


def kinetic_phases(disp):
    """kappa with M0 = diag(exp(i kappa))."""
    return np.concatenate([disp.k_plus, disp.k_minus[minus_perm(disp.n)]])


def _check_velocities(disp):
    if np.min(np.abs(np.concatenate([disp.v_plus, disp.v_minus]))) < VELOCITY_FLOOR:
        raise ConditioningError("a channel velocity vanishes; channel basis is singular")


def channel_basis(geom, disp=None):
    """Change of basis K from position to velocity-normalized channel amplitudes, and M0."""
    disp = solve_dispersion(geom) if disp is None else disp
    _check_velocities(disp)
    n = geom.n
    pi = minus_perm(n)
    wp = 1.0 / np.sqrt(np.abs(disp.v_plus))
    wm = 1.0 / np.sqrt(np.abs(disp.v_minus))
    ups = np.zeros((2 * n, 2 * n), dtype=complex)
    idx = np.arange(n)
    ups[idx, idx] = np.exp(1j * disp.k_plus) * wp
    ups[n + idx, idx] = wp
    # (-) block columns pick up Pi: slot nu holds channel -nu
    ups[pi, n + idx] = np.exp(1j * disp.k_minus[pi]) * wm[pi]
    ups[n + pi, n + idx] = wm[pi]
    q = fourier_matrix(n)
    qq = np.zeros((2 * n, 2 * n), dtype=complex)
    qq[:n, :n] = q
    qq[n:, n:] = q
    return qq @ ups, np.diag(np.exp(1j * kinetic_phases(disp)))


def layer_transfer(geom, disorder, lam, basis=None):
    """One disordered layer in the channel basis: K^-1 T_x K."""
    if lam < 0:
        raise ContractError("lambda must be non-negative")
    v = disorder.v if isinstance(disorder, LayerDisorder) else disorder
    k, _ = channel_basis(geom) if basis is None else basis
    return np.linalg.solve(k, position_transfer(geom, v, lam) @ k)


def build_R(geom, disorder, disp=None):
    """Disorder part R_x of one layer: K^-1 T_x K M0^-1 = 1 + lam R_x.

    With A = |v|^-1/2 (Q* V Q) |v|^-1/2,
        R = -i [[A, A Pi], [-Pi A, -Pi A Pi]].
    The overall sign follows from labelling k^+ as the right mover.
    """
    disp = solve_dispersion(geom) if disp is None else disp
    _check_velocities(disp)
    v = np.asarray(disorder.v if isinstance(disorder, LayerDisorder) else disorder, dtype=float)
    return _r_from_potentials(geom.n, disp, v)


def _r_from_potentials(n, disp, v):
    """R for potentials v of shape (..., N)."""
    q = fourier_matrix(n)
    vhat = np.einsum("zm,...z,zn->...mn", q.conj(), v, q)
    w = 1.0 / np.sqrt(np.abs(disp.v_plus))
    a = w[:, None] * vhat * w[None, :]
    pi = minus_perm(n)
    top = np.concatenate([a, a[..., :, pi]], axis=-1)
    bottom = np.concatenate([-a[..., pi, :], -a[..., pi, :][..., :, pi]], axis=-1)
    return -1j * np.concatenate([top, bottom], axis=-2)


def r_basis(geom, disp=None):
    """R^(z) for unit potential at site z; R_x = sum_z V(x, z) R^(z)."""
    disp = solve_dispersion(geom) if disp is None else disp
    _check_velocities(disp)
    return _r_from_potentials(geom.n, disp, np.eye(geom.n))


def z_layer(geom, disorder, x, disp=None):
    """Z_x = M0^-x R_x M0^x for layer index x."""
    disp = solve_dispersion(geom) if disp is None else disp
    kappa = kinetic_phases(disp)
    phase = np.exp(1j * x * (kappa[None, :] - kappa[:, None]))
    return build_R(geom, disorder, disp) * phase


# -- the rescaled processes A^lambda and Z^lambda ---------------------------------

def layer_count(lam, s, max_layers=MAX_LAYERS):
    if not 0 < lam <= 0.5:
        raise ContractError(f"need 0 < lambda <= 0.5, got {lam}")
    count = int(np.floor(s / lam**2 + 1e-9))
    if count > max_layers:
        raise ResourceError(f"{count:.3g} layers requested, guard is {max_layers:.3g}")
    return count


def _disorder_chunks(gens, n, total, distribution, chunk):
    """Yield (x0, V) with V of shape (B, k, N) for layers x0+1..x0+k."""
    done = 0
    while done < total:
        k = min(chunk, total - done)
        yield done, np.stack([sample_potential(distribution, (k, n), g) for g in gens])
        done += k


@dataclass(frozen=True)
class APath:
    s: np.ndarray
    layers: np.ndarray
    factored: list          # FactoredTransfer per grid point (batched over realizations)


def evolve_A_batch(geom, lam, s_grid, indices, seed, distribution=Distribution.GAUSSIAN,
                   reorth_period=REORTH_PERIOD, max_layers=MAX_LAYERS, chunk=512):
    """Iterate A <- (1 + lam Z_x) A for several disorder realizations at once.

    Realization i uses the disorder stream (seed, indices[i]).  Returns an
    APath whose factored entries carry a leading batch axis.
    """
    s_grid = np.asarray(s_grid, dtype=float)
    indices = list(indices)
    n = geom.n
    acc = FactoredTransfer.identity(n, (len(indices),), reorth_period)
    if lam == 0:
        # no disorder coupling: every increment vanishes
        return APath(s_grid, np.zeros(s_grid.size, dtype=int), [acc] * s_grid.size)
    counts = np.array([layer_count(lam, s, max_layers) for s in s_grid])
    if np.any(np.diff(counts) < 0):
        raise ContractError("s grid must be non-decreasing")
    disp = solve_dispersion(geom)
    basis = r_basis(geom, disp)
    kappa = kinetic_phases(disp)
    dk = kappa[None, :] - kappa[:, None]
    eye = np.eye(2 * n)
    gens = [trajectory_rng(seed, STREAM_DISORDER, i) for i in indices]
    snaps = []
    pos = 0
    for x0, v in _disorder_chunks(gens, n, int(counts.max(initial=0)), distribution, chunk):
        x = x0 + 1 + np.arange(v.shape[1])
        z = np.einsum("bxz,zmn->bxmn", v, basis) * np.exp(1j * x[:, None, None] * dk)
        factors = eye + lam * z
        for j in range(v.shape[1]):
            while pos < counts.size and counts[pos] == x0 + j:
                snaps.append(acc)
                pos += 1
            acc = stabilized_multiply(acc, factors[:, j])
    while pos < counts.size:
        snaps.append(acc)
        pos += 1
    return APath(s_grid, counts, snaps)


def evolve_A(geom, lam, s_max, seed, n_grid=N_GRID, distribution=Distribution.GAUSSIAN,
             reorth_period=REORTH_PERIOD, max_layers=MAX_LAYERS, index=0):
    """A^lambda at floor(s / lambda^2) layers on a uniform grid of [0, s_max].

    Returns (s_grid, list of FactoredTransfer).
    """
    s_grid = np.linspace(0.0, s_max, n_grid)
    path = evolve_A_batch(geom, lam, s_grid, [index], seed, distribution, reorth_period,
                          max_layers)
    return s_grid, [_unbatch(f) for f in path.factored]


def _unbatch(acc):
    return FactoredTransfer(acc.q[0], acc.r[0], acc.log_scale[0], acc.pending[0], acc.count,
                            acc.reorth_period)


def accumulate_Z_batch(geom, lam, s, indices, seed, distribution=Distribution.GAUSSIAN,
                       max_layers=MAX_LAYERS, chunk=2048):
    """lam * sum_{x=1}^{L} Z_x for several realizations, shape (B, 2N, 2N).

    Uses Z_x = sum_z V(x, z) R^(z) exp(i x (kappa_n - kappa_m)), so only the
    Fourier sums F_z(phi) = sum_x V(x, z) exp(i x phi) are accumulated.
    """
    indices = list(indices)
    n = geom.n
    dim = 2 * n
    if lam == 0:
        return np.zeros((len(indices), dim, dim), dtype=complex)
    total = layer_count(lam, s, max_layers)
    disp = solve_dispersion(geom)
    basis = r_basis(geom, disp).reshape(n, dim * dim)
    kappa = kinetic_phases(disp)
    dk = (kappa[None, :] - kappa[:, None]).ravel()
    gens = [trajectory_rng(seed, STREAM_DISORDER, i) for i in indices]
    f = np.zeros((len(indices), n, dim * dim), dtype=complex)
    for x0, v in _disorder_chunks(gens, n, total, distribution, chunk):
        x = x0 + 1 + np.arange(v.shape[1])
        f += np.einsum("bxz,xm->bzm", v, np.exp(1j * np.outer(x, dk)))
    return (lam * np.einsum("zm,bzm->bm", basis, f)).reshape(-1, dim, dim)


def accumulate_Z(geom, lam, s, seed, distribution=Distribution.GAUSSIAN,
                 max_layers=MAX_LAYERS, index=0):
    """Z^lambda(s) = lam * sum_{x <= s/lam^2} Z_x for one disorder realization."""
    return accumulate_Z_batch(geom, lam, s, [index], seed, distribution, max_layers)[0]


def scaling_ratio(geom, lam):
    """lam^2 / cha: must tend to zero along a lambda -> 0 schedule."""
    cha = solve_dispersion(geom).cha
    return lam**2 / cha if cha > 0 else np.inf


# -- second-moment structure of Z ----------------------------------------------------

def entry_labels(n):
    """Wavevector label (branch, channel) of each channel-basis index."""
    pi = minus_perm(n)
    return [(1, nu) for nu in range(n)] + [(-1, int(pi[nu])) for nu in range(n)]


@lru_cache(maxsize=None)
def _term_index(n):
    return {t: i for i, t in enumerate(_terms(n))}


def phase_exceptional(n, time_reversal):
    """Entry pairs of Z whose oscillating phases cancel identically.

    Returns (zz, zc): boolean (M, M) arrays over flattened entries
    (m, n) -> m * 2N + n, for E[Z_a Z_b] (phase -k_m + k_n - k_p + k_r) and
    E[Z_a conj Z_b] (phase -k_m + k_n + k_p - k_r).
    """
    labels = entry_labels(n)
    dim = 2 * n
    tix = _term_index(n)
    c = cancel_matrix(n, time_reversal)
    plus = np.array([tix[(1, lab)] for lab in labels])
    minus = np.array([tix[(-1, lab)] for lab in labels])
    m_idx, n_idx = np.divmod(np.arange(dim * dim), dim)
    a1, a2 = minus[m_idx], plus[n_idx]
    i, j = a1[:, None], a2[:, None]
    zz = excluded_quadruples(c, i, j, minus[m_idx][None, :], plus[n_idx][None, :])
    zc = excluded_quadruples(c, i, j, plus[m_idx][None, :], minus[n_idx][None, :])
    return zz, zc


def limit_second_moments(geom, disp=None):
    """Per-unit-s limits of E[Z_a Z_b] and E[Z_a conj Z_b] (flattened entries).

    Only phase-exceptional pairs survive the oscillatory averaging; their
    coefficient is sum_z R^(z)_a R^(z)_b (resp. conj) for unit-variance V.
    """
    disp = solve_dispersion(geom) if disp is None else disp
    dim = 2 * geom.n
    rb = r_basis(geom, disp).reshape(geom.n, dim * dim)
    zz, zc = phase_exceptional(geom.n, geom.time_reversal)
    czz = np.where(zz, rb.T @ rb, 0.0)
    czc = np.where(zc, rb.T @ rb.conj(), 0.0)
    return czz, czc


def exceptional_pairs(geom, tol=1e-8):
    """Boolean (M, M): distinct entry pairs with a non-vanishing limiting correlation."""
    czz, czc = limit_second_moments(geom)
    var = np.real(np.diag(czc))
    norm = np.sqrt(np.outer(var, var))
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = np.where(norm > 0, np.maximum(np.abs(czz), np.abs(czc)) / norm, 0.0)
    out = corr > tol
    np.fill_diagonal(out, False)
    return out


def predicted_variance(geom, s, disp=None):
    """E|Z_mn(s)|^2 = s / (N |v_m| |v_n|), velocities of the channel at each index."""
    disp = solve_dispersion(geom) if disp is None else disp
    speed = np.abs(disp.v_plus)[[nu for _, nu in entry_labels(geom.n)]]
    return s / (geom.n * np.outer(speed, speed))
