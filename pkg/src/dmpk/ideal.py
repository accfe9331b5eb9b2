"""Ideal isotropic transfer-matrix ensembles and the transmission-eigenvalue SDE."""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _kernels
from .errors import ContractError, DegeneracyError, UnsupportedClassError
from .increments import EnsembleKind, IncrementLayout, NoiseIncrement, lie_algebra_defect
from .simulate import (
    CLAMP_FLOOR,
    DS_GUARD,
    GAP_FLOOR,
    StepPolicy,
    as_policy,
    simulate_matrices,
)
from .streams import kind_stream

LIE_TOL = 1e-12


def check_beta(beta, allowed=(1, 2, 4)):
    if beta not in allowed:
        raise UnsupportedClassError(f"beta={beta} not supported here (allowed: {allowed})")
    return int(beta)


def ideal_kind(beta):
    check_beta(beta, (1, 2))
    return EnsembleKind.IDEAL_B1 if beta == 1 else EnsembleKind.IDEAL_B2


@lru_cache(maxsize=None)
def ideal_layout(beta, n):
    """Increment layout of the isotropic ensembles.

    beta=2: every entry of a, a' and b has E|.|^2 = ds/N, all independent.
    beta=1: a' = conj(a); b symmetric with off-diagonal variance ds/(N+1)
    and diagonal variance 2 ds/(N+1).
    """
    check_beta(beta, (1, 2))
    w = np.full((n, n), 1.0 / np.sqrt(n))
    if beta == 2:
        return IncrementLayout(n, w, w, w, shared_diag=False, time_reversal=False)
    wb = np.full((n, n), 1.0 / np.sqrt(n + 1))
    wb[np.diag_indices(n)] = np.sqrt(2.0 / (n + 1))
    return IncrementLayout(n, w, w, wb, shared_diag=False, time_reversal=True)


def sample_ideal_increment(beta, n, ds, rng):
    if ds <= 0 or n < 1:
        raise ContractError("need ds > 0 and n >= 1")
    layout = ideal_layout(check_beta(beta, (1, 2)), n)
    a, b, ap = layout.blocks(rng.standard_normal(layout.count), ds)
    return NoiseIncrement(n, ds, a, b, ap, ideal_kind(beta))


def group_step(m, dl, policy=StepPolicy.EXP):
    """One step of dM = dL M: (1 + dL) M for EULER, expm(dL) M for EXP."""
    policy = as_policy(policy)
    x = dl.matrix if isinstance(dl, NoiseIncrement) else np.asarray(dl, dtype=complex)
    m = np.asarray(m, dtype=complex)
    if x.shape != m.shape:
        raise ContractError(f"increment shape {x.shape} does not match {m.shape}")
    out = np.ascontiguousarray(m).copy()[None]
    xb = np.ascontiguousarray(x)[None]
    if policy is StepPolicy.EXP:
        if lie_algebra_defect(x) > LIE_TOL:
            raise ContractError("increment is not in the Lie algebra of U(N, N)")
        _kernels.expm_batch_apply(xb, out)
    else:
        _kernels.euler_apply(xb, out)
    return out[0]


def integrate_matrix_sde(beta, n, s_max, ds=1e-3, seed=0, policy=StepPolicy.EXP, n_grid=11):
    """One trajectory of dM = dL M sampled on a uniform grid of n_grid points.

    Returns (s_grid, matrices) with matrices[0] the identity.
    """
    layout = ideal_layout(check_beta(beta, (1, 2)), n)
    return single_path(layout, ideal_kind(beta), s_max, ds, seed, policy, n_grid)


def single_path(layout, kind, s_max, ds, seed, policy, n_grid):
    dim = 2 * layout.n
    if s_max == 0:
        return np.zeros(1), np.eye(dim, dtype=complex)[None]
    if s_max < 0:
        raise ContractError("s_max must be non-negative")
    if ds >= s_max:
        raise ContractError(f"ds={ds} must be smaller than s_max={s_max}")
    if ds > DS_GUARD:
        raise ContractError(f"ds={ds} exceeds the guard {DS_GUARD}")
    n_steps = int(round(s_max / ds))
    grid_steps = np.unique(np.rint(np.linspace(0, n_steps, n_grid)).astype(int))
    grid = grid_steps * ds
    run = simulate_matrices(layout, grid, 1, seed, kind_stream(kind), ds=ds,
                            policy=policy, keep=True)
    return grid, run.matrices[0]


def simulate_ideal(beta, n, s_points, n_traj, seed, ds=1e-3, policy=StepPolicy.EXP,
                   block_size=128, threads=1, keep=False):
    """Batch of ideal-ensemble trajectories; see simulate.simulate_matrices."""
    layout = ideal_layout(check_beta(beta, (1, 2)), n)
    return simulate_matrices(layout, s_points, n_traj, seed, kind_stream(ideal_kind(beta)),
                             ds=ds, policy=policy, block_size=block_size, threads=threads,
                             keep=keep)


@dataclass(frozen=True)
class EigenvalueState:
    t: np.ndarray
    s: float = 0.0

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        if t.ndim != 1 or np.any(t <= 0) or np.any(t > 1):
            raise ContractError("eigenvalues must be a vector with entries in (0, 1]")
        object.__setattr__(self, "t", t)


def _c(beta, n):
    return beta * n + 2 - beta


def _check_gaps(t, gap_floor):
    if t.size > 1:
        diffs = np.abs(t[:, None] - t[None, :])
        diffs[np.diag_indices(t.size)] = np.inf
        if diffs.min() < gap_floor:
            raise DegeneracyError(f"eigenvalue gap {diffs.min():.3g} below floor {gap_floor}")


def eigenvalue_drift_diffusion(state, beta, n=None, gap_floor=GAP_FLOOR):
    """Drift v_k and diffusion D_k of the transmission-eigenvalue SDE."""
    beta = check_beta(beta)
    t = state.t
    n = t.size if n is None else n
    if n != t.size:
        raise ContractError(f"state has {t.size} eigenvalues, expected {n}")
    _check_gaps(t, gap_floor)
    c = _c(beta, n)
    num = t[:, None] + t[None, :] - 2.0 * t[:, None] * t[None, :]
    den = t[:, None] - t[None, :]
    np.fill_diagonal(den, 1.0)
    ratio = num / den
    np.fill_diagonal(ratio, 0.0)
    v = -t + (2.0 * t / c) * (1.0 - t + 0.5 * beta * ratio.sum(axis=1))
    d = np.sqrt(np.maximum(4.0 * t**2 * (1.0 - t) / c, 0.0))
    return v, d


def step_eigenvalue_sde(state, beta, n, ds, rng, gap_floor=GAP_FLOOR, clamp_floor=CLAMP_FLOOR):
    """Euler-Maruyama step followed by clamping, sorting and gap separation."""
    v, d = eigenvalue_drift_diffusion(state, beta, n, gap_floor)
    xi = rng.standard_normal(state.t.size)
    t = state.t + v * ds + d * np.sqrt(ds) * xi
    _kernels.regularize(t, gap_floor, clamp_floor)
    return EigenvalueState(t, state.s + ds)


def drift_sum(state, beta, n=None, gap_floor=GAP_FLOOR):
    """Closed form of sum_k v_k: -gamma (g^2 - (1 - 2/beta) g2)."""
    beta = check_beta(beta)
    t = state.t
    n = t.size if n is None else n
    _check_gaps(t, gap_floor)
    g = t.sum()
    g2 = (t**2).sum()
    return -(beta / _c(beta, n)) * (g * g - (1.0 - 2.0 / beta) * g2)
