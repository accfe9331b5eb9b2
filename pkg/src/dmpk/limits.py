"""Limiting increment laws of the scaled microscopic model and their matrix SDEs.

Z kinds weight every entry by 1/sqrt((4 - E^2) N); Y kinds use the
channel velocities instead, 1/sqrt(N |v_m| |v_n|) with the channel of each
index taken as in micro.entry_labels.  In both, the diagonal of the (++)
block is i * w * W with a single real Brownian increment W shared by all
channels, and the (--) diagonal is its negative.  The gamma = 0 kinds tie
a' = conj(a) and make b symmetric.
"""

import numpy as np

from .errors import ContractError, DomainError
from .ideal import single_path
from .increments import EnsembleKind, IncrementLayout, NoiseIncrement
from .micro import entry_labels
from .simulate import StepPolicy, simulate_matrices
from .streams import kind_stream

LIMIT_KINDS = (
    EnsembleKind.LIMIT_Z_GAMMA,
    EnsembleKind.LIMIT_Z_0,
    EnsembleKind.LIMIT_Y_GAMMA,
    EnsembleKind.LIMIT_Y_0,
)


def _check_kind(kind):
    kind = EnsembleKind(kind)
    if kind not in LIMIT_KINDS:
        raise ContractError(f"{kind} is not a limit ensemble")
    return kind


def limit_weights(kind, n, energy, velocities=None, unit_mfp=False):
    """2N x 2N matrix of entry weights (standard deviations per unit ds)."""
    kind = _check_kind(kind)
    if not abs(energy) < 2:
        raise DomainError(f"need |E| < 2, got {energy}")
    if kind.needs_velocities:
        if velocities is None:
            raise ContractError(f"{kind.value} needs channel velocities")
        if velocities.n != n:
            raise ContractError("velocity data has the wrong channel count")
        speed = np.abs(velocities.v_plus)[[nu for _, nu in entry_labels(n)]]
        w = 1.0 / np.sqrt(n * np.outer(speed, speed))
        if unit_mfp:
            # rescale so that E||b||^2 = N ds, as for the ideal ensembles
            w *= 1.0 / np.sqrt(n * np.mean(w[:n, n:] ** 2))
    else:
        scale = 1.0 if unit_mfp else 4.0 - energy**2
        w = np.full((2 * n, 2 * n), 1.0 / np.sqrt(scale * n))
    return w


def limit_layout(kind, n, energy, velocities=None, unit_mfp=False):
    kind = _check_kind(kind)
    w = limit_weights(kind, n, energy, velocities, unit_mfp)
    return IncrementLayout(n, w[:n, :n], w[n:, n:], w[:n, n:], shared_diag=True,
                           time_reversal=kind.time_reversal)


def sample_limit_increment(kind, n, energy, ds, rng, velocities=None, unit_mfp=False):
    if ds <= 0 or n < 1:
        raise ContractError("need ds > 0 and n >= 1")
    kind = _check_kind(kind)
    layout = limit_layout(kind, n, energy, velocities, unit_mfp)
    a, b, ap = layout.blocks(rng.standard_normal(layout.count), ds)
    return NoiseIncrement(n, ds, a, b, ap, kind)


def integrate_limit_sde(kind, n, energy, s_max, ds=1e-3, seed=0, policy=StepPolicy.EXP,
                        velocities=None, unit_mfp=False, n_grid=11):
    """One path of dA = dZ A (or dG = dY G) on a uniform grid, starting at 1."""
    kind = _check_kind(kind)
    layout = limit_layout(kind, n, energy, velocities, unit_mfp)
    return single_path(layout, kind, s_max, ds, seed, policy, n_grid)


def simulate_limit(kind, n, energy, s_points, n_traj, seed, ds=1e-3, policy=StepPolicy.EXP,
                   velocities=None, unit_mfp=False, block_size=128, threads=1, keep=False):
    """Batch of limit-ensemble trajectories; see simulate.simulate_matrices."""
    kind = _check_kind(kind)
    layout = limit_layout(kind, n, energy, velocities, unit_mfp)
    return simulate_matrices(layout, s_points, n_traj, seed, kind_stream(kind), ds=ds,
                             policy=policy, block_size=block_size, threads=threads, keep=keep)
