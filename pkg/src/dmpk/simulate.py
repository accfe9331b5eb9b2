"""Batched trajectory simulators for the matrix and eigenvalue SDEs."""

import enum
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ContractError
from .linalg import pseudo_unitarity_defect, time_reversal_defect, transmission_spectrum
from .streams import STREAM_EIGEN, map_blocks, trajectory_rng

GAP_FLOOR = 1e-12
CLAMP_FLOOR = 1e-300
DELTA0 = 1e-8
DS_GUARD = 1e-2


class StepPolicy(enum.Enum):
    EULER = "EULER"
    EXP = "EXP"


def as_policy(policy):
    return policy if isinstance(policy, StepPolicy) else StepPolicy(str(policy).upper())


def record_steps(s_points, ds):
    """Step indices at which the requested lengths are reached."""
    s_points = np.atleast_1d(np.asarray(s_points, dtype=float))
    if ds <= 0:
        raise ContractError("ds must be positive")
    if np.any(s_points < 0) or np.any(np.diff(s_points) < 0):
        raise ContractError("s points must be non-negative and sorted")
    steps = np.rint(s_points / ds).astype(np.int64)
    if np.any(np.abs(steps * ds - s_points) > 1e-9 * np.maximum(1.0, s_points)):
        raise ContractError(f"s points {s_points} are not multiples of ds={ds}")
    return steps


def initial_eigenvalues(n, delta0=DELTA0):
    """De-degenerated start T_k = 1 - k*delta0, k = 1..N."""
    return 1.0 - delta0 * np.arange(1, n + 1)


# x-space integrator settings: a singular term is treated implicitly when its
# argument is below TIGHT * sqrt(dt/c); explicitly treated arguments must stay
# above LOOSE_FLOOR * sqrt(dt/c) or the step is redone fully implicitly.
LANES = 32
TIGHT = 4.0
LOOSE_FLOOR = 0.5
RAMP_KAPPA = 2.0
RAMP_MAX = 0.25


def laguerre_start(beta, n, s0, rng):
    """Ascending x = arccosh(T^-1/2) at small length s0, drawn from the flat limit.

    For x << 1 the x-space SDE reduces to a radial Dyson process started at
    the origin whose law at time s0 is the beta-Laguerre ensemble; it is
    sampled with the bidiagonal chi model (x^2 = lambda * s0 / c).
    """
    i = np.arange(1, n + 1)
    bd = np.zeros((n, n))
    bd[i - 1, i - 1] = np.sqrt(rng.chisquare(2.0 + beta * (n - i)))
    if n > 1:
        bd[i[1:] - 1, i[:-1] - 1] = np.sqrt(rng.chisquare(beta * (n - i[:-1])))
    lam = np.linalg.svd(bd, compute_uv=False) ** 2
    return np.sort(np.sqrt(lam * s0 / (beta * n + 2 - beta)))


def step_grid(s_points, ds, s0, n):
    """Deterministic x-space step grid and the grid index of each record point.

    A geometric ramp dt = rho*s (rho = min(RAMP_MAX, RAMP_KAPPA/N)) from s0
    follows the sqrt(s) growth of eigenvalue spacings at small lengths, then
    uniform steps ds.  Record points must be multiples of ds.
    """
    steps = record_steps(s_points, ds)
    s_max = steps.max() * ds
    rho = min(RAMP_MAX, RAMP_KAPPA / n)
    ramp = [s0]
    while rho * ramp[-1] < ds and ramp[-1] < s_max:
        ramp.append(ramp[-1] * (1.0 + rho))
    k0 = int(np.ceil(ramp[-1] / ds - 1e-9))
    uniform = np.arange(k0, steps.max() + 1) * ds
    ramp = np.asarray(ramp)
    early = steps[(steps > 0) & (steps < k0)] * ds
    grid = np.unique(np.concatenate([ramp[ramp < k0 * ds], early, uniform]))
    rec = np.array([np.abs(grid - k * ds).argmin() if k > 0 else -1 for k in steps])
    return grid, rec


def _t_from_x(x):
    e = np.exp(-2.0 * x)
    return np.maximum(4.0 * e / (1.0 + e) ** 2, CLAMP_FLOOR)


def simulate_eigenvalues(beta, n, s_points, n_traj, seed, ds=1e-3, scheme="implicit",
                         s0=None, delta0=DELTA0, block_size=256, threads=1, chunk=500,
                         stream=STREAM_EIGEN):
    """Monte Carlo ensemble of the transmission-eigenvalue SDE.

    scheme="implicit" (default) integrates x_k = arccosh(T_k^-1/2), where the
    noise is additive, starting from the small-length law at s0 (default ds)
    and treating the near-singular repulsion drift-implicitly.  scheme="euler"
    is plain Euler-Maruyama in T from 1 - k*delta0 with clamping.

    Returns an array of shape (n_traj, len(s_points), n) with the eigenvalues
    sorted descending at each requested length.
    """
    if beta not in (1, 2, 4):
        raise ContractError(f"beta={beta} not supported")
    if scheme == "euler":
        return _simulate_eigenvalues_euler(beta, n, s_points, n_traj, seed, ds, delta0,
                                           block_size, threads, chunk, stream)
    if scheme != "implicit":
        raise ContractError(f"unknown scheme {scheme!r}")
    s0 = ds if s0 is None else float(s0)
    if not 0 < s0 <= ds:
        raise ContractError("need 0 < s0 <= ds")
    grid, rec = step_grid(s_points, ds, s0, n)
    dts = np.diff(grid)
    c = float(beta * n + 2 - beta)
    block_size = max(LANES, block_size // LANES * LANES)

    def lanes(lo, hi):
        gens = [trajectory_rng(seed, stream, i) for i in range(lo, hi)]
        gens += gens[-1:] * (LANES - len(gens))      # padding lanes, discarded
        x = np.stack([laguerre_start(beta, n, s0, g) for g in gens], axis=1)
        out = np.empty((LANES, len(rec), n))
        out[:, rec < 0] = 1.0
        done = 0
        for j, target in enumerate(rec):
            while done < target:
                k = int(min(chunk, target - done))
                xi = np.stack([g.standard_normal((k, n)) for g in gens], axis=-1)
                _kernels.x_advance(x, dts[done:done + k], xi, float(beta), c, TIGHT, LOOSE_FLOOR)
                done += k
            if target >= 0:
                out[:, j] = _t_from_x(x.T)
        return out[: hi - lo]

    def worker(lo, hi):
        return np.concatenate([lanes(a, min(a + LANES, hi)) for a in range(lo, hi, LANES)])

    return map_blocks(worker, n_traj, block_size, threads)


def _simulate_eigenvalues_euler(beta, n, s_points, n_traj, seed, ds, delta0, block_size,
                                threads, chunk, stream):
    steps = record_steps(s_points, ds)
    c = float(beta * n + 2 - beta)
    t0 = initial_eigenvalues(n, delta0)

    def worker(lo, hi):
        gens = [trajectory_rng(seed, stream, i) for i in range(lo, hi)]
        t = np.tile(t0, (hi - lo, 1))
        out = np.empty((hi - lo, len(steps), n))
        done = 0
        for j, target in enumerate(steps):
            while done < target:
                k = int(min(chunk, target - done))
                xi = np.stack([g.standard_normal((k, n)) for g in gens])
                _kernels.eigen_advance(t, xi, ds, float(beta), c, GAP_FLOOR, CLAMP_FLOOR)
                done += k
            out[:, j] = t
        return out

    return map_blocks(worker, n_traj, block_size, threads)


@dataclass(frozen=True)
class MatrixRun:
    """Recorded observables of a batch of matrix-SDE trajectories."""

    s: np.ndarray
    t: np.ndarray            # (n_traj, n_s, N) transmission eigenvalues
    pu_defect: np.ndarray    # (n_traj, n_s)
    tr_defect: np.ndarray    # (n_traj, n_s)
    matrices: np.ndarray | None = None  # (n_traj, n_s, 2N, 2N) when kept

    @property
    def g(self):
        return self.t.sum(axis=-1)


def simulate_matrices(layout, s_points, n_traj, seed, stream, ds=1e-3, policy=StepPolicy.EXP,
                      block_size=128, threads=1, chunk=50, keep=False):
    """Integrate dM = dL M for a batch of trajectories.

    ``layout`` is an IncrementLayout; each trajectory draws layout.count
    normals per step from its own stream.
    """
    policy = as_policy(policy)
    steps = record_steps(s_points, ds)
    n = layout.n
    dim = 2 * n

    def worker(lo, hi):
        gens = [trajectory_rng(seed, stream, i) for i in range(lo, hi)]
        nb = hi - lo
        m = np.broadcast_to(np.eye(dim, dtype=complex), (nb, dim, dim)).copy()
        t = np.empty((nb, len(steps), n))
        pu = np.empty((nb, len(steps)))
        tr = np.empty((nb, len(steps)))
        kept = np.empty((nb, len(steps), dim, dim), dtype=complex) if keep else None
        done = 0
        for j, target in enumerate(steps):
            while done < target:
                k = int(min(chunk, target - done))
                xi = np.stack([g.standard_normal((k, layout.count)) for g in gens], axis=1)
                x = np.ascontiguousarray(layout.matrices(xi, ds))
                for step in range(k):
                    if policy is StepPolicy.EXP:
                        _kernels.expm_batch_apply(x[step], m)
                    else:
                        _kernels.euler_apply(x[step], m)
                done += k
            t[:, j] = transmission_spectrum(m, check=policy is StepPolicy.EXP).t
            pu[:, j] = pseudo_unitarity_defect(m)
            tr[:, j] = time_reversal_defect(m)
            if keep:
                kept[:, j] = m
        if keep:
            return t, pu, tr, kept
        return t, pu, tr

    parts = map_blocks(worker, n_traj, block_size, threads)
    return MatrixRun(np.atleast_1d(np.asarray(s_points, dtype=float)), *parts)
