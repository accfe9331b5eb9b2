"""Lie-algebra increments of U(N, N) built from standard normal draws.

An increment is dL = [[a, b], [b^*, a']] with a, a' anti-Hermitian, so that
dL^* Sz + Sz dL = 0 holds exactly.  Every ensemble is described by entrywise
weights for the three blocks plus two structural flags:

* ``shared_diag``: the diagonals of a and a' are i*w*W and -i*w'*W with a
  single real Brownian increment W (limit ensembles) instead of independent
  increments per entry (ideal ensembles);
* ``time_reversal``: a' = conj(a) and b is symmetric.

Off-diagonal entries are complex Brownian increments normalized to
E|B|^2 = ds, multiplied by the weight of that entry.
"""

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ContractError


class EnsembleKind(enum.Enum):
    IDEAL_B1 = "IDEAL_B1"
    IDEAL_B2 = "IDEAL_B2"
    LIMIT_Z_GAMMA = "LIMIT_Z_GAMMA"
    LIMIT_Z_0 = "LIMIT_Z_0"
    LIMIT_Y_GAMMA = "LIMIT_Y_GAMMA"
    LIMIT_Y_0 = "LIMIT_Y_0"

    @property
    def time_reversal(self):
        return self in (EnsembleKind.IDEAL_B1, EnsembleKind.LIMIT_Z_0, EnsembleKind.LIMIT_Y_0)

    @property
    def beta(self):
        return 1 if self.time_reversal else 2

    @property
    def is_limit(self):
        return self.name.startswith("LIMIT")

    @property
    def needs_velocities(self):
        return self in (EnsembleKind.LIMIT_Y_GAMMA, EnsembleKind.LIMIT_Y_0)


@dataclass(frozen=True)
class NoiseIncrement:
    """One increment with blocks a (++), b (+-) and a' (--)."""

    n: int
    ds: float
    block_a: np.ndarray
    block_b: np.ndarray
    block_a_prime: np.ndarray
    kind: EnsembleKind

    @property
    def matrix(self):
        return assemble_matrix(self.block_a, self.block_b, self.block_a_prime)


def assemble_matrix(a, b, ap):
    """Stack blocks into (..., 2N, 2N) increments [[a, b], [b^*, a']]."""
    bh = np.conj(np.swapaxes(b, -1, -2))
    top = np.concatenate([a, b], axis=-1)
    bottom = np.concatenate([bh, ap], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def lie_algebra_defect(x):
    """Frobenius norm of X^* Sz + Sz X."""
    x = np.asarray(x)
    n = x.shape[-1] // 2
    sz = np.r_[np.ones(n), -np.ones(n)]
    d = np.conj(np.swapaxes(x, -1, -2)) * sz[None, :] + sz[:, None] * x
    return np.sqrt(np.sum(np.abs(d) ** 2, axis=(-2, -1)))[()]


class IncrementLayout:
    """Maps a vector of standard normals to increment blocks.

    Normals are consumed in the order
      diagonal of a (n values, or one shared W), upper off-diagonal of a
      (real parts, then imaginary parts), the same for a' unless time
      reversal ties it to a, then b (real parts, then imaginary parts; full
      matrix, or upper triangle including the diagonal when symmetric).
    """

    def __init__(self, n, weight_a, weight_ap, weight_b, shared_diag, time_reversal):
        self.n = n
        self.shared_diag = shared_diag
        self.time_reversal = time_reversal
        self.iu = np.triu_indices(n, 1)
        self.iu0 = np.triu_indices(n, 0)
        diag = np.arange(n)
        self.diag = diag
        weight_a = np.asarray(weight_a, dtype=float)
        weight_ap = np.asarray(weight_ap, dtype=float)
        weight_b = np.asarray(weight_b, dtype=float)
        if time_reversal:
            if not np.allclose(weight_ap, weight_a, rtol=1e-12, atol=0):
                raise ContractError("time-reversal layout requires equal weights for a and a'")
            if not np.allclose(weight_b, weight_b.T, rtol=1e-12, atol=0):
                raise ContractError("time-reversal layout requires symmetric weights for b")
        self.wa_off = weight_a[self.iu]
        self.wa_diag = weight_a[diag, diag]
        self.wap_off = weight_ap[self.iu]
        self.wap_diag = weight_ap[diag, diag]
        self.wb = weight_b[self.iu0] if time_reversal else weight_b
        m = len(self.iu[0])
        self.m = m
        nd = 1 if shared_diag else n
        count = nd + 2 * m
        if not time_reversal:
            count += (0 if shared_diag else n) + 2 * m + 2 * n * n
        else:
            count += 2 * len(self.iu0[0])
        self.count = count

    def blocks(self, xi, ds):
        """Return (a, b, a') for normals xi of shape (..., count)."""
        xi = np.asarray(xi, dtype=float)
        if xi.shape[-1] != self.count:
            raise ContractError(f"expected {self.count} normals, got {xi.shape[-1]}")
        n, m = self.n, self.m
        batch = xi.shape[:-1]
        root = np.sqrt(ds)
        croot = np.sqrt(ds / 2.0)
        pos = 0

        def take(k):
            nonlocal pos
            out = xi[..., pos:pos + k]
            pos += k
            return out

        def anti_hermitian(w_diag, w_off, diag_normals, sign):
            out = np.zeros(batch + (n, n), dtype=complex)
            out[..., self.diag, self.diag] = sign * 1j * root * w_diag * diag_normals
            z = croot * w_off * (take(m) + 1j * take(m))
            out[..., self.iu[0], self.iu[1]] = z
            out[..., self.iu[1], self.iu[0]] = -np.conj(z)
            return out

        if self.shared_diag:
            w = take(1)
            a = anti_hermitian(self.wa_diag, self.wa_off, w, 1.0)
        else:
            a = anti_hermitian(self.wa_diag, self.wa_off, take(n), 1.0)
        if self.time_reversal:
            ap = np.conj(a)
            p = len(self.iu0[0])
            z = croot * self.wb * (take(p) + 1j * take(p))
            b = np.zeros(batch + (n, n), dtype=complex)
            b[..., self.iu0[0], self.iu0[1]] = z
            b[..., self.iu0[1], self.iu0[0]] = z
        else:
            if self.shared_diag:
                ap = anti_hermitian(self.wap_diag, self.wap_off, w, -1.0)
            else:
                ap = anti_hermitian(self.wap_diag, self.wap_off, take(n), 1.0)
            nn = n * n
            re = take(nn).reshape(batch + (n, n))
            im = take(nn).reshape(batch + (n, n))
            b = croot * self.wb * (re + 1j * im)
        return a, b, ap

    def matrices(self, xi, ds):
        return assemble_matrix(*self.blocks(xi, ds))
