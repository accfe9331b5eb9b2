"""Linear algebra on the pseudo-unitary group U(N, N).

Matrices are 2N x 2N complex arrays.  Rows and columns 0..N-1 carry the
right-moving (+) channels, N..2N-1 the left-moving (-) channels.  Every
function accepts stacks of matrices with arbitrary leading dimensions.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, GroupMembershipError, NumericError

DEFAULT_TOL = 1e-10
REORTH_PERIOD = 16


def half_dim(m):
    """Return N for a (..., 2N, 2N) array, raising DimensionError otherwise."""
    m = np.asarray(m)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2] or m.shape[-1] % 2 or m.shape[-1] == 0:
        raise DimensionError(f"expected (..., 2N, 2N) array, got shape {m.shape}")
    return m.shape[-1] // 2


def sigma_z(n):
    return np.diag(np.r_[np.ones(n), -np.ones(n)]).astype(complex)


def sigma_x(n):
    eye = np.eye(n)
    zero = np.zeros((n, n))
    return np.block([[zero, eye], [eye, zero]]).astype(complex)


def group_tol(n):
    return DEFAULT_TOL * n


def _frob(a):
    return np.sqrt(np.sum(np.abs(a) ** 2, axis=(-2, -1)))


def pseudo_unitarity_defect(m):
    """Frobenius norm of M* Sz M - Sz."""
    n = half_dim(m)
    m = np.asarray(m, dtype=complex)
    sz = np.r_[np.ones(n), -np.ones(n)]
    d = np.conj(np.swapaxes(m, -1, -2)) @ (sz[:, None] * m)
    d[..., np.arange(2 * n), np.arange(2 * n)] -= sz
    return _frob(d)[()]


def time_reversal_defect(m):
    """Frobenius norm of Sx M Sx - conj(M)."""
    n = half_dim(m)
    m = np.asarray(m, dtype=complex)
    # Sx M Sx swaps both row and column blocks
    swapped = np.roll(np.roll(m, n, axis=-1), n, axis=-2)
    return _frob(swapped - np.conj(m))[()]


@dataclass(frozen=True)
class TransmissionSpectrum:
    """Transmission eigenvalues sorted descending and their sum g."""

    t: np.ndarray
    g: np.ndarray

    @classmethod
    def from_t(cls, t):
        t = np.asarray(t, dtype=float)
        return cls(t=t, g=np.sum(t, axis=-1)[()])


@dataclass(frozen=True)
class FactoredTransfer:
    """Product of layer matrices kept in the overflow-free form

        M = pending @ q @ diag(exp(log_scale)) @ r

    with q unitary, r upper triangular with unit-modulus diagonal, and
    ``pending`` the plain product of the layers absorbed since the last
    re-factorization.
    """

    q: np.ndarray
    r: np.ndarray
    log_scale: np.ndarray
    pending: np.ndarray
    count: int = 0
    reorth_period: int = REORTH_PERIOD

    @classmethod
    def identity(cls, n, batch_shape=(), reorth_period=REORTH_PERIOD):
        eye = np.broadcast_to(np.eye(2 * n, dtype=complex), tuple(batch_shape) + (2 * n, 2 * n))
        return cls(
            q=eye.copy(),
            r=eye.copy(),
            log_scale=np.zeros(tuple(batch_shape) + (2 * n,)),
            pending=eye.copy(),
            reorth_period=reorth_period,
        )

    @property
    def n(self):
        return self.q.shape[-1] // 2


def _check_finite(a, what):
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite entries in {what}")


def refactor(acc):
    """Fold the pending layers into the orthogonal / log-scale factors."""
    x = acc.pending @ acc.q
    _check_finite(x, "pending product")
    q, rr = np.linalg.qr(x)
    d = np.diagonal(rr, axis1=-2, axis2=-1)
    mag = np.abs(d)
    if np.any(mag == 0):
        raise NumericError("singular product encountered during re-factorization")
    ell = acc.log_scale
    # exp(ell_k - ell_i) restricted to the upper triangle k >= i
    expo = ell[..., None, :] - ell[..., :, None]
    dim = ell.shape[-1]
    upper = np.triu(np.ones((dim, dim), dtype=bool))
    with np.errstate(over="ignore"):
        w = np.where(upper, np.exp(np.where(upper, expo, 0.0)), 0.0)
    r = ((rr * w) / mag[..., :, None]) @ acc.r
    _check_finite(r, "triangular factor")
    eye = np.broadcast_to(np.eye(dim, dtype=complex), acc.pending.shape)
    return FactoredTransfer(
        q=q, r=r, log_scale=ell + np.log(mag), pending=eye.copy(), count=0,
        reorth_period=acc.reorth_period,
    )


def stabilized_multiply(acc, layer):
    """Return the factored form of ``layer @ acc``."""
    layer = np.asarray(layer, dtype=complex)
    if layer.shape[-2:] != acc.q.shape[-2:]:
        raise DimensionError(f"layer shape {layer.shape} does not match {acc.q.shape}")
    _check_finite(layer, "layer")
    out = FactoredTransfer(
        q=acc.q, r=acc.r, log_scale=acc.log_scale, pending=layer @ acc.pending,
        count=acc.count + 1, reorth_period=acc.reorth_period,
    )
    if out.count >= out.reorth_period:
        out = refactor(out)
    return out


def reconstruct(acc):
    """Dense matrix represented by a FactoredTransfer (may overflow)."""
    with np.errstate(over="ignore"):
        scaled = np.exp(acc.log_scale)[..., :, None] * acc.r
    return acc.pending @ acc.q @ scaled


def _finish(sv_inv_max, t, n, tol, check):
    """Common validation: t holds squared singular values of M_++^{-1}."""
    if check:
        tol = group_tol(n) if tol is None else tol
        # sigma_min(M_++) >= 1 - tol  <=>  sigma_max(M_++^{-1}) <= 1 / (1 - tol)
        if np.any(sv_inv_max > 1.0 / (1.0 - tol)):
            raise GroupMembershipError(
                "singular value of the ++ block below 1; matrix is not pseudo-unitary"
            )
        t = np.minimum(t, 1.0)
    return TransmissionSpectrum.from_t(t)


def transmission_spectrum(m, tol=None, check=True):
    """Transmission eigenvalues T_k = sigma_k(M_++)^-2, sorted descending.

    ``m`` is a dense (..., 2N, 2N) array or a FactoredTransfer.  With
    ``check=False`` no group-membership test is made and no clipping is
    applied (useful for non group-preserving integrators).
    """
    if isinstance(m, FactoredTransfer):
        return _factored_spectrum(m, tol, check)
    n = half_dim(m)
    m = np.asarray(m, dtype=complex)
    _check_finite(m, "transfer matrix")
    sv = np.linalg.svd(m[..., :n, :n], compute_uv=False)
    if np.any(sv == 0):
        raise GroupMembershipError("++ block is singular")
    inv = 1.0 / sv[..., ::-1]
    return _finish(inv[..., 0], inv**2, n, tol, check)


def _factored_spectrum(acc, tol, check):
    if acc.count:
        acc = refactor(acc)
    n = acc.n
    _check_finite(acc.q, "orthogonal factor")
    q11 = acc.q[..., :n, :n]
    u11 = acc.r[..., :n, :n]
    # M_++ = Q_11 diag(e^ell_top) U_11; its inverse never overflows because
    # Q_11 is well conditioned (||Q_11^-1|| <= sqrt 2) and e^-ell is bounded.
    with np.errstate(under="ignore"):
        dinv = np.exp(-acc.log_scale[..., :n])
    y = np.linalg.solve(u11, dinv[..., :, None] * np.linalg.inv(q11))
    sv = np.linalg.svd(y, compute_uv=False)
    _check_finite(sv, "singular values")
    return _finish(sv[..., 0], sv**2, n, tol, check)
