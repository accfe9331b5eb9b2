"""Compiled inner loops for the trajectory simulators."""

import math

import numpy as np
from numba import njit

# Reassociation only: results are still bit-reproducible run to run.
_FM = {"reassoc", "contract", "nsz"}

# Diagonal Pade coefficients and 1-norm thresholds for double precision.
_PADE = (
    (1.495585217958292e-2, np.array([120.0, 60.0, 12.0, 1.0])),
    (2.539398330063230e-1, np.array([30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0])),
    (9.504178996162932e-1, np.array([17297280.0, 8648640.0, 1995840.0, 277200.0,
                                     25200.0, 1512.0, 56.0, 1.0])),
    (2.097847961257068e0, np.array([17643225600.0, 8821612800.0, 2075673600.0,
                                    302702400.0, 30270240.0, 2162160.0, 110880.0,
                                    3960.0, 90.0, 1.0])),
)
_THETA = np.array([p[0] for p in _PADE])
_COEF = np.zeros((4, 10))
for _i, (_, _c) in enumerate(_PADE):
    _COEF[_i, : _c.size] = _c
_DEG = np.array([3, 5, 7, 9])


@njit(cache=True, nogil=True)
def _cabs1(z):
    # |Re| + |Im|: an upper bound on |z| within a factor sqrt 2
    return abs(z.real) + abs(z.imag)


@njit(cache=True, nogil=True)
def _matmul(a, b, out):
    n = a.shape[0]
    for i in range(n):
        for j in range(n):
            out[i, j] = 0.0
        for k in range(n):
            aik = a[i, k]
            for j in range(n):
                out[i, j] += aik * b[k, j]


@njit(cache=True, nogil=True)
def _solve_inplace(a, b):
    """Solve a x = b by partial-pivot elimination; overwrites a, b <- x."""
    n = a.shape[0]
    m = b.shape[1]
    for col in range(n):
        piv = col
        best = _cabs1(a[col, col])
        for r in range(col + 1, n):
            v = _cabs1(a[r, col])
            if v > best:
                best = v
                piv = r
        if piv != col:
            for j in range(n):
                tmp = a[col, j]
                a[col, j] = a[piv, j]
                a[piv, j] = tmp
            for j in range(m):
                tmp = b[col, j]
                b[col, j] = b[piv, j]
                b[piv, j] = tmp
        inv = 1.0 / a[col, col]
        for r in range(col + 1, n):
            f = a[r, col] * inv
            if f != 0:
                for j in range(col + 1, n):
                    a[r, j] -= f * a[col, j]
                for j in range(m):
                    b[r, j] -= f * b[col, j]
    for col in range(n - 1, -1, -1):
        inv = 1.0 / a[col, col]
        for j in range(m):
            acc = b[col, j]
            for k in range(col + 1, n):
                acc -= a[col, k] * b[k, j]
            b[col, j] = acc * inv


@njit(cache=True, nogil=True)
def expm_apply(x, m, theta, coef, degs):
    """Overwrite each m[b] with expm(x[b]) @ m[b] (diagonal Pade, scaling and squaring).

    Diagonal Pade approximants map the Lie algebra of U(N, N) into the group
    exactly, so the product stays pseudo-unitary to rounding error.
    """
    nb, n, _ = x.shape
    x2 = np.empty((n, n), dtype=np.complex128)
    pw = np.empty((n, n), dtype=np.complex128)
    tmp = np.empty((n, n), dtype=np.complex128)
    u = np.empty((n, n), dtype=np.complex128)
    v = np.empty((n, n), dtype=np.complex128)
    xs = np.empty((n, n), dtype=np.complex128)
    for b in range(nb):
        norm1 = 0.0
        for j in range(n):
            s = 0.0
            for i in range(n):
                s += _cabs1(x[b, i, j])
            if s > norm1:
                norm1 = s
        idx = 3
        for t in range(4):
            if norm1 <= theta[t]:
                idx = t
                break
        squarings = 0
        if norm1 > theta[3]:
            squarings = int(math.ceil(math.log2(norm1 / theta[3])))
        scale = 0.5**squarings
        for i in range(n):
            for j in range(n):
                xs[i, j] = x[b, i, j] * scale
        deg = degs[idx]
        c = coef[idx]
        _matmul(xs, xs, x2)
        # u_even = sum_{odd j} c_j X^(j-1),  v = sum_{even j} c_j X^j
        for i in range(n):
            for j in range(n):
                pw[i, j] = 1.0 if i == j else 0.0
                tmp[i, j] = c[1] * pw[i, j]
                v[i, j] = c[0] * pw[i, j]
        for p in range(1, deg // 2 + 1):
            if p == 1:
                u[:, :] = x2
            else:
                _matmul(pw, x2, u)
            for i in range(n):
                for j in range(n):
                    pw[i, j] = u[i, j]
                    tmp[i, j] += c[2 * p + 1] * pw[i, j]
                    v[i, j] += c[2 * p] * pw[i, j]
        _matmul(xs, tmp, u)
        for i in range(n):
            for j in range(n):
                tmp[i, j] = v[i, j] - u[i, j]
                pw[i, j] = v[i, j] + u[i, j]
        _solve_inplace(tmp, pw)
        for _ in range(squarings):
            _matmul(pw, pw, tmp)
            for i in range(n):
                for j in range(n):
                    pw[i, j] = tmp[i, j]
        _matmul(pw, m[b], tmp)
        for i in range(n):
            for j in range(n):
                m[b, i, j] = tmp[i, j]


@njit(cache=True, nogil=True)
def euler_apply(x, m):
    """Overwrite each m[b] with (1 + x[b]) @ m[b]."""
    nb, n, _ = x.shape
    tmp = np.empty((n, n), dtype=np.complex128)
    for b in range(nb):
        _matmul(x[b], m[b], tmp)
        for i in range(n):
            for j in range(n):
                m[b, i, j] += tmp[i, j]


def expm_batch_apply(x, m):
    expm_apply(x, m, _THETA, _COEF, _DEG)


@njit(cache=True, nogil=True, fastmath=_FM)
def _drift_diffusion(t, beta, c, v, d):
    n = t.shape[0]
    # v temporarily holds the antisymmetric pair sums
    for k in range(n):
        v[k] = 0.0
    for k in range(n):
        tk = t[k]
        for j in range(k + 1, n):
            tj = t[j]
            f = (tk + tj - 2.0 * tk * tj) / (tk - tj)
            v[k] += f
            v[j] -= f
    for k in range(n):
        tk = t[k]
        v[k] = -tk + (2.0 * tk / c) * (1.0 - tk + 0.5 * beta * v[k])
        q = 4.0 * tk * tk * (1.0 - tk) / c
        d[k] = math.sqrt(q) if q > 0.0 else 0.0


@njit(cache=True, nogil=True)
def regularize(t, gap, floor):
    """Clamp to [floor, 1], sort descending and enforce a minimum gap."""
    n = t.shape[0]
    for k in range(n):
        if t[k] > 1.0:
            t[k] = 1.0
        elif not t[k] >= floor:
            t[k] = floor
    # insertion sort, descending; the array is nearly sorted after one step
    for k in range(1, n):
        key = t[k]
        j = k - 1
        while j >= 0 and t[j] < key:
            t[j + 1] = t[j]
            j -= 1
        t[j + 1] = key
    # enforce the gap from the top, then fix the bottom against the floor
    for k in range(1, n):
        if t[k - 1] - t[k] < gap:
            t[k] = t[k - 1] - gap
            while t[k - 1] - t[k] < gap:     # rounding near 1
                t[k] = np.nextafter(t[k], -1.0)
    for k in range(n - 1, -1, -1):
        lo = floor + (n - 1 - k) * gap
        if t[k] < lo:
            t[k] = lo


@njit(cache=True, nogil=True)
def drift_diffusion(t, beta, c):
    n = t.shape[0]
    v = np.empty(n)
    d = np.empty(n)
    _drift_diffusion(t, beta, c, v, d)
    return v, d


@njit(cache=True, nogil=True)
def eigen_advance(t, xi, ds, beta, c, gap, floor):
    """Plain Euler-Maruyama steps in T for a batch of eigenvalue vectors.

    t: (B, N) state, updated in place; xi: (B, steps, N) standard normals.
    """
    nb, n = t.shape
    steps = xi.shape[1]
    v = np.empty(n)
    d = np.empty(n)
    sq = math.sqrt(ds)
    for b in range(nb):
        tb = t[b]
        for s in range(steps):
            _drift_diffusion(tb, beta, c, v, d)
            for k in range(n):
                tb[k] += v[k] * ds + d[k] * sq * xi[b, s, k]
            regularize(tb, gap, floor)


# --- transmission eigenvalues in x-space, T = 1/cosh(x)^2 -------------------
#
#   dx_k = [coth(2x_k) + (beta/2) sum_j (coth(x_k - x_j) + coth(x_k + x_j))] ds / c
#          + dB_k / sqrt(c)
#
# The diffusion is additive in x.  The singular parts 1/(2c x_k) (barrier at
# the origin, a Bessel process of dimension 2) and b/(x_k - x_{k+1}) with
# b = beta/(2c) (neighbour repulsion) are handled drift-implicitly whenever
# they are large on the scale of one step; everything else is explicit.
# States are stored lane-major, shape (N, L), x sorted ascending per lane.


@njit(cache=True, nogil=True, fastmath=_FM, error_model="numpy")
def _x_drift(x, beta, c, e, em, th, w, mu, acc):
    n, nl = x.shape
    for k in range(n):
        for l in range(nl):
            m1 = math.expm1(-2.0 * x[k, l])
            ek = 1.0 + m1
            t = -m1 / (2.0 + m1)                      # tanh x
            e[k, l] = ek
            em[k, l] = m1
            th[k, l] = t
            w[k, l] = 2.0 * ek / (1.0 + ek)
            mu[k, l] = (1.0 / t + t) / (2.0 * c)      # coth(2x)/c
            acc[k, l] = 0.0
    # pair sum in rational form: coth(x_k-x_j)+coth(x_k+x_j) = 2 th_k (1-th_j^2)/(th_k^2-th_j^2)
    # with th_k - th_j = 2 (e_j - e_k) / ((1 + e_k)(1 + e_j)), e = exp(-2x).  The difference
    # e_j - e_k is taken from exp or expm1, whichever is smaller, to avoid cancellation.
    inv = np.empty(nl)
    for k in range(n):
        for j in range(k + 1, n):
            for l in range(nl):
                ej = e[j, l]
                d = (ej - e[k, l]) if ej < 0.5 else (em[j, l] - em[k, l])
                inv[l] = 1.0 / (d * (th[k, l] + th[j, l]))
            for l in range(nl):
                acc[k, l] += w[j, l] * inv[l]
            for l in range(nl):
                acc[j, l] -= w[k, l] * inv[l]
    bc = beta / c
    for k in range(n):
        for l in range(nl):
            mu[k, l] += bc * th[k, l] * (1.0 + e[k, l]) * acc[k, l]


def x_drift(x, beta, c):
    """Drift of the x-space eigenvalue SDE for one ascending state vector."""
    x = np.ascontiguousarray(np.asarray(x, dtype=np.float64).reshape(-1, 1))
    work = [np.empty_like(x) for _ in range(6)]
    _x_drift(x, float(beta), float(c), *work)
    return work[4][:, 0].copy()


@njit(cache=True, nogil=True, error_model="numpy")
def _tridiag_newton(u, z, lo, hi, bar, link, da, db, g, hd, ho, p):
    """Minimize |z-u|^2/2 - da sum_bar log z_k - db sum_link log(z_{k+1}-z_k) over z[lo:hi+1].

    The objective is strictly convex on the ordered positive chamber; damped
    Newton with a tridiagonal Hessian, step lengths kept inside the chamber.
    """
    m = hi - lo + 1
    for it in range(100):
        for i in range(m):
            k = lo + i
            g[i] = z[k] - u[k]
            hd[i] = 1.0
            if bar[k]:
                iz = 1.0 / z[k]
                g[i] -= da * iz
                hd[i] += da * iz * iz
        for i in range(m - 1):
            k = lo + i
            ho[i] = 0.0
            if link[k]:
                ig = 1.0 / (z[k + 1] - z[k])
                f = db * ig
                h = f * ig
                g[i] += f
                g[i + 1] -= f
                hd[i] += h
                hd[i + 1] += h
                ho[i] = -h
        gn = 0.0
        for i in range(m):
            gn = max(gn, abs(g[i]) / (1.0 + abs(z[lo + i])))
        if gn <= 1e-15:
            return it
        for i in range(m):
            p[i] = -g[i]
        for i in range(1, m):
            r = ho[i - 1] / hd[i - 1]
            hd[i] -= r * ho[i - 1]
            p[i] -= r * p[i - 1]
        p[m - 1] /= hd[m - 1]
        for i in range(m - 2, -1, -1):
            p[i] = (p[i] - ho[i] * p[i + 1]) / hd[i]
        alpha = 1.0
        for i in range(m):
            k = lo + i
            if bar[k] and p[i] < 0.0 and z[k] + alpha * p[i] <= 0.0:
                alpha = 0.9 * z[k] / (-p[i])
        for i in range(m - 1):
            k = lo + i
            if link[k]:
                dp = p[i + 1] - p[i]
                gap = z[k + 1] - z[k]
                if dp < 0.0 and gap + alpha * dp <= 0.0:
                    alpha = 0.9 * gap / (-dp)
        for i in range(m):
            z[lo + i] += alpha * p[i]
    return -1


@njit(cache=True, nogil=True, error_model="numpy")
def _implicit_terms(xl, u, z, lim, floor, a, b, dt, everything, bar, link, g, hd, ho, p):
    """Redo the tight singular terms of the explicit update u implicitly; result in z.

    A barrier term is tight when x_k < lim, a neighbour term when the gap is
    below lim (always, if ``everything``).  Returns False when a coordinate or
    gap that was treated explicitly ends up below ``floor``.
    """
    n = xl.shape[0]
    for k in range(n):
        bar[k] = everything or xl[k] < lim
        link[k] = k < n - 1 and (everything or xl[k + 1] - xl[k] < lim)
    for k in range(n):
        if bar[k]:
            u[k] -= a / xl[k] * dt
        if link[k]:
            r = b / (xl[k + 1] - xl[k]) * dt
            u[k] += r
            u[k + 1] -= r
    for k in range(n):
        z[k] = u[k]
    k = 0
    while k < n:
        if not (bar[k] or link[k]):
            k += 1
            continue
        lo = k
        while link[k]:
            k += 1
        inside = True
        for i in range(lo, k + 1):
            if bar[i] and u[i] <= 0.0:
                inside = False
            if link[i] and u[i + 1] <= u[i]:
                inside = False
        if not inside:
            for i in range(lo, k + 1):
                z[i] = xl[i]
        if _tridiag_newton(u, z, lo, k, bar, link, a * dt, b * dt, g, hd, ho, p) < 0:
            return False
        k += 1
    if not bar[0] and not z[0] >= floor:
        return False
    for k in range(n - 1):
        if not link[k] and not z[k + 1] - z[k] >= floor:
            return False
    return True


@njit(cache=True, nogil=True, fastmath=_FM, error_model="numpy")
def x_advance(x, dts, xi, beta, c, tight, floor_frac):
    """Advance a lane block of x-space states over the steps dts.

    x: (N, L) ascending states, updated in place; xi: (steps, N, L) normals.
    Returns the number of steps that fell back to the fully implicit update.
    """
    n, nl = x.shape
    e = np.empty((n, nl))
    em = np.empty((n, nl))
    th = np.empty((n, nl))
    w = np.empty((n, nl))
    mu = np.empty((n, nl))
    acc = np.empty((n, nl))
    u = np.empty(n)
    z = np.empty(n)
    xl = np.empty(n)
    g = np.empty(n)
    hd = np.empty(n)
    ho = np.empty(n)
    p = np.empty(n)
    bar = np.empty(n, np.bool_)
    link = np.empty(n, np.bool_)
    a = 0.5 / c
    b = 0.5 * beta / c
    fallbacks = 0
    for s in range(dts.shape[0]):
        dt = dts[s]
        sq = math.sqrt(dt / c)
        _x_drift(x, beta, c, e, em, th, w, mu, acc)
        for l in range(nl):
            for k in range(n):
                xl[k] = x[k, l]
                u[k] = xl[k] + mu[k, l] * dt + sq * xi[s, k, l]
            if not _implicit_terms(xl, u, z, tight * sq, floor_frac * sq, a, b, dt, False,
                                   bar, link, g, hd, ho, p):
                fallbacks += 1
                for k in range(n):
                    u[k] = xl[k] + mu[k, l] * dt + sq * xi[s, k, l]
                _implicit_terms(xl, u, z, tight * sq, 0.0, a, b, dt, True,
                                bar, link, g, hd, ho, p)
            for k in range(n):
                x[k, l] = z[k]
    return fallbacks
