"""Hot kernels for the self-normalized extreme-value density.

For a normalized tail ``v`` (first entry 1, last entry 0) and tail index
``xi > 0`` the density is

    Gamma(k) * int_0^inf t^(k-2) * prod_i (1 + xi*v_i*t)^-(1 + 1/xi) dt

Both backends integrate in log space around the integrand's mode ``m``:
``t = m*s/(1-s)`` maps the half line to ``(0, 1)`` with the peak at
``s = 1/2``, the integrand is divided by its peak value, and adaptive
Gauss-Kronrod (7/15) refinement runs on ``(0, 1)``.  Below ``eps0`` the
closed-form xi -> 0 limit (plus its first-order term) is used.

Entry points return ``nan`` for a quadrature failure and ``+inf`` where the
integral diverges (ties at zero with a heavy enough xi); the public wrappers
in :mod:`sfatail.evt_core` turn those into exceptions or pass them on.
"""
import math

import numpy as np

from ._accel import USE_NUMBA, njit

_XGK = np.array([
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327,
])
_INITIAL_PANELS = 4


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------

@njit(cache=True)
def _small_xi_log_density(v, xi):
    k = v.shape[0]
    s = 0.0
    q = 0.0
    for x in v:
        s += x
        q += x * x
    out = math.lgamma(k) + math.lgamma(k - 1) - (k - 1) * math.log(s)
    if xi > 0.0:
        out += math.log1p(-xi * (k - 1) * (1.0 - k * q / (2.0 * s * s)))
    return out


@njit(cache=True)
def _log_kernel(t, v, xi):
    # (k-2) log t - (1 + 1/xi) sum log(1 + xi v t); logs taken on 16-term products
    acc = 0.0
    p = 1.0
    for i in range(v.shape[0]):
        p *= 1.0 + xi * v[i] * t
        if (i & 15) == 15:
            acc += math.log(p)
            p = 1.0
    acc += math.log(p)
    return (v.shape[0] - 2) * math.log(t) - (1.0 + 1.0 / xi) * acc


@njit(cache=True)
def _mode_equation(u, v, xi, target):
    t = math.exp(u)
    a = 0.0
    d = 0.0
    for x in v:
        r = 1.0 / (1.0 + xi * x * t)
        a += x * t * r
        d += x * t * r * r
    return (1.0 + xi) * a - target, (1.0 + xi) * d


@njit(cache=True)
def _mode(v, xi):
    """Maximizer of the log integrand; -1.0 when the integral diverges."""
    k = v.shape[0]
    target = k - 2.0
    s = 0.0
    nz = 0
    for x in v:
        s += x
        if x > 0.0:
            nz += 1
    if nz * (1.0 + 1.0 / xi) <= k - 1.0:
        return -1.0
    # the xi = 0 root lies left of every xi > 0 root
    lo = math.log(target / s)
    hi = lo + 1.0
    while _mode_equation(hi, v, xi, target)[0] < 0.0:
        lo = hi
        hi += 1.0
    u = 0.5 * (lo + hi)
    for _ in range(60):
        f, d = _mode_equation(u, v, xi, target)
        if f < 0.0:
            lo = u
        else:
            hi = u
        nxt = u - f / d if d > 0.0 else 0.5 * (lo + hi)
        if not (lo < nxt < hi):
            nxt = 0.5 * (lo + hi)
        if abs(nxt - u) < 1e-9:
            u = nxt
            break
        u = nxt
    return math.exp(u)


@njit(cache=True)
def _integrand(s, v, xi, m, hm):
    if s <= 0.0 or s >= 1.0:
        return 0.0
    w = 1.0 - s
    return math.exp(_log_kernel(m * s / w, v, xi) - hm) / (w * w)


@njit(cache=True)
def _gk15(a, b, v, xi, m, hm, fv):
    c = 0.5 * (a + b)
    hl = 0.5 * (b - a)
    fc = _integrand(c, v, xi, m, hm)
    rk = _WGK[7] * fc
    rg = _WG[3] * fc
    for j in range(7):
        d = hl * _XGK[j]
        f1 = _integrand(c - d, v, xi, m, hm)
        f2 = _integrand(c + d, v, xi, m, hm)
        fv[2 * j] = f1
        fv[2 * j + 1] = f2
        rk += _WGK[j] * (f1 + f2)
        if j % 2 == 1:
            rg += _WG[j // 2] * (f1 + f2)
    mean = 0.5 * rk
    asc = _WGK[7] * abs(fc - mean)
    for j in range(7):
        asc += _WGK[j] * (abs(fv[2 * j] - mean) + abs(fv[2 * j + 1] - mean))
    asc *= abs(hl)
    err = abs((rk - rg) * hl)
    if asc != 0.0 and err != 0.0:
        err = asc * min(1.0, (200.0 * err / asc) ** 1.5)
    return rk * hl, err


@njit(cache=True)
def _log_density_one(v, xi, rtol, atol, maxsub, eps0, A, B, R, E, fv):
    if xi < eps0:
        return _small_xi_log_density(v, xi)
    m = _mode(v, xi)
    if m < 0.0:
        return np.inf
    hm = _log_kernel(m, v, xi)
    n = _INITIAL_PANELS
    for i in range(n):
        A[i] = i / n
        B[i] = (i + 1.0) / n
        R[i], E[i] = _gk15(A[i], B[i], v, xi, m, hm, fv)
    while True:
        tot = 0.0
        err = 0.0
        worst = 0
        for i in range(n):
            tot += R[i]
            err += E[i]
            if E[i] > E[worst]:
                worst = i
        if err <= max(atol, rtol * abs(tot)):
            break
        if n >= maxsub:
            return np.nan
        a = A[worst]
        b = B[worst]
        mid = 0.5 * (a + b)
        B[worst] = mid
        R[worst], E[worst] = _gk15(a, mid, v, xi, m, hm, fv)
        A[n] = mid
        B[n] = b
        R[n], E[n] = _gk15(mid, b, v, xi, m, hm, fv)
        n += 1
    return math.lgamma(v.shape[0]) + hm + math.log(m) + math.log(tot)


@njit(cache=True)
def log_density_matrix_numba(V, xis, rtol, atol, maxsub, eps0):
    nrow = V.shape[0]
    ng = xis.shape[0]
    out = np.empty((nrow, ng))
    size = max(maxsub, _INITIAL_PANELS) + 1
    A = np.empty(size)
    B = np.empty(size)
    R = np.empty(size)
    E = np.empty(size)
    fv = np.empty(15)
    for r in range(nrow):
        v = V[r]
        for g in range(ng):
            out[r, g] = _log_density_one(v, xis[g], rtol, atol, maxsub, eps0,
                                         A, B, R, E, fv)
    return out


# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------

def _small_xi_log_density_np(v, xi):
    k = v.shape[0]
    s = v.sum()
    q = np.dot(v, v)
    base = math.lgamma(k) + math.lgamma(k - 1) - (k - 1) * math.log(s)
    return base + np.log1p(-xi * (k - 1) * (1.0 - k * q / (2.0 * s * s)))


def _log_kernel_np(t, v, xi):
    """Broadcast ``t`` (n, j) against per-row ``xi`` (n,)."""
    k = v.shape[0]
    z = xi[:, None, None] * t[:, :, None] * v[None, None, :]
    return (k - 2) * np.log(t) - (1.0 + 1.0 / xi)[:, None] * np.log1p(z).sum(axis=-1)


def _mode_np(v, xi):
    k = v.shape[0]
    target = k - 2.0
    x = v[None, :]
    c = (1.0 + xi)[:, None]

    def phi(u):
        t = np.exp(u)[:, None]
        return (c * x * t / (1.0 + xi[:, None] * x * t)).sum(axis=1) - target

    lo = np.full(xi.shape, math.log(target / v.sum()))
    hi = lo + 1.0
    while True:
        low_side = phi(hi) < 0.0
        if not low_side.any():
            break
        lo = np.where(low_side, hi, lo)
        hi = np.where(low_side, hi + 1.0, hi)
    # plain bisection on log t; the mode only sets the scale of the substitution
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        below = phi(mid) < 0.0
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return np.exp(0.5 * (lo + hi))


def _log_density_row_np(v, xis, rtol, atol, maxsub, eps0):
    k = v.shape[0]
    out = np.empty(xis.shape[0])
    small = xis < eps0
    out[small] = _small_xi_log_density_np(v, xis[small])
    nz = np.count_nonzero(v > 0.0)
    diverge = ~small & (nz * (1.0 + 1.0 / np.where(small, 1.0, xis)) <= k - 1.0)
    out[diverge] = np.inf
    todo = np.flatnonzero(~small & ~diverge)
    if todo.size == 0:
        return out

    xi = xis[todo]
    m = _mode_np(v, xi)
    hm = _log_kernel_np(m[:, None], v, xi)[:, 0]

    nodes = np.concatenate([-_XGK[:7], [0.0], _XGK[6::-1]])
    wk = np.concatenate([_WGK[:7], [_WGK[7]], _WGK[6::-1]])
    wg = np.zeros(15)
    wg[[1, 3, 5]] = _WG[:3]
    wg[7] = _WG[3]
    wg[[9, 11, 13]] = _WG[2::-1]

    owner = np.repeat(np.arange(todo.size), _INITIAL_PANELS)
    a = np.tile(np.arange(_INITIAL_PANELS) / _INITIAL_PANELS, todo.size)
    b = a + 1.0 / _INITIAL_PANELS
    done = np.zeros(todo.size, dtype=bool)
    result = np.zeros(todo.size)
    while True:
        c = 0.5 * (a + b)
        hl = 0.5 * (b - a)
        s = c[:, None] + hl[:, None] * nodes[None, :]
        w = 1.0 - s
        t = m[owner][:, None] * s / w
        f = np.exp(_log_kernel_np(t, v, xi[owner]) - hm[owner][:, None]) / (w * w)
        rk = f @ wk
        rg = f @ wg
        asc = np.abs(f - 0.5 * rk[:, None]) @ wk * hl
        err = np.abs(rk - rg) * hl
        pos = (asc > 0.0) & (err > 0.0)
        err[pos] = asc[pos] * np.minimum(1.0, (200.0 * err[pos] / asc[pos]) ** 1.5)
        val = rk * hl

        tot = np.bincount(owner, weights=val, minlength=todo.size)
        etot = np.bincount(owner, weights=err, minlength=todo.size)
        count = np.bincount(owner, minlength=todo.size)
        ok = ~done & (etot <= np.maximum(atol, rtol * np.abs(tot)))
        result[ok] = tot[ok]
        done |= ok
        if done.all():
            break
        if np.any(~done & (count >= maxsub)):
            bad = ~done & (count >= maxsub)
            result[bad] = np.nan
            done |= bad
            if done.all():
                break
        # bisect every interval carrying at least the average error of its owner
        keep = ~done[owner]
        share = err >= (etot / np.maximum(count, 1))[owner]
        split = keep & share
        stay = keep & ~share
        mid = c[split]
        a = np.concatenate([a[stay], a[split], mid])
        b = np.concatenate([b[stay], mid, b[split]])
        owner = np.concatenate([owner[stay], owner[split], owner[split]])
        # carried intervals are re-evaluated; cheap next to the k-term products
    out[todo] = math.lgamma(k) + hm + np.log(m) + np.log(result)
    return out


def log_density_matrix_numpy(V, xis, rtol, atol, maxsub, eps0):
    out = np.empty((V.shape[0], xis.shape[0]))
    for r in range(V.shape[0]):
        out[r] = _log_density_row_np(V[r], xis, rtol, atol, maxsub, eps0)
    return out


def log_density_matrix(V, xis, rtol, atol, maxsub, eps0):
    """Dispatch to the backend chosen by ``SFATAIL_NUMBA``."""
    V = np.ascontiguousarray(V, dtype=np.float64)
    xis = np.ascontiguousarray(xis, dtype=np.float64)
    if USE_NUMBA:
        return log_density_matrix_numba(V, xis, float(rtol), float(atol), int(maxsub), float(eps0))
    return log_density_matrix_numpy(V, xis, rtol, atol, maxsub, eps0)
