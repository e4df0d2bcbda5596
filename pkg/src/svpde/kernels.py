"""Numba kernels for the ADI time-stepping hot path.

Value arrays are (NI, NJ) C-ordered with i indexing the asset direction and
j the variance direction.  A1 systems are tridiagonal along axis 0 (batched
over j, vectorized inner loops), A2 systems are tridiagonal along axis 1
with one extra entry on the j = 0 row (bordered elimination).  No fastmath:
results must be bit-reproducible regardless of threading.
"""

import numpy as np
from numba import njit

NOPYTHON_OPTS = dict(cache=True, nogil=True)


@njit(**NOPYTHON_OPTS)
def factor_axis0(lo, di, up):
    """LU factors of batched tridiagonal systems along axis 0."""
    ni, nj = di.shape
    w = np.zeros((ni, nj))
    den = np.empty((ni, nj))
    for j in range(nj):
        den[0, j] = di[0, j]
    for i in range(1, ni):
        for j in range(nj):
            wv = lo[i, j] / den[i - 1, j]
            w[i, j] = wv
            den[i, j] = di[i, j] - wv * up[i - 1, j]
    return w, den


@njit(**NOPYTHON_OPTS)
def solve_axis0(w, den, up, rhs, out):
    ni, nj = rhs.shape
    for j in range(nj):
        out[0, j] = rhs[0, j]
    for i in range(1, ni):
        for j in range(nj):
            out[i, j] = rhs[i, j] - w[i, j] * out[i - 1, j]
    for j in range(nj):
        out[ni - 1, j] /= den[ni - 1, j]
    for i in range(ni - 2, -1, -1):
        for j in range(nj):
            out[i, j] = (out[i, j] - up[i, j] * out[i + 1, j]) / den[i, j]


@njit(**NOPYTHON_OPTS)
def factor_axis1_arrow(lo, di, up, extra):
    """Factor batched systems along axis 1 whose row 0 carries an extra
    entry at column 2: bordered elimination of row 1, then plain Thomas."""
    ni, nj = di.shape
    m1 = np.empty(ni)
    ueff = np.empty((ni, nj))
    w = np.zeros((ni, nj))
    den = np.empty((ni, nj))
    for i in range(ni):
        d0 = di[i, 0]
        den[i, 0] = d0
        ueff[i, 0] = up[i, 0]
        mv = lo[i, 1] / d0
        m1[i] = mv
        den[i, 1] = di[i, 1] - mv * up[i, 0]
        ueff[i, 1] = up[i, 1] - mv * extra[i]
        for j in range(2, nj):
            ueff[i, j] = up[i, j]
            wv = lo[i, j] / den[i, j - 1]
            w[i, j] = wv
            den[i, j] = di[i, j] - wv * ueff[i, j - 1]
    return m1, ueff, w, den


@njit(**NOPYTHON_OPTS)
def solve_axis1_arrow(m1, ueff, w, den, extra, rhs, out):
    ni, nj = rhs.shape
    for i in range(ni):
        r0 = rhs[i, 0]
        out[i, 1] = rhs[i, 1] - m1[i] * r0
        for j in range(2, nj):
            out[i, j] = rhs[i, j] - w[i, j] * out[i, j - 1]
        out[i, nj - 1] /= den[i, nj - 1]
        for j in range(nj - 2, 0, -1):
            out[i, j] = (out[i, j] - ueff[i, j] * out[i, j + 1]) / den[i, j]
        out[i, 0] = (r0 - ueff[i, 0] * out[i, 1] - extra[i] * out[i, 2]) / den[i, 0]


@njit(**NOPYTHON_OPTS)
def apply_ops(v, a1_lo, a1_di, a1_up, a2_lo, a2_di, a2_up, a2_e,
              a0_c, a0_xm, a0_xp, a0_vm, a0_vp, a0_pm, a0_mp,
              f0, f1, f2):
    """F_k = A_k v for k = 0, 1, 2 (boundary vectors added by the caller).

    Coefficients pointing at eliminated/folded neighbors are zero by
    assembly, so edge rows/columns simply skip the out-of-range reads;
    the interior block is branch-free.
    """
    ni, nj = v.shape
    for i in range(ni):
        im = i - 1 if i > 0 else i
        ip = i + 1 if i < ni - 1 else i
        # j = 0 column: no j-1 neighbors; extra entry couples to column 2
        f1[i, 0] = (a1_lo[i, 0] * v[im, 0] + a1_di[i, 0] * v[i, 0]
                    + a1_up[i, 0] * v[ip, 0])
        f2[i, 0] = (a2_di[i, 0] * v[i, 0] + a2_up[i, 0] * v[i, 1]
                    + a2_e[i] * v[i, 2])
        f0[i, 0] = (a0_c[i, 0] * v[i, 0] + a0_xm[i, 0] * v[im, 0]
                    + a0_xp[i, 0] * v[ip, 0] + a0_vp[i, 0] * v[i, 1]
                    + a0_mp[i, 0] * v[im, 1])
        for j in range(1, nj - 1):
            f1[i, j] = (a1_lo[i, j] * v[im, j] + a1_di[i, j] * v[i, j]
                        + a1_up[i, j] * v[ip, j])
            f2[i, j] = (a2_lo[i, j] * v[i, j - 1] + a2_di[i, j] * v[i, j]
                        + a2_up[i, j] * v[i, j + 1])
            f0[i, j] = (a0_c[i, j] * v[i, j]
                        + a0_xm[i, j] * v[im, j] + a0_xp[i, j] * v[ip, j]
                        + a0_vm[i, j] * v[i, j - 1] + a0_vp[i, j] * v[i, j + 1]
                        + a0_pm[i, j] * v[ip, j - 1] + a0_mp[i, j] * v[im, j + 1])
        jl = nj - 1
        f1[i, jl] = (a1_lo[i, jl] * v[im, jl] + a1_di[i, jl] * v[i, jl]
                     + a1_up[i, jl] * v[ip, jl])
        f2[i, jl] = a2_lo[i, jl] * v[i, jl - 1] + a2_di[i, jl] * v[i, jl]
        f0[i, jl] = (a0_c[i, jl] * v[i, jl] + a0_xm[i, jl] * v[im, jl]
                     + a0_xp[i, jl] * v[ip, jl] + a0_vm[i, jl] * v[i, jl - 1]
                     + a0_pm[i, jl] * v[ip, jl - 1])


@njit(**NOPYTHON_OPTS)
def hv_step_kernel(v, theta, dt, er0, eq0, er1, eq1,
                   a1_lo, a1_di, a1_up, a2_lo, a2_di, a2_up, a2_e,
                   a0_c, a0_xm, a0_xp, a0_vm, a0_vp, a0_pm, a0_mp,
                   b0r, b0q, b1r, b1q, b2r, b2q,
                   w1, den1, up1, m1, ueff, w2, den2, extra2):
    """One Hundsdorfer-Verwer step from t0 to t1 = t0 + dt."""
    ni, nj = v.shape
    f0 = np.empty((ni, nj)); f1 = np.empty((ni, nj)); f2 = np.empty((ni, nj))
    apply_ops(v, a1_lo, a1_di, a1_up, a2_lo, a2_di, a2_up, a2_e,
              a0_c, a0_xm, a0_xp, a0_vm, a0_vp, a0_pm, a0_mp, f0, f1, f2)
    y0 = np.empty((ni, nj))
    rhs = np.empty((ni, nj))
    for i in range(ni):
        for j in range(nj):
            f0v = f0[i, j] + b0r[i, j] * er0 + b0q[i, j] * eq0
            f1v = f1[i, j] + b1r[i, j] * er0 + b1q[i, j] * eq0
            f2v = f2[i, j] + b2r[i, j] * er0 + b2q[i, j] * eq0
            f0[i, j] = f0v; f1[i, j] = f1v; f2[i, j] = f2v
            y0[i, j] = v[i, j] + dt * (f0v + f1v + f2v)
            rhs[i, j] = y0[i, j] + theta * dt * (
                b1r[i, j] * er1 + b1q[i, j] * eq1 - f1v)
    y1 = np.empty((ni, nj))
    solve_axis0(w1, den1, up1, rhs, y1)
    for i in range(ni):
        for j in range(nj):
            rhs[i, j] = y1[i, j] + theta * dt * (
                b2r[i, j] * er1 + b2q[i, j] * eq1 - f2[i, j])
    y2 = np.empty((ni, nj))
    solve_axis1_arrow(m1, ueff, w2, den2, extra2, rhs, y2)

    g0 = np.empty((ni, nj)); g1 = np.empty((ni, nj)); g2 = np.empty((ni, nj))
    apply_ops(y2, a1_lo, a1_di, a1_up, a2_lo, a2_di, a2_up, a2_e,
              a0_c, a0_xm, a0_xp, a0_vm, a0_vp, a0_pm, a0_mp, g0, g1, g2)
    for i in range(ni):
        for j in range(nj):
            b1v = b1r[i, j] * er1 + b1q[i, j] * eq1
            b2v = b2r[i, j] * er1 + b2q[i, j] * eq1
            g0v = g0[i, j] + b0r[i, j] * er1 + b0q[i, j] * eq1
            g1v = g1[i, j] + b1v
            g2v = g2[i, j] + b2v
            g1[i, j] = g1v - b1v          # A1 y2
            g2[i, j] = g2v - b2v          # A2 y2
            fy2 = g0v + g1v + g2v
            fv = f0[i, j] + f1[i, j] + f2[i, j]
            yt0 = y0[i, j] + 0.5 * dt * (fy2 - fv)
            rhs[i, j] = yt0 - theta * dt * g1[i, j]
    yt1 = np.empty((ni, nj))
    solve_axis0(w1, den1, up1, rhs, yt1)
    for i in range(ni):
        for j in range(nj):
            rhs[i, j] = yt1[i, j] - theta * dt * g2[i, j]
    out = np.empty((ni, nj))
    solve_axis1_arrow(m1, ueff, w2, den2, extra2, rhs, out)
    return out


@njit(**NOPYTHON_OPTS)
def mcs_step_kernel(v, theta, dt, er0, eq0, er1, eq1,
                    a1_lo, a1_di, a1_up, a2_lo, a2_di, a2_up, a2_e,
                    a0_c, a0_xm, a0_xp, a0_vm, a0_vp, a0_pm, a0_mp,
                    b0r, b0q, b1r, b1q, b2r, b2q,
                    w1, den1, up1, m1, ueff, w2, den2, extra2):
    """One Modified Craig-Sneyd step from t0 to t1 = t0 + dt."""
    ni, nj = v.shape
    f0 = np.empty((ni, nj)); f1 = np.empty((ni, nj)); f2 = np.empty((ni, nj))
    apply_ops(v, a1_lo, a1_di, a1_up, a2_lo, a2_di, a2_up, a2_e,
              a0_c, a0_xm, a0_xp, a0_vm, a0_vp, a0_pm, a0_mp, f0, f1, f2)
    y0 = np.empty((ni, nj))
    rhs = np.empty((ni, nj))
    for i in range(ni):
        for j in range(nj):
            f0v = f0[i, j] + b0r[i, j] * er0 + b0q[i, j] * eq0
            f1v = f1[i, j] + b1r[i, j] * er0 + b1q[i, j] * eq0
            f2v = f2[i, j] + b2r[i, j] * er0 + b2q[i, j] * eq0
            f0[i, j] = f0v; f1[i, j] = f1v; f2[i, j] = f2v
            y0[i, j] = v[i, j] + dt * (f0v + f1v + f2v)
            rhs[i, j] = y0[i, j] + theta * dt * (
                b1r[i, j] * er1 + b1q[i, j] * eq1 - f1v)
    y1 = np.empty((ni, nj))
    solve_axis0(w1, den1, up1, rhs, y1)
    for i in range(ni):
        for j in range(nj):
            rhs[i, j] = y1[i, j] + theta * dt * (
                b2r[i, j] * er1 + b2q[i, j] * eq1 - f2[i, j])
    y2 = np.empty((ni, nj))
    solve_axis1_arrow(m1, ueff, w2, den2, extra2, rhs, y2)

    g0 = np.empty((ni, nj)); g1 = np.empty((ni, nj)); g2 = np.empty((ni, nj))
    apply_ops(y2, a1_lo, a1_di, a1_up, a2_lo, a2_di, a2_up, a2_e,
              a0_c, a0_xm, a0_xp, a0_vm, a0_vp, a0_pm, a0_mp, g0, g1, g2)
    for i in range(ni):
        for j in range(nj):
            g0v = g0[i, j] + b0r[i, j] * er1 + b0q[i, j] * eq1
            g1v = g1[i, j] + b1r[i, j] * er1 + b1q[i, j] * eq1
            g2v = g2[i, j] + b2r[i, j] * er1 + b2q[i, j] * eq1
            fy2 = g0v + g1v + g2v
            fv = f0[i, j] + f1[i, j] + f2[i, j]
            yh0 = (y0[i, j] + theta * dt * (g0v - f0[i, j])
                   + (0.5 - theta) * dt * (fy2 - fv))
            rhs[i, j] = yh0 + theta * dt * (
                b1r[i, j] * er1 + b1q[i, j] * eq1 - f1[i, j])
    yt1 = np.empty((ni, nj))
    solve_axis0(w1, den1, up1, rhs, yt1)
    for i in range(ni):
        for j in range(nj):
            rhs[i, j] = yt1[i, j] + theta * dt * (
                b2r[i, j] * er1 + b2q[i, j] * eq1 - f2[i, j])
    out = np.empty((ni, nj))
    solve_axis1_arrow(m1, ueff, w2, den2, extra2, rhs, out)
    return out
