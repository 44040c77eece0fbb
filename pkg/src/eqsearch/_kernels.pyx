# cython: language_level=3
"""Compiled versions of the kernels in ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()


def windowed_apply(data, weights, starts):
    cdef const double[:, ::1] d = np.ascontiguousarray(data, dtype=np.float64)
    cdef const double[:, ::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef const cnp.intp_t[::1] s = np.ascontiguousarray(starts, dtype=np.intp)
    cdef Py_ssize_t m_count = d.shape[0], n = w.shape[0], width = w.shape[1]
    out = np.empty((m_count, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t m, i, j, base
    cdef double acc
    for m in range(m_count):
        for i in range(n):
            base = s[i]
            acc = 0.0
            for j in range(width):
                acc += w[i, j] * d[m, base + j]
            o[m, i] = acc
    return out


cdef inline double _soft(double x, double lam):
    if x > lam:
        return x - lam
    if x < -lam:
        return x + lam
    return 0.0


def lasso_cd(gram, corr, double lam, int max_iter=1000, double tol=1e-12):
    cdef const double[:, ::1] g = np.ascontiguousarray(gram, dtype=np.float64)
    cdef const double[::1] c = np.ascontiguousarray(corr, dtype=np.float64)
    cdef Py_ssize_t p = c.shape[0], j, k
    beta = np.zeros(p, dtype=np.float64)
    cdef double[::1] b = beta
    cdef double rho, new, delta, max_delta, gjj
    cdef int it
    for it in range(max_iter):
        max_delta = 0.0
        for j in range(p):
            gjj = g[j, j]
            if gjj <= 0.0:
                b[j] = 0.0
                continue
            rho = c[j]
            for k in range(p):
                if k != j:
                    rho -= g[j, k] * b[k]
            new = _soft(rho, lam) / gjj
            delta = fabs(new - b[j])
            if delta > max_delta:
                max_delta = delta
            b[j] = new
        if max_delta < tol:
            break
    return beta


def nondominated_levels(objectives):
    cdef const double[:, ::1] F = np.ascontiguousarray(objectives, dtype=np.float64)
    cdef Py_ssize_t n = F.shape[0], m = F.shape[1], i, j, k
    levels = np.full(n, -1, dtype=np.intp)
    if n == 0:
        return levels
    cdef cnp.intp_t[::1] lv = levels
    count_arr = np.zeros(n, dtype=np.intp)
    cdef cnp.intp_t[::1] count = count_arr
    dom_arr = np.zeros((n, n), dtype=np.uint8)
    cdef unsigned char[:, ::1] dom = dom_arr
    cdef bint le, lt
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            le = True
            lt = False
            for k in range(m):
                if F[i, k] > F[j, k]:
                    le = False
                    break
                if F[i, k] < F[j, k]:
                    lt = True
            if le and lt:
                dom[i, j] = 1
                count[j] += 1
    cdef list front = [i for i in range(n) if count[i] == 0]
    cdef list nxt
    cdef Py_ssize_t rank = 0
    while front:
        nxt = []
        for i in front:
            lv[i] = rank
        for i in front:
            for j in range(n):
                if dom[i, j]:
                    count[j] -= 1
                    if count[j] == 0:
                        nxt.append(j)
        front = nxt
        rank += 1
    return levels


cdef void _stage_rhs(double[:, :, ::1] st, double[:, :, ::1] k, double[:, ::1] dbuf,
                     const cnp.intp_t[::1] n_comp, const double[::1] mcoef,
                     const cnp.intp_t[::1] mvar, const cnp.intp_t[::1] mtime,
                     const cnp.intp_t[::1] mspace, const cnp.intp_t[::1] mfs,
                     const cnp.intp_t[::1] mfc, const cnp.intp_t[::1] fvar,
                     const cnp.intp_t[::1] fcomp, const cnp.intp_t[::1] fso,
                     const cnp.intp_t[::1] fpow, const double[:, ::1] ttab,
                     const double[:, ::1] stab, Py_ssize_t half, Py_ssize_t lo,
                     Py_ssize_t hi, double dx) noexcept nogil:
    cdef Py_ssize_t V = st.shape[0], J = st.shape[1], X = st.shape[2]
    cdef Py_ssize_t v, j, x, m, f, w, c, p, q
    cdef double val, tval, g, inv1 = 1.0 / (12.0 * dx), inv2 = 1.0 / (12.0 * dx * dx)
    cdef double inv3 = 1.0 / (8.0 * dx * dx * dx)
    for v in range(V):
        for j in range(J):
            for x in range(X):
                k[v, j, x] = 0.0
        for j in range(n_comp[v] - 1):
            for x in range(lo, hi):
                k[v, j, x] = st[v, j + 1, x]
    # spatial derivatives of every factor on the interior
    for f in range(fvar.shape[0]):
        w = fvar[f]
        c = fcomp[f]
        if fso[f] == 0:
            for x in range(lo, hi):
                dbuf[f, x] = st[w, c, x]
        elif fso[f] == 1:
            for x in range(lo, hi):
                dbuf[f, x] = (st[w, c, x - 2] - 8.0 * st[w, c, x - 1]
                              + 8.0 * st[w, c, x + 1] - st[w, c, x + 2]) * inv1
        elif fso[f] == 2:
            for x in range(lo, hi):
                dbuf[f, x] = (-st[w, c, x - 2] + 16.0 * st[w, c, x - 1] - 30.0 * st[w, c, x]
                              + 16.0 * st[w, c, x + 1] - st[w, c, x + 2]) * inv2
        else:
            for x in range(lo, hi):
                dbuf[f, x] = (st[w, c, x - 3] - 8.0 * st[w, c, x - 2] + 13.0 * st[w, c, x - 1]
                              - 13.0 * st[w, c, x + 1] + 8.0 * st[w, c, x + 2]
                              - st[w, c, x + 3]) * inv3
    for m in range(mcoef.shape[0]):
        tval = mcoef[m]
        if mtime[m] >= 0:
            tval *= ttab[mtime[m], half]
        v = mvar[m]
        j = n_comp[v] - 1
        for x in range(lo, hi):
            val = tval
            if mspace[m] >= 0:
                val *= stab[mspace[m], x]
            for f in range(mfs[m], mfs[m] + mfc[m]):
                g = dbuf[f, x]
                for q in range(fpow[f]):
                    val *= g
            k[v, j, x] += val


cdef void _set_band(double[:, :, ::1] st, const double[:, :, :, ::1] band, Py_ssize_t half,
                    Py_ssize_t b) noexcept nogil:
    cdef Py_ssize_t V = st.shape[0], J = st.shape[1], X = st.shape[2], v, j, i
    for v in range(V):
        for j in range(J):
            for i in range(b):
                st[v, j, i] = band[half, v, j, i]
                st[v, j, X - b + i] = band[half, v, j, b + i]


def integrate_program(y0, n_comp, mono_coef, mono_var, mono_time, mono_space, mono_fstart,
                      mono_fcount, f_var, f_comp, f_sorder, f_power, time_table, space_table,
                      band, Py_ssize_t band_width, double dx, double h, Py_ssize_t n_out,
                      Py_ssize_t substeps, double limit):
    y_arr = np.array(y0, dtype=np.float64, order="C")
    cdef double[:, :, ::1] y = y_arr
    cdef Py_ssize_t V = y.shape[0], J = y.shape[1], X = y.shape[2]
    cdef const cnp.intp_t[::1] nc = np.ascontiguousarray(n_comp, dtype=np.intp)
    cdef const double[::1] mcoef = np.ascontiguousarray(mono_coef, dtype=np.float64)
    cdef const cnp.intp_t[::1] mvar = np.ascontiguousarray(mono_var, dtype=np.intp)
    cdef const cnp.intp_t[::1] mtime = np.ascontiguousarray(mono_time, dtype=np.intp)
    cdef const cnp.intp_t[::1] mspace = np.ascontiguousarray(mono_space, dtype=np.intp)
    cdef const cnp.intp_t[::1] mfs = np.ascontiguousarray(mono_fstart, dtype=np.intp)
    cdef const cnp.intp_t[::1] mfc = np.ascontiguousarray(mono_fcount, dtype=np.intp)
    cdef const cnp.intp_t[::1] fvar = np.ascontiguousarray(f_var, dtype=np.intp)
    cdef const cnp.intp_t[::1] fcomp = np.ascontiguousarray(f_comp, dtype=np.intp)
    cdef const cnp.intp_t[::1] fso = np.ascontiguousarray(f_sorder, dtype=np.intp)
    cdef const cnp.intp_t[::1] fpow = np.ascontiguousarray(f_power, dtype=np.intp)
    cdef const double[:, ::1] ttab = np.ascontiguousarray(time_table, dtype=np.float64)
    cdef const double[:, ::1] stab = np.ascontiguousarray(space_table, dtype=np.float64)
    cdef const double[:, :, :, ::1] bd = np.ascontiguousarray(band, dtype=np.float64)
    cdef double[:, ::1] dbuf = np.zeros((max(fvar.shape[0], 1), X))
    cdef double[:, :, ::1] s = np.zeros((V, J, X))
    cdef double[:, :, ::1] k1 = np.zeros((V, J, X))
    cdef double[:, :, ::1] k2 = np.zeros((V, J, X))
    cdef double[:, :, ::1] k3 = np.zeros((V, J, X))
    cdef double[:, :, ::1] k4 = np.zeros((V, J, X))
    out_arr = np.zeros((n_out, V, X))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t b = band_width, lo = band_width, hi = X - band_width
    cdef Py_ssize_t o, sub, half, v, j, x, step = 0
    cdef double a, h6 = h / 6.0
    cdef int status = 0
    with nogil:
        for v in range(V):
            for x in range(X):
                out[0, v, x] = y[v, 0, x]
        for o in range(1, n_out):
            for sub in range(substeps):
                half = 2 * step
                _set_band(y, bd, half, b)
                _stage_rhs(y, k1, dbuf, nc, mcoef, mvar, mtime, mspace, mfs, mfc, fvar, fcomp,
                           fso, fpow, ttab, stab, half, lo, hi, dx)
                for v in range(V):
                    for j in range(J):
                        for x in range(X):
                            s[v, j, x] = y[v, j, x] + 0.5 * h * k1[v, j, x]
                _set_band(s, bd, half + 1, b)
                _stage_rhs(s, k2, dbuf, nc, mcoef, mvar, mtime, mspace, mfs, mfc, fvar, fcomp,
                           fso, fpow, ttab, stab, half + 1, lo, hi, dx)
                for v in range(V):
                    for j in range(J):
                        for x in range(X):
                            s[v, j, x] = y[v, j, x] + 0.5 * h * k2[v, j, x]
                _set_band(s, bd, half + 1, b)
                _stage_rhs(s, k3, dbuf, nc, mcoef, mvar, mtime, mspace, mfs, mfc, fvar, fcomp,
                           fso, fpow, ttab, stab, half + 1, lo, hi, dx)
                for v in range(V):
                    for j in range(J):
                        for x in range(X):
                            s[v, j, x] = y[v, j, x] + h * k3[v, j, x]
                _set_band(s, bd, half + 2, b)
                _stage_rhs(s, k4, dbuf, nc, mcoef, mvar, mtime, mspace, mfs, mfc, fvar, fcomp,
                           fso, fpow, ttab, stab, half + 2, lo, hi, dx)
                for v in range(V):
                    for j in range(J):
                        for x in range(X):
                            y[v, j, x] += h6 * (k1[v, j, x] + 2.0 * k2[v, j, x]
                                                + 2.0 * k3[v, j, x] + k4[v, j, x])
                _set_band(y, bd, half + 2, b)
                step += 1
            for v in range(V):
                for j in range(J):
                    for x in range(X):
                        a = y[v, j, x]
                        if not (a == a) or fabs(a) > 1.7976931348623157e308:
                            status = <int>o
                        if j == 0 and fabs(a) > limit:
                            status = <int>o
            if status:
                break
            for v in range(V):
                for x in range(X):
                    out[o, v, x] = y[v, 0, x]
    return out_arr, status
