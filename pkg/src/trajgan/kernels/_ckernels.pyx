# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels in ``_pykernels``.

Same signatures and return values; see the numpy module for semantics.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, tanh

cnp.import_array()

cdef double LOG_2PI = log(2.0 * 3.141592653589793)


cdef inline double _sig(double x) nogil:
    cdef double e
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


cdef inline double _tanh(double x) nogil:
    # exp-based; libm tanh is several times slower and the gate values
    # only need to agree with the derivative formulas used in backward
    cdef double e
    if x > 20.0:
        return 1.0
    if x < -20.0:
        return -1.0
    if -0.01 < x < 0.01:
        return tanh(x)
    e = exp(2.0 * x)
    return (e - 1.0) / (e + 1.0)


def lstm_pointwise_forward(double[:, ::1] pre, double[:, ::1] c_prev):
    cdef Py_ssize_t n = c_prev.shape[0]
    cdef Py_ssize_t hsz = c_prev.shape[1]
    cdef Py_ssize_t a, k
    cdef double iv, fv, gv, ov, cv, tv
    i = np.empty((n, hsz))
    f = np.empty((n, hsz))
    g = np.empty((n, hsz))
    o = np.empty((n, hsz))
    tc = np.empty((n, hsz))
    c = np.empty((n, hsz))
    h = np.empty((n, hsz))
    cdef double[:, ::1] iw = i, fw = f, gw = g, ow = o, tw = tc, cw = c, hw = h
    with nogil:
        for a in range(n):
            for k in range(hsz):
                iv = _sig(pre[a, k])
                fv = _sig(pre[a, hsz + k])
                gv = _tanh(pre[a, 2 * hsz + k])
                ov = _sig(pre[a, 3 * hsz + k])
                cv = fv * c_prev[a, k] + iv * gv
                tv = _tanh(cv)
                iw[a, k] = iv
                fw[a, k] = fv
                gw[a, k] = gv
                ow[a, k] = ov
                cw[a, k] = cv
                tw[a, k] = tv
                hw[a, k] = ov * tv
    return h, c, (i, f, g, o, tc, np.asarray(c_prev))


def lstm_pointwise_backward(dh_in, dc_in, cache):
    cdef double[:, ::1] dh = np.ascontiguousarray(dh_in, dtype=np.float64)
    cdef double[:, ::1] dc = np.ascontiguousarray(dc_in, dtype=np.float64)
    cdef double[:, ::1] i = cache[0], f = cache[1], g = cache[2], o = cache[3]
    cdef double[:, ::1] tc = cache[4], cp = cache[5]
    cdef Py_ssize_t n = dh.shape[0]
    cdef Py_ssize_t hsz = dh.shape[1]
    cdef Py_ssize_t a, k
    cdef double dct
    dpre = np.empty((n, 4 * hsz))
    dcp = np.empty((n, hsz))
    cdef double[:, ::1] dp = dpre, dcw = dcp
    with nogil:
        for a in range(n):
            for k in range(hsz):
                dct = dc[a, k] + dh[a, k] * o[a, k] * (1.0 - tc[a, k] * tc[a, k])
                dp[a, k] = dct * g[a, k] * i[a, k] * (1.0 - i[a, k])
                dp[a, hsz + k] = dct * cp[a, k] * f[a, k] * (1.0 - f[a, k])
                dp[a, 2 * hsz + k] = dct * i[a, k] * (1.0 - g[a, k] * g[a, k])
                dp[a, 3 * hsz + k] = dh[a, k] * tc[a, k] * o[a, k] * (1.0 - o[a, k])
                dcw[a, k] = dct * f[a, k]
    return dpre, dcp


def gmm_log_prob_forward(double[:, ::1] pi, double[:, ::1] mux, double[:, ::1] muy,
                         double[:, ::1] sx, double[:, ::1] sy, double[:, ::1] rho,
                         double[::1] px, double[::1] py):
    cdef Py_ssize_t m = pi.shape[0]
    cdef Py_ssize_t kk = pi.shape[1]
    cdef Py_ssize_t a, k
    cdef double zx, zy, om, qq, ln, sv, mx, acc, lp
    dx = np.empty((m, kk))
    dy = np.empty((m, kk))
    omr = np.empty((m, kk))
    q = np.empty((m, kk))
    log_n = np.empty((m, kk))
    s = np.empty((m, kk))
    logp = np.empty(m)
    cdef double[:, ::1] dxw = dx, dyw = dy, ow = omr, qw = q, lnw = log_n, sw = s
    cdef double[::1] lpw = logp
    with nogil:
        for a in range(m):
            mx = -1e308
            for k in range(kk):
                zx = (px[a] - mux[a, k]) / sx[a, k]
                zy = (py[a] - muy[a, k]) / sy[a, k]
                om = 1.0 - rho[a, k] * rho[a, k]
                qq = zx * zx + zy * zy - 2.0 * rho[a, k] * zx * zy
                ln = -LOG_2PI - log(sx[a, k]) - log(sy[a, k]) - 0.5 * log(om) - 0.5 * qq / om
                if pi[a, k] > 0:
                    sv = log(pi[a, k]) + ln
                else:
                    sv = -1e308
                dxw[a, k] = zx
                dyw[a, k] = zy
                ow[a, k] = om
                qw[a, k] = qq
                lnw[a, k] = ln
                sw[a, k] = sv
                if sv > mx:
                    mx = sv
            acc = 0.0
            for k in range(kk):
                acc = acc + exp(sw[a, k] - mx)
            lpw[a] = mx + log(acc)
    return logp, (dx, dy, omr, q, log_n, s, logp)


def gmm_log_prob_backward(grad_in, pi_in, mux_in, muy_in, sx_in, sy_in, rho_in, cache):
    cdef double[::1] grad = np.ascontiguousarray(grad_in, dtype=np.float64)
    cdef double[:, ::1] sx = sx_in, sy = sy_in, rho = rho_in
    cdef double[:, ::1] dx = cache[0], dy = cache[1], omr = cache[2], q = cache[3]
    cdef double[:, ::1] log_n = cache[4], s = cache[5]
    cdef double[::1] logp = cache[6]
    cdef Py_ssize_t m = sx.shape[0]
    cdef Py_ssize_t kk = sx.shape[1]
    cdef Py_ssize_t a, k
    cdef double r, ax, ay, om, accx, accy
    dpi = np.empty((m, kk))
    dmux = np.empty((m, kk))
    dmuy = np.empty((m, kk))
    dsx = np.empty((m, kk))
    dsy = np.empty((m, kk))
    drho = np.empty((m, kk))
    dpx = np.empty(m)
    dpy = np.empty(m)
    cdef double[:, ::1] w_pi = dpi, w_mx = dmux, w_my = dmuy, w_sx = dsx, w_sy = dsy, w_r = drho
    cdef double[::1] w_px = dpx, w_py = dpy
    with nogil:
        for a in range(m):
            accx = 0.0
            accy = 0.0
            for k in range(kk):
                r = exp(s[a, k] - logp[a]) * grad[a]
                w_pi[a, k] = exp(log_n[a, k] - logp[a]) * grad[a]
                om = omr[a, k]
                ax = (dx[a, k] - rho[a, k] * dy[a, k]) / om
                ay = (dy[a, k] - rho[a, k] * dx[a, k]) / om
                w_mx[a, k] = r * ax / sx[a, k]
                w_my[a, k] = r * ay / sy[a, k]
                w_sx[a, k] = r * (dx[a, k] * ax - 1.0) / sx[a, k]
                w_sy[a, k] = r * (dy[a, k] * ay - 1.0) / sy[a, k]
                w_r[a, k] = r * (rho[a, k] / om + (dx[a, k] * dy[a, k] * om - rho[a, k] * q[a, k]) / (om * om))
                accx = accx + w_mx[a, k]
                accy = accy + w_my[a, k]
            w_px[a] = -accx
            w_py[a] = -accy
    return dpi, dmux, dmuy, dsx, dsy, drho, dpx, dpy


def weighted_dbscan(points_in, weights_in, double eps, double min_weight):
    cdef double[:, ::1] pts = np.ascontiguousarray(points_in, dtype=np.float64)
    cdef double[::1] w = np.ascontiguousarray(weights_in, dtype=np.float64)
    cdef Py_ssize_t n = pts.shape[0]
    cdef Py_ssize_t p, q, r, c, top, n_clusters = 0, best
    cdef double ddx, ddy, tot, d, bestd, cx, cy
    adj_arr = np.zeros((n, n), dtype=np.uint8)
    core_arr = np.zeros(n, dtype=np.uint8)
    labels = np.full(n, -1, dtype=np.int64)
    stack_arr = np.empty(n * n + 1, dtype=np.intp)
    cdef unsigned char[:, ::1] adj = adj_arr
    cdef unsigned char[::1] core = core_arr
    cdef long long[::1] lab = labels
    cdef Py_ssize_t[::1] stack = stack_arr

    for p in range(n):
        tot = 0.0
        for q in range(n):
            ddx = pts[p, 0] - pts[q, 0]
            ddy = pts[p, 1] - pts[q, 1]
            if sqrt(ddx * ddx + ddy * ddy) <= eps:
                adj[p, q] = 1
                tot = tot + w[q]
        core[p] = tot >= min_weight

    for p in range(n):
        if lab[p] != -1 or not core[p]:
            continue
        lab[p] = n_clusters
        top = 0
        stack[top] = p
        top = 1
        while top > 0:
            top -= 1
            q = stack[top]
            if not core[q]:
                continue
            for r in range(n):
                if adj[q, r] and lab[r] == -1:
                    lab[r] = n_clusters
                    stack[top] = r
                    top += 1
        n_clusters += 1

    if n_clusters == 0:
        return np.arange(n, dtype=np.int64)

    cent_arr = np.zeros((n_clusters, 2))
    cnt_arr = np.zeros(n_clusters)
    wsum_arr = np.zeros(n_clusters)
    cdef double[:, ::1] cent = cent_arr
    cdef double[::1] cnt = cnt_arr, wsum = wsum_arr
    cdef bint has_noise = False
    for p in range(n):
        if lab[p] == -1:
            has_noise = True
    if not has_noise:
        return labels
    for c in range(n_clusters):
        tot = 0.0
        cx = 0.0
        cy = 0.0
        for p in range(n):
            if lab[p] == c:
                tot = tot + w[p]
        if tot > 0:
            for p in range(n):
                if lab[p] == c:
                    cx = cx + w[p] * pts[p, 0]
                    cy = cy + w[p] * pts[p, 1]
            cent[c, 0] = cx / tot
            cent[c, 1] = cy / tot
        else:
            d = 0.0
            for p in range(n):
                if lab[p] == c:
                    cx = cx + pts[p, 0]
                    cy = cy + pts[p, 1]
                    d = d + 1.0
            cent[c, 0] = cx / d
            cent[c, 1] = cy / d
    for p in range(n):
        if lab[p] != -1:
            continue
        bestd = 1e308
        for c in range(n_clusters):
            ddx = cent[c, 0] - pts[p, 0]
            ddy = cent[c, 1] - pts[p, 1]
            d = ddx * ddx + ddy * ddy
            if d < bestd:
                bestd = d
        # lowest cluster id within round-off of the minimum (see _pykernels.nearest_index)
        bestd = bestd + 1e-9 * (1.0 + bestd)
        best = 0
        for c in range(n_clusters):
            ddx = cent[c, 0] - pts[p, 0]
            ddy = cent[c, 1] - pts[p, 1]
            if ddx * ddx + ddy * ddy <= bestd:
                best = c
                break
        lab[p] = best
    return labels
