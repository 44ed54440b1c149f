"""Pure numpy implementations of the hot kernels.

These define the reference semantics; the Cython module must agree with them
to floating-point round-off.
"""
import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_pointwise_forward(pre, c_prev):
    """Gate nonlinearities of one LSTM step.

    ``pre`` is (A, 4H) with gate blocks ordered input, forget, cell, output.
    Returns ``(h, c, cache)``.
    """
    hsz = c_prev.shape[1]
    i = _sigmoid(pre[:, :hsz])
    f = _sigmoid(pre[:, hsz:2 * hsz])
    g = np.tanh(pre[:, 2 * hsz:3 * hsz])
    o = _sigmoid(pre[:, 3 * hsz:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (i, f, g, o, tc, c_prev)


def lstm_pointwise_backward(dh, dc, cache):
    """Returns ``(dpre, dc_prev)`` given upstream grads on h and c."""
    i, f, g, o, tc, c_prev = cache
    dc_total = dc + dh * o * (1.0 - tc * tc)
    do = dh * tc
    di = dc_total * g
    dg = dc_total * i
    df = dc_total * c_prev
    dpre = np.concatenate(
        [di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g * g), do * o * (1.0 - o)],
        axis=1,
    )
    return dpre, dc_total * f


def gmm_log_prob_forward(pi, mux, muy, sx, sy, rho, px, py):
    """Log density of bivariate Gaussian mixtures at one point each.

    Mixture arrays are (M, K); points are (M,). Returns ``(logp, cache)``.
    """
    dx = (px[:, None] - mux) / sx
    dy = (py[:, None] - muy) / sy
    omr = 1.0 - rho * rho
    q = dx * dx + dy * dy - 2.0 * rho * dx * dy
    log_n = -LOG_2PI - np.log(sx) - np.log(sy) - 0.5 * np.log(omr) - 0.5 * q / omr
    with np.errstate(divide="ignore"):
        log_pi = np.log(pi)
    s = log_pi + log_n
    mx = np.max(s, axis=1)
    logp = mx + np.log(np.sum(np.exp(s - mx[:, None]), axis=1))
    return logp, (dx, dy, omr, q, log_n, s, logp)


def gmm_log_prob_backward(grad, pi, mux, muy, sx, sy, rho, cache):
    """Gradients of ``sum(grad * logp)`` w.r.t. pi, mux, muy, sx, sy, rho, px, py."""
    dx, dy, omr, q, log_n, s, logp = cache
    g = grad[:, None]
    resp = np.exp(s - logp[:, None]) * g
    dpi = np.exp(log_n - logp[:, None]) * g
    ax = (dx - rho * dy) / omr
    ay = (dy - rho * dx) / omr
    dmux = resp * ax / sx
    dmuy = resp * ay / sy
    dsx = resp * (dx * ax - 1.0) / sx
    dsy = resp * (dy * ay - 1.0) / sy
    drho = resp * (rho / omr + (dx * dy * omr - rho * q) / (omr * omr))
    dpx = -np.sum(dmux, axis=1)
    dpy = -np.sum(dmuy, axis=1)
    return dpi, dmux, dmuy, dsx, dsy, drho, dpx, dpy


TIE_TOL = 1e-9


def nearest_index(sq_dist):
    """Lowest index whose squared distance is within round-off of the minimum.

    Centroids are weighted means, so exact geometric ties can come out a few
    ulps apart depending on where the scene sits; a plain argmin would then
    break the tie differently after a translation.
    """
    d = np.asarray(sq_dist, dtype=np.float64)
    lo = d.min()
    return int(np.flatnonzero(d <= lo + TIE_TOL * (1.0 + lo))[0])


def weighted_dbscan(points, weights, eps, min_weight):
    """DBSCAN whose core test sums neighbour weights instead of counting them.

    Points are visited in index order, so cluster ids follow the lowest-index
    core point of each cluster. Noise points are merged into the cluster with
    the nearest weighted centroid, with near-ties (within round-off) going
    to the lowest cluster id; if no core point exists at all, every point
    becomes its own cluster.
    """
    pts = np.asarray(points, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    n = pts.shape[0]
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    adj = dist <= eps
    core = np.array([w[adj[p]].sum() >= min_weight for p in range(n)], dtype=bool)

    labels = np.full(n, -1, dtype=np.int64)
    n_clusters = 0
    for p in range(n):
        if labels[p] != -1 or not core[p]:
            continue
        labels[p] = n_clusters
        stack = [p]
        while stack:
            q = stack.pop()
            if not core[q]:
                continue
            for r in range(n):
                if adj[q, r] and labels[r] == -1:
                    labels[r] = n_clusters
                    stack.append(r)
        n_clusters += 1

    if n_clusters == 0:
        return np.arange(n, dtype=np.int64)

    noise = np.flatnonzero(labels == -1)
    if noise.size:
        cent = np.empty((n_clusters, 2))
        for c in range(n_clusters):
            m = labels == c
            wm = w[m]
            tot = wm.sum()
            if tot > 0:
                cent[c] = (wm[:, None] * pts[m]).sum(axis=0) / tot
            else:
                cent[c] = pts[m].mean(axis=0)
        for p in noise:
            d = np.sum((cent - pts[p]) ** 2, axis=1)
            labels[p] = nearest_index(d)
    return labels
