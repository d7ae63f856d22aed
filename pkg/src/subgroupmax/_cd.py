"""Compiled coordinate-descent kernels on Gram (covariance) form.

Each kernel minimizes

    0.5 * theta' G theta - c' theta + lam * sum_j w_j |theta_j|

over the coordinates with ``free[j]``; the rest stay at their input value.
``G`` is the centered Gram matrix divided by n and ``c`` the centered
cross-product with the response divided by n, so this equals the usual
``(1/2n)||y - X theta||^2 + lam ||w * theta||_1`` up to a constant.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _sweep(G, r, lam, w, free, theta, active, active_only):
    p = G.shape[0]
    dmax = 0.0
    for j in range(p):
        if not free[j]:
            continue
        if active_only and not active[j]:
            continue
        gjj = G[j, j]
        old = theta[j]
        if gjj <= 0.0:
            new = 0.0
        else:
            z = r[j] + gjj * old
            t = lam * w[j]
            if z > t:
                new = (z - t) / gjj
            elif z < -t:
                new = (z + t) / gjj
            else:
                new = 0.0
        d = new - old
        if d != 0.0:
            for k in range(p):
                r[k] -= d * G[j, k]
            theta[j] = new
            ch = abs(d) * np.sqrt(gjj) if gjj > 0.0 else abs(d)
            if ch > dmax:
                dmax = ch
            if new != 0.0:
                active[j] = True
    return dmax


@njit(cache=True, nogil=True)
def cd_solve(G, c, lam, w, free, theta, tol, max_sweeps):
    """In-place solve starting from ``theta``; returns (sweeps, converged, final change)."""
    p = G.shape[0]
    r = c.copy()
    active = np.zeros(p, dtype=np.bool_)
    for k in range(p):
        if theta[k] != 0.0:
            active[k] = True
            for j in range(p):
                r[j] -= G[k, j] * theta[k]
    sweeps = 0
    dmax = np.inf
    while sweeps < max_sweeps:
        dmax = _sweep(G, r, lam, w, free, theta, active, False)
        sweeps += 1
        if dmax <= tol:
            return sweeps, True, dmax
        while sweeps < max_sweeps:
            dmax = _sweep(G, r, lam, w, free, theta, active, True)
            sweeps += 1
            if dmax <= tol:
                break
    return sweeps, False, dmax


@njit(cache=True, nogil=True)
def cd_path(G, c, yy, lambdas, w, free, theta0, tol, max_sweeps):
    """Warm-started path over descending ``lambdas``.

    Stops early (glmnet-style) once the explained fraction of ``yy`` exceeds
    0.999 or stalls; remaining rows repeat the last solution.
    Returns (coefs, n_computed, all_converged).
    """
    L = lambdas.shape[0]
    p = G.shape[0]
    out = np.zeros((L, p))
    theta = theta0.copy()
    ok = True
    prev_dev = 0.0
    computed = 0
    for l in range(L):
        sweeps, conv, _ = cd_solve(G, c, lambdas[l], w, free, theta, tol, max_sweeps)
        ok = ok and conv
        out[l, :] = theta
        computed = l + 1
        if yy > 0.0:
            ctheta = 0.0
            quad = 0.0
            for j in range(p):
                if theta[j] != 0.0:
                    ctheta += c[j] * theta[j]
                    s = 0.0
                    for k in range(p):
                        if theta[k] != 0.0:
                            s += G[j, k] * theta[k]
                    quad += theta[j] * s
            rss = yy - 2.0 * ctheta + quad
            dev = 1.0 - rss / yy
            if dev >= 0.999 or (l >= 5 and dev - prev_dev < 1e-5 * dev):
                for m in range(l + 1, L):
                    out[m, :] = theta
                break
            prev_dev = dev
    return out, computed, ok


@njit(cache=True, nogil=True)
def cd_batch(G, C, lam, w, free, theta0, tol, max_sweeps):
    """Solve one problem per column of ``C`` (p x B), each warm-started at ``theta0``."""
    p, B = C.shape
    out = np.empty((B, p))
    conv = np.empty(B, dtype=np.bool_)
    for b in range(B):
        theta = theta0.copy()
        _, ok, _ = cd_solve(G, np.ascontiguousarray(C[:, b]), lam, w, free, theta, tol, max_sweeps)
        out[b, :] = theta
        conv[b] = ok
    return out, conv


@njit(cache=True, nogil=True)
def cd_naive(X, y, lam, w, theta, colsq, tol, max_sweeps):
    """Residual-update solver for ``(1/2n)||y - X theta||^2 + lam ||w theta||_1``.

    ``X`` and ``y`` are assumed centered; ``colsq`` holds ``||x_j||^2 / n``.
    Cheaper than the Gram form when the problem is solved only once.
    Updates ``theta`` in place; returns (sweeps, converged).
    """
    n, p = X.shape
    r = y - X @ theta
    active = theta != 0.0
    sweeps = 0
    full = True
    while sweeps < max_sweeps:
        dmax = 0.0
        for j in range(p):
            if not full and not active[j]:
                continue
            gjj = colsq[j]
            if gjj <= 0.0:
                continue
            old = theta[j]
            z = 0.0
            for i in range(n):
                z += X[i, j] * r[i]
            z = z / n + gjj * old
            t = lam * w[j]
            if z > t:
                new = (z - t) / gjj
            elif z < -t:
                new = (z + t) / gjj
            else:
                new = 0.0
            d = new - old
            if d != 0.0:
                for i in range(n):
                    r[i] -= d * X[i, j]
                theta[j] = new
                if new != 0.0:
                    active[j] = True
                ch = abs(d) * np.sqrt(gjj)
                if ch > dmax:
                    dmax = ch
        sweeps += 1
        if dmax <= tol:
            if full:
                return sweeps, True
            full = True
        else:
            full = False
    return sweeps, False
