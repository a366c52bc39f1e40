"""Numba kernels for Breslow partial-likelihood scoring on LTRC rows.

Risk sets are indexed once per row set: with distinct event times
t_1 < ... < t_m, row i (interval (L_i, R_i]) is at risk for t_k exactly
when lo_i <= k < hi_i, where lo/hi come from searchsorted.  Per-event
denominators are then cumulative sums of difference arrays, giving
O(n * p^2 + m * p^2) per evaluation.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def score(lo, hi, d, sx_total, ev_off_sum, X, off, beta, m):
    """Log partial likelihood, score vector and observed information."""
    n, p = X.shape
    eta = np.empty(n)
    c = -1e308
    for i in range(n):
        s = off[i]
        for j in range(p):
            s += X[i, j] * beta[j]
        eta[i] = s
        if s > c:
            c = s
    nq = 1 + p + p * (p + 1) // 2
    D = np.zeros((m + 1, nq))
    for i in range(n):
        a = lo[i]
        b = hi[i]
        if a >= b:
            continue
        w = np.exp(eta[i] - c)
        D[a, 0] += w
        D[b, 0] -= w
        q = 1
        for j in range(p):
            wj = w * X[i, j]
            D[a, q] += wj
            D[b, q] -= wj
            q += 1
        for j in range(p):
            xj = X[i, j]
            for k in range(j, p):
                D[a, q] += w * xj * X[i, k]
                D[b, q] -= w * xj * X[i, k]
                q += 1

    loglik = ev_off_sum
    for j in range(p):
        loglik += sx_total[j] * beta[j]
    grad = sx_total.copy()
    info = np.zeros((p, p))
    acc = np.zeros(nq)
    mu = np.empty(p)
    for t in range(m):
        for q in range(nq):
            acc[q] += D[t, q]
        dl = d[t]
        if dl == 0.0:
            continue
        Sw = acc[0]
        loglik -= dl * (np.log(Sw) + c)
        for j in range(p):
            mu[j] = acc[1 + j] / Sw
            grad[j] -= dl * mu[j]
        q = 1 + p
        for j in range(p):
            for k in range(j, p):
                v = dl * (acc[q] / Sw - mu[j] * mu[k])
                info[j, k] += v
                if k > j:
                    info[k, j] += v
                q += 1
    return loglik, grad, info


@njit(cache=True)
def newton(lo, hi, d, sx_total, ev_off_sum, X, off, b0, m,
           max_iter, max_halvings, tol_loglik, tol_grad):
    """Maximize the partial likelihood by damped Newton iteration.

    Returns (beta, loglik, grad, info, converged, n_iter).  Starts from
    b0, falling back to zero if the likelihood there is not finite.
    """
    n, p = X.shape
    b = b0.copy()
    ll, g, I = score(lo, hi, d, sx_total, ev_off_sum, X, off, b, m)
    if not np.isfinite(ll):
        b = np.zeros(p)
        ll, g, I = score(lo, hi, d, sx_total, ev_off_sum, X, off, b, m)
    converged = False
    n_iter = 0
    gmax = 0.0
    for j in range(p):
        if abs(g[j]) > gmax:
            gmax = abs(g[j])
    if gmax < tol_grad:
        converged = True
    step = np.empty(p)
    for it in range(max_iter):
        if converged:
            break
        n_iter = it + 1
        sol = np.linalg.lstsq(I, g, rcond=-1.0)
        for j in range(p):
            step[j] = sol[0][j]
        # float noise floor: near the optimum the true gain of a Newton
        # step can be far below the rounding error of the loglik sum
        band = 1e-10 * (abs(ll) + 1.0)
        accepted = False
        bn = b
        lln = ll
        gn = g
        In = I
        for h in range(max_halvings + 1):
            bn = b + step
            lln, gn, In = score(lo, hi, d, sx_total, ev_off_sum, X, off, bn, m)
            if np.isfinite(lln) and lln >= ll - band:
                accepted = True
                break
            for j in range(p):
                step[j] *= 0.5
        if not accepted:
            converged = gmax < tol_grad
            break
        rel = abs(lln - ll) / (abs(ll) + 1e-10)
        b, ll, g, I = bn, lln, gn, In
        gmax = 0.0
        for j in range(p):
            if abs(g[j]) > gmax:
                gmax = abs(g[j])
        if rel < tol_loglik and gmax < tol_grad:
            converged = True
    if converged:
        for j in range(p):
            if abs(b[j]) > 20.0:
                converged = False
    return b, ll, g, I, converged, n_iter
