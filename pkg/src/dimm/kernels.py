"""Hot loops: whole-trajectory Kalman and IMM passes, Lorenz RK4.

Everything here sticks to the subset of numpy that numba compiles, and uses
explicit small-matrix helpers instead of ``np.linalg`` so both backends run
the same arithmetic.  Status codes are returned instead of raising, since
exceptions crossing the jit boundary lose their context.
"""

import math

import numpy as np

from ._jit import njit

LOG_2PI = math.log(2.0 * math.pi)
OK = -1


@njit
def chol_inplace(A):
    """Lower Cholesky factor of a small SPD matrix; returns (L, ok)."""
    m = A.shape[0]
    L = np.zeros((m, m))
    for j in range(m):
        s = A[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not (s > 1e-300) or not np.isfinite(s):
            return L, False
        d = math.sqrt(s)
        L[j, j] = d
        for i in range(j + 1, m):
            t = A[i, j]
            for k in range(j):
                t -= L[i, k] * L[j, k]
            L[i, j] = t / d
    return L, True


@njit
def chol_solve(L, B):
    """Solve (L L^T) X = B for X; B is (m, r)."""
    m = L.shape[0]
    r = B.shape[1]
    X = B.copy()
    for c in range(r):
        for i in range(m):
            t = X[i, c]
            for k in range(i):
                t -= L[i, k] * X[k, c]
            X[i, c] = t / L[i, i]
        for i in range(m - 1, -1, -1):
            t = X[i, c]
            for k in range(i + 1, m):
                t -= L[k, i] * X[k, c]
            X[i, c] = t / L[i, i]
    return X


@njit
def kf_predict_core(x, P, F, Q):
    xp = F @ x
    Pp = F @ P @ F.T + Q
    return xp, 0.5 * (Pp + Pp.T)


@njit
def kf_update_core(x, P, H, R, z, cond_max):
    """Joseph-form update.

    Returns (x, P, innovation, S, log_likelihood, ok).  ``ok`` is False when
    S is not numerically positive definite or its condition estimate from the
    Cholesky diagonal exceeds ``cond_max``.
    """
    n = x.shape[0]
    m = z.shape[0]
    y = z - H @ x
    PHt = P @ H.T
    S = H @ PHt + R
    S = 0.5 * (S + S.T)
    L, ok = chol_inplace(S)
    if not ok:
        return x, P, y, S, -np.inf, False
    dmin = L[0, 0]
    dmax = L[0, 0]
    for i in range(m):
        dmin = min(dmin, L[i, i])
        dmax = max(dmax, L[i, i])
    if (dmax / dmin) ** 2 > cond_max:
        return x, P, y, S, -np.inf, False
    # K = P H^T S^-1  ->  K^T = S^-1 H P
    Kt = chol_solve(L, PHt.T)
    K = Kt.T
    xn = x + K @ y
    IKH = np.eye(n) - K @ H
    Pn = IKH @ P @ IKH.T + K @ R @ K.T
    Pn = 0.5 * (Pn + Pn.T)
    w = chol_solve(L, y.reshape(m, 1))
    maha = 0.0
    logdet = 0.0
    for i in range(m):
        maha += y[i] * w[i, 0]
        logdet += 2.0 * math.log(L[i, i])
    ll = -0.5 * (maha + logdet + m * LOG_2PI)
    return xn, Pn, y, S, ll, True


@njit
def kf_run(F, Q, H, R, x0, P0, zs, cond_max):
    """Filter a whole measurement sequence starting from the posterior
    (x0, P0) at index 0; measurement 0 is assumed already absorbed.

    Returns (means, innovations, loglik, fail_step) where fail_step is -1 on
    success or the index of the first failing update.
    """
    T = zs.shape[0]
    n = x0.shape[0]
    means = np.zeros((T, n))
    innov = np.zeros((T, zs.shape[1]))
    ll = np.zeros(T)
    x = x0.copy()
    P = P0.copy()
    means[0] = x
    for k in range(1, T):
        x, P = kf_predict_core(x, P, F, Q)
        x, P, y, S, lk, ok = kf_update_core(x, P, H, R, zs[k], cond_max)
        if not ok:
            return means, innov, ll, k
        means[k] = x
        innov[k] = y
        ll[k] = lk
    return means, innov, ll, OK


@njit
def imm_run(Fp, Qp, Hp, R, dims, idx, x0p, P0p, mu0, Pi, zs, pad_var, cond_max):
    """Standard IMM over a whole sequence.

    Model ``i`` lives in the leading ``dims[i]`` rows of the padded arrays
    ``Fp[i]``, ``Qp[i]``, ``Hp[i]``; ``idx[i, :dims[i]]`` maps those rows into the
    common (largest) state layout used for mixing.  Entries a model does not
    carry are mixed as zero mean with variance ``pad_var``.

    Returns (combined_positions, model_positions, mus, n_column_fallbacks,
    n_underflows, fail_step).
    """
    T = zs.shape[0]
    M = dims.shape[0]
    N = x0p.shape[1]
    xs = x0p.copy()      # per-model state in its own layout (leading dims[i])
    Ps = P0p.copy()
    mu = mu0.copy()
    comb = np.zeros((T, 3))
    pos = np.zeros((T, M, 3))
    mus = np.zeros((T, M))
    n_fallback = 0
    n_underflow = 0
    for i in range(M):
        d = dims[i]
        pos[0, i] = Hp[i, :, :d] @ xs[i, :d]
        for a in range(3):
            comb[0, a] += mu[i] * pos[0, i, a]
    mus[0] = mu
    like = np.zeros(M)
    for k in range(1, T):
        # interaction
        cbar = np.zeros(M)
        for j in range(M):
            for i in range(M):
                cbar[j] += Pi[i, j] * mu[i]
        omega = np.zeros((M, M))
        for j in range(M):
            if cbar[j] > 0.0:
                for i in range(M):
                    omega[i, j] = Pi[i, j] * mu[i] / cbar[j]
            else:
                n_fallback += 1
                for i in range(M):
                    omega[i, j] = 1.0 / M
        # padded copies of each posterior
        xfull = np.zeros((M, N))
        Pfull = np.zeros((M, N, N))
        for i in range(M):
            for r in range(N):
                Pfull[i, r, r] = pad_var
            d = dims[i]
            for r in range(d):
                xfull[i, idx[i, r]] = xs[i, r]
                for c in range(d):
                    Pfull[i, idx[i, r], idx[i, c]] = Ps[i, r, c]
        new_xs = np.zeros_like(xs)
        new_Ps = np.zeros_like(Ps)
        for j in range(M):
            xm = np.zeros(N)
            for i in range(M):
                xm += omega[i, j] * xfull[i]
            Pm = np.zeros((N, N))
            for i in range(M):
                dx = xfull[i] - xm
                Pm += omega[i, j] * (Pfull[i] + np.outer(dx, dx))
            d = dims[j]
            for r in range(d):
                new_xs[j, r] = xm[idx[j, r]]
                for c in range(d):
                    new_Ps[j, r, c] = Pm[idx[j, r], idx[j, c]]
        # filtering
        for j in range(M):
            d = dims[j]
            x, P = kf_predict_core(new_xs[j, :d].copy(), new_Ps[j, :d, :d].copy(),
                                   Fp[j, :d, :d], Qp[j, :d, :d])
            x, P, y, S, lk, ok = kf_update_core(x, P, Hp[j, :, :d], R, zs[k], cond_max)
            if not ok:
                return comb, pos, mus, n_fallback, n_underflow, k
            xs[j, :d] = x
            Ps[j, :d, :d] = P
            like[j] = math.exp(lk)
            pos[k, j] = Hp[j, :, :d] @ x
        # weight generation
        tot = 0.0
        for j in range(M):
            tot += cbar[j] * like[j]
        if tot > 0.0 and np.isfinite(tot):
            for j in range(M):
                mu[j] = cbar[j] * like[j] / tot
            s = 0.0
            for j in range(M):
                s += mu[j]
            for j in range(M):
                mu[j] /= s
        else:
            n_underflow += 1
        mus[k] = mu
        # combination
        for j in range(M):
            for a in range(3):
                comb[k, a] += mu[j] * pos[k, j, a]
    return comb, pos, mus, n_fallback, n_underflow, OK


@njit
def lorenz_deriv(s, sigma, rho, beta):
    out = np.empty(3)
    out[0] = sigma * (s[1] - s[0])
    out[1] = s[0] * (rho - s[2]) - s[1]
    out[2] = s[0] * s[1] - beta * s[2]
    return out


@njit
def lorenz_rk4(x0, dt, steps, sigma, rho, beta, bound):
    """Classic RK4; returns (states (steps, 3), fail_step)."""
    out = np.zeros((steps, 3))
    s = x0.copy()
    out[0] = s
    for k in range(1, steps):
        k1 = lorenz_deriv(s, sigma, rho, beta)
        k2 = lorenz_deriv(s + 0.5 * dt * k1, sigma, rho, beta)
        k3 = lorenz_deriv(s + 0.5 * dt * k2, sigma, rho, beta)
        k4 = lorenz_deriv(s + dt * k3, sigma, rho, beta)
        s = s + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[k] = s
        for a in range(3):
            if not (abs(s[a]) <= bound):
                return out, k
    return out, OK
