"""Compiled single-chain kernels for the 1-D builtin models.

Model dispatch is by integer code (see model.KERNEL_*) with a packed float
parameter vector, so every kernel compiles once and is cached on disk.
Gridded functions (h, grad f_h, observables) arrive as cubic-Hermite
coefficient tables on a uniform grid; evaluation clamps to the grid and
counts clamped steps.  All per-chain sums use compensated (Kahan)
accumulation in fixed step order, so results are bit-stable.
"""

import numpy as np
from numba import njit

# params layout: ou -> [kappa, s, 0, 0]; tanh1d -> [kappa, c, s0, s1]


@njit(cache=True, nogil=True, inline="always")
def _drift(code, p, x):
    if code == 0:
        return -p[0] * x
    return -p[0] * x + p[1] * np.sin(x)


@njit(cache=True, nogil=True, inline="always")
def _sigma(code, p, x):
    if code == 0:
        return p[1]
    return p[2] + p[3] * np.tanh(x)


@njit(cache=True, nogil=True, inline="always")
def _dsigma(code, p, x):
    if code == 0:
        return 0.0
    t = np.tanh(x)
    return p[3] * (1.0 - t * t)


@njit(cache=True, nogil=True, inline="always")
def _ppoly(coef, x0, dx, ncell, x):
    j = int((x - x0) / dx)
    if j < 0:
        j = 0
    elif j >= ncell:
        j = ncell - 1
    t = x - (x0 + j * dx)
    return ((coef[0, j] * t + coef[1, j]) * t + coef[2, j]) * t + coef[3, j]


@njit(cache=True, nogil=True)
def final_state_1d(code, params, theta0, eta, xi, milstein):
    """Run the chain; returns (final_state, err_step) with err_step=-1 on success."""
    th = theta0
    sqeta = np.sqrt(eta)
    for k in range(xi.shape[0]):
        z = xi[k]
        b = _drift(code, params, th)
        s = _sigma(code, params, th)
        if milstein:
            corr = s * _dsigma(code, params, th) * (z * z - 1.0)
        else:
            corr = 0.0
        th = th + eta * b + sqeta * s * z + 0.5 * eta * corr
        if not np.isfinite(th):
            return th, k
    return th, -1


@njit(cache=True, nogil=True)
def chain_stats_1d(code, params, theta0, eta, xi, milstein, x0, dx, ncell, c_h, c_fp):
    """One streaming pass accumulating all per-chain statistics.

    Returns (sum_h, sum_y, sum_v_incr, sum_v_noise, sum_noise_proj,
    sum_b_sq, clamped, final_state, err_step); sums are over the m steps,
    normalization happens in the caller.  sum_noise_proj accumulates
    <grad f, sigma xi>; the martingale is -eta times it.
    """
    m = xi.shape[0]
    sqeta = np.sqrt(eta)
    th = theta0
    xhi = x0 + ncell * dx
    s_h = 0.0
    e_h = 0.0
    s_y = 0.0
    e_y = 0.0
    s_vi = 0.0
    e_vi = 0.0
    s_vn = 0.0
    e_vn = 0.0
    s_np = 0.0
    e_np = 0.0
    s_b = 0.0
    e_b = 0.0
    clamped = 0
    for k in range(m):
        x = th
        if x < x0:
            x = x0
            clamped += 1
        elif x > xhi:
            x = xhi
            clamped += 1
        hv = _ppoly(c_h, x0, dx, ncell, x)
        fp = _ppoly(c_fp, x0, dx, ncell, x)
        b = _drift(code, params, th)
        s = _sigma(code, params, th)
        z = xi[k]
        if milstein:
            corr = s * _dsigma(code, params, th) * (z * z - 1.0)
        else:
            corr = 0.0
        th_next = th + eta * b + sqeta * s * z + 0.5 * eta * corr
        if not np.isfinite(th_next):
            return s_h, s_y, s_vi, s_vn, s_np, s_b, clamped, th, k

        y = hv - e_h
        t = s_h + y
        e_h = (t - s_h) - y
        s_h = t

        g = s * fp
        y = g * g - e_y
        t = s_y + y
        e_y = (t - s_y) - y
        s_y = t

        inc = (th_next - th - eta * b - 0.5 * eta * corr) * fp
        y = inc * inc - e_vi
        t = s_vi + y
        e_vi = (t - s_vi) - y
        s_vi = t

        w = fp * s * z
        y = w * w - e_vn
        t = s_vn + y
        e_vn = (t - s_vn) - y
        s_vn = t

        y = w - e_np
        t = s_np + y
        e_np = (t - s_np) - y
        s_np = t

        y = b * b - e_b
        t = s_b + y
        e_b = (t - s_b) - y
        s_b = t

        th = th_next
    return s_h, s_y, s_vi, s_vn, s_np, s_b, clamped, th, -1


@njit(cache=True, nogil=True)
def chain_stats_batch(
    code, params, theta0s, eta, xi, milstein, x0, dx, ncell, c_h, c_fp, out
):
    """Row-wise chain_stats_1d over a replica block: xi (B, m), out (B, 9).

    Each output row holds the single-chain tuple with clamped and err_step
    cast to float.  One call covers a whole scheduler chunk, so worker
    threads spend their time outside the interpreter lock.
    """
    for i in range(xi.shape[0]):
        s_h, s_y, s_vi, s_vn, s_np, s_b, clamped, th, err = chain_stats_1d(
            code, params, theta0s[i], eta, xi[i], milstein, x0, dx, ncell, c_h, c_fp
        )
        out[i, 0] = s_h
        out[i, 1] = s_y
        out[i, 2] = s_vi
        out[i, 3] = s_vn
        out[i, 4] = s_np
        out[i, 5] = s_b
        out[i, 6] = clamped
        out[i, 7] = th
        out[i, 8] = err


@njit(cache=True, nogil=True)
def observable_chain_1d(
    code, params, theta0, eta, xi, milstein, x0, dx, ncell, c_g, burn, batch_sums, batch_counts
):
    """Long-chain time average of a gridded observable with batch means.

    Post-burn-in samples are distributed over len(batch_sums) contiguous
    batches.  Returns (final_state, err_step).
    """
    m = xi.shape[0]
    n_batches = batch_sums.shape[0]
    n_obs = m - burn
    sqeta = np.sqrt(eta)
    th = theta0
    xhi = x0 + ncell * dx
    for k in range(m):
        z = xi[k]
        b = _drift(code, params, th)
        s = _sigma(code, params, th)
        if milstein:
            corr = s * _dsigma(code, params, th) * (z * z - 1.0)
        else:
            corr = 0.0
        th_next = th + eta * b + sqeta * s * z + 0.5 * eta * corr
        if not np.isfinite(th_next):
            return th, k
        if k >= burn:
            x = th
            if x < x0:
                x = x0
            elif x > xhi:
                x = xhi
            gv = _ppoly(c_g, x0, dx, ncell, x)
            j = (k - burn) * n_batches // n_obs
            if j >= n_batches:
                j = n_batches - 1
            batch_sums[j] += gv
            batch_counts[j] += 1
        th = th_next
    return th, -1
