"""Hot numeric kernels, each with a numba and a pure-numpy implementation.

The public names (``tridiagonalize``, ``ql_implicit``, ``mlp_conv_forward``,
``mlp_conv_backward``) are bound to one backend at import time, see
:mod:`specformer._accel`. Both backends are always importable under the
``*_numba`` / ``*_numpy`` names so the benchmark and the tests can compare them.
"""

import math

import numpy as np

from ._accel import USE_NUMBA, njit

_EPS = np.finfo(np.float64).eps


# ---------------------------------------------------------------------------
# Householder reduction of a symmetric matrix to tridiagonal form
# ---------------------------------------------------------------------------


def _tridiagonalize_loops(a):
    # Householder reduction on the full symmetric matrix, row-contiguous
    # access only. Returns the diagonal d, the sub-diagonal e (e[i] couples
    # rows i-1 and i, e[0] = 0) and Q with A = Q T Q^T.
    n = a.shape[0]
    a = a.copy()
    vs = np.zeros((n, n))
    betas = np.zeros(n)
    p = np.empty(n)
    w = np.empty(n)
    for k in range(n - 2):
        s0 = k + 1
        tail = 0.0
        for i in range(s0 + 1, n):
            tail += a[i, k] * a[i, k]
        if tail == 0.0:
            continue
        x0 = a[s0, k]
        alpha = math.sqrt(x0 * x0 + tail)
        if x0 > 0.0:
            alpha = -alpha
        vv = 0.0
        for i in range(s0, n):
            vs[k, i] = a[i, k]
        vs[k, s0] -= alpha
        for i in range(s0, n):
            vv += vs[k, i] * vs[k, i]
        beta = 2.0 / vv
        betas[k] = beta
        pv = 0.0
        for i in range(s0, n):
            acc = 0.0
            for j in range(s0, n):
                acc += a[i, j] * vs[k, j]
            p[i] = beta * acc
            pv += p[i] * vs[k, i]
        half = 0.5 * beta * pv
        for i in range(s0, n):
            w[i] = p[i] - half * vs[k, i]
        for i in range(s0, n):
            vi = vs[k, i]
            wi = w[i]
            for j in range(s0, n):
                a[i, j] -= vi * w[j] + wi * vs[k, j]
        for i in range(s0, n):
            a[i, k] = 0.0
            a[k, i] = 0.0
        a[s0, k] = alpha
        a[k, s0] = alpha
    d = np.zeros(n)
    e = np.zeros(n)
    for i in range(n):
        d[i] = a[i, i]
    for i in range(1, n):
        e[i] = a[i, i - 1]
    # Q = H_0 H_1 ... H_{n-3}, accumulated right to left on the trailing block
    q = np.eye(n)
    for k in range(n - 3, -1, -1):
        beta = betas[k]
        if beta == 0.0:
            continue
        s0 = k + 1
        for j in range(s0, n):
            p[j] = 0.0
        for i in range(s0, n):
            vi = vs[k, i]
            for j in range(s0, n):
                p[j] += vi * q[i, j]
        for i in range(s0, n):
            f = beta * vs[k, i]
            for j in range(s0, n):
                q[i, j] -= f * p[j]
    return d, e, q


def tridiagonalize_numpy(a):
    a = np.array(a, dtype=np.float64, copy=True)
    n = a.shape[0]
    q = np.eye(n)
    for k in range(n - 2):
        x = a[k + 1 :, k].copy()
        tail = float(x[1:] @ x[1:])
        if tail == 0.0:
            continue
        alpha = math.sqrt(float(x[0] * x[0]) + tail)
        if x[0] > 0.0:
            alpha = -alpha
        v = x
        v[0] -= alpha
        beta = 2.0 / float(v @ v)
        block = a[k + 1 :, k + 1 :]
        p = beta * (block @ v)
        w = p - (0.5 * beta * float(p @ v)) * v
        block -= np.outer(v, w) + np.outer(w, v)
        a[k + 1 :, k] = 0.0
        a[k, k + 1 :] = 0.0
        a[k + 1, k] = alpha
        a[k, k + 1] = alpha
        cols = q[:, k + 1 :]
        cols -= beta * np.outer(cols @ v, v)
    d = np.diag(a).copy()
    e = np.zeros(n)
    e[1:] = np.diag(a, -1)
    return d, e, q


# ---------------------------------------------------------------------------
# Implicit-shift QL on a symmetric tridiagonal matrix
# ---------------------------------------------------------------------------


def _ql_implicit_loops(d, e_in, zt, max_iter):
    # Eigenvectors are carried as the *rows* of ``zt`` so each plane rotation
    # touches two contiguous rows. Returns -1 on success, else the index whose
    # off-diagonal element failed to vanish within ``max_iter`` total sweeps.
    n = d.shape[0]
    e = np.zeros(n)
    for i in range(1, n):
        e[i - 1] = e_in[i]
    e[n - 1] = 0.0
    total = 0
    for l in range(n):
        while True:
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(e[m]) <= _EPS * dd:
                    break
                m += 1
            if m == l:
                break
            total += 1
            if total > max_iter:
                return l
            # Wilkinson shift from the trailing 2x2 of the active block
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = math.hypot(g, 1.0)
            g = d[m] - d[l] + e[l] / (g + (r if g >= 0.0 else -r))
            s = 1.0
            c = 1.0
            p = 0.0
            underflow = False
            i = m - 1
            while i >= l:
                f = s * e[i]
                b = c * e[i]
                r = math.hypot(f, g)
                e[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    e[m] = 0.0
                    underflow = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                for k in range(n):
                    f = zt[i + 1, k]
                    zt[i + 1, k] = s * zt[i, k] + c * f
                    zt[i, k] = c * zt[i, k] - s * f
                i -= 1
            if underflow:
                continue
            d[l] -= p
            e[l] = g
            e[m] = 0.0
    return -1


def ql_implicit_numpy(d, e_in, zt, max_iter):
    n = d.shape[0]
    dl = [float(v) for v in d]
    e = [float(v) for v in e_in[1:]] + [0.0]
    total = 0
    for l in range(n):
        while True:
            m = l
            while m < n - 1:
                if abs(e[m]) <= _EPS * (abs(dl[m]) + abs(dl[m + 1])):
                    break
                m += 1
            if m == l:
                break
            total += 1
            if total > max_iter:
                d[:] = dl
                return l
            g = (dl[l + 1] - dl[l]) / (2.0 * e[l])
            r = math.hypot(g, 1.0)
            g = dl[m] - dl[l] + e[l] / (g + (r if g >= 0.0 else -r))
            s = c = 1.0
            p = 0.0
            underflow = False
            for i in range(m - 1, l - 1, -1):
                f = s * e[i]
                b = c * e[i]
                r = math.hypot(f, g)
                e[i + 1] = r
                if r == 0.0:
                    dl[i + 1] -= p
                    e[m] = 0.0
                    underflow = True
                    break
                s = f / r
                c = g / r
                g = dl[i + 1] - p
                r = (dl[i] - g) * s + 2.0 * c * b
                p = s * r
                dl[i + 1] = g + p
                g = c * r - b
                upper = zt[i].copy()
                lower = zt[i + 1]
                zt[i] = c * upper - s * lower
                zt[i + 1] = s * upper + c * lower
            if underflow:
                continue
            dl[l] -= p
            e[l] = g
            e[m] = 0.0
    d[:] = dl
    return -1


# ---------------------------------------------------------------------------
# Convolution through an explicitly materialized, MLP-combined basis
#
#   S_hat[p, r, :] = relu(c[p, r] @ W1 + b1) @ W2 + b2,
#   c[p, r] = (delta_pr, S_1[p, r], ..., S_M[p, r])
#   out[p, i] = sum_r S_hat[p, r, i] * X[r, i]
#
# streamed one output row p at a time so the n x n x d tensor never exists.
# ---------------------------------------------------------------------------


def _mlp_conv_forward_loops(s, w1, b1, w2, b2, x):
    nb, n, _ = s.shape
    hidden = w1.shape[1]
    dim = w2.shape[1]
    out = np.zeros((n, dim))
    act = np.empty(hidden)
    for p in range(n):
        for r in range(n):
            for h in range(hidden):
                v = b1[h]
                if p == r:
                    v += w1[0, h]
                for m in range(nb):
                    v += s[m, p, r] * w1[m + 1, h]
                act[h] = v if v > 0.0 else 0.0
            for i in range(dim):
                v = b2[i]
                for h in range(hidden):
                    v += act[h] * w2[h, i]
                out[p, i] += v * x[r, i]
    return out


def _mlp_conv_backward_loops(grad, s, w1, b1, w2, b2, x):
    nb, n, _ = s.shape
    hidden = w1.shape[1]
    dim = w2.shape[1]
    gs = np.zeros_like(s)
    gw1 = np.zeros_like(w1)
    gb1 = np.zeros_like(b1)
    gw2 = np.zeros_like(w2)
    gb2 = np.zeros_like(b2)
    gx = np.zeros_like(x)
    pre = np.empty(hidden)
    act = np.empty(hidden)
    gsh = np.empty(dim)
    gh = np.empty(hidden)
    for p in range(n):
        for r in range(n):
            for h in range(hidden):
                v = b1[h]
                if p == r:
                    v += w1[0, h]
                for m in range(nb):
                    v += s[m, p, r] * w1[m + 1, h]
                pre[h] = v
                act[h] = v if v > 0.0 else 0.0
            for i in range(dim):
                v = b2[i]
                for h in range(hidden):
                    v += act[h] * w2[h, i]
                gx[r, i] += grad[p, i] * v
                gsh[i] = grad[p, i] * x[r, i]
                gb2[i] += gsh[i]
            for h in range(hidden):
                acc = 0.0
                for i in range(dim):
                    gw2[h, i] += act[h] * gsh[i]
                    acc += w2[h, i] * gsh[i]
                gh[h] = acc if pre[h] > 0.0 else 0.0
                gb1[h] += gh[h]
                if p == r:
                    gw1[0, h] += gh[h]
                for m in range(nb):
                    gw1[m + 1, h] += s[m, p, r] * gh[h]
            for m in range(nb):
                acc = 0.0
                for h in range(hidden):
                    acc += w1[m + 1, h] * gh[h]
                gs[m, p, r] = acc
    return gs, gw1, gb1, gw2, gb2, gx


def _channel_rows(s, p):
    n = s.shape[1]
    c = np.empty((n, s.shape[0] + 1))
    c[:, 0] = 0.0
    c[p, 0] = 1.0
    c[:, 1:] = s[:, p, :].T
    return c


def mlp_conv_forward_numpy(s, w1, b1, w2, b2, x):
    n = s.shape[1]
    out = np.empty((n, w2.shape[1]))
    for p in range(n):
        act = np.maximum(_channel_rows(s, p) @ w1 + b1, 0.0)
        out[p] = ((act @ w2 + b2) * x).sum(axis=0)
    return out


def mlp_conv_backward_numpy(grad, s, w1, b1, w2, b2, x):
    n = s.shape[1]
    gs = np.zeros_like(s)
    gw1 = np.zeros_like(w1)
    gb1 = np.zeros_like(b1)
    gw2 = np.zeros_like(w2)
    gb2 = np.zeros_like(b2)
    gx = np.zeros_like(x)
    for p in range(n):
        c = _channel_rows(s, p)
        pre = c @ w1 + b1
        act = np.maximum(pre, 0.0)
        shat = act @ w2 + b2
        gx += shat * grad[p]
        gsh = grad[p] * x
        gw2 += act.T @ gsh
        gb2 += gsh.sum(axis=0)
        gh = (gsh @ w2.T) * (pre > 0.0)
        gw1 += c.T @ gh
        gb1 += gh.sum(axis=0)
        gs[:, p, :] = (gh @ w1[1:].T).T
    return gs, gw1, gb1, gw2, gb2, gx


tridiagonalize_numba = njit(_tridiagonalize_loops)
ql_implicit_numba = njit(_ql_implicit_loops)
mlp_conv_forward_numba = njit(_mlp_conv_forward_loops)
mlp_conv_backward_numba = njit(_mlp_conv_backward_loops)

if USE_NUMBA:
    tridiagonalize = tridiagonalize_numba
    ql_implicit = ql_implicit_numba
    mlp_conv_forward = mlp_conv_forward_numba
    mlp_conv_backward = mlp_conv_backward_numba
else:
    tridiagonalize = tridiagonalize_numpy
    ql_implicit = ql_implicit_numpy
    mlp_conv_forward = mlp_conv_forward_numpy
    mlp_conv_backward = mlp_conv_backward_numpy
