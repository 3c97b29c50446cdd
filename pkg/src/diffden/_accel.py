"""Kernel lane selection: numba @njit kernels with a pure-numpy fallback.

The hot inner loops (weight-sharing layer passes, KDE sums) exist in two
implementations with identical signatures.  The lane is chosen at import
time: numba is used when it imports cleanly unless the environment variable
DIFFDEN_NUMBA is set to 0/false/off.  Both lanes are always importable via
the `_np` / `_nb` suffixed names so the benchmark can compare them.
"""

import os

import numpy as np

_flag = os.environ.get("DIFFDEN_NUMBA", "").strip().lower()
if _flag in ("0", "false", "off", "no"):
    NUMBA_ENABLED = False
else:
    try:
        from numba import njit

        NUMBA_ENABLED = True
    except ImportError:
        NUMBA_ENABLED = False


def lane():
    return "numba" if NUMBA_ENABLED else "numpy"


# --- weight-sharing layer kernels -----------------------------------------
#
# A hidden layer computes z[n, r_j[k]] += sum_d W[k, d] * a[n, q_j[d]] + b[k]
# summed over replicas j; qidx/ridx hold one permutation row per replica.


def wsnn_layer_forward_np(a, W, b, qidx, ridx):
    B = a.shape[0]
    dout = W.shape[0]
    z = np.zeros((B, dout))
    for j in range(qidx.shape[0]):
        pre = a[:, qidx[j]] @ W.T + b
        z[:, ridx[j]] += pre
    return z


def wsnn_layer_backward_np(a, W, delta, qidx, ridx):
    dW = np.zeros_like(W)
    db = np.zeros_like(W[:, 0])
    da = np.zeros_like(a)
    for j in range(qidx.shape[0]):
        dg = delta[:, ridx[j]]
        dW += dg.T @ a[:, qidx[j]]
        db += dg.sum(axis=0)
        da[:, qidx[j]] += dg @ W
    return dW, db, da


def kde_gauss_logsum_np(train, x, inv_two_h2):
    # log sum_i exp(-|x - X_i|^2 * inv_two_h2), stabilised per query
    d2 = np.sum((x[:, None, :] - train[None, :, :]) ** 2, axis=2)
    e = -d2 * inv_two_h2
    m = e.max(axis=1)
    return m + np.log(np.sum(np.exp(e - m[:, None]), axis=1))


def kde_box_count_np(train, x, h):
    inside = np.all(np.abs(x[:, None, :] - train[None, :, :]) <= h, axis=2)
    return inside.sum(axis=1).astype(np.float64)


if NUMBA_ENABLED:

    @njit(cache=True)
    def wsnn_layer_forward_nb(a, W, b, qidx, ridx):
        # fused gather + BLAS matmul + scatter-accumulate per replica
        B, din = a.shape
        dout = W.shape[0]
        m = qidx.shape[0]
        z = np.zeros((B, dout))
        wt = np.ascontiguousarray(W.T)
        gathered = np.empty((B, din))
        for j in range(m):
            for n in range(B):
                for d in range(din):
                    gathered[n, d] = a[n, qidx[j, d]]
            pre = np.dot(gathered, wt)
            for n in range(B):
                for k in range(dout):
                    z[n, ridx[j, k]] += pre[n, k] + b[k]
        return z

    @njit(cache=True)
    def wsnn_layer_backward_nb(a, W, delta, qidx, ridx):
        B, din = a.shape
        dout = W.shape[0]
        m = qidx.shape[0]
        dW = np.zeros((dout, din))
        db = np.zeros(dout)
        da = np.zeros((B, din))
        dg = np.empty((B, dout))
        gathered = np.empty((B, din))
        for j in range(m):
            for n in range(B):
                for k in range(dout):
                    dg[n, k] = delta[n, ridx[j, k]]
                for d in range(din):
                    gathered[n, d] = a[n, qidx[j, d]]
            dW += np.dot(np.ascontiguousarray(dg.T), gathered)
            for k in range(dout):
                s = 0.0
                for n in range(B):
                    s += dg[n, k]
                db[k] += s
            tmp = np.dot(dg, W)
            for n in range(B):
                for d in range(din):
                    da[n, qidx[j, d]] += tmp[n, d]
        return dW, db, da

    @njit(cache=True)
    def kde_gauss_logsum_nb(train, x, inv_two_h2):
        q, D = x.shape
        n = train.shape[0]
        out = np.empty(q)
        for i in range(q):
            m = -np.inf
            for t in range(n):
                d2 = 0.0
                for d in range(D):
                    diff = x[i, d] - train[t, d]
                    d2 += diff * diff
                e = -d2 * inv_two_h2
                if e > m:
                    m = e
            s = 0.0
            for t in range(n):
                d2 = 0.0
                for d in range(D):
                    diff = x[i, d] - train[t, d]
                    d2 += diff * diff
                s += np.exp(-d2 * inv_two_h2 - m)
            out[i] = m + np.log(s)
        return out

    @njit(cache=True)
    def kde_box_count_nb(train, x, h):
        q, D = x.shape
        n = train.shape[0]
        out = np.zeros(q)
        for i in range(q):
            for t in range(n):
                ok = True
                for d in range(D):
                    if abs(x[i, d] - train[t, d]) > h:
                        ok = False
                        break
                if ok:
                    out[i] += 1.0
        return out

    wsnn_layer_forward = wsnn_layer_forward_nb
    wsnn_layer_backward = wsnn_layer_backward_nb
    kde_gauss_logsum = kde_gauss_logsum_nb
    kde_box_count = kde_box_count_nb
else:
    wsnn_layer_forward = wsnn_layer_forward_np
    wsnn_layer_backward = wsnn_layer_backward_np
    kde_gauss_logsum = kde_gauss_logsum_np
    kde_box_count = kde_box_count_np
