"""Numba-jitted loop implementation of the batch kernels.

Semantics match kernels.numpy_backend exactly (see its docstring for the
parameter layout); only summation order differs. All kernels are
single-threaded so seeded runs stay reproducible.
"""

import numpy as np
from numba import njit

SIGMOID_CLIP = 1e-12


@njit(cache=True)
def _sigmoid_scalar(y):
    if y >= 0.0:
        z = 1.0 / (1.0 + np.exp(-y))
    else:
        ey = np.exp(y)
        z = ey / (1.0 + ey)
    if z < SIGMOID_CLIP:
        z = SIGMOID_CLIP
    elif z > 1.0 - SIGMOID_CLIP:
        z = 1.0 - SIGMOID_CLIP
    return z


@njit(cache=True)
def cp_predict(S, U, V, ii, jj, kk):
    B = ii.shape[0]
    R = S.shape[1]
    out = np.empty(B)
    for b in range(B):
        i, j, k = ii[b], jj[b], kk[b]
        acc = 0.0
        for r in range(R):
            acc += S[i, r] * U[j, r] * V[k, r]
        out[b] = acc
    return out


@njit(cache=True)
def cp_residual_grads(S, U, V, ii, jj, kk, x):
    B = ii.shape[0]
    R = S.shape[1]
    dS = np.zeros_like(S)
    dU = np.zeros_like(U)
    dV = np.zeros_like(V)
    sse = 0.0
    for b in range(B):
        i, j, k = ii[b], jj[b], kk[b]
        pred = 0.0
        for r in range(R):
            pred += S[i, r] * U[j, r] * V[k, r]
        e = pred - x[b]
        sse += e * e
        for r in range(R):
            dS[i, r] += e * U[j, r] * V[k, r]
            dU[j, r] += e * S[i, r] * V[k, r]
            dV[k, r] += e * S[i, r] * U[j, r]
    return sse, dS, dU, dV


@njit(cache=True)
def _encode_one(V, enc_w, enc_b, k, pre_enc, vb):
    R, t = enc_w.shape
    for r in range(R):
        acc = enc_b[r]
        for tau in range(t):
            kt = k - t + 1 + tau
            if kt >= 0:
                acc += enc_w[r, tau] * V[kt, r]
        pre_enc[r] = acc
        vb[r] = acc if acc > 0.0 else 0.0


@njit(cache=True)
def _forward_one(S, U, V, enc_w, enc_b, k3, b3, k2, b2, k1, b1,
                 head_w, head_b, use_pool, i, j, k,
                 pre_enc, vb, X0, pre1, A1, P1, am, pre2, A2, pre3, A3, g):
    R = S.shape[1]
    C1, C2, C3 = k3.shape[0], k2.shape[0], k1.shape[0]
    n1 = R - 2
    n2 = n1 // 2 if use_pool else n1
    n3 = n2 - 2
    n4 = n3 - 1

    _encode_one(V, enc_w, enc_b, k, pre_enc, vb)

    for c in range(R):
        for a in range(R):
            sv = S[i, a] * vb[c]
            for d in range(R):
                X0[c, a, d] = sv * U[j, d]

    for o in range(C1):
        for p in range(n1):
            for q in range(n1):
                acc = b3[o]
                for c in range(R):
                    for dy in range(3):
                        for dx in range(3):
                            acc += k3[o, c, dy, dx] * X0[c, p + dy, q + dx]
                pre1[o, p, q] = acc
                A1[o, p, q] = acc if acc > 0.0 else 0.0

    if use_pool:
        for o in range(C1):
            for p in range(n2):
                for q in range(n2):
                    best = A1[o, 2 * p, 2 * q]
                    arg = 0
                    for dy in range(2):
                        for dx in range(2):
                            v = A1[o, 2 * p + dy, 2 * q + dx]
                            if v > best:
                                best = v
                                arg = dy * 2 + dx
                    P1[o, p, q] = best
                    am[o, p, q] = arg
    else:
        for o in range(C1):
            for p in range(n2):
                for q in range(n2):
                    P1[o, p, q] = A1[o, p, q]

    for o in range(C2):
        for p in range(n3):
            for q in range(n3):
                acc = b2[o]
                for c in range(C1):
                    for dy in range(3):
                        for dx in range(3):
                            acc += k2[o, c, dy, dx] * P1[c, p + dy, q + dx]
                pre2[o, p, q] = acc
                A2[o, p, q] = acc if acc > 0.0 else 0.0

    for o in range(C3):
        for p in range(n4):
            for q in range(n4):
                acc = b1[o]
                for c in range(C2):
                    for dy in range(2):
                        for dx in range(2):
                            acc += k1[o, c, dy, dx] * A2[c, p + dy, q + dx]
                pre3[o, p, q] = acc
                A3[o, p, q] = acc if acc > 0.0 else 0.0

    y = head_b
    for o in range(C3):
        acc = 0.0
        for p in range(n4):
            for q in range(n4):
                acc += A3[o, p, q]
        g[o] = acc / (n4 * n4)
        y += head_w[o] * g[o]
    return _sigmoid_scalar(y)


@njit(cache=True)
def nlr_predict(S, U, V, enc_w, enc_b, k3, b3, k2, b2, k1, b1,
                head_w, head_b, use_pool, ii, jj, kk):
    B = ii.shape[0]
    R = S.shape[1]
    C1, C2, C3 = k3.shape[0], k2.shape[0], k1.shape[0]
    t = enc_w.shape[1]
    n1 = R - 2
    n2 = n1 // 2 if use_pool else n1
    n3 = n2 - 2
    n4 = n3 - 1

    pre_enc = np.empty(R)
    vb = np.empty(R)
    X0 = np.empty((R, R, R))
    pre1 = np.empty((C1, n1, n1))
    A1 = np.empty((C1, n1, n1))
    P1 = np.empty((C1, n2, n2))
    am = np.empty((C1, n2, n2), dtype=np.int8)
    pre2 = np.empty((C2, n3, n3))
    A2 = np.empty((C2, n3, n3))
    pre3 = np.empty((C3, n4, n4))
    A3 = np.empty((C3, n4, n4))
    g = np.empty(C3)

    out = np.empty(B)
    for b in range(B):
        out[b] = _forward_one(S, U, V, enc_w, enc_b, k3, b3, k2, b2, k1, b1,
                              head_w, head_b, use_pool, ii[b], jj[b], kk[b],
                              pre_enc, vb, X0, pre1, A1, P1, am, pre2, A2, pre3, A3, g)
    return out


@njit(cache=True)
def nlr_residual_grads(S, U, V, enc_w, enc_b, k3, b3, k2, b2, k1, b1,
                       head_w, head_b, use_pool, ii, jj, kk, x):
    B = ii.shape[0]
    R = S.shape[1]
    C1, C2, C3 = k3.shape[0], k2.shape[0], k1.shape[0]
    t = enc_w.shape[1]
    n1 = R - 2
    n2 = n1 // 2 if use_pool else n1
    n3 = n2 - 2
    n4 = n3 - 1

    dS = np.zeros_like(S)
    dU = np.zeros_like(U)
    dV = np.zeros_like(V)
    denc_w = np.zeros_like(enc_w)
    denc_b = np.zeros_like(enc_b)
    dk3 = np.zeros_like(k3)
    db3 = np.zeros_like(b3)
    dk2 = np.zeros_like(k2)
    db2 = np.zeros_like(b2)
    dk1 = np.zeros_like(k1)
    db1 = np.zeros_like(b1)
    dhead_w = np.zeros_like(head_w)
    dhead_b = 0.0

    pre_enc = np.empty(R)
    vb = np.empty(R)
    X0 = np.empty((R, R, R))
    pre1 = np.empty((C1, n1, n1))
    A1 = np.empty((C1, n1, n1))
    P1 = np.empty((C1, n2, n2))
    am = np.empty((C1, n2, n2), dtype=np.int8)
    pre2 = np.empty((C2, n3, n3))
    A2 = np.empty((C2, n3, n3))
    pre3 = np.empty((C3, n4, n4))
    A3 = np.empty((C3, n4, n4))
    g = np.empty(C3)

    dX0 = np.empty((R, R, R))
    dA1 = np.empty((C1, n1, n1))
    dP1 = np.empty((C1, n2, n2))
    dA2 = np.empty((C2, n3, n3))
    dvb = np.empty(R)

    sse = 0.0
    for b in range(B):
        i, j, k = ii[b], jj[b], kk[b]
        z = _forward_one(S, U, V, enc_w, enc_b, k3, b3, k2, b2, k1, b1,
                         head_w, head_b, use_pool, i, j, k,
                         pre_enc, vb, X0, pre1, A1, P1, am, pre2, A2, pre3, A3, g)
        e = z - x[b]
        sse += e * e
        dyv = e * z * (1.0 - z)
        dhead_b += dyv
        inv = 1.0 / (n4 * n4)

        # conv1 (2x2) backward; dpre3 is formed on the fly
        for c in range(C2):
            for p in range(n3):
                for q in range(n3):
                    dA2[c, p, q] = 0.0
        for o in range(C3):
            dhead_w[o] += dyv * g[o]
            dgo = dyv * head_w[o] * inv
            for p in range(n4):
                for q in range(n4):
                    if pre3[o, p, q] > 0.0:
                        gv = dgo
                        db1[o] += gv
                        for c in range(C2):
                            for dy in range(2):
                                for dx in range(2):
                                    dk1[o, c, dy, dx] += gv * A2[c, p + dy, q + dx]
                                    dA2[c, p + dy, q + dx] += gv * k1[o, c, dy, dx]

        # conv2 (3x3) backward
        for c in range(C1):
            for p in range(n2):
                for q in range(n2):
                    dP1[c, p, q] = 0.0
        for o in range(C2):
            for p in range(n3):
                for q in range(n3):
                    if pre2[o, p, q] > 0.0:
                        gv = dA2[o, p, q]
                        db2[o] += gv
                        for c in range(C1):
                            for dy in range(3):
                                for dx in range(3):
                                    dk2[o, c, dy, dx] += gv * P1[c, p + dy, q + dx]
                                    dP1[c, p + dy, q + dx] += gv * k2[o, c, dy, dx]

        # pool routes to the first row-major argmax
        for o in range(C1):
            for p in range(n1):
                for q in range(n1):
                    dA1[o, p, q] = 0.0
        if use_pool:
            for o in range(C1):
                for p in range(n2):
                    for q in range(n2):
                        arg = am[o, p, q]
                        dA1[o, 2 * p + arg // 2, 2 * q + arg % 2] = dP1[o, p, q]
        else:
            for o in range(C1):
                for p in range(n2):
                    for q in range(n2):
                        dA1[o, p, q] = dP1[o, p, q]

        # conv3 (3x3) backward
        for c in range(R):
            for a in range(R):
                for d in range(R):
                    dX0[c, a, d] = 0.0
        for o in range(C1):
            for p in range(n1):
                for q in range(n1):
                    if pre1[o, p, q] > 0.0:
                        gv = dA1[o, p, q]
                        db3[o] += gv
                        for c in range(R):
                            for dy in range(3):
                                for dx in range(3):
                                    dk3[o, c, dy, dx] += gv * X0[c, p + dy, q + dx]
                                    dX0[c, p + dy, q + dx] += gv * k3[o, c, dy, dx]

        # outer-product backward
        for c in range(R):
            acc_v = 0.0
            for a in range(R):
                for d in range(R):
                    gx = dX0[c, a, d]
                    dS[i, a] += gx * U[j, d] * vb[c]
                    dU[j, d] += gx * S[i, a] * vb[c]
                    acc_v += gx * S[i, a] * U[j, d]
            dvb[c] = acc_v

        # encoder backward
        for r in range(R):
            if pre_enc[r] > 0.0:
                dp = dvb[r]
                denc_b[r] += dp
                for tau in range(t):
                    kt = k - t + 1 + tau
                    if kt >= 0:
                        denc_w[r, tau] += dp * V[kt, r]
                        dV[kt, r] += dp * enc_w[r, tau]

    return (sse, dS, dU, dV, denc_w, denc_b,
            dk3, db3, dk2, db2, dk1, db1, dhead_w, dhead_b)
