"""Vectorized numpy implementation of the batch kernels.

Layout conventions shared with the numba backend:
  S (|I|,R), U (|J|,R), V (|K|,R)            factor matrices
  enc_w (R,t), enc_b (R,)                    depthwise causal taps, tap t-1 = current slot
  k3 (C1,R,3,3)  b3 (C1,)                    first conv, channels = temporal latent mode
  k2 (C2,C1,3,3) b2 (C2,)
  k1 (C3,C2,2,2) b1 (C3,)
  head_w (C3,)   head_b float
The 2x2/stride-2 max pool after the first conv is applied only when
``use_pool`` is set (spatial arithmetic permitting); pooling crops a
trailing odd row/column.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SIGMOID_CLIP = 1e-12


def sigmoid(y):
    """Numerically stable logistic, clamped to the open unit interval."""
    y = np.asarray(y, dtype=np.float64)
    out = np.empty_like(y)
    pos = y >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-y[pos]))
    ey = np.exp(y[~pos])
    out[~pos] = ey / (1.0 + ey)
    return np.clip(out, SIGMOID_CLIP, 1.0 - SIGMOID_CLIP)


def cp_predict(S, U, V, ii, jj, kk):
    return np.einsum("br,br,br->b", S[ii], U[jj], V[kk], optimize=True)


def cp_residual_grads(S, U, V, ii, jj, kk, x):
    """Sum of squared residuals and its half-gradient w.r.t. each factor.

    Returns (sse, dS, dU, dV) where d* are gradients of 0.5*sse.
    """
    sb, ub, vb = S[ii], U[jj], V[kk]
    e = np.einsum("br,br,br->b", sb, ub, vb, optimize=True) - x
    dS = np.zeros_like(S)
    dU = np.zeros_like(U)
    dV = np.zeros_like(V)
    np.add.at(dS, ii, e[:, None] * ub * vb)
    np.add.at(dU, jj, e[:, None] * sb * vb)
    np.add.at(dV, kk, e[:, None] * sb * ub)
    return float(e @ e), dS, dU, dV


def _encode(V, enc_w, enc_b, kk):
    """Causal depthwise window over V rows kk-t+1..kk with zero padding."""
    t = enc_w.shape[1]
    kidx = kk[:, None] + (np.arange(t) - (t - 1))[None, :]
    valid = kidx >= 0
    Vg = V[np.where(valid, kidx, 0)] * valid[:, :, None]
    pre = np.einsum("btr,rt->br", Vg, enc_w) + enc_b[None, :]
    return pre, np.maximum(pre, 0.0), Vg, kidx, valid


def _forward_state(S, U, V, enc_w, enc_b, k3, b3, k2, b2, k1, b1,
                   head_w, head_b, use_pool, ii, jj, kk):
    R = S.shape[1]
    n1 = R - 2
    n2 = n1 // 2 if use_pool else n1
    n4 = n2 - 3

    sb, ub = S[ii], U[jj]
    pre_enc, vb, Vg, kidx, valid = _encode(V, enc_w, enc_b, kk)

    # interaction map: channels = temporal latent, spatial = station x parameter
    X0 = vb[:, :, None, None] * sb[:, None, :, None] * ub[:, None, None, :]

    win1 = sliding_window_view(X0, (3, 3), axis=(2, 3))
    pre1 = np.einsum("bcpqyx,ocyx->bopq", win1, k3, optimize=True) + b3[None, :, None, None]
    A1 = np.maximum(pre1, 0.0)

    if use_pool:
        crop = A1[:, :, :2 * n2, :2 * n2]
        B, C1 = crop.shape[:2]
        blocks = crop.reshape(B, C1, n2, 2, n2, 2).transpose(0, 1, 2, 4, 3, 5)
        blocks = blocks.reshape(B, C1, n2, n2, 4)
        am = blocks.argmax(-1)
        P1 = np.take_along_axis(blocks, am[..., None], -1)[..., 0]
    else:
        am = None
        P1 = A1

    win2 = sliding_window_view(P1, (3, 3), axis=(2, 3))
    pre2 = np.einsum("bcpqyx,ocyx->bopq", win2, k2, optimize=True) + b2[None, :, None, None]
    A2 = np.maximum(pre2, 0.0)

    win3 = sliding_window_view(A2, (2, 2), axis=(2, 3))
    pre3 = np.einsum("bcpqyx,ocyx->bopq", win3, k1, optimize=True) + b1[None, :, None, None]
    A3 = np.maximum(pre3, 0.0)

    g = A3.mean(axis=(2, 3))
    y = g @ head_w + head_b
    z = sigmoid(y)
    return dict(sb=sb, ub=ub, pre_enc=pre_enc, vb=vb, Vg=Vg, kidx=kidx, valid=valid,
                X0=X0, win1=win1, pre1=pre1, A1=A1, am=am, P1=P1, win2=win2,
                pre2=pre2, win3=win3, pre3=pre3, g=g, z=z, n2=n2, n4=n4)


def nlr_predict(S, U, V, enc_w, enc_b, k3, b3, k2, b2, k1, b1,
                head_w, head_b, use_pool, ii, jj, kk):
    st = _forward_state(S, U, V, enc_w, enc_b, k3, b3, k2, b2, k1, b1,
                        head_w, head_b, use_pool, ii, jj, kk)
    return st["z"]


def _conv_input_grad(dpre, kern, n_out_prev):
    """Scatter conv output gradient back onto the conv input."""
    B = dpre.shape[0]
    C_in = kern.shape[1]
    ksz = kern.shape[2]
    n = dpre.shape[2]
    dx_in = np.zeros((B, C_in, n_out_prev, n_out_prev))
    for dy in range(ksz):
        for dx in range(ksz):
            dx_in[:, :, dy:dy + n, dx:dx + n] += np.einsum(
                "bopq,oc->bcpq", dpre, kern[:, :, dy, dx], optimize=True)
    return dx_in


def nlr_residual_grads(S, U, V, enc_w, enc_b, k3, b3, k2, b2, k1, b1,
                       head_w, head_b, use_pool, ii, jj, kk, x):
    """Squared-residual sum and gradients of 0.5*sse for every parameter tensor.

    ReLU gradients pass only where the preactivation is strictly positive;
    the pooled gradient goes to the first row-major argmax of each block.
    """
    st = _forward_state(S, U, V, enc_w, enc_b, k3, b3, k2, b2, k1, b1,
                        head_w, head_b, use_pool, ii, jj, kk)
    z, g = st["z"], st["g"]
    n2, n4 = st["n2"], st["n4"]
    n1 = S.shape[1] - 2
    n3 = n2 - 2

    e = z - x
    dy_head = e * z * (1.0 - z)

    dhead_b = float(dy_head.sum())
    dhead_w = dy_head @ g
    dpre3 = np.where(st["pre3"] > 0,
                     (np.outer(dy_head, head_w) / (n4 * n4))[:, :, None, None], 0.0)

    dk1 = np.einsum("bopq,bcpqyx->ocyx", dpre3, st["win3"], optimize=True)
    db1 = dpre3.sum(axis=(0, 2, 3))
    dpre2 = _conv_input_grad(dpre3, k1, n3) * (st["pre2"] > 0)

    dk2 = np.einsum("bopq,bcpqyx->ocyx", dpre2, st["win2"], optimize=True)
    db2 = dpre2.sum(axis=(0, 2, 3))
    dP1 = _conv_input_grad(dpre2, k2, n2)

    if use_pool:
        B, C1 = dP1.shape[:2]
        dblocks = np.zeros((B, C1, n2, n2, 4))
        np.put_along_axis(dblocks, st["am"][..., None], dP1[..., None], -1)
        dA1 = np.zeros((B, C1, n1, n1))
        dA1[:, :, :2 * n2, :2 * n2] = dblocks.reshape(
            B, C1, n2, n2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C1, 2 * n2, 2 * n2)
    else:
        dA1 = dP1
    dpre1 = dA1 * (st["pre1"] > 0)

    dk3 = np.einsum("bopq,bcpqyx->ocyx", dpre1, st["win1"], optimize=True)
    db3 = dpre1.sum(axis=(0, 2, 3))
    dX0 = _conv_input_grad(dpre1, k3, S.shape[1])

    sb, ub, vb = st["sb"], st["ub"], st["vb"]
    dsb = np.einsum("bcad,bd,bc->ba", dX0, ub, vb, optimize=True)
    dub = np.einsum("bcad,ba,bc->bd", dX0, sb, vb, optimize=True)
    dvb = np.einsum("bcad,ba,bd->bc", dX0, sb, ub, optimize=True)

    dS = np.zeros_like(S)
    dU = np.zeros_like(U)
    np.add.at(dS, ii, dsb)
    np.add.at(dU, jj, dub)

    dpre_enc = dvb * (st["pre_enc"] > 0)
    denc_b = dpre_enc.sum(axis=0)
    denc_w = np.einsum("br,btr->rt", dpre_enc, st["Vg"], optimize=True)
    dVg = np.einsum("br,rt->btr", dpre_enc, enc_w) * st["valid"][:, :, None]
    dV = np.zeros_like(V)
    np.add.at(dV, st["kidx"][st["valid"]], dVg[st["valid"]])

    return (float(e @ e), dS, dU, dV, denc_w, denc_b,
            dk3, db3, dk2, db2, dk1, db1, dhead_w, dhead_b)
