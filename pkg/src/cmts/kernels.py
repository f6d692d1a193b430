"""Hot inner loops: GRU unrolls and stride-2 3x3 convolutions.

Every kernel has a ``*_py`` version (plain numpy) and a ``*_nb`` version
(numba-compiled). The public name is bound to one of them at import time
according to ``CMTS_NUMBA``; see :mod:`cmts._accel`.

GRU layout used by all kernels (row-vector batches, B x width):

    ax   = x @ WT + b              WT: (I, 3H), columns [z | r | h]
    azr  = h @ UzrT                UzrT: (H, 2H)
    z    = sigmoid(ax_z + azr_z)
    r    = sigmoid(ax_r + azr_r)
    hh   = tanh(ax_h + (r * h) @ UhT)
    h'   = (1 - z) * h + z * hh

Backward kernels return per-step pre-activation gradients; weight
gradients are reduced by the caller with one matmul over all steps.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._accel import jit, select


def _gru_seq_forward_py(X, h0, WT, b, UzrT, UhT):
    T, B, _ = X.shape
    H = h0.shape[1]
    Hs = np.empty((T + 1, B, H))
    Z = np.empty((T, B, H))
    R = np.empty((T, B, H))
    HH = np.empty((T, B, H))
    Hs[0] = h0
    AX = (np.ascontiguousarray(X).reshape(T * B, X.shape[2]) @ WT).reshape(T, B, 3 * H) + b
    for t in range(T):
        h = Hs[t]
        ax = AX[t]
        azr = h @ UzrT
        z = 1.0 / (1.0 + np.exp(-(ax[:, :H] + azr[:, :H])))
        r = 1.0 / (1.0 + np.exp(-(ax[:, H:2 * H] + azr[:, H:])))
        hh = np.tanh(ax[:, 2 * H:] + (r * h) @ UhT)
        Hs[t + 1] = (1.0 - z) * h + z * hh
        Z[t] = z
        R[t] = r
        HH[t] = hh
    return Hs, Z, R, HH


def _gru_seq_backward_py(Hs, Z, R, HH, dHs, W, Uzr, Uh):
    # dHs[t] is the external gradient on state t (t = 0 is ignored).
    T, B, H = Z.shape
    dA = np.empty((T, B, 3 * H))
    dh = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        dh = dh + dHs[t + 1]
        h = Hs[t]
        z = Z[t]
        r = R[t]
        hh = HH[t]
        dah = dh * z * (1.0 - hh * hh)
        daz = dh * (hh - h) * z * (1.0 - z)
        drh = dah @ Uh
        dar = drh * h * r * (1.0 - r)
        dA[t, :, :H] = daz
        dA[t, :, H:2 * H] = dar
        dA[t, :, 2 * H:] = dah
        dh = dh * (1.0 - z) + drh * r + np.ascontiguousarray(dA[t, :, :2 * H]) @ Uzr
    return dA, dh


def _gru_rollout_forward_py(x0, h0, steps, WT, b, UzrT, UhT, WoT, bo):
    B, I = x0.shape
    H = h0.shape[1]
    O = WoT.shape[1]
    Inp = np.empty((steps, B, I))
    Hs = np.empty((steps + 1, B, H))
    Z = np.empty((steps, B, H))
    R = np.empty((steps, B, H))
    HH = np.empty((steps, B, H))
    Y = np.empty((steps, B, O))
    Hs[0] = h0
    inp = x0.copy()
    for t in range(steps):
        Inp[t] = inp
        h = Hs[t]
        ax = inp @ WT + b
        azr = h @ UzrT
        z = 1.0 / (1.0 + np.exp(-(ax[:, :H] + azr[:, :H])))
        r = 1.0 / (1.0 + np.exp(-(ax[:, H:2 * H] + azr[:, H:])))
        hh = np.tanh(ax[:, 2 * H:] + (r * h) @ UhT)
        hn = (1.0 - z) * h + z * hh
        Hs[t + 1] = hn
        Z[t] = z
        R[t] = r
        HH[t] = hh
        y = hn @ WoT + bo
        Y[t] = y
        inp = y
    return Inp, Hs, Z, R, HH, Y


def _gru_rollout_backward_py(Hs, Z, R, HH, dY, W, Uzr, Uh, Wo):
    # Output t is fed back as input t + 1, so its gradient picks up the
    # input gradient of the following step.
    T, B, H = Z.shape
    O = dY.shape[2]
    dA = np.empty((T, B, 3 * H))
    dYe = np.empty((T, B, O))
    dh = np.zeros((B, H))
    dinp = np.zeros((B, O))
    for t in range(T - 1, -1, -1):
        dy = dY[t] + dinp
        dYe[t] = dy
        dh = dh + dy @ Wo
        h = Hs[t]
        z = Z[t]
        r = R[t]
        hh = HH[t]
        dah = dh * z * (1.0 - hh * hh)
        daz = dh * (hh - h) * z * (1.0 - z)
        drh = dah @ Uh
        dar = drh * h * r * (1.0 - r)
        dA[t, :, :H] = daz
        dA[t, :, H:2 * H] = dar
        dA[t, :, 2 * H:] = dah
        dh = dh * (1.0 - z) + drh * r + np.ascontiguousarray(dA[t, :, :2 * H]) @ Uzr
        dinp = np.ascontiguousarray(dA[t]) @ W
    return dA, dYe, dh, dinp


# Loop-fused variants for numba: elementwise gate math is fused per unit so
# the only temporaries per step are the three small matmul results.

def _gru_seq_forward_loops(X, h0, WT, b, UzrT, UhT):
    T, B, _ = X.shape
    H = h0.shape[1]
    Hs = np.empty((T + 1, B, H))
    Z = np.empty((T, B, H))
    R = np.empty((T, B, H))
    HH = np.empty((T, B, H))
    rh = np.empty((B, H))
    Hs[0] = h0
    AX = (np.ascontiguousarray(X).reshape(T * B, X.shape[2]) @ WT).reshape(T, B, 3 * H)
    for t in range(T):
        h = Hs[t]
        azr = h @ UzrT
        for n in range(B):
            for j in range(H):
                z = 1.0 / (1.0 + np.exp(-((AX[t, n, j] + b[j]) + azr[n, j])))
                r = 1.0 / (1.0 + np.exp(-((AX[t, n, H + j] + b[H + j]) + azr[n, H + j])))
                Z[t, n, j] = z
                R[t, n, j] = r
                rh[n, j] = r * h[n, j]
        ah = rh @ UhT
        for n in range(B):
            for j in range(H):
                hh = np.tanh((AX[t, n, 2 * H + j] + b[2 * H + j]) + ah[n, j])
                HH[t, n, j] = hh
                z = Z[t, n, j]
                Hs[t + 1, n, j] = (1.0 - z) * h[n, j] + z * hh
    return Hs, Z, R, HH


def _gru_backstep_loops(dh, h, z, r, hh, dA_t, Uzr, Uh, H):
    B = dh.shape[0]
    dah = np.empty((B, H))
    for n in range(B):
        for j in range(H):
            g = dh[n, j]
            dah[n, j] = g * z[n, j] * (1.0 - hh[n, j] * hh[n, j])
            dA_t[n, j] = g * (hh[n, j] - h[n, j]) * z[n, j] * (1.0 - z[n, j])
            dA_t[n, 2 * H + j] = dah[n, j]
    drh = dah @ Uh
    for n in range(B):
        for j in range(H):
            rr = r[n, j]
            dA_t[n, H + j] = drh[n, j] * h[n, j] * rr * (1.0 - rr)
    back = np.ascontiguousarray(dA_t[:, :2 * H]) @ Uzr
    out = np.empty((B, H))
    for n in range(B):
        for j in range(H):
            out[n, j] = dh[n, j] * (1.0 - z[n, j]) + drh[n, j] * r[n, j] + back[n, j]
    return out


_gru_backstep_nb = jit(_gru_backstep_loops)


def _gru_seq_backward_loops(Hs, Z, R, HH, dHs, W, Uzr, Uh):
    T, B, H = Z.shape
    dA = np.empty((T, B, 3 * H))
    dh = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        dh = dh + dHs[t + 1]
        dh = _gru_backstep_nb(dh, Hs[t], Z[t], R[t], HH[t], dA[t], Uzr, Uh, H)
    return dA, dh


def _gru_rollout_forward_loops(x0, h0, steps, WT, b, UzrT, UhT, WoT, bo):
    B, I = x0.shape
    H = h0.shape[1]
    O = WoT.shape[1]
    Inp = np.empty((steps, B, I))
    Hs = np.empty((steps + 1, B, H))
    Z = np.empty((steps, B, H))
    R = np.empty((steps, B, H))
    HH = np.empty((steps, B, H))
    Y = np.empty((steps, B, O))
    rh = np.empty((B, H))
    Hs[0] = h0
    inp = x0.copy()
    for t in range(steps):
        Inp[t] = inp
        h = Hs[t]
        ax = inp @ WT
        azr = h @ UzrT
        for n in range(B):
            for j in range(H):
                z = 1.0 / (1.0 + np.exp(-((ax[n, j] + b[j]) + azr[n, j])))
                r = 1.0 / (1.0 + np.exp(-((ax[n, H + j] + b[H + j]) + azr[n, H + j])))
                Z[t, n, j] = z
                R[t, n, j] = r
                rh[n, j] = r * h[n, j]
        ah = rh @ UhT
        for n in range(B):
            for j in range(H):
                hh = np.tanh((ax[n, 2 * H + j] + b[2 * H + j]) + ah[n, j])
                HH[t, n, j] = hh
                z = Z[t, n, j]
                Hs[t + 1, n, j] = (1.0 - z) * h[n, j] + z * hh
        y = Hs[t + 1] @ WoT
        for n in range(B):
            for k in range(O):
                y[n, k] += bo[k]
        Y[t] = y
        inp = y
    return Inp, Hs, Z, R, HH, Y


def _gru_rollout_backward_loops(Hs, Z, R, HH, dY, W, Uzr, Uh, Wo):
    T, B, H = Z.shape
    O = dY.shape[2]
    dA = np.empty((T, B, 3 * H))
    dYe = np.empty((T, B, O))
    dh = np.zeros((B, H))
    dinp = np.zeros((B, O))
    for t in range(T - 1, -1, -1):
        dy = dY[t] + dinp
        dYe[t] = dy
        dh = dh + dy @ Wo
        dh = _gru_backstep_nb(dh, Hs[t], Z[t], R[t], HH[t], dA[t], Uzr, Uh, H)
        dinp = np.ascontiguousarray(dA[t]) @ W
    return dA, dYe, dh, dinp


def _conv_forward_py(x, W, b):
    """Stride-2, pad-1, 3x3 convolution via a strided window view."""
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))[:, :, ::2, ::2]
    out = np.tensordot(win, W, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2)) + b[None, :, None, None]


def _conv_backward_py(x, W, dout):
    B, Ci, Hi, Wi = x.shape
    Ho, Wo = dout.shape[2], dout.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))[:, :, ::2, ::2]
    dW = np.tensordot(dout, win, axes=([0, 2, 3], [0, 2, 3]))
    db = dout.sum(axis=(0, 2, 3))
    dxp = np.zeros_like(xp)
    for ki in range(3):
        for kj in range(3):
            contrib = np.tensordot(dout, W[:, :, ki, kj], axes=([1], [0]))
            dxp[:, :, ki:ki + 2 * Ho - 1:2, kj:kj + 2 * Wo - 1:2] += contrib.transpose(0, 3, 1, 2)
    return dxp[:, :, 1:Hi + 1, 1:Wi + 1], dW, db


def _conv_forward_loops(x, W, b):
    B, Ci, Hi, Wi = x.shape
    Co = W.shape[0]
    Ho = (Hi - 1) // 2 + 1
    Wo = (Wi - 1) // 2 + 1
    out = np.empty((B, Co, Ho, Wo))
    for n in range(B):
        for o in range(Co):
            for i in range(Ho):
                for j in range(Wo):
                    acc = b[o]
                    for c in range(Ci):
                        for ki in range(3):
                            r = 2 * i + ki - 1
                            if r < 0 or r >= Hi:
                                continue
                            for kj in range(3):
                                s = 2 * j + kj - 1
                                if s < 0 or s >= Wi:
                                    continue
                                acc += W[o, c, ki, kj] * x[n, c, r, s]
                    out[n, o, i, j] = acc
    return out


def _conv_backward_loops(x, W, dout):
    B, Ci, Hi, Wi = x.shape
    Co = W.shape[0]
    Ho, Wo = dout.shape[2], dout.shape[3]
    dx = np.zeros_like(x)
    dW = np.zeros_like(W)
    db = np.zeros(Co)
    for n in range(B):
        for o in range(Co):
            for i in range(Ho):
                for j in range(Wo):
                    g = dout[n, o, i, j]
                    if g == 0.0:
                        continue
                    db[o] += g
                    for c in range(Ci):
                        for ki in range(3):
                            r = 2 * i + ki - 1
                            if r < 0 or r >= Hi:
                                continue
                            for kj in range(3):
                                s = 2 * j + kj - 1
                                if s < 0 or s >= Wi:
                                    continue
                                dW[o, c, ki, kj] += g * x[n, c, r, s]
                                dx[n, c, r, s] += g * W[o, c, ki, kj]
    return dx, dW, db


_gru_seq_forward_nb = jit(_gru_seq_forward_loops)
_gru_seq_backward_nb = jit(_gru_seq_backward_loops)
_gru_rollout_forward_nb = jit(_gru_rollout_forward_loops)
_gru_rollout_backward_nb = jit(_gru_rollout_backward_loops)
_conv_forward_nb = jit(_conv_forward_loops)
_conv_backward_nb = jit(_conv_backward_loops)

gru_seq_forward = select(_gru_seq_forward_py, _gru_seq_forward_nb)
gru_seq_backward = select(_gru_seq_backward_py, _gru_seq_backward_nb)
gru_rollout_forward = select(_gru_rollout_forward_py, _gru_rollout_forward_nb)
gru_rollout_backward = select(_gru_rollout_backward_py, _gru_rollout_backward_nb)
conv_forward = select(_conv_forward_py, _conv_forward_nb)
conv_backward = select(_conv_backward_py, _conv_backward_nb)
