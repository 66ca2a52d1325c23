"""Pure numpy implementation of the convolution core.

Same signatures and conventions as the compiled ``_kernels`` module; used
when the extension is unavailable or ``INFADMM_BACKEND=python`` is set.
Each kernel tap is handled as one matmul over the channel axis.
"""
import numpy as np


def _padded(x, kh, kw, ch, cw, periodic):
    pad = ((0, 0), (ch, kh - 1 - ch), (cw, kw - 1 - cw), (0, 0))
    if periodic:
        return np.pad(x, pad, mode="wrap")
    return np.pad(x, pad, mode="constant")


def conv_forward(x, k, ch, cw, periodic):
    x = np.ascontiguousarray(x, dtype=np.float64)
    kh, kw, _, co = k.shape
    n, h, w, _ = x.shape
    xp = _padded(x, kh, kw, ch, cw, periodic)
    y = np.zeros((n, h, w, co))
    for a in range(kh):
        for b in range(kw):
            y += xp[:, a:a + h, b:b + w, :] @ k[a, b]
    return y


def conv_adjoint(y, k, ch, cw, periodic):
    y = np.ascontiguousarray(y, dtype=np.float64)
    kh, kw, ci, _ = k.shape
    n, h, w, _ = y.shape
    if periodic:
        x = np.zeros((n, h, w, ci))
        for a in range(kh):
            for b in range(kw):
                x += np.roll(y @ k[a, b].T, shift=(a - ch, b - cw), axis=(1, 2))
        return x
    xp = np.zeros((n, h + kh - 1, w + kw - 1, ci))
    for a in range(kh):
        for b in range(kw):
            xp[:, a:a + h, b:b + w, :] += y @ k[a, b].T
    return xp[:, ch:ch + h, cw:cw + w, :].copy()


def conv_kernel_grad(x, gy, kh, kw, ch, cw, periodic):
    x = np.ascontiguousarray(x, dtype=np.float64)
    n, h, w, ci = x.shape
    co = gy.shape[3]
    xp = _padded(x, kh, kw, ch, cw, periodic)
    g2 = gy.reshape(-1, co)
    gk = np.empty((kh, kw, ci, co))
    for a in range(kh):
        for b in range(kw):
            gk[a, b] = xp[:, a:a + h, b:b + w, :].reshape(-1, ci).T @ g2
    return gk
