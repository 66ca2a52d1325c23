"""Proximity operators for the x-update and the pixel shuffling transform."""
from dataclasses import dataclass
import warnings

import numpy as np

from .tensor import as_tensor


def soft_threshold(v, kappa):
    """Entrywise ``S_kappa(a) = sgn(a) * max(|a| - kappa, 0)``."""
    if kappa < 0:
        raise ValueError(f"threshold must be non-negative, got {kappa}")
    v = as_tensor(v, "soft-threshold input")
    return np.sign(v) * np.maximum(np.abs(v) - kappa, 0.0)


def ridge_prox(v, lam):
    """Prox of ``(lam / 2) ||x||^2``: ``v / (1 + lam)``."""
    if lam < 0:
        raise ValueError(f"ridge weight must be non-negative, got {lam}")
    return as_tensor(v, "ridge input") / (1.0 + lam)


def pixel_shuffle(x, r):
    """Fold ``r x r`` pixel blocks into channels.

    ``(..., H, W, C) -> (..., H/r, W/r, C*r*r)`` with
    ``out[i, j, c*r*r + a*r + b] = x[i*r + a, j*r + b, c]``.
    """
    x = np.asarray(x, dtype=np.float64)
    r = int(r)
    if r < 1:
        raise ValueError("shuffle factor must be positive")
    *lead, H, W, C = x.shape
    if H % r or W % r:
        raise ValueError(f"shuffle factor {r} does not divide spatial size {H}x{W}")
    nl = len(lead)
    t = x.reshape(*lead, H // r, r, W // r, r, C)
    order = tuple(range(nl)) + (nl, nl + 2, nl + 4, nl + 1, nl + 3)
    return np.ascontiguousarray(t.transpose(order)).reshape(*lead, H // r, W // r, C * r * r)


def pixel_unshuffle(x, r):
    """Exact inverse of :func:`pixel_shuffle`."""
    x = np.asarray(x, dtype=np.float64)
    r = int(r)
    if r < 1:
        raise ValueError("shuffle factor must be positive")
    *lead, h, w, Cr = x.shape
    if Cr % (r * r):
        raise ValueError(f"channel count {Cr} not divisible by {r * r}")
    C = Cr // (r * r)
    nl = len(lead)
    t = x.reshape(*lead, h, w, C, r, r)
    order = tuple(range(nl)) + (nl, nl + 3, nl + 1, nl + 4, nl + 2)
    return np.ascontiguousarray(t.transpose(order)).reshape(*lead, h * r, w * r, C)


@dataclass(frozen=True)
class SoftThreshold:
    kappa: float

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("kappa must be non-negative")

    def __call__(self, v, y=None):
        return soft_threshold(v, self.kappa)


@dataclass(frozen=True)
class Ridge:
    lam: float

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")

    def __call__(self, v, y=None):
        return ridge_prox(v, self.lam)


@dataclass(frozen=True, eq=False)
class LearnedDenoiser:
    """Single forward pass through a trained (conditional) denoising net."""

    net: object
    conditioned_on_y: bool = True

    def __call__(self, v, y=None):
        return denoiser_prox(self.net, v, y if self.conditioned_on_y else None)


def denoiser_prox(net, v, y=None):
    """Map ``v`` to ``net(v; y)`` in one pass.

    If the net takes a conditioning input but ``y`` is absent or its shape
    cannot be matched, the conditioning channels are fed zeros.
    """
    v = as_tensor(v, "denoiser input")
    if v.shape != tuple(net.input_shape):
        raise ValueError(f"denoiser expects input of shape {tuple(net.input_shape)}, got {v.shape}")
    cond = None
    if net.cond_shape is not None:
        want = tuple(net.cond_shape)
        if y is not None and np.shape(y) == want:
            cond = as_tensor(y, "conditioning input")[None]
        else:
            if y is not None:
                warnings.warn(f"conditioning input of shape {np.shape(y)} does not match {want}; "
                              "conditioning disabled", RuntimeWarning, stacklevel=2)
            cond = np.zeros((1,) + want)
    elif y is not None:
        warnings.warn("denoiser has no conditioning input; y ignored", RuntimeWarning, stacklevel=2)
    return net.predict(v[None], cond)[0]
