"""Dense float64 tensors, deterministic sampling and reductions.

Tensors are plain C-contiguous ``numpy.float64`` arrays; images use
channel-last ``(H, W, C)`` layout. Every public helper rejects NaN/Inf.

Random numbers come from :class:`RngStream`, which fixes the whole chain:

* raw bits: Philox4x64-10 with key ``(seed, stream)``; block ``t``
  (``t = 1, 2, ...``) encrypts the counter ``(t, 0, 0, 0)`` and yields four
  64-bit words in order (the ``numpy.random.Philox`` stepping);
* uniforms: the top 53 bits of each 64-bit word, ``(w >> 11) * 2**-53``;
* Gaussians: Box-Muller on consecutive uniform pairs, cosine branch first;
* Laplace: inverse CDF ``mu - b * sgn(u) * log(1 - 2|u|)`` with
  ``u = U - 1/2`` on the open interval.

No distribution code from numpy is used, so sequences do not depend on the
numpy version.
"""
import math

import numpy as np

_TWO_M53 = 2.0 ** -53


class NonFiniteError(ValueError):
    """A tensor contains NaN or Inf."""


def check_finite(x, what="tensor"):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{what} contains non-finite values")
    return x


def as_tensor(x, what="tensor"):
    """Return ``x`` as a C-contiguous float64 array, checking finiteness."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    return check_finite(arr, what)


def _shape(shape):
    dims = (shape,) if np.isscalar(shape) else tuple(shape)
    if len(dims) == 0:
        raise ValueError("shape must have at least one dimension")
    if any(int(d) <= 0 for d in dims):
        raise ValueError(f"shape entries must be positive, got {dims}")
    return tuple(int(d) for d in dims)


class RngStream:
    """Single-owner deterministic random stream.

    Two streams built from the same ``(seed, stream)`` produce identical
    sequences on every platform. Use :meth:`spawn` for independent
    substreams instead of sharing one stream.
    """

    def __init__(self, seed, stream=0):
        seed = int(seed)
        stream = int(stream)
        if not (0 <= seed < 2 ** 64 and 0 <= stream < 2 ** 64):
            raise ValueError("seed and stream must be unsigned 64-bit integers")
        self.seed = seed
        self.stream = stream
        key = np.array([seed, stream], dtype=np.uint64)
        self._bits = np.random.Philox(counter=0, key=key)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream})"

    def spawn(self, stream):
        """Independent stream sharing this seed, keyed by ``stream``."""
        return RngStream(self.seed, stream)

    def raw(self, count):
        return self._bits.random_raw(int(count))

    def uniform(self, shape, open_low=False):
        """Uniforms on ``[0, 1)``, or on ``(0, 1)`` when ``open_low``."""
        dims = _shape(shape)
        words = self.raw(math.prod(dims)) >> np.uint64(11)
        u = words.astype(np.float64)
        if open_low:
            u += 0.5
        return (u * _TWO_M53).reshape(dims)

    def standard_normal(self, shape):
        dims = _shape(shape)
        count = math.prod(dims)
        pairs = (count + 1) // 2
        u = self.uniform(2 * pairs, open_low=True)
        radius = np.sqrt(-2.0 * np.log(u[0::2]))
        angle = 2.0 * np.pi * u[1::2]
        z = np.empty(2 * pairs)
        z[0::2] = radius * np.cos(angle)
        z[1::2] = radius * np.sin(angle)
        return z[:count].reshape(dims)


def gaussian_sample(shape, sigma, rng):
    """I.i.d. ``N(0, sigma**2)`` entries."""
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    z = rng.standard_normal(shape)
    if sigma == 0:
        return np.zeros_like(z)
    return sigma * z


def laplace_sample(shape, mu, b, rng):
    """I.i.d. ``Laplace(mu, b)`` entries by inverse-CDF transform."""
    if not b > 0:
        raise ValueError(f"Laplace scale b must be positive, got {b}")
    u = rng.uniform(shape, open_low=True) - 0.5
    return mu - b * np.sign(u) * np.log1p(-2.0 * np.abs(u))


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def dot(a, b):
    a, b = _pair(a, b)
    return float(np.dot(a.ravel(), b.ravel()))


def l1(a):
    return float(np.abs(np.asarray(a, dtype=np.float64)).sum())


def l2sq(a):
    a = np.asarray(a, dtype=np.float64).ravel()
    return float(np.dot(a, a))


def nmse(xhat, x):
    """Normalized mean square error ``||xhat - x||^2 / ||x||^2``."""
    xhat, x = _pair(xhat, x)
    denom = l2sq(x)
    if denom == 0.0:
        raise ZeroDivisionError("nmse is undefined for an all-zero reference")
    return l2sq(xhat - x) / denom
