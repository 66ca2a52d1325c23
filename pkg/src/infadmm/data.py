"""Procedural toy image corpus and the Laplace synthetic instance."""
import math
from typing import NamedTuple

import numpy as np

from . import iadn
from .tensor import RngStream, gaussian_sample, laplace_sample


def _smooth_field(shape, rng, cutoff):
    H, W = shape
    white = rng.standard_normal((H, W))
    fy = np.fft.fftfreq(H)[:, None]
    fx = np.fft.fftfreq(W)[None, :]
    envelope = np.exp(-(fx ** 2 + fy ** 2) / (2.0 * cutoff ** 2))
    return np.fft.ifft2(np.fft.fft2(white) * envelope).real


def _edges(shape, rng, count):
    H, W = shape
    yy, xx = np.mgrid[0:H, 0:W]
    out = np.zeros(shape)
    params = rng.uniform((count, 4))
    for theta, offset, height, _ in params:
        angle = 2.0 * math.pi * theta
        proj = (xx - W / 2) * math.cos(angle) + (yy - H / 2) * math.sin(angle)
        out += (height - 0.5) * (proj > (offset - 0.5) * min(H, W) * 0.6)
    return out


def toy_images(count=200, shape=(32, 32), seed=0, cutoff=0.08, edges=2):
    """``count`` images of ``shape + (1,)`` in ``[0, 1]``: smooth field plus step edges."""
    if count < 1:
        raise ValueError("need at least one image")
    root = RngStream(seed, 11)
    images = np.empty((count,) + tuple(shape) + (1,))
    for i in range(count):
        rng = root.spawn(1000 + i)
        field = _smooth_field(shape, rng, cutoff)
        field /= np.abs(field).max() + 1e-12
        img = 0.35 * field + _edges(shape, rng, edges)
        lo, hi = img.min(), img.max()
        images[i, :, :, 0] = (img - lo) / (hi - lo) if hi > lo else 0.5
    return images


class ToyDataset(NamedTuple):
    images: np.ndarray
    train_index: np.ndarray
    heldout_index: np.ndarray

    @property
    def train(self):
        return self.images[self.train_index]

    @property
    def heldout(self):
        return self.images[self.heldout_index]


def make_toy_dataset(count=200, shape=(32, 32), seed=0, train_fraction=0.8):
    images = toy_images(count, shape, seed)
    n_train = int(round(train_fraction * count))
    if not 0 < n_train <= count:
        raise ValueError("train split must contain at least one image")
    idx = np.arange(count)
    return ToyDataset(images, idx[:n_train], idx[n_train:])


def save_dataset(path, ds):
    meta = {"kind": "toy-dataset", "train": ds.train_index.tolist(), "heldout": ds.heldout_index.tolist()}
    iadn.write(path, [ds.images], (), meta)


def load_dataset(path):
    tensors, _, meta = iadn.read(path)
    if len(tensors) != 1 or tensors[0].ndim != 4:
        raise iadn.IadnFormatError("dataset must hold one (N, H, W, C) image tensor", 12)
    images = tensors[0]
    n = images.shape[0]
    train = np.asarray(meta.get("train", list(range(n))), dtype=np.intp)
    heldout = np.asarray(meta.get("heldout", []), dtype=np.intp)
    if train.size and (train.min() < 0 or train.max() >= n) or heldout.size and (heldout.min() < 0 or heldout.max() >= n):
        raise ValueError("dataset index refers to missing images")
    return ToyDataset(images, train, heldout)


def measure(A, images, noise_sigma, rng):
    """Stack of ``A x_i + n_i`` with ``n_i ~ N(0, noise_sigma^2)``."""
    Y = A.apply_batch(np.asarray(images, dtype=np.float64))
    return Y + gaussian_sample(Y.shape, noise_sigma, rng)


class SyntheticInstance(NamedTuple):
    x: np.ndarray
    y: np.ndarray


def synthetic_instance(A, mu, b, sigma, seed):
    """``x ~ Laplace(mu, b)``, ``y = A x + n`` with ``n ~ N(0, sigma^2)``."""
    root = RngStream(seed)
    x = laplace_sample(A.input_shape, mu, b, root.spawn(1))
    y = A.apply(x) + gaussian_sample(A.output_shape, sigma, root.spawn(2))
    return SyntheticInstance(x, y)
