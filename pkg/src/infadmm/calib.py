"""Least-squares estimation of a blur kernel from (image, measurement) pairs.

With the forward model ``y = S(k * x)`` (periodic correlation, then keep
every ``stride``-th pixel) the measurement is linear in the taps, so

    min_k  sum_i ||y_i - A_k x_i||^2 + lam ||k||^2

is a ridge regression on a design matrix with one column per tap.
"""
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .linop import Composite, Downsample, PeriodicConv2D
from .tensor import as_tensor


class UnderdeterminedError(ValueError):
    pass


def _as_image(a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        return a[None, :]
    if a.ndim == 3:
        if a.shape[2] != 1:
            raise ValueError("calibration handles single-channel images only")
        return a[:, :, 0]
    if a.ndim != 2:
        raise ValueError(f"unsupported signal shape {a.shape}")
    return a


@dataclass
class CalibrationProblem:
    xs: list
    ys: list
    kernel_size: tuple = (3, 3)
    stride: tuple = (4, 4)
    ridge: float = 0.0
    center: tuple = None

    def __post_init__(self):
        if len(self.xs) == 0:
            raise ValueError("calibration needs at least one pair")
        if len(self.xs) != len(self.ys):
            raise ValueError("image and measurement counts differ")
        if self.ridge < 0:
            raise ValueError("ridge weight must be non-negative")
        self.kernel_size = tuple(int(k) for k in self.kernel_size)
        self.stride = tuple(int(s) for s in self.stride)
        if self.center is None:
            self.center = tuple((k - 1) // 2 for k in self.kernel_size)
        xs = [_as_image(as_tensor(x, "image")) for x in self.xs]
        ys = [_as_image(as_tensor(y, "measurement")) for y in self.ys]
        shape = xs[0].shape
        sh, sw = self.stride
        want = (-(-shape[0] // sh), -(-shape[1] // sw))
        for i, (x, y) in enumerate(zip(xs, ys)):
            if x.shape != shape:
                raise ValueError(f"image {i} has shape {x.shape}, expected {shape}")
            if y.shape != want:
                raise ValueError(f"measurement {i} has shape {y.shape}, expected {want} for stride {self.stride}")
        self._xs, self._ys = xs, ys


class CalibrationResult(NamedTuple):
    kernel: np.ndarray
    residual: float


def design_matrix(problem):
    """Rows: stacked measurement pixels; columns: kernel taps in row-major order."""
    kh, kw = problem.kernel_size
    ch, cw = problem.center
    sh, sw = problem.stride
    blocks = []
    for x in problem._xs:
        cols = []
        for a in range(kh):
            for b in range(kw):
                shifted = np.roll(x, shift=(ch - a, cw - b), axis=(0, 1))
                cols.append(shifted[::sh, ::sw].ravel())
        blocks.append(np.stack(cols, axis=1))
    return np.concatenate(blocks, axis=0)


def forward_residual(problem, kernel):
    """Mean over pairs of ``||y_i - A_k x_i||^2``."""
    D = design_matrix(problem)
    target = np.concatenate([y.ravel() for y in problem._ys])
    r = target - D @ np.asarray(kernel, dtype=np.float64).ravel()
    return float(r @ r) / len(problem._xs)


def estimate_forward_kernel(problem):
    D = design_matrix(problem)
    target = np.concatenate([y.ravel() for y in problem._ys])
    taps = D.shape[1]
    if problem.ridge == 0 and np.linalg.matrix_rank(D) < taps:
        raise UnderdeterminedError(
            f"{D.shape[0]} measurements cannot determine {taps} taps; set a ridge weight lambda_A > 0")
    G = D.T @ D
    G[np.diag_indices_from(G)] += problem.ridge
    k = cho_solve(cho_factor(G, lower=True), D.T @ target)
    kernel = k.reshape(problem.kernel_size)
    r = target - D @ k
    return CalibrationResult(kernel, float(r @ r) / len(problem._xs))


def forward_operator(kernel, image_shape, stride, center=None):
    """``Downsample(stride) o PeriodicConv2D(kernel)`` on ``(H, W, 1)`` images."""
    H, W = image_shape[:2]
    conv = PeriodicConv2D(np.asarray(kernel, dtype=np.float64), H, W, center)
    return Composite(Downsample(tuple(stride), (H, W, 1)), conv)
