"""Structured linear forward models and exact solvers for ``(A^T A + beta I) z = r``.

Operators act on single signals of ``input_shape`` through :func:`apply` /
:func:`apply_adjoint`, and on stacks ``(N, *input_shape)`` through the
``*_batch`` methods. 1-D signals have shape ``(n,)``; images are
``(H, W, C)``.

Convolutions are correlations with an explicit center tap and periodic
boundary. For 1-D taps ``k`` with center ``c``::

    (A x)[i] = sum_t k[t] * x[(i + t - c) mod n]

so taps ``(0.2, 0.5, 0.3)`` with center 1 put 0.2 on the sub-diagonal and
0.3 on the super-diagonal.
"""
from dataclasses import dataclass
import math
from typing import NamedTuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import kernels
from .tensor import as_tensor, check_finite

MAX_MATERIALIZE = 2 ** 24


class LinearOperator:
    input_shape: tuple
    output_shape: tuple

    @property
    def input_dim(self):
        return math.prod(self.input_shape)

    @property
    def output_dim(self):
        return math.prod(self.output_shape)

    def _forward(self, X):
        raise NotImplementedError

    def _adjoint(self, Y):
        raise NotImplementedError

    def apply_batch(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1:] != self.input_shape:
            raise ValueError(f"expected batch of {self.input_shape}, got {X.shape[1:]}")
        return self._forward(X)

    def adjoint_batch(self, Y):
        Y = np.asarray(Y, dtype=np.float64)
        if Y.shape[1:] != self.output_shape:
            raise ValueError(f"expected batch of {self.output_shape}, got {Y.shape[1:]}")
        return self._adjoint(Y)

    def apply(self, x):
        x = as_tensor(x, "operator input")
        if x.shape != self.input_shape:
            raise ValueError(f"operator expects input of shape {self.input_shape}, got {x.shape}")
        return self._forward(x[None])[0]

    def adjoint(self, y):
        y = as_tensor(y, "adjoint input")
        if y.shape != self.output_shape:
            raise ValueError(f"adjoint expects input of shape {self.output_shape}, got {y.shape}")
        return self._adjoint(y[None])[0]

    def to_dict(self):
        raise NotImplementedError


@dataclass(eq=False)
class Dense(LinearOperator):
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = as_tensor(self.matrix, "dense matrix")
        if self.matrix.ndim != 2:
            raise ValueError("dense operator needs a 2-D matrix")
        m, n = self.matrix.shape
        self.input_shape = (n,)
        self.output_shape = (m,)

    def _forward(self, X):
        return X @ self.matrix.T

    def _adjoint(self, Y):
        return Y @ self.matrix

    def to_dict(self):
        return {"type": "dense", "matrix": self.matrix.tolist()}


@dataclass(eq=False)
class CirculantConv1D(LinearOperator):
    taps: np.ndarray
    n: int
    center: int = None

    def __post_init__(self):
        self.taps = as_tensor(self.taps, "kernel taps").ravel()
        if self.taps.size == 0:
            raise ValueError("kernel needs at least one tap")
        if self.center is None:
            self.center = (self.taps.size - 1) // 2
        if not 0 <= self.center < self.taps.size:
            raise ValueError(f"center {self.center} outside {self.taps.size} taps")
        self.n = int(self.n)
        if self.n < 1:
            raise ValueError("signal length must be positive")
        self.input_shape = self.output_shape = (self.n,)
        self._k = self.taps.reshape(1, -1, 1, 1)

    def _forward(self, X):
        out = kernels.conv_forward(X.reshape(-1, 1, self.n, 1), self._k, (0, self.center))
        return out.reshape(X.shape)

    def _adjoint(self, Y):
        out = kernels.conv_adjoint(Y.reshape(-1, 1, self.n, 1), self._k, (0, self.center))
        return out.reshape(Y.shape)

    def to_dict(self):
        return {"type": "conv1d", "taps": self.taps.tolist(), "center": self.center, "n": self.n}


@dataclass(eq=False)
class PeriodicConv2D(LinearOperator):
    kernel: np.ndarray
    height: int
    width: int
    center: tuple = None

    def __post_init__(self):
        k = as_tensor(self.kernel, "kernel")
        if k.ndim == 2:
            k = k[:, :, None, None]
        if k.ndim != 4:
            raise ValueError("2-D convolution kernel must be kH x kW (x Cin x Cout)")
        self.kernel = k
        if self.center is None:
            self.center = kernels.default_center(k.shape[:2])
        self.center = tuple(int(c) for c in self.center)
        self.height = int(self.height)
        self.width = int(self.width)
        self.input_shape = (self.height, self.width, k.shape[2])
        self.output_shape = (self.height, self.width, k.shape[3])

    def _forward(self, X):
        return kernels.conv_forward(X, self.kernel, self.center)

    def _adjoint(self, Y):
        return kernels.conv_adjoint(Y, self.kernel, self.center)

    def to_dict(self):
        return {"type": "conv2d", "kernel": self.kernel.tolist(), "center": list(self.center),
                "height": self.height, "width": self.width}


@dataclass(eq=False)
class Downsample(LinearOperator):
    """Keep every ``stride``-th sample per spatial axis, starting at offset 0."""

    stride: tuple
    shape: tuple

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        stride = (self.stride,) if np.isscalar(self.stride) else tuple(self.stride)
        self.stride = tuple(int(s) for s in stride)
        if len(self.shape) == 1:
            spatial = 1
        elif len(self.shape) == 3:
            spatial = 2
        else:
            raise ValueError("downsampling supports (n,) or (H, W, C) signals")
        if len(self.stride) == 1 and spatial == 2:
            self.stride = self.stride * 2
        if len(self.stride) != spatial or min(self.stride) < 1:
            raise ValueError(f"bad stride {self.stride} for signal shape {self.shape}")
        self._slices = (slice(None),) + tuple(slice(None, None, s) for s in self.stride)
        self.input_shape = self.shape
        self.output_shape = tuple(-(-d // s) for d, s in zip(self.shape, self.stride)) + self.shape[spatial:]

    def _forward(self, X):
        return np.ascontiguousarray(X[self._slices])

    def _adjoint(self, Y):
        X = np.zeros((Y.shape[0],) + self.input_shape)
        X[self._slices] = Y
        return X

    def to_dict(self):
        return {"type": "downsample", "stride": list(self.stride), "shape": list(self.shape)}


@dataclass(eq=False)
class Composite(LinearOperator):
    """``outer @ inner``; the usual case is ``A = S H``."""

    outer: LinearOperator
    inner: LinearOperator

    def __post_init__(self):
        if self.inner.output_shape != self.outer.input_shape:
            raise ValueError(f"cannot chain {self.inner.output_shape} into {self.outer.input_shape}")
        self.input_shape = self.inner.input_shape
        self.output_shape = self.outer.output_shape

    def _forward(self, X):
        return self.outer._forward(self.inner._forward(X))

    def _adjoint(self, Y):
        return self.inner._adjoint(self.outer._adjoint(Y))

    def to_dict(self):
        return {"type": "composite", "outer": self.outer.to_dict(), "inner": self.inner.to_dict()}


def operator_from_dict(d):
    kind = d.get("type")
    if kind == "dense":
        return Dense(np.array(d["matrix"], dtype=np.float64))
    if kind == "conv1d":
        return CirculantConv1D(np.array(d["taps"]), int(d["n"]), d.get("center"))
    if kind == "conv2d":
        center = d.get("center")
        return PeriodicConv2D(np.array(d["kernel"]), d["height"], d["width"],
                              tuple(center) if center is not None else None)
    if kind == "downsample":
        return Downsample(tuple(d["stride"]), tuple(d["shape"]))
    if kind == "composite":
        return Composite(operator_from_dict(d["outer"]), operator_from_dict(d["inner"]))
    raise ValueError(f"unknown operator type {kind!r}")


def same_operator(a, b):
    return a.to_dict() == b.to_dict()


def apply(A, x):
    return A.apply(x)


def apply_adjoint(A, y):
    return A.adjoint(y)


def materialize(A):
    """Dense ``m x n`` matrix whose column ``j`` is ``A e_j``."""
    n, m = A.input_dim, A.output_dim
    if n * m > MAX_MATERIALIZE:
        raise MemoryError(f"refusing to materialize a {m} x {n} operator (limit {MAX_MATERIALIZE} entries)")
    basis = np.eye(n).reshape((n,) + A.input_shape)
    return A.apply_batch(basis).reshape(n, m).T.copy()


def gram_outer(A):
    """Dense ``A A^T`` built from ``m`` adjoint/forward passes."""
    m = A.output_dim
    if m * m > MAX_MATERIALIZE:
        raise MemoryError(f"refusing to build a {m} x {m} Gram matrix")
    basis = np.eye(m).reshape((m,) + A.output_shape)
    return A.apply_batch(A.adjoint_batch(basis)).reshape(m, m).T.copy()


def normal_apply(A, beta, z):
    """``(A^T A + beta I) z``."""
    return A.adjoint(A.apply(z)) + beta * z


def _check_beta(beta):
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")


def _rhs(A, rhs):
    rhs = as_tensor(rhs, "right-hand side")
    if rhs.shape != A.input_shape:
        raise ValueError(f"right-hand side must have shape {A.input_shape}, got {rhs.shape}")
    return rhs


class DenseSolver:
    """Cholesky factorization of the full ``n x n`` normal matrix."""

    def __init__(self, A, beta):
        _check_beta(beta)
        self.A, self.beta = A, float(beta)
        M = materialize(A)
        G = M.T @ M
        G[np.diag_indices_from(G)] += self.beta
        self._factor = cho_factor(G, lower=True)

    def __call__(self, rhs):
        rhs = _rhs(self.A, rhs)
        z = cho_solve(self._factor, rhs.ravel())
        return z.reshape(self.A.input_shape)


class SMWSolver:
    """Woodbury form ``beta^-1 (I - A^T B A)`` with ``B = (beta I + A A^T)^-1``."""

    def __init__(self, A, beta):
        _check_beta(beta)
        self.A, self.beta = A, float(beta)
        G = gram_outer(A)
        G[np.diag_indices_from(G)] += self.beta
        self._factor = cho_factor(G, lower=True)

    def apply_B(self, eps):
        eps = np.asarray(eps, dtype=np.float64)
        return cho_solve(self._factor, eps.ravel()).reshape(self.A.output_shape)

    def __call__(self, rhs):
        rhs = _rhs(self.A, rhs)
        correction = self.A.adjoint(self.apply_B(self.A.apply(rhs)))
        return (rhs - correction) / self.beta


class CGResult(NamedTuple):
    x: np.ndarray
    iterations: int
    converged: bool
    residual: float


class CGSolver:
    """Matrix-free conjugate gradient on ``A^T A + beta I``.

    Stops once ``||r|| <= tol * ||rhs||``; on hitting ``max_iter`` the best
    iterate seen is returned with ``converged=False``.
    """

    def __init__(self, A, beta, tol=1e-10, max_iter=1000):
        _check_beta(beta)
        if not tol > 0:
            raise ValueError("tol must be positive")
        self.A, self.beta = A, float(beta)
        self.tol, self.max_iter = float(tol), int(max_iter)

    def solve(self, rhs, x0=None):
        A, beta = self.A, self.beta
        b = _rhs(A, rhs)
        bnorm = math.sqrt(float(np.vdot(b, b)))
        if bnorm == 0.0:
            return CGResult(np.zeros_like(b), 0, True, 0.0)
        if x0 is None:
            x = np.zeros_like(b)
            r = b.copy()
        else:
            x = np.array(x0, dtype=np.float64)
            r = b - (A._adjoint(A._forward(x[None]))[0] + beta * x)
        p = r.copy()
        rr = float(np.vdot(r, r))
        best_x, best_res = x.copy(), math.sqrt(rr) / bnorm
        if best_res <= self.tol:
            return CGResult(x, 0, True, best_res)
        for it in range(1, self.max_iter + 1):
            Ap = A._adjoint(A._forward(p[None]))[0] + beta * p
            alpha = rr / float(np.vdot(p, Ap))
            x += alpha * p
            r -= alpha * Ap
            rr_new = float(np.vdot(r, r))
            res = math.sqrt(rr_new) / bnorm
            if res < best_res:
                best_res = res
                best_x = x.copy()
            if res <= self.tol:
                return CGResult(x, it, True, res)
            p *= rr_new / rr
            p += r
            rr = rr_new
        return CGResult(best_x, self.max_iter, False, best_res)

    def __call__(self, rhs):
        return self.solve(rhs).x


class FFTSolver:
    """Diagonalize ``A^T A + beta I`` in the Fourier basis (pure periodic convolution only)."""

    def __init__(self, A, beta):
        _check_beta(beta)
        if isinstance(A, CirculantConv1D):
            self._axes = (0,)
        elif isinstance(A, PeriodicConv2D) and A.kernel.shape[2:] == (1, 1):
            self._axes = (0, 1)
        else:
            raise TypeError(f"FFT solver needs a single-channel periodic convolution, got {type(A).__name__}")
        self.A, self.beta = A, float(beta)
        impulse = np.zeros(A.input_shape)
        impulse[(0,) * impulse.ndim] = 1.0
        spectrum = np.fft.fftn(A.apply(impulse), axes=self._axes)
        self._denom = np.abs(spectrum) ** 2 + self.beta

    def __call__(self, rhs):
        rhs = _rhs(self.A, rhs)
        z = np.fft.ifftn(np.fft.fftn(rhs, axes=self._axes) / self._denom, axes=self._axes)
        return np.ascontiguousarray(z.real)


def solve_dense(A, beta, rhs):
    return DenseSolver(A, beta)(rhs)


def solve_smw(A, beta, rhs):
    return SMWSolver(A, beta)(rhs)


def solve_cg(A, beta, rhs, tol=1e-10, max_iter=1000, x0=None):
    return CGSolver(A, beta, tol, max_iter).solve(rhs, x0)


def solve_fft_circulant(A, beta, rhs):
    return check_finite(FFTSolver(A, beta)(rhs), "FFT solution")
