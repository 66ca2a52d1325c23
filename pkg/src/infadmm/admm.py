"""ADMM with a pluggable proximity operator and z-solver.

The augmented Lagrangian uses the penalty ``beta ||x - z||^2`` (twice the
usual ``beta/2`` convention), giving the iteration

    x <- prox(z - u / (2 beta))
    z <- (A^T A + beta I)^-1 (A^T y + beta x + u / 2)
    u <- u + 2 beta (x - z)

started from ``x = z = A^T y`` and ``u = 0``.
"""
import csv
from dataclasses import dataclass, field
import math
import time
from typing import Any, Callable, Optional

import numpy as np

from .linop import CGSolver, DenseSolver, FFTSolver, SMWSolver, operator_from_dict, same_operator
from .nn import LearnedInverse
from .prox import SoftThreshold
from .tensor import as_tensor, l1, l2sq, nmse

TRAJECTORY_HEADER = ("iter", "objective", "nmse", "residual", "cum_seconds")


class NonFiniteIterateError(RuntimeError):
    pass


@dataclass(frozen=True)
class Dense:
    name = "dense"

    def build(self, A, beta):
        return DenseSolver(A, beta)


@dataclass(frozen=True)
class SMW:
    name = "smw"

    def build(self, A, beta):
        return SMWSolver(A, beta)


@dataclass(frozen=True)
class CG:
    tol: float = 1e-10
    max_inner: int = 1000
    name = "cg"

    def build(self, A, beta):
        return CGSolver(A, beta, self.tol, self.max_inner)


@dataclass(frozen=True)
class FFT:
    name = "fft"

    def build(self, A, beta):
        return FFTSolver(A, beta)


@dataclass(frozen=True, eq=False)
class Learned:
    """Single-pass surrogate ``beta^-1 (I - A^T C A)``.

    ``net`` is a trained symmetric net (or any callable standing in for
    ``C``). If ``meta`` carries the operator and beta it was trained for,
    they must match the problem.
    """

    net: Any
    meta: Optional[dict] = None
    name = "learned"

    def build(self, A, beta):
        if self.meta:
            if "operator" in self.meta and not same_operator(operator_from_dict(self.meta["operator"]), A):
                raise ValueError("learned inverter was trained for a different forward operator")
            if "beta" in self.meta and not math.isclose(float(self.meta["beta"]), beta, rel_tol=1e-12):
                raise ValueError(f"learned inverter was trained for beta={self.meta['beta']}, not {beta}")
        return LearnedInverse(A, beta, self.net)


def laplace_prior(sigma, b, beta):
    """Soft threshold for ``(1/2 sigma^2)||y - Ax||^2 + (1/b)||x||_1``.

    Scaling the objective by ``2 sigma^2`` gives prior weight
    ``lam = 2 sigma^2 / b`` and threshold ``lam / (2 beta)``.
    """
    if not (sigma > 0 and b > 0 and beta > 0):
        raise ValueError("sigma, b and beta must be positive")
    return SoftThreshold(sigma * sigma / (b * beta))


@dataclass
class AdmmConfig:
    beta: float
    max_iter: int = 50
    prox: Callable = None
    zsolver: Any = field(default_factory=Dense)
    sigma: float = 1.0
    prior_weight: float = 0.0
    seed: int = 0
    stop_tol: Optional[float] = None

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.prior_weight < 0:
            raise ValueError("prior weight must be non-negative")
        if self.prox is None:
            raise ValueError("a proximity operator is required")


@dataclass
class AdmmState:
    x: np.ndarray
    z: np.ndarray
    u: np.ndarray
    k: int = 0

    def __post_init__(self):
        if not (self.x.shape == self.z.shape == self.u.shape):
            raise ValueError("x, z and u must share one shape")


@dataclass
class TrajectoryRecord:
    rows: list = field(default_factory=list)

    def append(self, k, objective, err, residual, seconds):
        self.rows.append((k, objective, err, residual, seconds))

    def column(self, name):
        i = TRAJECTORY_HEADER.index(name)
        return [r[i] for r in self.rows]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRAJECTORY_HEADER)
            for k, obj, err, res, sec in self.rows:
                w.writerow([k, repr(obj), "" if err is None else repr(err), repr(res), f"{sec:.6f}"])


def x_update(state, prox, beta, y=None):
    v = state.z - state.u / (2.0 * beta)
    x = prox(v, y)
    if np.shape(x) != v.shape:
        raise ValueError(f"proximity operator returned shape {np.shape(x)}, expected {v.shape}")
    return x


def z_update(state, A, y, beta, solver):
    rhs = A.adjoint(y) + beta * state.x + state.u / 2.0
    return solver(rhs)


def u_update(state, beta):
    return state.u + 2.0 * beta * (state.x - state.z)


def objective(x, y, A, sigma=1.0, prior_weight=0.0):
    """``(1/2 sigma^2)||y - A x||^2 + prior_weight * ||x||_1``."""
    r = as_tensor(y) - A.apply(x)
    return l2sq(r) / (2.0 * sigma * sigma) + prior_weight * l1(x)


def build_zsolver(strategy, A, beta):
    """Construct the z-solver up front so bad pairings fail before iterating."""
    return strategy.build(A, beta)


def run(y, A, cfg, ground_truth=None, callback=None, solver=None):
    """Iterate ``cfg.max_iter`` times and return ``(x, TrajectoryRecord)``.

    Row 0 describes the initial point. Timing covers only the updates.
    ``callback(state, v)`` sees every new state with the prox input ``v``.
    """
    y = as_tensor(y, "measurement")
    if y.shape != A.output_shape:
        raise ValueError(f"measurement has shape {y.shape}, operator outputs {A.output_shape}")
    if ground_truth is not None:
        ground_truth = as_tensor(ground_truth, "ground truth")
        if ground_truth.shape != A.input_shape:
            raise ValueError("ground truth shape does not match the operator input")
    solver = solver or build_zsolver(cfg.zsolver, A, cfg.beta)
    beta = cfg.beta
    x0 = A.adjoint(y)
    state = AdmmState(x0.copy(), x0.copy(), np.zeros_like(x0))
    traj = TrajectoryRecord()

    def log(seconds):
        err = nmse(state.x, ground_truth) if ground_truth is not None else None
        res = math.sqrt(l2sq(state.x - state.z))
        traj.append(state.k, objective(state.x, y, A, cfg.sigma, cfg.prior_weight), err, res, seconds)
        return res

    log(0.0)
    elapsed = 0.0
    for k in range(1, cfg.max_iter + 1):
        t0 = time.perf_counter()
        v = state.z - state.u / (2.0 * beta)
        state.x = x_update(state, cfg.prox, beta, y)
        _check(state.x, k, "x")
        state.z = z_update(state, A, y, beta, solver)
        _check(state.z, k, "z")
        state.u = u_update(state, beta)
        _check(state.u, k, "u")
        elapsed += time.perf_counter() - t0
        state.k = k
        res = log(elapsed)
        if callback is not None:
            callback(state, v)
        if cfg.stop_tol is not None and res <= cfg.stop_tol:
            break
    return state.x, traj


def _check(arr, k, which):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteIterateError(f"non-finite values after the {which}-update at iteration {k}")
