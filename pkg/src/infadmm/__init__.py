"""Inner-loop-free ADMM: learned z-solver and denoiser prox for linear inverse problems."""
from .kernels import BACKEND
from .linop import (CGSolver, CirculantConv1D, Composite, Dense, DenseSolver, Downsample, FFTSolver,
                    PeriodicConv2D, SMWSolver, apply, apply_adjoint, materialize, solve_cg, solve_dense,
                    solve_fft_circulant, solve_smw)
from .prox import LearnedDenoiser, Ridge, SoftThreshold, pixel_shuffle, pixel_unshuffle, soft_threshold
from .tensor import RngStream, gaussian_sample, laplace_sample, nmse

__version__ = "0.1.0"
