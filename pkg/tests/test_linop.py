import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from infadmm import linop
from infadmm.linop import (CGSolver, CirculantConv1D, Composite, Dense, Downsample, FFTSolver,
                           PeriodicConv2D, gram_outer, materialize, operator_from_dict, same_operator,
                           solve_cg, solve_dense, solve_fft_circulant, solve_smw)
from infadmm.tensor import NonFiniteError
from oracles import circulant_from_first_column, decimation_matrix

# printed 16x16 matrix for taps (0.2, 0.5, 0.3): first column (0.5, 0.2, 0, ..., 0, 0.3)
PAPER_H_FIRST_COLUMN = [0.5, 0.2] + [0.0] * 13 + [0.3]
PAPER_S_ONES = [(0, 0), (1, 4), (2, 8), (3, 12)]


def test_h_matches_printed_matrix():
    H = materialize(CirculantConv1D(np.array([0.2, 0.5, 0.3]), 16))
    assert np.array_equal(H, circulant_from_first_column(PAPER_H_FIRST_COLUMN))
    assert H[0, 1] == 0.3 and H[0, 15] == 0.2 and H[15, 0] == 0.3


def test_s_matches_printed_matrix():
    S = materialize(Downsample(4, (16,)))
    expect = np.zeros((4, 16))
    for r, c in PAPER_S_ONES:
        expect[r, c] = 1.0
    assert np.array_equal(S, expect)
    assert np.array_equal(S, decimation_matrix(16, 4))


def test_composite_is_product():
    H = CirculantConv1D(np.array([0.2, 0.5, 0.3]), 16)
    S = Downsample(4, (16,))
    assert np.allclose(materialize(Composite(S, H)), materialize(S) @ materialize(H), atol=0)


def random_operators(seed):
    rng = np.random.default_rng(seed)
    yield Dense(rng.standard_normal((7, 11)))
    yield CirculantConv1D(rng.standard_normal(3), 12)
    yield CirculantConv1D(rng.standard_normal(5), 10, center=0)
    yield PeriodicConv2D(rng.standard_normal((3, 3)), 6, 5)
    yield PeriodicConv2D(rng.standard_normal((2, 3, 2, 3)), 4, 6, center=(1, 0))
    yield Downsample(3, (12,))
    yield Downsample((2, 3), (6, 9, 2))
    yield Composite(Downsample(4, (16,)), CirculantConv1D(rng.standard_normal(3), 16))
    yield Composite(Downsample((2, 2), (8, 8, 1)), PeriodicConv2D(rng.standard_normal((3, 3)), 8, 8))


@pytest.mark.parametrize("seed", range(4))
def test_adjoint_identity_all_variants(backend, seed):
    rng = np.random.default_rng(100 + seed)
    for A in random_operators(seed):
        x = rng.standard_normal(A.input_shape)
        y = rng.standard_normal(A.output_shape)
        assert np.vdot(A.apply(x), y) == pytest.approx(np.vdot(x, A.adjoint(y)), rel=1e-10)


def test_batch_matches_single():
    for A in random_operators(9):
        X = np.random.default_rng(1).standard_normal((3,) + A.input_shape)
        assert np.allclose(A.apply_batch(X)[1], A.apply(X[1]))


def test_shape_and_finiteness_checks():
    A = CirculantConv1D(np.array([1.0, 2.0]), 5)
    with pytest.raises(ValueError):
        A.apply(np.zeros(4))
    with pytest.raises(NonFiniteError):
        A.apply(np.array([0, 1, np.nan, 0, 0]))
    with pytest.raises(ValueError):
        Composite(Downsample(2, (8,)), CirculantConv1D(np.ones(3), 6))
    with pytest.raises(ValueError):
        CirculantConv1D(np.ones(3), 6, center=3)


def test_operator_dict_roundtrip():
    for A in random_operators(2):
        B = operator_from_dict(A.to_dict())
        assert same_operator(A, B)
        assert np.allclose(materialize(A), materialize(B))


def test_materialize_guard(monkeypatch):
    monkeypatch.setattr(linop, "MAX_MATERIALIZE", 10)
    with pytest.raises(MemoryError):
        materialize(CirculantConv1D(np.ones(3), 8))


def test_gram_outer():
    A = Composite(Downsample(4, (16,)), CirculantConv1D(np.array([0.2, 0.5, 0.3]), 16))
    M = materialize(A)
    assert np.allclose(gram_outer(A), M @ M.T, atol=1e-15)
    # offsets of the taps never reach another kept sample, so A A^T is diagonal
    assert np.allclose(gram_outer(A), 0.38 * np.eye(4))


def _problem(seed):
    rng = np.random.default_rng(seed)
    A = Dense(rng.standard_normal((6, 10)))
    return A, rng.standard_normal(10)


@pytest.mark.parametrize("beta", [0.01, 0.1, 1.0])
def test_solvers_agree_dense(beta):
    A, r = _problem(3)
    M = materialize(A)
    oracle = np.linalg.solve(M.T @ M + beta * np.eye(10), r)
    assert np.allclose(solve_dense(A, beta, r), oracle, rtol=1e-10, atol=1e-12)
    assert np.allclose(solve_smw(A, beta, r), oracle, rtol=1e-9, atol=1e-12)
    assert np.allclose(solve_cg(A, beta, r, tol=1e-12).x, oracle, rtol=1e-8, atol=1e-10)


@pytest.mark.parametrize("op", [
    CirculantConv1D(np.array([0.2, 0.5, 0.3]), 32),
    PeriodicConv2D(np.array([[0.1, 0.2, 0.0], [0.3, 1.0, -0.2], [0.0, 0.1, 0.4]]), 6, 8),
])
def test_fft_agrees(op):
    r = np.random.default_rng(0).standard_normal(op.input_shape)
    assert np.allclose(solve_fft_circulant(op, 0.1, r), solve_dense(op, 0.1, r), atol=1e-10)


def test_fft_rejects_non_convolution():
    with pytest.raises(TypeError):
        FFTSolver(Composite(Downsample(4, (16,)), CirculantConv1D(np.ones(3), 16)), 0.1)
    with pytest.raises(TypeError):
        FFTSolver(Dense(np.eye(3)), 0.1)


def test_identity_operator_closed_form():
    A = Dense(np.eye(4))
    r = np.arange(4.0)
    for solve in (solve_dense, solve_smw):
        assert np.allclose(solve(A, 1.0, r), r / 2)
    assert np.allclose(solve_cg(A, 1.0, r).x, r / 2)


def test_cg_two_iterations_for_two_eigenvalues():
    # A^T A for this operator has exactly two distinct eigenvalues (0 and 0.38)
    A = Composite(Downsample(4, (64,)), CirculantConv1D(np.array([0.2, 0.5, 0.3]), 64))
    res = solve_cg(A, 0.1, np.random.default_rng(0).standard_normal(64), tol=1e-12)
    assert res.converged and res.iterations <= 3


def test_cg_reports_nonconvergence():
    A = Dense(np.random.default_rng(1).standard_normal((30, 30)))
    res = CGSolver(A, 1e-6, tol=1e-14, max_iter=2).solve(np.ones(30))
    assert not res.converged and res.iterations == 2


def test_cg_zero_rhs_and_warm_start():
    A, r = _problem(4)
    assert solve_cg(A, 0.5, np.zeros(10)).iterations == 0
    x = solve_dense(A, 0.5, r)
    assert solve_cg(A, 0.5, r, x0=x).iterations <= 1


def test_bad_beta():
    A, r = _problem(5)
    for solve in (solve_dense, solve_smw, solve_cg):
        with pytest.raises(ValueError):
            solve(A, 0.0, r)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(2, 12), st.floats(0.01, 1.0), st.integers(0, 2 ** 32 - 1))
def test_smw_matches_dense_property(m, n, beta, seed):
    rng = np.random.default_rng(seed)
    A = Dense(rng.standard_normal((m, n)))
    r = rng.standard_normal(n)
    want = solve_dense(A, beta, r)
    assert np.linalg.norm(solve_smw(A, beta, r) - want) <= 1e-9 * max(1.0, np.linalg.norm(want))
