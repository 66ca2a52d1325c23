"""Acceptance criteria, one recorded pass/fail line each (printed in the terminal summary).

The end-to-end criteria drive the shipped configs through the CLI inside a
temporary copy of ``configs/`` so their relative output paths stay out of
the repository.
"""
import csv
import json
import math
import os
import shutil
import time

import numpy as np
import pytest
from click.testing import CliRunner

from conftest import ROOT, record
from infadmm.admm import AdmmConfig, laplace_prior, run
from infadmm.calib import CalibrationProblem, estimate_forward_kernel, forward_operator
from infadmm.cli import main
from infadmm.data import synthetic_instance
from infadmm.linop import (CirculantConv1D, Composite, Dense, Downsample, PeriodicConv2D, materialize,
                           solve_cg, solve_dense, solve_fft_circulant, solve_smw)
from infadmm.nn import (Concat, Conv, ConvNet, ConvTranspose, PixelShuffle, PixelUnshuffle, TrainConfig,
                        inversion_error, train_inversion_net)
from infadmm.prox import pixel_shuffle, pixel_unshuffle
from infadmm.tensor import RngStream
from oracles import circulant_from_first_column, decimation_matrix, soft_scalar

TAPS = np.array([0.2, 0.5, 0.3])


def invoke(*args):
    res = CliRunner().invoke(main, [str(a) for a in args])
    assert res.exit_code == 0, res.output + repr(res.exception)
    return json.loads(res.output.strip().splitlines()[-1])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def copy_configs(root):
    dst = os.path.join(root, "configs")
    shutil.copytree(os.path.join(ROOT, "configs"), dst)
    return dst


def run_all_commands(root):
    """Every verb on the shipped configs; returns the summaries and the runs directory."""
    cfgs = copy_configs(root)
    synth = os.path.join(cfgs, "synthetic.toml")
    toy = os.path.join(cfgs, "toy.toml")
    runs = os.path.join(root, "runs")
    times, out = {}, {}
    steps = [
        ("train-inverter", synth, "synthetic"),
        ("synthetic-benchmark", synth, "synthetic"),
        ("make-dataset", toy, "toy"),
        ("train-denoiser", toy, "toy"),
        ("toy-superres", toy, "toy/superres"),
        ("beta-sweep", toy, "toy/sweep"),
        ("calibrate", toy, "toy/calibration"),
    ]
    for verb, cfg, sub in steps:
        t0 = time.perf_counter()
        out[verb] = invoke(verb, "--config", cfg, "--out", os.path.join(runs, sub))
        times[verb] = time.perf_counter() - t0
    return out, times, runs


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    return run_all_commands(str(tmp_path_factory.mktemp("accept")))


# 1 ---------------------------------------------------------------- SMW


def test_c01_smw_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    betas = (0.01, 0.1, 1.0)
    for i in range(50):
        beta = betas[i % 3]
        if i % 2:
            n = int(rng.choice([16, 32, 64]))
            s = int(rng.choice([2, 4]))
            A = Composite(Downsample(s, (n,)), CirculantConv1D(rng.standard_normal(int(rng.integers(2, 6))), n))
        else:
            n, m = int(rng.integers(2, 65)), int(rng.integers(1, 33))
            A = Dense(rng.standard_normal((m, n)))
        r = rng.standard_normal(A.input_shape)
        want = solve_dense(A, beta, r)
        worst = max(worst, np.linalg.norm(solve_smw(A, beta, r) - want) / np.linalg.norm(want))
    secs = time.perf_counter() - t0
    assert record(1, worst <= 1e-10 and secs < 5, f"max rel err {worst:.2e}, {secs:.2f}s")


# 2 ------------------------------------------------------------ adjoints


def _operator(kind, rng):
    if kind == 0:
        return Dense(rng.standard_normal((int(rng.integers(1, 9)), int(rng.integers(1, 9)))))
    if kind == 1:
        n = int(rng.integers(3, 20))
        k = int(rng.integers(1, n + 1))
        return CirculantConv1D(rng.standard_normal(k), n, center=int(rng.integers(0, k)))
    if kind == 2:
        h, w = int(rng.integers(3, 9)), int(rng.integers(3, 9))
        ci, co = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        return PeriodicConv2D(rng.standard_normal((3, 2, ci, co)), h, w)
    if kind == 3:
        s = int(rng.integers(1, 4))
        return Downsample(s, (s * int(rng.integers(1, 6)),))
    if kind == 4:
        return Downsample((2, 3), (4, 9, int(rng.integers(1, 3))))
    n = 4 * int(rng.integers(2, 6))
    if kind == 5:
        return Composite(Downsample(4, (n,)), CirculantConv1D(rng.standard_normal(3), n))
    return Composite(Downsample((2, 2), (n, n, 1)), PeriodicConv2D(rng.standard_normal((3, 3)), n, n))


def test_c02_adjoint_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for i in range(200):
        A = _operator(i % 7, rng)
        x, y = rng.standard_normal(A.input_shape), rng.standard_normal(A.output_shape)
        lhs, rhs = np.vdot(A.apply(x), y), np.vdot(x, A.adjoint(y))
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
    secs = time.perf_counter() - t0
    assert record(2, worst <= 1e-10 and secs < 5, f"max rel gap {worst:.2e} over 200 triples, {secs:.2f}s")


# 3 ------------------------------------------------------------- solvers


def test_c03_solver_agreement():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = 0.0
    for i in range(20):
        beta = float(rng.choice([0.01, 0.1, 1.0]))
        if i % 4 == 0:
            A = Dense(rng.standard_normal((int(rng.integers(2, 20)), int(rng.integers(2, 30)))))
        elif i % 4 == 1:
            A = Composite(Downsample(4, (64,)), CirculantConv1D(rng.standard_normal(3), 64))
        elif i % 4 == 2:
            A = CirculantConv1D(rng.standard_normal(5), 48)
        else:
            A = PeriodicConv2D(rng.standard_normal((3, 3)), 8, 10)
        r = rng.standard_normal(A.input_shape)
        sols = [solve_dense(A, beta, r), solve_smw(A, beta, r), solve_cg(A, beta, r, tol=1e-12).x]
        if i % 4 >= 2:
            sols.append(solve_fft_circulant(A, beta, r))
        for a in sols:
            for b in sols:
                worst = max(worst, np.linalg.norm(a - b) / np.linalg.norm(sols[0]))
    secs = time.perf_counter() - t0
    assert record(3, worst <= 1e-8 and secs < 10, f"max pairwise rel diff {worst:.2e}, {secs:.2f}s")


# 4 ----------------------------------------------------- printed matrices


def test_c04_printed_matrices():
    H = materialize(CirculantConv1D(TAPS, 16))
    S = materialize(Downsample(4, (16,)))
    h_ok = np.array_equal(H, circulant_from_first_column([0.5, 0.2] + [0.0] * 13 + [0.3]))
    s_ok = np.array_equal(S, decimation_matrix(16, 4))
    assert record(4, h_ok and s_ok, f"H exact: {h_ok}, S exact: {s_ok}")


# 5 ----------------------------------------------------------- gradients


def _random_net(i, rng):
    acts = ("linear", "relu", "sigmoid")
    a = acts[i % 3]
    kind = i % 5
    if kind == 0:
        p = {"k": rng.standard_normal((3, 3, 2, 3)), "b": rng.standard_normal(3)}
        return ConvNet([Conv("k", padding="periodic", activation=a, bias="b")], p, (4, 5, 2)), None
    if kind == 1:
        p = {"k": rng.standard_normal((2, 3, 1, 2)), "j": rng.standard_normal((3, 3, 2, 1))}
        return ConvNet([Conv("k", padding="same", activation=a, stride=(2, 1)),
                        Conv("j", padding="same", activation=a)], p, (4, 5, 1)), None
    if kind == 2:
        # shared kernels: forward cascade then tied transposes
        p = {"w0": rng.standard_normal((3, 3, 1, 2)), "w1": rng.standard_normal((2, 2, 2, 2))}
        return ConvNet([Conv("w0", activation=a), Conv("w1", activation=a, stride=(2, 2)),
                        ConvTranspose(1, activation=a), ConvTranspose(0)], p, (4, 6, 1)), None
    if kind == 3:
        p = {"k": rng.standard_normal((3, 3, 4, 2)), "j": rng.standard_normal((1, 1, 3, 4)),
             "c": rng.standard_normal(4)}
        net = ConvNet([PixelShuffle(2), Conv("k", padding="same", activation=a), Concat(),
                       Conv("j", activation="linear", bias="c"), PixelUnshuffle(2)], p, (4, 4, 1),
                      cond_shape=(2, 2, 1), skip=True)
        return net, rng.standard_normal((2, 2, 2, 1))
    p = {"k": rng.standard_normal((2, 2, 1, 1))}
    return ConvNet([Conv("k", activation=a), ConvTranspose(0, activation=a, bias=None)], p, (3, 3, 1)), None


def _fd_error(net, x, cond, rng, h=1e-5):
    out, cache = net.forward(x, cond)
    G = rng.standard_normal(out.shape)
    grads, gx, gc = net.backward(cache, G)
    worst = 0.0

    def f():
        return np.vdot(net.predict(x, cond), G)

    for key, p in net.params.items():
        fd = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + h
            up = f()
            p[i] = old - h
            dn = f()
            p[i] = old
            fd[i] = (up - dn) / (2 * h)
        worst = max(worst, np.linalg.norm(fd - grads[key]) / max(np.linalg.norm(fd), 1e-12))
    for arr, g in ((x, gx), (cond, gc)):
        if arr is None:
            continue
        d = rng.standard_normal(arr.shape)
        arr += h * d
        up = f()
        arr -= 2 * h * d
        dn = f()
        arr += h * d
        fd = (up - dn) / (2 * h)
        worst = max(worst, abs(fd - np.vdot(g, d)) / max(abs(fd), 1e-12))
    return worst


def test_c05_gradients():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst = 0.0
    for i in range(20):
        net, cond = _random_net(i, rng)
        x = rng.standard_normal((2,) + net.input_shape)
        worst = max(worst, _fd_error(net, x, cond, rng))
    secs = time.perf_counter() - t0
    assert record(5, worst <= 1e-5 and secs < 30, f"max rel err {worst:.2e} over 20 nets, {secs:.2f}s")


# 6 --------------------------------------------------------- inversion net


def test_c06_inversion_quality():
    t0 = time.perf_counter()
    A = Composite(Downsample(4, (16,)), CirculantConv1D(TAPS, 16))
    cfg = TrainConfig(lr=1e-2, lr_final=1e-6, batch_size=8, steps=600, seed=0)
    res = train_inversion_net(A, 0.1, cfg, channels=(2,), kernel_size=4)
    err = inversion_error(res.net, A, 0.1)
    ratio = res.final_loss / res.initial_loss
    secs = time.perf_counter() - t0
    assert record(6, err <= 0.05 and ratio <= 0.01 and secs < 120,
                  f"Frobenius rel err {err:.2e}, loss ratio {ratio:.2e}, {secs:.1f}s")


# 7 ---------------------------------------------------- objective curves


def test_c07_dense_vs_learned_objective(pipeline):
    _, times, runs = pipeline
    d = np.array([float(r[1]) for r in read_csv(os.path.join(runs, "synthetic", "trajectory_dense.csv"))[1:]])
    lr = np.array([float(r[1]) for r in read_csv(os.path.join(runs, "synthetic", "trajectory_learned.csv"))[1:]])
    gap = float(np.max(np.abs(lr - d) / np.abs(d)))
    secs = times["train-inverter"] + times["synthetic-benchmark"]
    assert record(7, len(d) == 51 and gap <= 0.01 and secs < 120,
                  f"max per-iteration rel gap {gap:.2e} over k=0..50, {secs:.1f}s")


# 8 ------------------------------------------------------------- timing


def test_c08_learned_faster_than_cg(tmp_path):
    cfgs = copy_configs(str(tmp_path))
    path = os.path.join(cfgs, "synthetic.toml")
    with open(path) as fh:
        text = fh.read()
    with open(path, "w") as fh:
        fh.write(text.replace("n = 1024", "n = 4096").replace('strategies = ["dense", "cg", "learned"]',
                                                               'strategies = ["cg", "learned"]'))
    out = os.path.join(str(tmp_path), "runs", "synthetic")
    invoke("train-inverter", "--config", path, "--out", out)
    best = {"cg": np.inf, "learned": np.inf}
    # ordering only; the minimum over repeats damps scheduler noise
    for _ in range(3):
        invoke("synthetic-benchmark", "--config", path, "--out", out)
        for name in best:
            rows = read_csv(os.path.join(out, f"trajectory_{name}.csv"))
            best[name] = min(best[name], float(rows[51][4]))
    assert record(8, best["learned"] < best["cg"],
                  f"cum seconds at k=50: learned {best['learned']:.4f}, cg {best['cg']:.4f}")


# 9 ---------------------------------------------------------- beta sweep


def _sweep(pipeline):
    _, times, runs = pipeline
    curves = {}
    for beta, k, v in read_csv(os.path.join(runs, "toy", "sweep", "beta_sweep.csv"))[1:]:
        curves.setdefault(float(beta), []).append(float(v))
    return curves, times["beta-sweep"]


def test_c09a_small_betas_agree(pipeline):
    curves, secs = _sweep(pipeline)
    finals = [curves[b][-1] for b in (1e-4, 5e-4, 1e-3)]
    spread = (max(finals) - min(finals)) / min(finals)
    assert record(9, spread <= 0.05 and secs < 300, f"final NMSE spread {spread:.2%}, sweep {secs:.0f}s", "a")


@pytest.mark.xfail(strict=True, reason="learned proximal step keeps drifting at beta = 0.1; see README")
def test_c09b_large_beta_settles_by_10(pipeline):
    curves, _ = _sweep(pipeline)
    c = curves[0.1]
    gap = abs(c[10] - c[-1]) / c[-1]
    assert record(9, gap <= 0.02, f"beta=0.1 NMSE at k=10 {c[10]:.4f} vs final {c[-1]:.4f}, gap {gap:.1%}", "b")


def test_c09c_large_beta_not_better(pipeline):
    curves, _ = _sweep(pipeline)
    hi, lo = curves[0.1][-1], curves[1e-3][-1]
    assert record(9, hi >= lo, f"final NMSE beta=0.1 {hi:.4f} vs beta=1e-3 {lo:.4f}", "c")


# 10 ------------------------------------------------------ lasso closed form


def test_c10_lasso_closed_form():
    t0 = time.perf_counter()
    y = RngStream(10).standard_normal(64) * 2
    beta = 0.5
    cfg = AdmmConfig(beta=beta, max_iter=100, prox=laplace_prior(1.0, 1.0, beta), prior_weight=1.0)
    x, _ = run(y, Dense(np.eye(64)), cfg)
    err = float(np.max(np.abs(x - np.array([soft_scalar(v, 1.0) for v in y]))))
    secs = time.perf_counter() - t0
    assert record(10, err <= 1e-6 and secs < 1, f"max abs err {err:.2e}, {secs:.3f}s")


# 11 ------------------------------------------------------- subgradient


def test_c11_subgradient_condition():
    A = Composite(Downsample(4, (1024,)), CirculantConv1D(TAPS, 1024))
    inst = synthetic_instance(A, 0.0, 1.0, 1.0, seed=0)
    beta = 0.1
    prox = laplace_prior(1.0, 1.0, beta)
    worst = [0.0]

    def check(st, v):
        g = v - st.x
        nz = st.x != 0
        worst[0] = max(worst[0], float(np.max(np.abs(g[nz] - prox.kappa * np.sign(st.x[nz])), initial=0.0)),
                       float(np.max(np.abs(g[~nz]) - prox.kappa, initial=0.0)))

    run(inst.y, A, AdmmConfig(beta=beta, max_iter=50, prox=prox, prior_weight=1.0), callback=check)
    assert record(11, worst[0] <= 1e-10, f"max violation {worst[0]:.2e} over 50 iterates")


# 12 --------------------------------------------------------- calibration


def test_c12_calibration():
    t0 = time.perf_counter()
    rng = np.random.default_rng(12)

    def recover(kernel, count):
        A = forward_operator(kernel, (32, 32), (4, 4))
        xs = [rng.uniform(size=(32, 32, 1)) for _ in range(count)]
        res = estimate_forward_kernel(CalibrationProblem(xs, [A.apply(x) for x in xs]))
        return float(np.max(np.abs(res.kernel - kernel)))

    k = rng.standard_normal((3, 3))
    delta = np.zeros((3, 3))
    delta[1, 1] = 1.0
    e_rand, e_id = recover(k, 100), recover(delta, 10)
    secs = time.perf_counter() - t0
    assert record(12, e_rand <= 1e-6 and e_id <= 1e-10 and secs < 10,
                  f"random 3x3 max tap err {e_rand:.2e}, identity {e_id:.2e}, {secs:.2f}s")


# 13 ------------------------------------------------------- pixel shuffle


def test_c13_pixel_shuffle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(13)
    ok = True
    for r in (1, 2, 4):
        for _ in range(10):
            x = rng.standard_normal((r * int(rng.integers(1, 4)), r * int(rng.integers(1, 4)), int(rng.integers(1, 4))))
            s = pixel_shuffle(x, r)
            ok &= np.array_equal(pixel_unshuffle(s, r), x)
            ok &= np.array_equal(pixel_shuffle(pixel_unshuffle(s, r), r), s)
            ok &= np.array_equal(np.sort(s, axis=None), np.sort(x, axis=None))
            # correctly rounded sums, so equal multisets give bit-equal norms
            ok &= math.fsum(s.ravel() ** 2) == math.fsum(x.ravel() ** 2)
    secs = time.perf_counter() - t0
    assert record(13, ok and secs < 1, f"roundtrips and norms exact: {ok}, {secs:.3f}s")


# 14 ------------------------------------------------------ denoiser utility


def test_c14_denoiser_utility(pipeline):
    out, times, _ = pipeline
    den, sr = out["train-denoiser"], out["toy-superres"]
    secs = times["make-dataset"] + times["train-denoiser"] + times["toy-superres"]
    ok = den["heldout_nmse"] < den["corrupted_nmse"] and sr["recon_nmse"] < sr["adjoint_nmse"] and secs < 600
    assert record(14, ok, f"denoised {den['heldout_nmse']:.4f} vs corrupted {den['corrupted_nmse']:.4f}; "
                          f"recon {sr['recon_nmse']:.4f} vs adjoint {sr['adjoint_nmse']:.4f}; {secs:.0f}s")


# 15 ----------------------------------------------------------- determinism


def _snapshot(runs):
    files = {}
    for root, _, names in os.walk(runs):
        for f in names:
            p = os.path.join(root, f)
            if f.endswith(".csv"):
                rows = read_csv(p)
                if rows[0][-1] == "cum_seconds":
                    rows = [r[:-1] for r in rows]
                files[os.path.relpath(p, runs)] = rows
            else:
                with open(p, "rb") as fh:
                    files[os.path.relpath(p, runs)] = fh.read()
    return files


def test_c15_determinism(pipeline, tmp_path):
    _, _, first = pipeline
    _, _, second = run_all_commands(str(tmp_path))
    a, b = _snapshot(first), _snapshot(second)
    differing = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    assert record(15, not differing, f"{len(a)} files compared, differing: {differing or 'none'}")
