"""Experiment drivers behind the command-line verbs.

Each ``cmd_*`` function takes an :class:`ExperimentConfig` and an output
directory, writes its files there and returns a small summary dict.
"""
import csv
from concurrent.futures import ThreadPoolExecutor
import os

import numpy as np

from . import admm, calib, data, iadn, nn
from .config import ConfigError
from .linop import CirculantConv1D, Composite, Dense, Downsample, PeriodicConv2D
from .prox import LearnedDenoiser
from .tensor import RngStream, nmse


class MissingInputError(FileNotFoundError):
    pass


def gaussian_kernel(size=3, sigma=1.0):
    """Normalized ``size x size`` Gaussian taps."""
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-r ** 2 / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def build_operator(problem):
    if problem.kind == "conv1d":
        n = problem.n
        return Composite(Downsample(problem.stride, (n,)), CirculantConv1D(np.array(problem.taps), n))
    if problem.kind == "identity":
        return Dense(np.eye(problem.n))
    s = problem.image_size
    if problem.kernel is not None:
        kernel = np.array(problem.kernel, dtype=np.float64)
    else:
        kernel = gaussian_kernel(3, problem.blur_sigma)
    conv = PeriodicConv2D(kernel, s, s)
    if problem.stride == 1:
        return conv
    return Composite(Downsample((problem.stride, problem.stride), (s, s, 1)), conv)


def _train_config(spec, seed, noise_sigma=0.0):
    return nn.TrainConfig(lr=spec.lr, lr_final=spec.lr_final, betas=tuple(spec.adam_betas),
                          batch_size=spec.batch_size, steps=spec.steps, noise_sigma=noise_sigma, seed=seed)


def _require(path, what):
    if path is None or not os.path.exists(path):
        raise MissingInputError(f"{what} not found: {path}")
    return path


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _fmt(v):
    return repr(float(v))


# ------------------------------------------------------------------ inverter


def train_inverter(A, beta, spec, seed):
    return nn.train_inversion_net(A, beta, _train_config(spec, seed), channels=tuple(spec.channels),
                                  kernel_size=spec.kernel_size, mode=spec.mode)


def cmd_train_inverter(cfg, out):
    solver = cfg.require_solver()
    A = build_operator(cfg.problem)
    res = train_inverter(A, solver.beta, cfg.inverter, cfg.seed)
    summary = {"initial_loss": res.initial_loss, "final_loss": res.final_loss}
    try:
        summary["frobenius_error"] = nn.inversion_error(res.net, A, solver.beta)
    except MemoryError:
        pass
    path = os.path.join(out, "inverter.iadn")
    nn.save_net(path, res.net, {"operator": A.to_dict(), "beta": solver.beta, **summary})
    summary["weights"] = path
    return summary


def load_inverter(path, A, beta):
    snet, meta = nn.load_net(_require(path, "inverter weights"))
    if not isinstance(snet, nn.SymmetricConvNet):
        raise ValueError(f"{path} does not hold an inversion network")
    nn.check_inverter_matches(meta, A, beta)
    return snet, meta


# ------------------------------------------------------------------ denoiser


def _dataset(cfg):
    return data.load_dataset(_require(cfg.data.dataset, "dataset"))


def _measurements(A, images, cfg, stream):
    return data.measure(A, images, cfg.problem.noise_sigma, RngStream(cfg.seed, stream))


def _corruption(spec):
    c = spec.corruption
    return tuple(float(v) for v in c) if isinstance(c, list) else float(c)


def cmd_train_denoiser(cfg, out):
    ds = _dataset(cfg)
    A = build_operator(cfg.problem)
    if len(ds.train_index) == 0:
        raise ValueError("dataset has no training images")
    Ytr = _measurements(A, ds.train, cfg, 101)
    heldout = None
    if len(ds.heldout_index):
        heldout = (ds.heldout, _measurements(A, ds.heldout, cfg, 102))
    spec = cfg.denoiser
    res = nn.train_cdae((ds.train, Ytr), _corruption(spec), _train_config(spec, cfg.seed), heldout=heldout,
                        channels=tuple(spec.channels), kernel_size=spec.kernel_size)
    summary = {"heldout_nmse": res.heldout_nmse, "corrupted_nmse": res.corrupted_nmse,
               "final_loss": res.losses[-1] if res.losses else None}
    if heldout is not None and res.net.cond_shape is not None:
        summary["zero_cond_nmse"] = nn.evaluate_denoiser(res.net, *heldout, _corruption(spec),
                                                         seed=cfg.seed, zero_cond=True)[0]
    path = os.path.join(out, "denoiser.iadn")
    nn.save_net(path, res.net, {"operator": A.to_dict(), "kind": "denoiser",
                                **{k: v for k, v in summary.items() if v is not None}})
    summary["weights"] = path
    return summary


def load_denoiser(path, A):
    net, meta = nn.load_net(_require(path, "denoiser weights"))
    if not isinstance(net, nn.ConvNet) or net.input_shape != A.input_shape:
        raise ValueError(f"{path} does not hold a denoiser for images of shape {A.input_shape}")
    return net, meta


# ------------------------------------------------------- synthetic benchmark


def _strategy(name, cfg, A, beta, inverter=None):
    s = cfg.solver
    if name == "dense":
        return admm.Dense()
    if name == "smw":
        return admm.SMW()
    if name == "cg":
        return admm.CG(s.cg_tol, s.cg_max_inner)
    if name == "fft":
        return admm.FFT()
    if inverter is None:
        snet, meta = load_inverter(cfg.inverter.weights, A, beta)
    else:
        snet, meta = inverter
    return admm.Learned(snet, meta)


def cmd_synthetic_benchmark(cfg, out):
    """Laplace ground truth, one instance, every configured z-solver in turn."""
    solver = cfg.require_solver()
    A = build_operator(cfg.problem)
    beta = solver.beta
    inst = data.synthetic_instance(A, cfg.data.mu, cfg.data.b, cfg.data.sigma, cfg.seed)
    strategies = {name: _strategy(name, cfg, A, beta) for name in solver.strategies}
    built = {name: admm.build_zsolver(s, A, beta) for name, s in strategies.items()}
    summary = {}
    for name in solver.strategies:
        acfg = admm.AdmmConfig(beta=beta, max_iter=solver.max_iter,
                               prox=admm.laplace_prior(cfg.data.sigma, cfg.data.b, beta),
                               zsolver=strategies[name], sigma=cfg.data.sigma, prior_weight=1.0 / cfg.data.b,
                               seed=cfg.seed, stop_tol=solver.stop_tol)
        _, traj = admm.run(inst.y, A, acfg, inst.x, solver=built[name])
        path = os.path.join(out, f"trajectory_{name}.csv")
        traj.write_csv(path)
        summary[name] = {"objective": traj.rows[-1][1], "nmse": traj.rows[-1][2], "seconds": traj.rows[-1][4]}
    return summary


# ------------------------------------------------------ toy super-resolution


def _heldout_problem(cfg, A, limit=0):
    ds = _dataset(cfg)
    X = ds.heldout if len(ds.heldout_index) else ds.train
    if limit:
        X = X[:limit]
    Y = _measurements(A, X, cfg, 103)
    return X, Y


def _toy_zsolver(strategy, cfg, A, beta, seed_stream):
    if strategy == "learned":
        res = train_inverter(A, beta, cfg.inverter, cfg.seed + seed_stream)
        return admm.Learned(res.net)
    return admm.SMW() if strategy == "smw" else admm.Dense()


def _superres_runs(A, X, Y, prox, beta, strategy, max_iter, seed):
    solver = admm.build_zsolver(strategy, A, beta)
    acfg = admm.AdmmConfig(beta=beta, max_iter=max_iter, prox=prox, zsolver=strategy, seed=seed)
    recon, curves = [], []
    for x, y in zip(X, Y):
        xhat, traj = admm.run(y, A, acfg, x, solver=solver)
        recon.append(xhat)
        curves.append(traj.column("nmse"))
    return np.array(recon), np.array(curves)


def nearest_upsample(y, stride):
    return np.repeat(np.repeat(y, stride, axis=0), stride, axis=1)


def cmd_toy_superres(cfg, out):
    solver = cfg.require_solver()
    A = build_operator(cfg.problem)
    net, _ = load_denoiser(cfg.denoiser.weights, A)
    X, Y = _heldout_problem(cfg, A)
    strategy = _toy_zsolver(cfg.sweep.strategy, cfg, A, solver.beta, 0)
    recon, _ = _superres_runs(A, X, Y, LearnedDenoiser(net), solver.beta, strategy, solver.max_iter, cfg.seed)
    s = cfg.problem.stride
    rows, totals = [], np.zeros(3)
    for i, (x, y, xh) in enumerate(zip(X, Y, recon)):
        vals = (nmse(xh, x), nmse(A.adjoint(y), x), nmse(nearest_upsample(y, s), x))
        totals += vals
        rows.append([i] + [_fmt(v) for v in vals])
    mean = totals / len(X)
    rows.append(["mean"] + [_fmt(v) for v in mean])
    _write_csv(os.path.join(out, "metrics.csv"), ["image", "recon_nmse", "adjoint_nmse", "nearest_nmse"], rows)
    iadn.write(os.path.join(out, "reconstructions.iadn"), [recon], (), {"kind": "reconstructions"})
    return {"recon_nmse": mean[0], "adjoint_nmse": mean[1], "nearest_nmse": mean[2], "images": len(X)}


def cmd_beta_sweep(cfg, out, betas=None):
    betas = list(cfg.sweep.betas if betas is None else betas)
    if not betas:
        raise ConfigError("field sweep.betas must not be empty")
    for b in betas:
        if not b > 0:
            raise ConfigError(f"field sweep.betas holds non-positive value {b}")
    max_iter = cfg.require_solver().max_iter
    A = build_operator(cfg.problem)
    net, _ = load_denoiser(cfg.denoiser.weights, A)
    X, Y = _heldout_problem(cfg, A, cfg.sweep.images)
    prox = LearnedDenoiser(net)

    def one(item):
        i, beta = item
        strategy = _toy_zsolver(cfg.sweep.strategy, cfg, A, beta, 1 + i)
        _, curves = _superres_runs(A, X, Y, prox, beta, strategy, max_iter, cfg.seed)
        return curves.mean(axis=0)

    with ThreadPoolExecutor(max_workers=cfg.sweep.jobs) as pool:
        means = list(pool.map(one, enumerate(betas)))
    rows = [[_fmt(beta), k, _fmt(v)] for beta, curve in zip(betas, means) for k, v in enumerate(curve)]
    _write_csv(os.path.join(out, "beta_sweep.csv"), ["beta", "iter", "nmse"], rows)
    return {repr(b): float(c[-1]) for b, c in zip(betas, means)}


# ------------------------------------------------------------- calibration


def calibration_pairs(cfg):
    """Pairs from ``calibration.pairs`` or, failing that, synthesized from the reference kernel."""
    c = cfg.calibration
    if c.pairs is not None:
        tensors, _, _ = iadn.read(_require(c.pairs, "calibration pairs"))
        if len(tensors) != 2:
            raise iadn.IadnFormatError("calibration file must hold an image stack and a measurement stack", 12)
        return list(tensors[0]), list(tensors[1])
    if c.reference is None:
        raise ConfigError("calibration needs calibration.pairs or calibration.reference")
    ref = np.array(c.reference, dtype=np.float64)
    if cfg.data.dataset is not None:
        X = _dataset(cfg).images[:c.count]
    else:
        s = cfg.problem.image_size
        X = RngStream(cfg.seed, 21).standard_normal((c.count, s, s, 1))
    A = calib.forward_operator(ref, X.shape[1:3], c.stride)
    return list(X), list(A.apply_batch(X))


def cmd_calibrate(cfg, out):
    c = cfg.calibration
    xs, ys = calibration_pairs(cfg)
    problem = calib.CalibrationProblem(xs, ys, tuple(c.kernel_size), tuple(c.stride), c.ridge)
    res = calib.estimate_forward_kernel(problem)
    ref = np.array(c.reference, dtype=np.float64) if c.reference is not None else None
    if ref is not None and ref.shape != res.kernel.shape:
        raise ConfigError(f"field calibration.reference has shape {ref.shape}, expected {res.kernel.shape}")
    rows = []
    for (a, b), v in np.ndenumerate(res.kernel):
        if ref is None:
            rows.append([a, b, _fmt(v), "", ""])
        else:
            rows.append([a, b, _fmt(v), _fmt(ref[a, b]), _fmt(abs(v - ref[a, b]))])
    _write_csv(os.path.join(out, "calibration.csv"), ["row", "col", "estimate", "reference", "abs_diff"], rows)
    iadn.write(os.path.join(out, "kernel.iadn"), [res.kernel], (), {"residual": res.residual})
    summary = {"residual": res.residual, "pairs": len(xs)}
    if ref is not None:
        summary["max_abs_diff"] = float(np.max(np.abs(res.kernel - ref)))
    return summary


def cmd_make_dataset(cfg, out):
    d = cfg.data
    ds = data.make_toy_dataset(d.count, (cfg.problem.image_size,) * 2, cfg.seed, d.train_fraction)
    path = os.path.join(out, "toy.iadn")
    data.save_dataset(path, ds)
    return {"dataset": path, "train": len(ds.train_index), "heldout": len(ds.heldout_index)}
