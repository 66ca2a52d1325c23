"""TOML experiment configuration.

Top-level keys ``seed`` and ``out``; sections ``problem``, ``data``,
``solver``, ``inverter``, ``denoiser``, ``calibration`` and ``sweep``.
Relative paths resolve against the config file's directory. Unknown keys
and wrong types are rejected with the dotted field name.
"""
from dataclasses import dataclass, field, fields
import math
import os
from typing import Optional, get_args

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


_MISSING = object()


@dataclass
class ProblemSpec:
    kind: str = "conv1d"
    n: int = 1024
    taps: list = field(default_factory=lambda: [0.2, 0.5, 0.3])
    stride: int = 4
    image_size: int = 32
    blur_sigma: float = 1.0
    kernel: Optional[list] = None
    noise_sigma: float = 0.01


@dataclass
class DataSpec:
    mu: float = 0.0
    b: float = 1.0
    sigma: float = 1.0
    dataset: Optional[str] = None
    count: int = 200
    train_fraction: float = 0.8


@dataclass
class SolverSpec:
    beta: float = _MISSING
    max_iter: int = 50
    strategies: list = field(default_factory=lambda: ["dense", "cg", "learned"])
    cg_tol: float = 1e-10
    cg_max_inner: int = 1000
    stop_tol: Optional[float] = None


@dataclass
class InverterSpec:
    weights: Optional[str] = None
    channels: list = field(default_factory=lambda: [4, 4])
    kernel_size: int = 4
    mode: str = "linear"
    lr: float = 1e-3
    lr_final: Optional[float] = None
    adam_betas: list = field(default_factory=lambda: [0.9, 0.999])
    batch_size: int = 32
    steps: int = 1000


@dataclass
class DenoiserSpec:
    weights: Optional[str] = None
    corruption: object = 0.1
    channels: list = field(default_factory=lambda: [32, 32, 32])
    kernel_size: int = 3
    lr: float = 1e-3
    lr_final: Optional[float] = None
    adam_betas: list = field(default_factory=lambda: [0.9, 0.999])
    batch_size: int = 16
    steps: int = 1500


@dataclass
class CalibrationSpec:
    pairs: Optional[str] = None
    kernel_size: list = field(default_factory=lambda: [3, 3])
    stride: list = field(default_factory=lambda: [4, 4])
    ridge: float = 0.0
    reference: Optional[list] = None
    count: int = 100


@dataclass
class SweepSpec:
    betas: list = field(default_factory=lambda: [1e-4, 5e-4, 1e-3, 1e-2, 0.1])
    strategy: str = "learned"
    images: int = 0
    jobs: int = 1


SECTIONS = {
    "problem": ProblemSpec,
    "data": DataSpec,
    "solver": SolverSpec,
    "inverter": InverterSpec,
    "denoiser": DenoiserSpec,
    "calibration": CalibrationSpec,
    "sweep": SweepSpec,
}

_PATH_FIELDS = {("data", "dataset"), ("inverter", "weights"), ("denoiser", "weights"), ("calibration", "pairs")}


@dataclass
class ExperimentConfig:
    seed: int = 0
    out: str = "out"
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    data: DataSpec = field(default_factory=DataSpec)
    solver: SolverSpec = None
    inverter: InverterSpec = field(default_factory=InverterSpec)
    denoiser: DenoiserSpec = field(default_factory=DenoiserSpec)
    calibration: CalibrationSpec = field(default_factory=CalibrationSpec)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    base_dir: str = "."

    def require_solver(self):
        if self.solver is None:
            raise ConfigError("missing section [solver] (field solver.beta is required)")
        return self.solver


def _expected_type(annotation):
    args = [a for a in get_args(annotation) if a is not type(None)]
    return args[0] if len(args) == 1 else annotation


def _type_ok(value, expected):
    expected = _expected_type(expected)
    if isinstance(value, bool):
        return expected in (bool, object)
    if expected is float:
        return isinstance(value, (int, float))
    if expected in (int, str, list):
        return isinstance(value, expected)
    return True


def _build(section, cls, raw, base_dir):
    if not isinstance(raw, dict):
        raise ConfigError(f"[{section}] must be a table")
    known = {f.name: f for f in fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown field {section}.{key}")
    kwargs = {}
    for name, f in known.items():
        if name in raw:
            value = raw[name]
            if not _type_ok(value, f.type):
                raise ConfigError(f"field {section}.{name} has wrong type {type(value).__name__}")
            if isinstance(value, float) and not math.isfinite(value):
                raise ConfigError(f"field {section}.{name} must be finite")
            if (section, name) in _PATH_FIELDS and value is not None:
                value = os.path.normpath(os.path.join(base_dir, value))
            kwargs[name] = value
        elif f.default is _MISSING:
            raise ConfigError(f"missing required field {section}.{name}")
    return cls(**kwargs)


def parse_config(text, base_dir="."):
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    cfg = {"base_dir": base_dir}
    for key, value in raw.items():
        if key == "seed":
            if not isinstance(value, int) or isinstance(value, bool) or not 0 <= value < 2 ** 64:
                raise ConfigError("field seed must be an unsigned 64-bit integer")
            cfg["seed"] = value
        elif key == "out":
            if not isinstance(value, str):
                raise ConfigError("field out must be a string")
            cfg["out"] = os.path.normpath(os.path.join(base_dir, value))
        elif key in SECTIONS:
            cfg[key] = _build(key, SECTIONS[key], value, base_dir)
        else:
            raise ConfigError(f"unknown field {key}")
    out = ExperimentConfig(**cfg)
    _validate(out)
    return out


def load_config(path):
    try:
        with open(path, "rb") as fh:
            text = fh.read().decode("utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text, os.path.dirname(os.path.abspath(path)))


def _positive(value, name):
    if not value > 0:
        raise ConfigError(f"field {name} must be positive, got {value}")


def _validate(cfg):
    p = cfg.problem
    if p.kind not in ("conv1d", "superres", "identity"):
        raise ConfigError(f"field problem.kind must be conv1d, superres or identity, got {p.kind!r}")
    _positive(p.n, "problem.n")
    _positive(p.stride, "problem.stride")
    _positive(p.image_size, "problem.image_size")
    if p.noise_sigma < 0:
        raise ConfigError("field problem.noise_sigma must be non-negative")
    if p.kind == "conv1d" and p.n % p.stride:
        raise ConfigError(f"field problem.stride ({p.stride}) must divide problem.n ({p.n})")
    if p.kind == "superres" and p.image_size % p.stride:
        raise ConfigError(f"field problem.stride ({p.stride}) must divide problem.image_size ({p.image_size})")
    d = cfg.data
    _positive(d.b, "data.b")
    _positive(d.sigma, "data.sigma")
    _positive(d.count, "data.count")
    if not 0 < d.train_fraction <= 1:
        raise ConfigError("field data.train_fraction must lie in (0, 1]")
    if cfg.solver is not None:
        s = cfg.solver
        _positive(s.beta, "solver.beta")
        _positive(s.max_iter, "solver.max_iter")
        _positive(s.cg_tol, "solver.cg_tol")
        for name in s.strategies:
            if name not in ("dense", "smw", "cg", "fft", "learned"):
                raise ConfigError(f"field solver.strategies has unknown strategy {name!r}")
    for name in ("inverter", "denoiser"):
        t = getattr(cfg, name)
        _positive(t.lr, f"{name}.lr")
        if t.lr_final is not None:
            _positive(t.lr_final, f"{name}.lr_final")
        _positive(t.batch_size, f"{name}.batch_size")
        if t.steps < 0:
            raise ConfigError(f"field {name}.steps must be non-negative")
        if len(t.adam_betas) != 2:
            raise ConfigError(f"field {name}.adam_betas must have two entries")
    if cfg.inverter.mode not in ("linear", "relu"):
        raise ConfigError("field inverter.mode must be linear or relu")
    corr = cfg.denoiser.corruption
    if isinstance(corr, list):
        if len(corr) != 2 or not 0 <= corr[0] <= corr[1]:
            raise ConfigError("field denoiser.corruption range must be [lo, hi] with 0 <= lo <= hi")
    elif not isinstance(corr, (int, float)) or corr < 0:
        raise ConfigError("field denoiser.corruption must be a non-negative number or a [lo, hi] pair")
    c = cfg.calibration
    if c.ridge < 0:
        raise ConfigError("field calibration.ridge must be non-negative")
    _positive(c.count, "calibration.count")
    if len(c.kernel_size) != 2 or len(c.stride) != 2:
        raise ConfigError("fields calibration.kernel_size and calibration.stride need two entries")
    if cfg.sweep.strategy not in ("dense", "smw", "learned"):
        raise ConfigError("field sweep.strategy must be dense, smw or learned")
    _positive(cfg.sweep.jobs, "sweep.jobs")
