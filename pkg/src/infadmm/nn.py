"""Small convolutional networks with hand-written backward passes.

Two networks are built here:

* the symmetric inversion net ``C = W^T W`` that replaces
  ``B = (beta I + A A^T)^-1`` inside the z-update, trained on pure noise;
* the conditional pixel-shuffling denoiser used as the learned x-update.

Activations are batches in ``(N, H, W, C)`` layout. Parameters live in one
``dict`` per network; a :class:`ConvTranspose` layer reuses the kernel of
the :class:`Conv` layer it is tied to, so both read and write the same array.
"""
from dataclasses import dataclass, field, asdict
import math
from typing import NamedTuple

import numpy as np

from . import iadn, kernels
from .linop import gram_outer, operator_from_dict, same_operator
from .prox import pixel_shuffle, pixel_unshuffle
from .tensor import RngStream, as_tensor, nmse

ACTIVATIONS = ("linear", "relu", "sigmoid")
PADDINGS = ("periodic", "same")


class StaleCacheError(RuntimeError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


def _activate(name, pre):
    if name == "linear":
        return pre
    if name == "relu":
        return np.maximum(pre, 0.0)
    return 0.5 * (1.0 + np.tanh(0.5 * pre))


def _activation_grad(name, pre, out, g):
    if name == "linear":
        return g
    if name == "relu":
        return g * (pre > 0)
    return g * out * (1.0 - out)


def _upsample_zero(x, stride):
    sh, sw = stride
    if (sh, sw) == (1, 1):
        return x
    n, h, w, c = x.shape
    up = np.zeros((n, h * sh, w * sw, c))
    up[:, ::sh, ::sw, :] = x
    return up


def _subsample(x, stride):
    sh, sw = stride
    if (sh, sw) == (1, 1):
        return x
    return np.ascontiguousarray(x[:, ::sh, ::sw, :])


@dataclass
class Conv:
    kernel: str
    stride: tuple = (1, 1)
    padding: str = "periodic"
    activation: str = "linear"
    bias: str = None
    center: tuple = None


@dataclass
class ConvTranspose:
    """Adjoint of the :class:`Conv` at index ``tied_to``, sharing its kernel."""

    tied_to: int
    activation: str = "linear"
    bias: str = None


@dataclass
class PixelShuffle:
    r: int


@dataclass
class PixelUnshuffle:
    r: int


@dataclass
class Concat:
    """Append the conditioning input along the channel axis."""


LAYER_TYPES = {cls.__name__: cls for cls in (Conv, ConvTranspose, PixelShuffle, PixelUnshuffle, Concat)}


@dataclass
class _Cache:
    net_id: int
    params: dict
    inputs: list
    pres: list
    outs: list
    x: np.ndarray
    cond: np.ndarray


class ConvNet:
    """Ordered layer cascade with an optional identity skip (``out = x + body(x)``).

    Shapes are checked at construction; ``input_shape`` and ``cond_shape``
    exclude the batch axis.
    """

    def __init__(self, layers, params, input_shape, cond_shape=None, skip=False):
        self.layers = list(layers)
        self.params = {k: np.ascontiguousarray(v, dtype=np.float64) for k, v in params.items()}
        self.input_shape = tuple(int(d) for d in input_shape)
        self.cond_shape = None if cond_shape is None else tuple(int(d) for d in cond_shape)
        self.skip = bool(skip)
        self.shapes = self._infer_shapes()
        self.output_shape = self.shapes[-1]
        if self.skip and self.output_shape != self.input_shape:
            raise ValueError("identity skip needs matching input and output shapes")

    def _kernel_of(self, i):
        layer = self.layers[i]
        if isinstance(layer, ConvTranspose):
            return self._tied(i).kernel
        return layer.kernel

    def _tied(self, i):
        layer = self.layers[i]
        j = layer.tied_to
        if not (0 <= j < len(self.layers)) or not isinstance(self.layers[j], Conv):
            raise ValueError(f"layer {i} is tied to {j}, which is not a Conv layer")
        return self.layers[j]

    def _infer_shapes(self):
        shapes = [self.input_shape]
        used_concat = False
        for i, layer in enumerate(self.layers):
            h, w, c = shapes[-1]
            if isinstance(layer, (Conv, ConvTranspose)):
                conv = layer if isinstance(layer, Conv) else self._tied(i)
                if conv.kernel not in self.params:
                    raise ValueError(f"layer {i}: missing parameter {conv.kernel!r}")
                k = self.params[conv.kernel]
                if k.ndim != 4:
                    raise ValueError(f"layer {i}: kernel must be kH x kW x Cin x Cout")
                if conv.padding not in PADDINGS:
                    raise ValueError(f"layer {i}: unknown padding {conv.padding!r}")
                if layer.activation not in ACTIVATIONS:
                    raise ValueError(f"layer {i}: unknown activation {layer.activation!r}")
                sh, sw = conv.stride
                center = conv.center or kernels.default_center(k.shape[:2])
                if not all(0 <= c_ < s_ for c_, s_ in zip(center, k.shape[:2])):
                    raise ValueError(f"layer {i}: center {center} outside kernel")
                if isinstance(layer, Conv):
                    if c != k.shape[2]:
                        raise ValueError(f"layer {i}: expects {k.shape[2]} channels, got {c}")
                    if h % sh or w % sw:
                        raise ValueError(f"layer {i}: stride {conv.stride} does not divide {h}x{w}")
                    out = (h // sh, w // sw, k.shape[3])
                else:
                    if c != k.shape[3]:
                        raise ValueError(f"layer {i}: transpose expects {k.shape[3]} channels, got {c}")
                    out = (h * sh, w * sw, k.shape[2])
                if layer.bias is not None:
                    b = self.params.get(layer.bias)
                    if b is None or b.shape != (out[2],):
                        raise ValueError(f"layer {i}: bias {layer.bias!r} must have shape ({out[2]},)")
            elif isinstance(layer, PixelShuffle):
                if h % layer.r or w % layer.r:
                    raise ValueError(f"layer {i}: shuffle factor {layer.r} does not divide {h}x{w}")
                out = (h // layer.r, w // layer.r, c * layer.r ** 2)
            elif isinstance(layer, PixelUnshuffle):
                if c % layer.r ** 2:
                    raise ValueError(f"layer {i}: {c} channels not divisible by {layer.r ** 2}")
                out = (h * layer.r, w * layer.r, c // layer.r ** 2)
            elif isinstance(layer, Concat):
                if self.cond_shape is None:
                    raise ValueError(f"layer {i}: concat without a conditioning shape")
                if self.cond_shape[:2] != (h, w):
                    raise ValueError(f"layer {i}: conditioning {self.cond_shape} does not match {h}x{w}")
                used_concat = True
                out = (h, w, c + self.cond_shape[2])
            else:
                raise TypeError(f"unknown layer {layer!r}")
            shapes.append(out)
        if self.cond_shape is not None and not used_concat:
            raise ValueError("conditioning shape given but no Concat layer consumes it")
        return shapes

    @property
    def n_params(self):
        return sum(p.size for p in self.params.values())

    def copy(self):
        return ConvNet([type(l)(**asdict(l)) for l in self.layers],
                       {k: v.copy() for k, v in self.params.items()},
                       self.input_shape, self.cond_shape, self.skip)

    def _conv_args(self, i):
        layer = self.layers[i]
        conv = layer if isinstance(layer, Conv) else self._tied(i)
        k = self.params[conv.kernel]
        center = conv.center or kernels.default_center(k.shape[:2])
        return k, center, conv.padding == "periodic", tuple(conv.stride)

    def _check_batch(self, x, cond):
        x = as_tensor(x, "network input")
        if x.shape[1:] != self.input_shape:
            raise ValueError(f"network expects inputs of shape {self.input_shape}, got {x.shape[1:]}")
        if self.cond_shape is not None:
            if cond is None:
                raise ValueError("network needs a conditioning input")
            cond = as_tensor(cond, "conditioning input")
            if cond.shape != (x.shape[0],) + self.cond_shape:
                raise ValueError(f"conditioning must have shape (N, *{self.cond_shape}), got {cond.shape}")
        return x, cond

    def forward(self, x, cond=None, keep_cache=True):
        """Evaluate a batch; returns ``(output, cache)`` for :meth:`backward`.

        With ``keep_cache=False`` nothing is retained and the cache is ``None``.
        """
        x, cond = self._check_batch(x, cond)
        inputs, pres, outs = [], [], []
        h = x
        for i, layer in enumerate(self.layers):
            if keep_cache:
                inputs.append(h)
            if isinstance(layer, Conv):
                k, center, periodic, stride = self._conv_args(i)
                pre = _subsample(kernels.conv_forward(h, k, center, periodic), stride)
            elif isinstance(layer, ConvTranspose):
                k, center, periodic, stride = self._conv_args(i)
                pre = kernels.conv_adjoint(_upsample_zero(h, stride), k, center, periodic)
            elif isinstance(layer, PixelShuffle):
                pre = pixel_shuffle(h, layer.r)
            elif isinstance(layer, PixelUnshuffle):
                pre = pixel_unshuffle(h, layer.r)
            else:
                pre = np.concatenate([h, cond], axis=-1)
            if isinstance(layer, (Conv, ConvTranspose)):
                if layer.bias is not None:
                    pre = pre + self.params[layer.bias]
                h = _activate(layer.activation, pre)
            else:
                h = pre
            if keep_cache:
                pres.append(pre)
                outs.append(h)
        out = h + x if self.skip else h
        if not keep_cache:
            return out, None
        cache = _Cache(id(self), {k: v.copy() for k, v in self.params.items()},
                       inputs, pres, outs, x, cond)
        return out, cache

    def predict(self, x, cond=None):
        return self.forward(x, cond, keep_cache=False)[0]

    def backward(self, cache, grad_out):
        """Gradients of a scalar loss whose output gradient is ``grad_out``.

        Returns ``(param_grads, grad_input, grad_cond)``. Tied kernels sum
        the contributions of the Conv and ConvTranspose uses.
        """
        if cache.net_id != id(self) or cache.params.keys() != self.params.keys() or any(
                not np.array_equal(cache.params[k], v) for k, v in self.params.items()):
            raise StaleCacheError("cache does not match the current network parameters")
        g = np.asarray(grad_out, dtype=np.float64)
        if g.shape != (cache.x.shape[0],) + self.output_shape:
            raise ValueError(f"upstream gradient has shape {g.shape}, expected (N, *{self.output_shape})")
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        grad_cond = None
        grad_skip = g if self.skip else None
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            h_in, pre, out = cache.inputs[i], cache.pres[i], cache.outs[i]
            if isinstance(layer, (Conv, ConvTranspose)):
                g = _activation_grad(layer.activation, pre, out, g)
                if layer.bias is not None:
                    grads[layer.bias] += g.sum(axis=(0, 1, 2))
                k, center, periodic, stride = self._conv_args(i)
                kkey = self._kernel_of(i)
                if isinstance(layer, Conv):
                    g_full = _upsample_zero(g, stride)
                    grads[kkey] += kernels.conv_kernel_grad(h_in, g_full, k.shape[:2], center, periodic)
                    g = kernels.conv_adjoint(g_full, k, center, periodic)
                else:
                    up = _upsample_zero(h_in, stride)
                    grads[kkey] += kernels.conv_kernel_grad(g, up, k.shape[:2], center, periodic)
                    g = _subsample(kernels.conv_forward(g, k, center, periodic), stride)
            elif isinstance(layer, PixelShuffle):
                g = pixel_unshuffle(g, layer.r)
            elif isinstance(layer, PixelUnshuffle):
                g = pixel_shuffle(g, layer.r)
            else:
                c = h_in.shape[-1]
                gc = g[..., c:]
                grad_cond = gc if grad_cond is None else grad_cond + gc
                g = np.ascontiguousarray(g[..., :c])
        if grad_skip is not None:
            g = g + grad_skip
        return grads, g, grad_cond


def forward(net, x, cond=None):
    return net.forward(x, cond)


def backward(net, cache, upstream_grad):
    return net.backward(cache, upstream_grad)


def init_kernel(shape, rng):
    """Zero-mean Gaussian taps with std ``1 / sqrt(fan_in)``."""
    kh, kw, cin, _ = shape
    return rng.standard_normal(shape) / math.sqrt(kh * kw * cin)


# ---------------------------------------------------------------- optimizer


@dataclass
class TrainConfig:
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    batch_size: int = 32
    steps: int = 1000
    noise_sigma: float = 0.0
    seed: int = 0
    eps: float = 1e-8
    lr_final: float = None

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.lr_final is not None and not self.lr_final > 0:
            raise ValueError(f"final learning rate must be positive, got {self.lr_final}")
        if self.steps < 0:
            raise ValueError("step count must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")
        b1, b2 = self.betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ValueError("Adam decay rates must lie in [0, 1)")


def learning_rate(cfg, step):
    """Geometric decay from ``lr`` to ``lr_final`` over the run; constant without ``lr_final``."""
    if cfg.lr_final is None or cfg.steps <= 1:
        return cfg.lr
    return cfg.lr * (cfg.lr_final / cfg.lr) ** (step / (cfg.steps - 1))


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads, state, cfg, lr=None):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    lr = cfg.lr if lr is None else lr
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    b1, b2 = cfg.betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for key, g in grads.items():
        m = state.m.setdefault(key, np.zeros_like(g))
        v = state.v.setdefault(key, np.zeros_like(g))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[key] -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return params, state


# ------------------------------------------------------- inversion network


def _as_image_shape(signal_shape):
    signal_shape = tuple(signal_shape)
    if len(signal_shape) == 1:
        return (1, signal_shape[0], 1)
    if len(signal_shape) == 3:
        return signal_shape
    raise ValueError(f"signals must be (n,) or (H, W, C), got {signal_shape}")


@dataclass(eq=False)
class SymmetricConvNet:
    """``C eps = W^T (W eps)`` with the transpose cascade reusing W's kernels."""

    net: ConvNet
    signal_shape: tuple
    mode: str = "linear"

    def apply_batch(self, E):
        E = np.asarray(E, dtype=np.float64)
        n = E.shape[0]
        out = self.net.predict(E.reshape((n,) + self.net.input_shape))
        return out.reshape((n,) + tuple(self.signal_shape))

    def __call__(self, eps):
        return symmetric_apply(self, eps)


def build_symmetric_net(signal_shape, channels=(4, 4), kernel_size=4, mode="linear", rng=None):
    if mode not in ("linear", "relu"):
        raise ValueError(f"mode must be 'linear' or 'relu', got {mode!r}")
    rng = rng or RngStream(0)
    image_shape = _as_image_shape(signal_shape)
    ksize = (1, kernel_size) if len(signal_shape) == 1 else (kernel_size, kernel_size)
    chans = [image_shape[2]] + list(channels)
    params, layers = {}, []
    hidden = "relu" if mode == "relu" else "linear"
    for i in range(len(channels)):
        key = f"w{i}"
        params[key] = init_kernel(ksize + (chans[i], chans[i + 1]), rng)
        layers.append(Conv(key, activation=hidden))
    depth = len(layers)
    for j, i in enumerate(range(depth - 1, -1, -1)):
        last = j == depth - 1
        layers.append(ConvTranspose(i, activation="linear" if last else hidden))
    net = ConvNet(layers, params, image_shape)
    return SymmetricConvNet(net, tuple(signal_shape), mode)


def symmetric_apply(snet, eps):
    eps = as_tensor(eps, "inversion-net input")
    if eps.shape != tuple(snet.signal_shape):
        raise ValueError(f"inversion net expects shape {tuple(snet.signal_shape)}, got {eps.shape}")
    return snet.apply_batch(eps[None])[0]


def apply_B_inverse(A, beta, eps):
    """``(beta I + A A^T) eps`` using only the operator's forward and adjoint."""
    eps = as_tensor(eps, "B-inverse input")
    if eps.shape != A.output_shape:
        raise ValueError(f"expected shape {A.output_shape}, got {eps.shape}")
    return beta * eps + A.apply(A.adjoint(eps))


def _b_inverse_batch(A, beta, E):
    return beta * E + A.apply_batch(A.adjoint_batch(E))


def inversion_loss(snet, A, beta, E):
    """Monte-Carlo estimate of ``E||e - C B^-1 e||^2 + ||e - B^-1 C e||^2`` over rows of ``E``."""
    r1 = E - snet.apply_batch(_b_inverse_batch(A, beta, E))
    r2 = E - _b_inverse_batch(A, beta, snet.apply_batch(E))
    return float((np.sum(r1 * r1) + np.sum(r2 * r2)) / E.shape[0])


def _inversion_loss_and_grads(snet, A, beta, E):
    net = snet.net
    n = E.shape[0]
    shape = (n,) + net.input_shape
    binv_e = _b_inverse_batch(A, beta, E)
    out1, cache1 = net.forward(binv_e.reshape(shape))
    r1 = E - out1.reshape(E.shape)
    out2, cache2 = net.forward(E.reshape(shape))
    c_e = out2.reshape(E.shape)
    r2 = E - _b_inverse_batch(A, beta, c_e)
    loss = float((np.sum(r1 * r1) + np.sum(r2 * r2)) / n)
    g1, _, _ = net.backward(cache1, (-2.0 / n) * r1.reshape(shape))
    g2, _, _ = net.backward(cache2, (-2.0 / n) * _b_inverse_batch(A, beta, r2).reshape(shape))
    return loss, {k: g1[k] + g2[k] for k in g1}


class InversionTraining(NamedTuple):
    net: SymmetricConvNet
    initial_loss: float
    final_loss: float
    losses: list


def train_inversion_net(A, beta, cfg, channels=(4, 4), kernel_size=4, mode="linear", probe_size=64):
    """Fit ``C ~ (beta I + A A^T)^-1`` from Gaussian noise alone.

    ``initial_loss``/``final_loss`` are measured on a fixed probe batch
    drawn independently from the training noise.
    """
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    root = RngStream(cfg.seed)
    snet = build_symmetric_net(A.output_shape, channels, kernel_size, mode, rng=root.spawn(1))
    probe = root.spawn(2).standard_normal((probe_size,) + A.output_shape)
    noise = root.spawn(3)
    state = AdamState()
    initial = inversion_loss(snet, A, beta, probe)
    losses = []
    for step in range(cfg.steps):
        E = noise.standard_normal((cfg.batch_size,) + A.output_shape)
        loss, grads = _inversion_loss_and_grads(snet, A, beta, E)
        if not math.isfinite(loss):
            raise TrainingDivergedError(f"inversion-net loss became non-finite at step {step}")
        losses.append(loss)
        adam_step(snet.net.params, grads, state, cfg, learning_rate(cfg, step))
    final = inversion_loss(snet, A, beta, probe)
    if not math.isfinite(final):
        raise TrainingDivergedError(f"inversion-net loss became non-finite after step {cfg.steps}")
    return InversionTraining(snet, initial, final, losses)


def materialize_symmetric(snet):
    m = math.prod(snet.signal_shape)
    basis = np.eye(m).reshape((m,) + tuple(snet.signal_shape))
    return snet.apply_batch(basis).reshape(m, m).T.copy()


def inversion_error(snet, A, beta):
    """Relative Frobenius distance between the materialized net and dense ``B``."""
    G = gram_outer(A)
    G[np.diag_indices_from(G)] += beta
    B = np.linalg.inv(G)
    C = materialize_symmetric(snet)
    return float(np.linalg.norm(C - B) / np.linalg.norm(B))


class LearnedInverse:
    """``K rhs = beta^-1 (rhs - A^T C A rhs)``: one pass, no inner iterations.

    ``C`` is a :class:`SymmetricConvNet` or any callable mapping a
    measurement-shaped array to one of the same shape.
    """

    def __init__(self, A, beta, net):
        if not beta > 0:
            raise ValueError(f"beta must be positive, got {beta}")
        if isinstance(net, SymmetricConvNet) and tuple(net.signal_shape) != A.output_shape:
            raise ValueError(f"inversion net works on {tuple(net.signal_shape)}, operator outputs {A.output_shape}")
        self.A, self.beta, self.net = A, float(beta), net

    def __call__(self, rhs):
        rhs = np.asarray(rhs, dtype=np.float64)
        if rhs.shape != self.A.input_shape:
            raise ValueError(f"right-hand side must have shape {self.A.input_shape}, got {rhs.shape}")
        # batch primitives skip per-call validation; the ADMM loop checks finiteness
        Ar = self.A._forward(rhs[None])
        if isinstance(self.net, SymmetricConvNet):
            c = self.net.apply_batch(Ar)
        else:
            c = np.asarray(self.net(Ar[0]), dtype=np.float64)[None]
        return (rhs - self.A._adjoint(c)[0]) / self.beta


def build_learned_K(A, beta, net):
    return LearnedInverse(A, beta, net)


# -------------------------------------------------- conditional denoiser


def build_cpsdae(image_shape, cond_shape=None, channels=(16, 16, 16), kernel_size=4,
                 skip=True, rng=None):
    """Reduced conditional pixel-shuffling denoiser.

    pixel shuffle -> conv/relu x2 -> concat(y) -> conv/relu ... -> linear conv
    -> pixel unshuffle, plus an identity skip. The shuffle factor is the
    image-to-measurement scale; without a usable ``cond_shape`` the net is
    unconditioned.
    """
    rng = rng or RngStream(0)
    H, W, C = image_shape
    r = 1
    if cond_shape is not None:
        hy, wy, _ = cond_shape
        if H % hy == 0 and W % wy == 0 and H // hy == W // wy:
            r = H // hy
        else:
            cond_shape = None
    if len(channels) < 2:
        raise ValueError("denoiser needs at least two hidden widths")
    split = 2 if len(channels) > 2 else 1
    width = C * r * r
    layers, params = [], {}
    if r > 1:
        layers.append(PixelShuffle(r))
    ksize = (kernel_size, kernel_size)
    prev = width
    widths = list(channels) + [width]
    for i, ch in enumerate(widths):
        if i == split and cond_shape is not None:
            layers.append(Concat())
            prev += cond_shape[2]
        last = i == len(widths) - 1
        params[f"k{i}"] = init_kernel(ksize + (prev, ch), rng)
        if last:
            params[f"k{i}"] *= 0.1
        params[f"b{i}"] = np.zeros(ch)
        layers.append(Conv(f"k{i}", padding="same", activation="linear" if last else "relu", bias=f"b{i}"))
        prev = ch
    if r > 1:
        layers.append(PixelUnshuffle(r))
    return ConvNet(layers, params, image_shape, cond_shape, skip=skip)


def _corrupt(X, sigma, rng):
    """Add Gaussian noise; a ``(lo, hi)`` pair draws one level per sample uniformly."""
    if np.ndim(sigma) == 0:
        if sigma < 0:
            raise ValueError("corruption sigma must be non-negative")
        if sigma == 0:
            return X.copy()
        return X + sigma * rng.standard_normal(X.shape)
    lo, hi = sigma
    if not 0 <= lo <= hi:
        raise ValueError(f"corruption range must satisfy 0 <= lo <= hi, got {sigma}")
    levels = lo + (hi - lo) * rng.uniform(X.shape[0])
    return X + levels.reshape((-1,) + (1,) * (X.ndim - 1)) * rng.standard_normal(X.shape)


class DenoiserTraining(NamedTuple):
    net: ConvNet
    heldout_nmse: float
    corrupted_nmse: float
    losses: list


def evaluate_denoiser(net, X, Y, sigma, seed=0, zero_cond=False):
    """Mean per-sample NMSE of ``net(x + n, y)`` and of ``x + n`` against ``x``."""
    X = np.asarray(X, dtype=np.float64)
    noisy = _corrupt(X, sigma, RngStream(seed, 7))
    cond = None
    if net.cond_shape is not None:
        cond = np.zeros((X.shape[0],) + net.cond_shape) if zero_cond else np.asarray(Y, dtype=np.float64)
    out = net.predict(noisy, cond)
    rec = float(np.mean([nmse(o, x) for o, x in zip(out, X)]))
    base = float(np.mean([nmse(v, x) for v, x in zip(noisy, X)]))
    return rec, base


def train_cdae(pairs, sigma, cfg, net=None, heldout=None, **build):
    """Train ``G(x + n, y) -> x`` by minimizing the mean squared reconstruction error.

    ``pairs``/``heldout`` are ``(X, Y)`` stacks of ground truth and
    measurements. Without ``heldout`` the held-out metrics are computed on
    the training pairs.
    """
    X, Y = (np.asarray(a, dtype=np.float64) for a in pairs)
    if X.shape[0] == 0:
        raise ValueError("training set is empty")
    if X.shape[0] != Y.shape[0]:
        raise ValueError("ground truth and measurement counts differ")
    root = RngStream(cfg.seed)
    if net is None:
        net = build_cpsdae(X.shape[1:], Y.shape[1:], rng=root.spawn(1), **build)
    state = AdamState()
    picker = root.spawn(2)
    noise = root.spawn(3)
    losses = []
    n = X.shape[0]
    for step in range(cfg.steps):
        idx = (picker.raw(cfg.batch_size) % np.uint64(n)).astype(np.intp)
        xb = X[idx]
        cond = Y[idx] if net.cond_shape is not None else None
        out, cache = net.forward(_corrupt(xb, sigma, noise), cond)
        diff = out - xb
        loss = float(np.sum(diff * diff) / len(idx))
        if not math.isfinite(loss):
            raise TrainingDivergedError(f"denoiser loss became non-finite at step {step}")
        losses.append(loss)
        grads, _, _ = net.backward(cache, (2.0 / len(idx)) * diff)
        adam_step(net.params, grads, state, cfg, learning_rate(cfg, step))
    hx, hy = heldout if heldout is not None else (X, Y)
    rec, base = evaluate_denoiser(net, hx, hy, sigma, seed=cfg.seed)
    return DenoiserTraining(net, rec, base, losses)


# ------------------------------------------------------------- weight I/O


def _layer_record(layer):
    rec = asdict(layer)
    rec["type"] = type(layer).__name__
    return rec


def save_net(path, net, meta=None):
    """Write a :class:`ConvNet` (or :class:`SymmetricConvNet`) as IADN.

    Every parameter array is stored once; ConvTranspose layers appear in the
    share table as ``(layer index, tensor index)`` of their tied kernel.
    """
    extra = dict(meta or {})
    if isinstance(net, SymmetricConvNet):
        extra.setdefault("signal_shape", list(net.signal_shape))
        extra.setdefault("mode", net.mode)
        extra.setdefault("kind", "symmetric")
        net = net.net
    keys = list(net.params)
    index = {k: i for i, k in enumerate(keys)}
    shares = [(i, index[net._kernel_of(i)]) for i, l in enumerate(net.layers) if isinstance(l, ConvTranspose)]
    arch = {
        "layers": [_layer_record(l) for l in net.layers],
        "params": keys,
        "input_shape": list(net.input_shape),
        "cond_shape": None if net.cond_shape is None else list(net.cond_shape),
        "skip": net.skip,
    }
    extra["architecture"] = arch
    iadn.write(path, [net.params[k] for k in keys], shares, extra)


def load_net(path):
    """Inverse of :func:`save_net`; returns ``(net, meta)``."""
    tensors, shares, meta = iadn.read(path)
    arch = meta.get("architecture")
    if arch is None:
        raise iadn.IadnFormatError("file holds no network architecture", 0)
    keys = arch["params"]
    if len(keys) != len(tensors):
        raise iadn.IadnFormatError("parameter table does not match tensor count", 0)
    params = dict(zip(keys, tensors))
    layers = []
    for rec in arch["layers"]:
        rec = dict(rec)
        cls = LAYER_TYPES[rec.pop("type")]
        for name in ("stride", "center"):
            if rec.get(name) is not None:
                rec[name] = tuple(rec[name])
        layers.append(cls(**rec))
    net = ConvNet(layers, params, arch["input_shape"], arch["cond_shape"], arch["skip"])
    for slot, idx in shares:
        if net._kernel_of(slot) != keys[idx]:
            raise iadn.IadnFormatError(f"share entry for layer {slot} disagrees with architecture", 0)
    if meta.get("kind") == "symmetric":
        return SymmetricConvNet(net, tuple(meta["signal_shape"]), meta.get("mode", "linear")), meta
    return net, meta


def check_inverter_matches(meta, A, beta):
    """Raise if saved inverter metadata was trained for another ``(A, beta)``."""
    op = meta.get("operator")
    if op is None or not same_operator(operator_from_dict(op), A):
        raise ValueError("inversion net was trained for a different forward operator")
    if not math.isclose(float(meta.get("beta", float("nan"))), beta, rel_tol=1e-12):
        raise ValueError(f"inversion net was trained for beta={meta.get('beta')}, not {beta}")
