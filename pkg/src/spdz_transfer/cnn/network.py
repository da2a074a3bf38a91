"""A small NHWC convolutional network with hand-written backpropagation.

Layers are plain descriptors; :func:`forward` caches what :func:`backward`
needs.  Pooling layers can be *hooks*: the pooled map is standardized per
channel over the batch and then handed to a transfer callback, whose output
continues through the network.  The callback sees and returns float arrays,
so the network does not know whether mixing happens in the clear or on
secret shares.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatch

BN_EPS = 1e-5


@dataclass(frozen=True)
class Conv:
    name: str
    kernel: int
    out_channels: int
    padding: int = 0
    relu: bool = True


@dataclass(frozen=True)
class Pool:
    name: str
    window: int = 2


@dataclass(frozen=True)
class Full:
    name: str
    units: int
    relu: bool = False


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    layers: tuple
    input_shape: tuple = (28, 28, 1)
    hooks: tuple = ()
    dropout_keep: float = 1.0

    def __post_init__(self):
        names = [layer.name for layer in self.layers]
        for h in self.hooks:
            if h not in names:
                raise ValueError(f"hook {h!r} is not a layer of {self.name}")
            if not isinstance(self.layers[names.index(h)], Pool):
                raise ValueError(f"hook {h!r} must follow a pooling layer")
        if not 0 < self.dropout_keep <= 1:
            raise ValueError("dropout keep probability must be in (0, 1]")
        self.shapes()

    def with_hooks(self, hooks) -> "NetworkSpec":
        return NetworkSpec(self.name, self.layers, self.input_shape, tuple(hooks), self.dropout_keep)

    def with_dropout(self, keep: float) -> "NetworkSpec":
        return NetworkSpec(self.name, self.layers, self.input_shape, self.hooks, keep)

    def shapes(self) -> list[tuple]:
        """Output shape of every layer (per sample); raises on an inconsistent chain."""
        shape = tuple(self.input_shape)
        out = []
        for layer in self.layers:
            if isinstance(layer, Conv):
                h, w, _ = shape
                ho = h + 2 * layer.padding - layer.kernel + 1
                wo = w + 2 * layer.padding - layer.kernel + 1
                if ho < 1 or wo < 1:
                    raise ShapeMismatch(f"{layer.name}: kernel {layer.kernel} does not fit input {shape}")
                shape = (ho, wo, layer.out_channels)
            elif isinstance(layer, Pool):
                h, w, c = shape
                if h % layer.window or w % layer.window:
                    raise ShapeMismatch(f"{layer.name}: window {layer.window} does not tile input {shape}")
                shape = (h // layer.window, w // layer.window, c)
            elif isinstance(layer, Full):
                shape = (layer.units,)
            else:
                raise TypeError(f"unknown layer {layer!r}")
            out.append(shape)
        return out

    def hook_shapes(self) -> dict[str, tuple]:
        shapes = dict(zip((layer.name for layer in self.layers), self.shapes()))
        return {h: shapes[h] for h in self.hooks}

    @property
    def num_classes(self) -> int:
        return self.shapes()[-1][0]

    def param_count(self) -> int:
        return sum(w.size + b.size for w, b in init_params(self, np.random.default_rng(0)).values())


def network_i(hooks=("pool2", "pool4"), dropout_keep: float = 0.8) -> NetworkSpec:
    """LeNet-style: 24x24x6 -> 12x12x6 -> 8x8x12 -> 4x4x12 -> 10."""
    layers = (Conv("conv1", 5, 6), Pool("pool2"), Conv("conv3", 5, 12), Pool("pool4"), Full("full5", 10))
    return NetworkSpec("I", layers, hooks=tuple(hooks), dropout_keep=dropout_keep)


def network_ii(hooks=("pool2",), dropout_keep: float = 0.8) -> NetworkSpec:
    layers = (Conv("conv1", 5, 20), Pool("pool2"), Full("full3", 100, relu=True), Full("output", 10))
    return NetworkSpec("II", layers, hooks=tuple(hooks), dropout_keep=dropout_keep)


def network_iii(hooks=("pool2", "pool4"), dropout_keep: float = 0.8) -> NetworkSpec:
    layers = (
        Conv("conv1", 5, 6, padding=2),
        Pool("pool2"),
        Conv("conv3", 5, 16),
        Pool("pool4"),
        Conv("conv5", 5, 120),
        Full("full6", 84, relu=True),
        Full("output", 10),
    )
    return NetworkSpec("III", layers, hooks=tuple(hooks), dropout_keep=dropout_keep)


NETWORKS = {"I": network_i, "II": network_ii, "III": network_iii}


def get_network(name: str, hooks=None, dropout_keep: float = 0.8) -> NetworkSpec:
    try:
        factory = NETWORKS[name]
    except KeyError:
        raise ValueError(f"unknown network {name!r}; choose from {sorted(NETWORKS)}") from None
    return factory(dropout_keep=dropout_keep) if hooks is None else factory(hooks=tuple(hooks), dropout_keep=dropout_keep)


Params = dict[str, tuple[np.ndarray, np.ndarray]]


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> Params:
    """He-uniform weights, zero biases."""
    params = {}
    shape = tuple(spec.input_shape)
    for layer, out_shape in zip(spec.layers, spec.shapes()):
        if isinstance(layer, Conv):
            fan_in = layer.kernel * layer.kernel * shape[2]
            limit = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-limit, limit, (layer.kernel, layer.kernel, shape[2], layer.out_channels))
            params[layer.name] = (w, np.zeros(layer.out_channels))
        elif isinstance(layer, Full):
            fan_in = int(np.prod(shape))
            limit = np.sqrt(6.0 / fan_in)
            params[layer.name] = (rng.uniform(-limit, limit, (fan_in, layer.units)), np.zeros(layer.units))
        shape = out_shape
    return params


def zero_params(spec: NetworkSpec) -> Params:
    return {k: (np.zeros_like(w), np.zeros_like(b)) for k, (w, b) in init_params(spec, np.random.default_rng(0)).items()}


# -- layer kernels ----------------------------------------------------------


def conv_forward(x, w, b, padding):
    k = w.shape[0]
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    win = sliding_window_view(x, (k, k), axis=(1, 2))  # N, Ho, Wo, C, k, k
    n, ho, wo = win.shape[:3]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, -1)
    out = cols @ w.reshape(-1, w.shape[3]) + b
    return out.reshape(n, ho, wo, -1), (cols, x.shape)


def conv_backward(dout, w, cache, padding):
    cols, xshape = cache
    k, cout = w.shape[0], w.shape[3]
    n, ho, wo, _ = dout.shape
    d2 = dout.reshape(-1, cout)
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(-1, cout).T).reshape(n, ho, wo, k, k, xshape[3])
    dx = np.zeros(xshape)
    for i in range(k):
        for j in range(k):
            dx[:, i:i + ho, j:j + wo, :] += dcols[:, :, :, i, j, :]
    if padding:
        dx = dx[:, padding:-padding, padding:-padding, :]
    return dx, dw, db


def pool_forward(x, window):
    n, h, w, c = x.shape
    blocks = x.reshape(n, h // window, window, w // window, window, c).transpose(0, 1, 3, 5, 2, 4)
    blocks = blocks.reshape(n, h // window, w // window, c, window * window)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, (arg, x.shape)


def pool_backward(dout, window, cache):
    """Route each gradient to the (first) argmax position of its window only."""
    arg, (n, h, w, c) = cache
    blocks = np.zeros(dout.shape + (window * window,))
    np.put_along_axis(blocks, arg[..., None], dout[..., None], axis=-1)
    blocks = blocks.reshape(n, h // window, w // window, c, window, window).transpose(0, 1, 4, 2, 5, 3)
    return blocks.reshape(n, h, w, c)


def standardize_forward(x):
    axes = tuple(range(x.ndim - 1))
    mean = x.mean(axis=axes)
    inv_std = 1.0 / np.sqrt(x.var(axis=axes) + BN_EPS)
    y = (x - mean) * inv_std
    return y, (y, inv_std)


def standardize_backward(dy, cache):
    y, inv_std = cache
    axes = tuple(range(dy.ndim - 1))
    m = np.prod([dy.shape[a] for a in axes])
    return inv_std / m * (m * dy - dy.sum(axis=axes) - y * (dy * y).sum(axis=axes))


def softmax_cross_entropy(logits, labels):
    """Mean loss over the batch and its gradient w.r.t. the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


# -- network passes ---------------------------------------------------------

HookFn = Callable[[str, np.ndarray], np.ndarray]


@dataclass
class ForwardResult:
    logits: np.ndarray
    activations: dict[str, np.ndarray]
    hook_inputs: dict[str, np.ndarray]
    cache: list = field(repr=False, default_factory=list)


def forward(
    spec: NetworkSpec,
    params: Params,
    x: np.ndarray,
    hook_fn: HookFn | None = None,
    train: bool = False,
    dropout_rng: np.random.Generator | None = None,
) -> ForwardResult:
    """Run a batch ``x`` of shape (N, H, W, C) through the network.

    At each hook the standardized pooled map goes through ``hook_fn``
    (identity when None).  Dropout on the input of the first fully connected
    layer is applied only when ``train`` is set.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1:] != tuple(spec.input_shape):
        raise ShapeMismatch(f"input shape {x.shape[1:]} does not match {spec.input_shape}")
    cache = []
    acts, hook_inputs = {}, {}
    first_full = True
    for layer in spec.layers:
        if isinstance(layer, Conv):
            w, b = params[layer.name]
            x, c = conv_forward(x, w, b, layer.padding)
            mask = None
            if layer.relu:
                mask = x > 0
                x = x * mask
            cache.append((c, mask))
        elif isinstance(layer, Pool):
            x, c = pool_forward(x, layer.window)
            bn = None
            if layer.name in spec.hooks:
                x, bn = standardize_forward(x)
                hook_inputs[layer.name] = x
                if hook_fn is not None:
                    x = np.asarray(hook_fn(layer.name, x), dtype=np.float64)
            cache.append((c, bn))
        elif isinstance(layer, Full):
            drop = None
            if first_full:
                first_full = False
                x = x.reshape(x.shape[0], -1)
                if train and spec.dropout_keep < 1.0:
                    if dropout_rng is None:
                        raise ValueError("training with dropout needs a dropout_rng")
                    drop = (dropout_rng.random(x.shape) < spec.dropout_keep) / spec.dropout_keep
                    x = x * drop
            w, b = params[layer.name]
            inp = x
            x = x @ w + b
            mask = None
            if layer.relu:
                mask = x > 0
                x = x * mask
            cache.append((inp, drop, mask))
        acts[layer.name] = x
    return ForwardResult(x, acts, hook_inputs, cache)


def backward(
    spec: NetworkSpec,
    params: Params,
    fwd: ForwardResult,
    dlogits: np.ndarray,
    hook_grad_fn: HookFn | None = None,
) -> tuple[Params, dict[str, np.ndarray]]:
    """Backpropagate ``dlogits``.

    ``hook_grad_fn`` maps the gradient w.r.t. a hook's mixed output to the
    gradient w.r.t. its input (identity when None).  Returns parameter
    gradients and the gradients w.r.t. each hook's mixed output.
    """
    grads: Params = {}
    hook_grads = {}
    d = dlogits
    layers = list(spec.layers)
    first_full_idx = next(i for i, layer in enumerate(layers) if isinstance(layer, Full))
    pre_full_shape = spec.shapes()[first_full_idx - 1] if first_full_idx > 0 else spec.input_shape
    for idx in range(len(layers) - 1, -1, -1):
        layer = layers[idx]
        entry = fwd.cache[idx]
        if isinstance(layer, Full):
            inp, drop, mask = entry
            w, _ = params[layer.name]
            if mask is not None:
                d = d * mask
            grads[layer.name] = (inp.T @ d, d.sum(axis=0))
            d = d @ w.T
            if idx == first_full_idx:
                if drop is not None:
                    d = d * drop
                d = d.reshape((d.shape[0],) + tuple(pre_full_shape))
        elif isinstance(layer, Pool):
            c, bn = entry
            if bn is not None:
                hook_grads[layer.name] = d
                if hook_grad_fn is not None:
                    d = np.asarray(hook_grad_fn(layer.name, d), dtype=np.float64)
                d = standardize_backward(d, bn)
            d = pool_backward(d, layer.window, c)
        elif isinstance(layer, Conv):
            c, mask = entry
            if mask is not None:
                d = d * mask
            w, _ = params[layer.name]
            d, dw, db = conv_backward(d, w, c, layer.padding)
            grads[layer.name] = (dw, db)
    return grads, hook_grads


def predict(spec: NetworkSpec, params: Params, x: np.ndarray, hook_fn: HookFn | None = None) -> np.ndarray:
    return forward(spec, params, x, hook_fn=hook_fn).logits.argmax(axis=1)


def sgd_step(params: Params, grads: Params, lr: float) -> Params:
    return {k: (w - lr * grads[k][0], b - lr * grads[k][1]) for k, (w, b) in params.items()}


def params_finite(params: Params) -> bool:
    return all(np.all(np.isfinite(w)) and np.all(np.isfinite(b)) for w, b in params.values())


def accuracy(predictions: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        raise ValueError("cannot compute accuracy on an empty test set")
    return float(np.mean(np.asarray(predictions) == np.asarray(labels)))


def evaluate(spec: NetworkSpec, params: Params, x: np.ndarray, y: np.ndarray, batch_size: int = 128) -> float:
    """Fraction of argmax-correct predictions on a held-out set (no transfer)."""
    if len(y) == 0:
        raise ValueError("cannot evaluate on an empty test set")
    preds = [predict(spec, params, x[i:i + batch_size]) for i in range(0, len(y), batch_size)]
    return accuracy(np.concatenate(preds), y)
