"""Small 1-D convolutional network for viewing-angle prediction.

The input is a 10-step window of (sin, cos) pairs of one angle, laid
out as a length-10 sequence with 2 channels.  Three valid convolutions
with kernel 3 (2->32, 32->64, 64->64 channels, ReLU) shrink the
sequence 10 -> 8 -> 6 -> 4; a dense layer maps the flattened 64x4
features to the 2-component encoded prediction through tanh.  Training
is mini-batch Adam on the MSE of the encoded output.

Implemented from scratch on numpy; the convolution inner loops go
through the kernel backends (see _kernels), using the compiled loops
for small batches and the BLAS-backed einsum path for large ones (the
crossover is measured in benchmarks/bench_kernels.py).
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from ._kernels import _pure

# Batches up to this size run the compiled per-element loops; larger
# batches run the einsum/BLAS path, which wins past ~16 samples.
_SMALL_BATCH = 16

_LAYER_DIMS = {
    "w1": (32, 2, 3),
    "b1": (32,),
    "w2": (64, 32, 3),
    "b2": (64,),
    "w3": (64, 64, 3),
    "b3": (64,),
    "wd": (2, 256),
    "bd": (2,),
}

CHECKPOINT_VERSION = 1


def _conv_forward(x, w, b):
    if x.shape[0] <= _SMALL_BATCH:
        return _kernels.conv1d_forward(x, w, b)
    return _pure.conv1d_forward(x, w, b)


def _conv_backward(x, w, grad_out):
    if x.shape[0] <= _SMALL_BATCH:
        return _kernels.conv1d_backward(x, w, grad_out)
    return _pure.conv1d_backward(x, w, grad_out)


@dataclass(frozen=True)
class CnnModel:
    """Parameters of the three conv layers and the dense head."""

    w1: np.ndarray = field(repr=False)
    b1: np.ndarray = field(repr=False)
    w2: np.ndarray = field(repr=False)
    b2: np.ndarray = field(repr=False)
    w3: np.ndarray = field(repr=False)
    b3: np.ndarray = field(repr=False)
    wd: np.ndarray = field(repr=False)
    bd: np.ndarray = field(repr=False)

    def __post_init__(self):
        for name, dims in _LAYER_DIMS.items():
            arr = np.ascontiguousarray(getattr(self, name), dtype=float)
            if arr.shape != dims:
                raise ValueError(f"{name} must have shape {dims}, got {arr.shape}")
            object.__setattr__(self, name, arr)

    def params(self):
        return {name: getattr(self, name) for name in _LAYER_DIMS}


@dataclass(frozen=True)
class TrainConfig:
    """Training recipe: Adam moment decays 0.8/0.999, linear lr decay
    from lr_start to lr_end over the first decay_epochs, then constant."""

    batch_size: int = 128
    epochs: int = 200
    beta1: float = 0.8
    beta2: float = 0.999
    lr_start: float = 1e-3
    lr_end: float = 1e-4
    decay_epochs: int = 100
    rng_seed: int = 0

    def __post_init__(self):
        positive = {
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "lr_start": self.lr_start,
            "lr_end": self.lr_end,
            "decay_epochs": self.decay_epochs,
        }
        for name, value in positive.items():
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value}")

    def learning_rate(self, epoch):
        if epoch >= self.decay_epochs:
            return self.lr_end
        t = epoch / max(self.decay_epochs - 1, 1)
        return self.lr_start + (self.lr_end - self.lr_start) * t


def init_cnn(seed):
    """He-style uniform fan-in initialization, biases included.

    Biases draw from the same fan-in-scaled uniform as their layer's
    weights, so pre-activations sit away from the ReLU kink even for
    all-zero input (keeps the zero-input regime linear).
    """
    rng = np.random.default_rng(seed)
    params = {}
    for name, dims in _LAYER_DIMS.items():
        wname = name if name.startswith("w") else "w" + name[1]
        fan_in = int(np.prod(_LAYER_DIMS[wname][1:]))
        limit = math.sqrt(6.0 / fan_in)
        params[name] = rng.uniform(-limit, limit, size=dims)
    return CnnModel(**params)


def cnn_forward(model, x, cache=False):
    """Forward pass; x is (batch, 2, 10), returns (batch, 2) in (-1, 1)."""
    x = np.ascontiguousarray(x, dtype=float)
    if x.ndim != 3 or x.shape[1:] != (2, 10):
        raise ValueError(f"input must be (batch, 2, 10), got {x.shape}")
    z1 = _conv_forward(x, model.w1, model.b1)
    a1 = np.maximum(z1, 0.0)
    z2 = _conv_forward(a1, model.w2, model.b2)
    a2 = np.maximum(z2, 0.0)
    z3 = _conv_forward(a2, model.w3, model.b3)
    a3 = np.maximum(z3, 0.0)
    flat = a3.reshape(x.shape[0], -1)
    out = np.tanh(flat @ model.wd.T + model.bd)
    if not cache:
        return out
    return out, {"x": x, "z1": z1, "a1": a1, "z2": z2, "a2": a2, "z3": z3,
                 "a3": a3, "flat": flat, "out": out}


def mse_loss_and_gradients(model, x, target):
    """MSE loss over the batch and gradients for every parameter."""
    target = np.asarray(target, dtype=float)
    out, cache = cnn_forward(model, x, cache=True)
    diff = out - target
    loss = float(np.mean(diff**2))
    g_out = 2.0 * diff / diff.size
    g_pre = g_out * (1.0 - cache["out"] ** 2)
    grads = {}
    grads["wd"] = g_pre.T @ cache["flat"]
    grads["bd"] = g_pre.sum(axis=0)
    g_flat = g_pre @ model.wd
    g_a3 = g_flat.reshape(cache["a3"].shape)
    g_z3 = g_a3 * (cache["z3"] > 0.0)
    g_a2, grads["w3"], grads["b3"] = _conv_backward(cache["a2"], model.w3, g_z3)
    g_z2 = g_a2 * (cache["z2"] > 0.0)
    g_a1, grads["w2"], grads["b2"] = _conv_backward(cache["a1"], model.w2, g_z2)
    g_z1 = g_a1 * (cache["z1"] > 0.0)
    _, grads["w1"], grads["b1"] = _conv_backward(cache["x"], model.w1, g_z1)
    return loss, grads


def cnn_train(dataset, config):
    """Train a model on (inputs, targets) with mini-batch Adam.

    dataset: (x, t) with x (n, 2, 10) and t (n, 2).  Returns the
    trained model and the per-epoch mean training loss.
    """
    x, t = dataset
    x = np.ascontiguousarray(x, dtype=float)
    t = np.ascontiguousarray(t, dtype=float)
    if x.shape[0] == 0:
        raise ValueError("training dataset is empty")
    if x.shape[0] != t.shape[0]:
        raise ValueError("inputs and targets disagree in length")
    rng = np.random.default_rng(config.rng_seed)
    model = init_cnn(config.rng_seed)
    params = {k: v.copy() for k, v in model.params().items()}
    moment1 = {k: np.zeros_like(v) for k, v in params.items()}
    moment2 = {k: np.zeros_like(v) for k, v in params.items()}
    losses = []
    step = 0
    n = x.shape[0]
    for epoch in range(config.epochs):
        lr = config.learning_rate(epoch)
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            working = CnnModel(**params)
            loss, grads = mse_loss_and_gradients(working, x[batch], t[batch])
            if not math.isfinite(loss):
                raise RuntimeError(
                    f"training loss became non-finite (lr={lr}, epoch={epoch}, "
                    f"batch_index={start // config.batch_size})"
                )
            epoch_loss += loss * batch.size
            step += 1
            bc1 = 1.0 - config.beta1**step
            bc2 = 1.0 - config.beta2**step
            for key, grad in grads.items():
                moment1[key] = config.beta1 * moment1[key] + (1.0 - config.beta1) * grad
                moment2[key] = config.beta2 * moment2[key] + (1.0 - config.beta2) * grad**2
                update = (moment1[key] / bc1) / (np.sqrt(moment2[key] / bc2) + 1e-8)
                params[key] = params[key] - lr * update
        losses.append(epoch_loss / n)
    return CnnModel(**params), losses


def numeric_param_gradient(model, sample, name, index, epsilon=1e-4):
    """Central finite difference of the loss w.r.t. one parameter."""
    x, t = sample
    x = np.asarray(x, dtype=float).reshape(1, 2, 10)
    t = np.asarray(t, dtype=float).reshape(1, 2)

    def loss_at(value):
        arr = model.params()[name].copy()
        arr[index] = value
        probe = replace(model, **{name: arr})
        out = cnn_forward(probe, x)
        return float(np.mean((out - t) ** 2))

    base = model.params()[name][index]
    return (loss_at(base + epsilon) - loss_at(base - epsilon)) / (2.0 * epsilon)


def gradient_check(model, sample, epsilon=1e-4, num_params=200, seed=0):
    """Max relative gap between analytic and numeric parameter gradients.

    Samples at least num_params parameter coordinates across all
    layers.  The relative gap is |a - n| / max(|a| + |n|, 1e-6).
    """
    x, t = sample
    x = np.asarray(x, dtype=float).reshape(1, 2, 10)
    t = np.asarray(t, dtype=float).reshape(1, 2)
    _, grads = mse_loss_and_gradients(model, x, t)
    rng = np.random.default_rng(seed)
    names = list(_LAYER_DIMS)
    sizes = np.array([int(np.prod(_LAYER_DIMS[n])) for n in names])
    total = int(sizes.sum())
    count = min(max(num_params, 200), total)
    chosen = rng.choice(total, size=count, replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for flat_idx in chosen:
        layer = int(np.searchsorted(offsets, flat_idx, side="right")) - 1
        name = names[layer]
        index = np.unravel_index(int(flat_idx - offsets[layer]), _LAYER_DIMS[name])
        numeric = numeric_param_gradient(model, (x, t), name, index, epsilon)
        analytic = float(grads[name][index])
        gap = abs(analytic - numeric) / max(abs(analytic) + abs(numeric), 1e-6)
        worst = max(worst, gap)
    return worst


def save_model(model, path, angle=None, horizon=None):
    """Checkpoint: npz archive with a format version and layer arrays."""
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "angle": angle if angle is not None else "",
        "horizon": float(horizon) if horizon is not None else float("nan"),
    }
    np.savez(path, **meta, **model.params())


def load_model(path):
    """Load a checkpoint written by save_model; returns (model, meta)."""
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        params = {name: data[name] for name in _LAYER_DIMS}
        meta = {"angle": str(data["angle"]), "horizon": float(data["horizon"])}
    return CnnModel(**params), meta
