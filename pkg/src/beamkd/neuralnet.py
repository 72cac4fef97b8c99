"""Minimal fully connected network engine with explicit backpropagation.

Dense layers with ReLU (or tanh) hidden activations and a linear output
layer producing logits; softmax/cross-entropy utilities; Adam with bias
correction; and a deterministic minibatch training loop. All math is
float64 numpy and every gradient is an exact analytic expression
(finite-difference checked in the test suite).
"""

from dataclasses import dataclass, field

import numpy as np

from . import fileio
from .dataset import LabeledDataset

MODEL_FORMAT_VERSION = 1

LOG_CLAMP = 1e-12

_ACTIVATIONS = {
    "relu": (lambda z: np.maximum(z, 0.0), lambda z: (z > 0.0).astype(np.float64)),
    "tanh": (np.tanh, lambda z: 1.0 - np.tanh(z) ** 2),
}


@dataclass(frozen=True)
class MlpArch:
    """Layer widths [d_in, h_1, ..., h_L, n_classes] plus the hidden nonlinearity."""

    layer_dims: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        if len(self.layer_dims) < 2:
            raise ValueError(f"arch needs at least [d_in, d_out], got {self.layer_dims}")
        if any(d < 1 for d in self.layer_dims):
            raise ValueError(f"all layer dims must be >= 1, got {self.layer_dims}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(
                f"unknown activation {self.activation!r}; choose from {sorted(_ACTIVATIONS)}"
            )

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def n_hidden(self) -> int:
        return self.n_layers - 1

    @property
    def d_in(self) -> int:
        return self.layer_dims[0]

    @property
    def d_out(self) -> int:
        return self.layer_dims[-1]


@dataclass
class Mlp:
    arch: MlpArch
    weights: list[np.ndarray]  # per layer, (out, in)
    biases: list[np.ndarray]  # per layer, (out,)

    def copy(self) -> "Mlp":
        return Mlp(self.arch, [w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")


@dataclass
class ForwardTrace:
    """Cached forward pass: inputs, per-layer pre-activations/activations, logits."""

    inputs: np.ndarray
    pre_activations: list[np.ndarray]
    hidden_activations: list[np.ndarray]
    logits: np.ndarray

    def hidden_feature(self, r: int) -> np.ndarray:
        """Activation of hidden layer r (negative r counts from the last)."""
        return self.hidden_activations[r]


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_ce: float


def init(arch: MlpArch, seed) -> Mlp:
    """Glorot-uniform weights, zero biases, deterministic given seed."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(arch.layer_dims[:-1], arch.layer_dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(arch, weights, biases)


def forward(mlp: Mlp, batch: np.ndarray) -> ForwardTrace:
    """Affine + activation chain; the final layer is affine only (logits)."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != mlp.arch.d_in:
        raise ValueError(f"batch shape {x.shape} does not match input dim {mlp.arch.d_in}")
    act, _ = _ACTIVATIONS[mlp.arch.activation]
    pre, hidden = [], []
    a = x
    for l in range(mlp.arch.n_layers):
        z = a @ mlp.weights[l].T + mlp.biases[l]
        pre.append(z)
        if l < mlp.arch.n_layers - 1:
            a = act(z)
            hidden.append(a)
    return ForwardTrace(inputs=x, pre_activations=pre, hidden_activations=hidden, logits=pre[-1])


def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Row-wise softened distribution, computed with max subtraction."""
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def cross_entropy(pred_rows: np.ndarray, target_rows: np.ndarray) -> float:
    """Mean over the batch of -sum_c target_c * log(pred_c), natural log."""
    logp = np.log(np.maximum(pred_rows, LOG_CLAMP))
    return float(-(target_rows * logp).sum(axis=-1).mean())


def backward(mlp: Mlp, trace: ForwardTrace, loss_grad_on_logits: np.ndarray, feature_grads=None):
    """Exact gradients of a scalar loss with given gradient on the logits.

    `feature_grads` optionally maps a hidden-layer index to an extra loss
    gradient on that layer's activation (injected during the backward
    sweep), for losses that read intermediate features.

    Returns (weight_grads, bias_grads) shaped like the parameters.
    """
    n_layers = mlp.arch.n_layers
    if len(trace.pre_activations) != n_layers or trace.inputs.shape[1] != mlp.arch.d_in:
        raise ValueError("trace does not match model architecture")
    delta = np.asarray(loss_grad_on_logits, dtype=np.float64)
    if delta.shape != trace.logits.shape:
        raise ValueError(
            f"logit gradient shape {delta.shape} does not match logits {trace.logits.shape}"
        )
    normalized = {}
    for k, v in (feature_grads or {}).items():
        if not -mlp.arch.n_hidden <= k < mlp.arch.n_hidden:
            raise ValueError(f"feature gradient at hidden layer {k}, but model has "
                             f"{mlp.arch.n_hidden} hidden layers")
        normalized[k % mlp.arch.n_hidden] = v
    feature_grads = normalized
    _, dact = _ACTIVATIONS[mlp.arch.activation]
    weight_grads = [None] * n_layers
    bias_grads = [None] * n_layers
    for l in range(n_layers - 1, -1, -1):
        a_prev = trace.inputs if l == 0 else trace.hidden_activations[l - 1]
        weight_grads[l] = delta.T @ a_prev
        bias_grads[l] = delta.sum(axis=0)
        if l > 0:
            da = delta @ mlp.weights[l]
            if (l - 1) in feature_grads:
                da = da + feature_grads[l - 1]
            delta = da * dact(trace.pre_activations[l - 1])
    return weight_grads, bias_grads


@dataclass
class AdamState:
    t: int
    m_w: list[np.ndarray]
    v_w: list[np.ndarray]
    m_b: list[np.ndarray]
    v_b: list[np.ndarray]
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(mlp: Mlp, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(
        t=0,
        m_w=[np.zeros_like(w) for w in mlp.weights],
        v_w=[np.zeros_like(w) for w in mlp.weights],
        m_b=[np.zeros_like(b) for b in mlp.biases],
        v_b=[np.zeros_like(b) for b in mlp.biases],
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


def adam_step(mlp: Mlp, state: AdamState, grads, lr: float) -> tuple[Mlp, AdamState]:
    """One bias-corrected Adam update.

    Returns a fresh parameter snapshot; the moment buffers in `state` are
    updated in place (the returned state is the same object).
    """
    weight_grads, bias_grads = grads
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t

    def update(params, grads_, m_list, v_list):
        new_p = []
        for p, g, m, v in zip(params, grads_, m_list, v_list):
            m *= state.beta1
            m += (1.0 - state.beta1) * g
            v *= state.beta2
            v += (1.0 - state.beta2) * np.square(g)
            denom = np.sqrt(v / c2)
            denom += state.eps
            np.divide(m, denom, out=denom)
            denom *= lr / c1
            new_p.append(p - denom)
        return new_p

    w = update(mlp.weights, weight_grads, state.m_w, state.v_w)
    b = update(mlp.biases, bias_grads, state.m_b, state.v_b)
    return Mlp(mlp.arch, w, b), state


def _batch_slices(order: np.ndarray, batch_size: int, min_batch: int = 1):
    batches = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    if len(batches) > 1 and len(batches[-1]) < min_batch:
        batches[-2] = np.concatenate([batches[-2], batches[-1]])
        batches.pop()
    return batches


def train_loop(arch, ds: LabeledDataset, cfg: TrainConfig, batch_fn, val_fn, callback=None):
    """Shared minibatch loop for supervised and distillation training.

    batch_fn(trace, labels, sample_indices) -> (loss, dlogits, feature_grads)
    val_fn(mlp) -> (val_loss, val_ce), evaluated after each epoch.

    Initialization and shuffling derive from independent child streams of
    cfg.seed, so any two trainings with the same cfg see bit-identical
    parameter trajectories whenever their batch_fns compute the same values.
    """
    init_ss, shuffle_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    mlp = init(arch, init_ss)
    state = init_adam(mlp, cfg.beta1, cfg.beta2, cfg.eps)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    x_train = ds.inputs[ds.train_idx].astype(np.float64)
    y_train = ds.labels[ds.train_idx]
    min_batch = getattr(batch_fn, "min_batch", 1)
    history: list[EpochStats] = []
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(len(x_train)) if cfg.shuffle else np.arange(len(x_train))
        losses, sizes = [], []
        for batch in _batch_slices(order, cfg.batch_size, min_batch):
            trace = forward(mlp, x_train[batch])
            loss, dlogits, feature_grads = batch_fn(trace, y_train[batch], ds.train_idx[batch])
            grads = backward(mlp, trace, dlogits, feature_grads)
            mlp, state = adam_step(mlp, state, grads, cfg.learning_rate)
            losses.append(loss)
            sizes.append(len(batch))
        val_loss, val_ce = val_fn(mlp)
        stats = EpochStats(
            epoch=epoch,
            train_loss=float(np.average(losses, weights=sizes)),
            val_loss=val_loss,
            val_ce=val_ce,
        )
        history.append(stats)
        if callback is not None:
            callback(stats)
    return mlp, history


def evaluate_ce(mlp: Mlp, ds: LabeledDataset, idx: np.ndarray) -> float:
    """Plain cross-entropy of the model on the given sample indices."""
    if len(idx) == 0:
        return float("nan")
    trace = forward(mlp, ds.inputs[idx].astype(np.float64))
    return cross_entropy(softmax(trace.logits), one_hot(ds.labels[idx], mlp.arch.d_out))


def train_supervised(arch: MlpArch, ds: LabeledDataset, cfg: TrainConfig, callback=None):
    """Minimize cross-entropy on the train split; returns (model, epoch history)."""
    if arch.d_in != ds.d_in or arch.d_out != ds.n_classes:
        raise ValueError(
            f"arch {arch.layer_dims} does not match dataset "
            f"(d_in={ds.d_in}, n_classes={ds.n_classes})"
        )

    def batch_fn(trace, labels, _indices):
        m = len(labels)
        z = one_hot(labels, arch.d_out)
        p = softmax(trace.logits)
        return cross_entropy(p, z), (p - z) / m, None

    def val_fn(mlp):
        ce = evaluate_ce(mlp, ds, ds.val_idx)
        return ce, ce

    return train_loop(arch, ds, cfg, batch_fn, val_fn, callback)


def save_model(path, mlp: Mlp, seed: int = 0, provenance: dict | None = None) -> None:
    """JSON header + float32 payload: all weight matrices, then all biases."""
    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "layer_dims": list(mlp.arch.layer_dims),
        "activation": mlp.arch.activation,
        "seed": int(seed),
        "provenance": provenance or {},
    }
    with open(path, "wb") as fh:
        fileio.write_header(fh, header)
        for w in mlp.weights:
            fh.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
        for b in mlp.biases:
            fh.write(np.ascontiguousarray(b, dtype="<f4").tobytes())


def load_model(path) -> tuple[Mlp, dict]:
    """Returns (model upcast to float64, header dict)."""
    with open(path, "rb") as fh:
        header = fileio.read_header(fh, str(path))
        fileio.check_version(header, MODEL_FORMAT_VERSION, str(path))
        try:
            arch = MlpArch(tuple(header["layer_dims"]), header["activation"])
        except (KeyError, TypeError, ValueError) as exc:
            raise fileio.MalformedHeaderError(f"{path}: bad header field ({exc})") from exc
        dims = list(zip(arch.layer_dims[:-1], arch.layer_dims[1:]))
        n_floats = sum(i * o for i, o in dims) + sum(o for _, o in dims)
        data = fileio.read_payload(fh, 4 * n_floats, str(path))
    weights, biases = [], []
    offset = 0
    for fan_in, fan_out in dims:
        w = fileio.floats_from(data, 4 * offset, fan_in * fan_out)
        weights.append(w.astype(np.float64).reshape(fan_out, fan_in))
        offset += fan_in * fan_out
    for _, fan_out in dims:
        b = fileio.floats_from(data, 4 * offset, fan_out)
        biases.append(b.astype(np.float64))
        offset += fan_out
    return Mlp(arch, weights, biases), header
