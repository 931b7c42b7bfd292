"""
A small convolutional network trained to regress the synergy target

Tensors are laid out (batch, channels, rows, cols). A single image may be
passed as (channels, rows, cols); outputs are squeezed to match.
"""
import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import click
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ArgumentError, NetSpecError, TrainingDivergedError

HEADS = ("softmax", "linear", "classify")
HEAD_ALIASES = {"paper": "softmax"}
LAYER_KINDS = ("conv", "maxpool", "relu", "flatten", "fc", "dropout")
TOY_ALEX = "conv:8:7:2,relu,maxpool:3:2,conv:16:5:1,relu,maxpool:3:2,conv:32:3:1,relu,flatten,fc:128,relu,dropout:0.5,fc:{k}"


@dataclass(frozen=True)
class LayerSpec:
    """
    One layer of a NetSpec

    ``size`` is the filter size for conv and the window for maxpool; both
    are padded with (size - 1) // 2 cells.
    """
    kind: str
    filters: int = 0
    size: int = 0
    stride: int = 1
    out_dim: int = 0
    rate: float = 0.0

    @property
    def pad(self) -> int:
        return (self.size - 1) // 2

    @property
    def has_params(self) -> bool:
        return self.kind in ("conv", "fc")

    @classmethod
    def parse(cls, token: str) -> "LayerSpec":
        """Parse ``conv:F:f:s``, ``maxpool:w:s``, ``fc:n``, ``dropout:r``, ``relu``, ``flatten``"""
        parts = token.strip().split(":")
        kind, args = parts[0], parts[1:]
        try:
            if kind == "conv" and len(args) == 3:
                return cls("conv", filters=int(args[0]), size=int(args[1]), stride=int(args[2]))
            if kind == "maxpool" and len(args) == 2:
                return cls("maxpool", size=int(args[0]), stride=int(args[1]))
            if kind == "fc" and len(args) == 1:
                return cls("fc", out_dim=int(args[0]))
            if kind == "dropout" and len(args) == 1:
                return cls("dropout", rate=float(args[0]))
            if kind in ("relu", "flatten") and not args:
                return cls(kind)
        except ValueError:
            pass
        raise NetSpecError(f"cannot parse layer '{token}'")

    def format(self) -> str:
        if self.kind == "conv":
            return f"conv:{self.filters}:{self.size}:{self.stride}"
        if self.kind == "maxpool":
            return f"maxpool:{self.size}:{self.stride}"
        if self.kind == "fc":
            return f"fc:{self.out_dim}"
        if self.kind == "dropout":
            return f"dropout:{self.rate}"
        return self.kind


def _pooled_dim(size: int, window: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - window) // stride + 1


@dataclass(frozen=True)
class NetSpec:
    input_shape: Tuple[int, int, int]
    layers: Tuple[LayerSpec, ...]

    def __post_init__(self):
        self.shapes()

    @classmethod
    def parse(cls, text: str, input_shape: Tuple[int, int, int]) -> "NetSpec":
        tokens = [t for t in text.split(",") if t.strip()]
        return cls(tuple(input_shape), tuple(LayerSpec.parse(t) for t in tokens))

    def format(self) -> str:
        return ",".join(layer.format() for layer in self.layers)

    def shapes(self) -> List[Tuple[int, ...]]:
        """Output shape of every layer; raises NetSpecError on any inconsistency"""
        shape: Tuple[int, ...] = tuple(self.input_shape)
        if len(shape) != 3 or min(shape) < 1:
            raise NetSpecError(f"input shape must be (channels, rows, cols), got {shape}")
        out = []
        for i, layer in enumerate(self.layers):
            if layer.kind not in LAYER_KINDS:
                raise NetSpecError(f"layer {i}: unknown kind '{layer.kind}'")
            if layer.kind in ("conv", "maxpool"):
                if len(shape) != 3:
                    raise NetSpecError(f"layer {i}: {layer.kind} needs a spatial input, got {shape}")
                if layer.stride < 1 or layer.size < 1:
                    raise NetSpecError(f"layer {i}: size and stride must be >= 1")
                if layer.kind == "conv" and (layer.size % 2 == 0 or layer.filters < 1):
                    raise NetSpecError(f"layer {i}: conv needs an odd filter size and >= 1 filters")
                rows = _pooled_dim(shape[1], layer.size, layer.stride, layer.pad)
                cols = _pooled_dim(shape[2], layer.size, layer.stride, layer.pad)
                if rows < 1 or cols < 1:
                    raise NetSpecError(f"layer {i}: {layer.kind} shrinks {shape} to nothing")
                shape = (layer.filters if layer.kind == "conv" else shape[0], rows, cols)
            elif layer.kind == "flatten":
                shape = (int(np.prod(shape)),)
            elif layer.kind == "fc":
                if len(shape) != 1:
                    raise NetSpecError(f"layer {i}: fc needs a flat input, got {shape}; add flatten")
                if layer.out_dim < 1:
                    raise NetSpecError(f"layer {i}: fc width must be >= 1")
                shape = (layer.out_dim,)
            elif layer.kind == "dropout" and not 0.0 <= layer.rate < 1.0:
                raise NetSpecError(f"layer {i}: dropout rate must be in [0, 1)")
            out.append(shape)
        if not self.layers or self.layers[-1].kind != "fc":
            raise NetSpecError("the last layer must be fc")
        return out

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def conv_indices(self) -> List[int]:
        return [i for i, layer in enumerate(self.layers) if layer.kind == "conv"]

    def with_output(self, out_dim: int) -> "NetSpec":
        """Same network with the final fc layer resized"""
        layers = self.layers[:-1] + (replace(self.layers[-1], out_dim=out_dim),)
        return NetSpec(self.input_shape, layers)


def toy_alex(k: int, input_size: int = 227, channels: int = 1) -> NetSpec:
    """Desk-scale network keeping the stride/pool pattern of the large reference net"""
    return NetSpec.parse(TOY_ALEX.format(k=k), (channels, input_size, input_size))


@dataclass
class NetParams:
    """Per-layer weights and biases (None for parameter-free layers)"""
    weights: List[Optional[np.ndarray]]
    biases: List[Optional[np.ndarray]]
    rng_seed: int = 0

    def copy(self) -> "NetParams":
        return NetParams([None if w is None else w.copy() for w in self.weights],
                         [None if b is None else b.copy() for b in self.biases],
                         self.rng_seed)

    def arrays(self) -> List[Tuple[str, np.ndarray]]:
        """Named parameter arrays in layer order"""
        named = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w is not None:
                named.append((f"layer{i}.weight", w))
                named.append((f"layer{i}.bias", b))
        return named


def init_params(spec: NetSpec, seed: int = 0) -> NetParams:
    """He-scaled uniform weights in ±sqrt(6 / fan_in); zero biases"""
    rng = np.random.default_rng(seed)
    shapes = [tuple(spec.input_shape)] + spec.shapes()
    weights: List[Optional[np.ndarray]] = []
    biases: List[Optional[np.ndarray]] = []
    for i, layer in enumerate(spec.layers):
        in_shape = shapes[i]
        if layer.kind == "conv":
            w_shape = (layer.filters, in_shape[0], layer.size, layer.size)
        elif layer.kind == "fc":
            w_shape = (layer.out_dim, in_shape[0])
        else:
            weights.append(None)
            biases.append(None)
            continue
        fan_in = int(np.prod(w_shape[1:]))
        bound = math.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=w_shape))
        biases.append(np.zeros(w_shape[0]))
    return NetParams(weights, biases, seed)


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int, pad: int):
    batch, channels = x.shape[:2]
    filters, _, size, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(xp, (size, size), axis=(2, 3))[:, :, ::stride, ::stride]
    rows, cols = windows.shape[2:4]
    patches = windows.transpose(0, 2, 3, 1, 4, 5).reshape(batch * rows * cols, channels * size * size)
    out = patches @ w.reshape(filters, -1).T + b
    return out.reshape(batch, rows, cols, filters).transpose(0, 3, 1, 2), patches


def _conv_backward(dout: np.ndarray, patches: np.ndarray, x_shape: Tuple[int, ...],
                   w: np.ndarray, stride: int, pad: int):
    batch, channels, height, width = x_shape
    filters, _, size, _ = w.shape
    rows, cols = dout.shape[2:]
    d = dout.transpose(0, 2, 3, 1).reshape(-1, filters)
    dw = (d.T @ patches).reshape(w.shape)
    db = d.sum(axis=0)
    dpatches = (d @ w.reshape(filters, -1)).reshape(batch, rows, cols, channels, size, size)
    dxp = np.zeros((batch, channels, height + 2 * pad, width + 2 * pad))
    for i in range(size):
        for j in range(size):
            dxp[:, :, i:i + stride * rows:stride, j:j + stride * cols:stride] += \
                dpatches[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, pad:pad + height, pad:pad + width], dw, db


def _pool_forward(x: np.ndarray, window: int, stride: int, pad: int):
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=-np.inf)
    windows = sliding_window_view(xp, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = windows.reshape(windows.shape[:4] + (window * window,))
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return out, arg


def _pool_backward(dout: np.ndarray, arg: np.ndarray, x_shape: Tuple[int, ...],
                   window: int, stride: int, pad: int) -> np.ndarray:
    batch, channels, height, width = x_shape
    rows, cols = dout.shape[2:]
    ki, kj = np.divmod(arg, window)
    r = np.arange(rows)[:, None] * stride + ki
    c = np.arange(cols)[None, :] * stride + kj
    dxp = np.zeros((batch, channels, height + 2 * pad, width + 2 * pad))
    np.add.at(dxp, (np.arange(batch)[:, None, None, None], np.arange(channels)[None, :, None, None], r, c), dout)
    return dxp[:, :, pad:pad + height, pad:pad + width]


def _dropout_mask(shape: Tuple[int, ...], rate: float, seed: int, layer_index: int) -> np.ndarray:
    rng = np.random.default_rng([seed, layer_index])
    return (rng.random(shape) >= rate) / (1.0 - rate)


@dataclass
class ForwardCache:
    """Per-layer state kept by the forward pass"""
    inputs: List[np.ndarray] = field(default_factory=list)
    aux: List[object] = field(default_factory=list)
    conv_outputs: List[np.ndarray] = field(default_factory=list)

    def conv_maps(self, index: int = 0) -> List[np.ndarray]:
        """Conv-layer activation tensors (N, H, W) of one image in the batch"""
        return [maps[index] for maps in self.conv_outputs]


def _as_batch(x: np.ndarray) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    return (x[None], True) if x.ndim == 3 else (x, False)


def forward(spec: NetSpec, params: NetParams, x: np.ndarray, train_mode: bool = False,
            dropout_seed: int = 0) -> Tuple[np.ndarray, ForwardCache]:
    """
    Run the network

    Args:
        spec: Network structure
        params: Weights matching ``spec``
        x: Input of shape (C, H, W) or (B, C, H, W)
        train_mode: Apply inverted dropout when True
        dropout_seed: Seed the dropout masks are drawn from

    Returns:
        Tuple of (output of shape (k,) or (B, k), ForwardCache)
    """
    x, single = _as_batch(x)
    if tuple(x.shape[1:]) != tuple(spec.input_shape):
        raise ArgumentError(f"input shape {x.shape[1:]} does not match spec {spec.input_shape}")
    cache = ForwardCache()
    for i, layer in enumerate(spec.layers):
        cache.inputs.append(x)
        aux = None
        if layer.kind == "conv":
            x, aux = _conv_forward(x, params.weights[i], params.biases[i], layer.stride, layer.pad)
            cache.conv_outputs.append(x)
        elif layer.kind == "maxpool":
            x, aux = _pool_forward(x, layer.size, layer.stride, layer.pad)
        elif layer.kind == "relu":
            aux = x > 0
            x = x * aux
        elif layer.kind == "flatten":
            x = x.reshape(x.shape[0], -1)
        elif layer.kind == "fc":
            x = x @ params.weights[i].T + params.biases[i]
        elif layer.kind == "dropout" and train_mode and layer.rate > 0:
            aux = _dropout_mask(x.shape, layer.rate, dropout_seed, i)
            x = x * aux
        cache.aux.append(aux)
    return (x[0] if single else x), cache


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def canonical_head(head: str) -> str:
    """Map a head alias to its canonical name"""
    return HEAD_ALIASES.get(head, head)


def squash(theta: np.ndarray) -> np.ndarray:
    """softmax(relu(Θ)) along the last axis"""
    return _softmax(np.maximum(np.asarray(theta, dtype=np.float64), 0.0))


def synergy_loss(theta: np.ndarray, S: np.ndarray, head: str = "softmax") -> Tuple[float, np.ndarray]:
    """
    Squared distance between the squashed network output and the target

    The ``softmax`` head squashes with softmax(relu(Θ)); the ``linear`` head
    uses Θ directly. ``paper`` is accepted as another name for ``softmax``.

    Returns:
        Tuple of (loss, dLoss/dΘ)
    """
    head = canonical_head(head)
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != np.shape(S):
        raise ArgumentError(f"Θ and S shapes differ: {theta.shape} vs {np.shape(S)}")
    if head == "linear":
        diff = theta - S
        return float(np.sum(diff * diff)), 2.0 * diff
    if head != "softmax":
        raise ArgumentError(f"unknown synergy head '{head}'")
    active = theta > 0
    sigma = squash(theta)
    g = 2.0 * (sigma - S)
    dz = sigma * (g - np.sum(sigma * g, axis=-1, keepdims=True))
    return float(np.sum((sigma - S) ** 2)), dz * active


def cross_entropy_loss(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over a batch of integer labels"""
    probs = _softmax(logits)
    rows = np.arange(len(labels))
    loss = -np.mean(np.log(np.maximum(probs[rows, labels], 1e-300)))
    grad = probs.copy()
    grad[rows, labels] -= 1.0
    return float(loss), grad / len(labels)


def batch_loss(out: np.ndarray, targets: np.ndarray, head: str) -> Tuple[float, np.ndarray]:
    """Batch-averaged loss and gradient for any head"""
    if head == "classify":
        return cross_entropy_loss(out, np.asarray(targets, dtype=np.intp))
    total, grad = synergy_loss(out, targets, head)
    return total / len(out), grad / len(out)


def _backward_from(spec: NetSpec, params: NetParams, cache: ForwardCache, dout: np.ndarray) -> NetParams:
    grads = NetParams([None] * len(spec.layers), [None] * len(spec.layers), params.rng_seed)
    for i in reversed(range(len(spec.layers))):
        layer, x, aux = spec.layers[i], cache.inputs[i], cache.aux[i]
        if layer.kind == "conv":
            dout, grads.weights[i], grads.biases[i] = _conv_backward(
                dout, aux, x.shape, params.weights[i], layer.stride, layer.pad)
        elif layer.kind == "maxpool":
            dout = _pool_backward(dout, aux, x.shape, layer.size, layer.stride, layer.pad)
        elif layer.kind == "relu":
            dout = dout * aux
        elif layer.kind == "flatten":
            dout = dout.reshape(x.shape)
        elif layer.kind == "fc":
            grads.weights[i] = dout.T @ x
            grads.biases[i] = dout.sum(axis=0)
            dout = dout @ params.weights[i]
        elif layer.kind == "dropout" and aux is not None:
            dout = dout * aux
    return grads


def backward(spec: NetSpec, params: NetParams, x: np.ndarray, S: np.ndarray,
             dropout_seed: int = 0, head: str = "softmax", train_mode: bool = True) -> Tuple[float, NetParams]:
    """
    Reverse-mode gradients of the batch-averaged loss

    Args:
        spec: Network structure
        params: Current weights
        x: Input (C, H, W) or batch (B, C, H, W)
        S: Target(s) matching the output; integer labels for the classify head
        dropout_seed: Seed replaying the dropout masks of the forward pass
        head: One of softmax, linear, classify
        train_mode: Whether dropout is active

    Returns:
        Tuple of (loss, gradients laid out like NetParams)
    """
    x, single = _as_batch(x)
    targets = np.asarray(S)
    if single:
        targets = targets[None] if head != "classify" else np.atleast_1d(targets)
    out, cache = forward(spec, params, x, train_mode=train_mode, dropout_seed=dropout_seed)
    loss, dout = batch_loss(out, targets, head)
    return loss, _backward_from(spec, params, cache, dout)


@dataclass(frozen=True)
class TrainSchedule:
    lr0: float = 1e-5
    halve_every: int = 2000
    batch: int = 16
    total_iters: int = 8000
    momentum: float = 0.0
    seed: int = 0
    val_every: int = 100
    log_every: int = 500

    def __post_init__(self):
        if self.lr0 <= 0 or self.halve_every < 1 or self.batch < 1 or self.total_iters < 1:
            raise ArgumentError(f"schedule values must be positive: {self}")
        if not 0.0 <= self.momentum < 1.0:
            raise ArgumentError(f"momentum must be in [0, 1), got {self.momentum}")


def learning_rate(sched: TrainSchedule, iteration: int) -> float:
    """Step schedule halving the rate every ``halve_every`` iterations"""
    return sched.lr0 * 0.5 ** (iteration // sched.halve_every)


@dataclass
class LossHistory:
    train: List[float] = field(default_factory=list)
    val: List[Tuple[int, float]] = field(default_factory=list)

    def to_csv(self, path: Union[str, Path]):
        val = dict(self.val)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["iteration", "train_loss", "val_loss"])
            for it, loss in enumerate(self.train):
                writer.writerow([it, repr(loss), repr(val[it]) if it in val else ""])


def evaluate_loss(spec: NetSpec, params: NetParams, images: np.ndarray, targets: np.ndarray,
                  head: str, chunk: int = 64) -> float:
    """Eval-mode loss averaged over a whole set"""
    total = 0.0
    for start in range(0, len(images), chunk):
        out, _ = forward(spec, params, images[start:start + chunk])
        loss, _ = batch_loss(out, targets[start:start + chunk], head)
        total += loss * len(out)
    return total / len(images)


def predict(spec: NetSpec, params: NetParams, images: np.ndarray, chunk: int = 64) -> np.ndarray:
    """Eval-mode outputs for a set of images"""
    outs = [forward(spec, params, images[start:start + chunk])[0]
            for start in range(0, len(images), chunk)]
    return np.concatenate(outs, axis=0)


def sgd_train(spec: NetSpec, init: NetParams, images: np.ndarray, targets: np.ndarray,
              sched: TrainSchedule, val_set: Optional[Tuple[np.ndarray, np.ndarray]] = None,
              head: str = "softmax") -> Tuple[NetParams, LossHistory]:
    """
    Minibatch SGD with a step-halving learning rate

    Args:
        spec: Network structure
        init: Starting weights (not modified)
        images: Training inputs, shape (n, C, H, W)
        targets: Synergy targets (n, k), or labels (n,) for the classify head
        sched: Learning-rate schedule, batch size and seed
        val_set: Optional (images, targets) evaluated every ``val_every`` steps
        head: Loss head

    Returns:
        Tuple of (parameters after the final iteration, LossHistory)
    """
    if len(images) == 0:
        raise ArgumentError("training set is empty")
    if head != "classify" and np.shape(targets)[1] != spec.output_dim:
        raise ArgumentError(f"target width {np.shape(targets)[1]} != network output {spec.output_dim}")

    params = init.copy()
    velocity = [None if w is None else (np.zeros_like(w), np.zeros_like(b))
                for w, b in zip(params.weights, params.biases)]
    history = LossHistory()
    rng = np.random.default_rng(sched.seed)
    n = len(images)
    batch = min(sched.batch, n)
    order, cursor = rng.permutation(n), 0

    click.echo(f"🔄 Training {head} head: {sched.total_iters} iterations, batch {batch}, lr0 {sched.lr0}")
    for it in range(sched.total_iters):
        if cursor + batch > n:
            order, cursor = rng.permutation(n), 0
        idx = np.sort(order[cursor:cursor + batch])
        cursor += batch

        dropout_seed = int(np.random.SeedSequence([sched.seed, it]).generate_state(1)[0])
        loss, grads = backward(spec, params, images[idx], targets[idx],
                               dropout_seed=dropout_seed, head=head)
        if not math.isfinite(loss):
            raise TrainingDivergedError(it, loss)
        history.train.append(loss)

        lr = learning_rate(sched, it)
        for i, v in enumerate(velocity):
            if v is None:
                continue
            vw, vb = v
            vw *= sched.momentum
            vw -= lr * grads.weights[i]
            vb *= sched.momentum
            vb -= lr * grads.biases[i]
            params.weights[i] = params.weights[i] + vw
            params.biases[i] = params.biases[i] + vb

        if val_set is not None and len(val_set[0]) and (it + 1) % sched.val_every == 0:
            history.val.append((it, evaluate_loss(spec, params, val_set[0], val_set[1], head)))
        if (it + 1) % sched.log_every == 0:
            click.echo(f"  iter {it + 1}/{sched.total_iters}  lr {lr:.3g}  loss {loss:.6f}")
    click.echo(f"✓ Training finished, final loss {history.train[-1]:.6f}")
    return params, history


def check_gradients(spec: NetSpec, params: NetParams, x: np.ndarray, S: np.ndarray,
                    head: str = "softmax", eps: float = 1e-5, dropout_seed: int = 0,
                    samples: Optional[int] = None, seed: int = 0) -> float:
    """
    Largest relative error between analytic and central-difference gradients

    Args:
        samples: Check this many randomly chosen entries per array (all if None)

    Returns:
        Maximum |analytic - numeric| / max(|analytic| + |numeric|, 1e-5)
    """
    _, grads = backward(spec, params, x, S, dropout_seed=dropout_seed, head=head)
    rng = np.random.default_rng(seed)
    worst = 0.0
    probe = params.copy()
    for (_, value), (_, grad) in zip(probe.arrays(), grads.arrays()):
        flat, gflat = value.reshape(-1), grad.reshape(-1)
        positions: Sequence[int] = range(flat.size)
        if samples is not None and samples < flat.size:
            positions = rng.choice(flat.size, size=samples, replace=False)
        for p in positions:
            saved = flat[p]
            flat[p] = saved + eps
            up, _ = backward(spec, probe, x, S, dropout_seed=dropout_seed, head=head)
            flat[p] = saved - eps
            down, _ = backward(spec, probe, x, S, dropout_seed=dropout_seed, head=head)
            flat[p] = saved
            numeric = (up - down) / (2 * eps)
            denom = max(abs(gflat[p]) + abs(numeric), 1e-5)
            worst = max(worst, abs(gflat[p] - numeric) / denom)
    return worst
