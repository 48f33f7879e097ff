"""Dense neural-network core: exact analytic gradients, two optimizers, checkpoints.

Models are plain stacks of dense layers over float64 numpy arrays. ReLU is
applied after every layer except the last, so the final layer emits logits.
The layer stack is split into an extractor part and a classifier part; the
classifier can be driven directly with feature batches, which is how
generated features enter the model.

All functions here are pure: they take values and return values, with no
hidden shared state.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ProtocolError, ShapeError

CHECKPOINT_MAGIC = b"KDIA1"


@dataclass
class ModelParams:
    """A dense model split into extractor and classifier parts.

    ``layers[i]`` is a ``(weight, bias)`` pair with weight shaped
    ``(in_width, out_width)`` and bias shaped ``(out_width,)``.
    Layers ``[0, split_index)`` form the feature extractor and
    ``[split_index, n)`` the classifier.
    """

    layers: list[tuple[np.ndarray, np.ndarray]]
    split_index: int

    def __post_init__(self):
        if not 0 <= self.split_index <= len(self.layers):
            raise ShapeError(
                f"split_index {self.split_index} out of range for "
                f"{len(self.layers)} layers"
            )
        for i, (w, b) in enumerate(self.layers):
            if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[1]:
                raise ShapeError(f"layer {i}: weight {w.shape} / bias {b.shape}")
            if i > 0 and self.layers[i - 1][0].shape[1] != w.shape[0]:
                raise ShapeError(
                    f"layer {i}: input width {w.shape[0]} != previous "
                    f"output width {self.layers[i - 1][0].shape[1]}"
                )

    @property
    def input_width(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def output_width(self) -> int:
        return self.layers[-1][0].shape[1]

    @property
    def classifier_input_width(self) -> int:
        if self.split_index == len(self.layers):
            return self.output_width
        return self.layers[self.split_index][0].shape[0]

    def copy(self) -> "ModelParams":
        return ModelParams(
            [(w.copy(), b.copy()) for w, b in self.layers], self.split_index
        )

    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in self.layers)


@dataclass
class Gradients:
    """Per-layer gradients mirroring a ModelParams layer stack.

    ``layers`` aligns with the layers the backward pass ran over (the whole
    model, or just the classifier part). ``input_grad`` is the gradient with
    respect to the batch that was fed in.
    """

    layers: list[tuple[np.ndarray, np.ndarray]]
    input_grad: np.ndarray


def params_equal(a: ModelParams, b: ModelParams) -> bool:
    """Bit-exact equality of two models."""
    if a.split_index != b.split_index or len(a.layers) != len(b.layers):
        return False
    return all(
        wa.shape == wb.shape
        and np.array_equal(wa, wb)
        and np.array_equal(ba, bb)
        for (wa, ba), (wb, bb) in zip(a.layers, b.layers)
    )


def he_uniform_init(
    widths: list[int], split_index: int, rng: np.random.Generator
) -> ModelParams:
    """He-uniform weights, zero biases. ``widths`` lists layer boundary sizes."""
    layers = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        layers.append((w, np.zeros(fan_out)))
    return ModelParams(layers, split_index)


def _active_layers(params: ModelParams, from_classifier_only: bool):
    start = params.split_index if from_classifier_only else 0
    return start, params.layers[start:]


def _forward_trace_layers(active, batch, label_offset: int = 0):
    """Forward over a layer list, keeping the input seen by each layer."""
    if not active:
        raise ShapeError("model has no layers on the requested path")
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"batch must be 2-D, got shape {x.shape}")
    inputs = [x]
    for i, (w, b) in enumerate(active):
        if x.shape[1] != w.shape[0]:
            raise ShapeError(
                f"layer {label_offset + i}: batch width {x.shape[1]} != "
                f"layer input width {w.shape[0]}"
            )
        z = x @ w + b
        if i < len(active) - 1:
            x = np.maximum(z, 0.0)
            inputs.append(x)
        else:
            x = z
    if not np.isfinite(x).all():
        raise ArithmeticError("forward pass produced non-finite values")
    return x, inputs


def _forward_trace(params, batch, from_classifier_only):
    start, active = _active_layers(params, from_classifier_only)
    return _forward_trace_layers(active, batch, label_offset=start)


def forward(
    params: ModelParams, batch: np.ndarray, from_classifier_only: bool = False
) -> np.ndarray:
    """Logits for a batch; with ``from_classifier_only`` the batch is a
    feature matrix fed straight into the classifier part."""
    logits, _ = _forward_trace(params, batch, from_classifier_only)
    return logits


def extract_features(params: ModelParams, batch: np.ndarray) -> np.ndarray:
    """Post-activation extractor output, i.e. what the classifier part sees."""
    if params.split_index == 0:
        return np.asarray(batch, dtype=np.float64)
    x = np.asarray(batch, dtype=np.float64)
    for i in range(params.split_index):
        w, b = params.layers[i]
        if x.shape[1] != w.shape[0]:
            raise ShapeError(
                f"layer {i}: batch width {x.shape[1]} != layer input width {w.shape[0]}"
            )
        x = np.maximum(x @ w + b, 0.0)
    return x


def _backward_from_trace(active, inputs, grad_logits) -> Gradients:
    """Backward over already-traced layer inputs. NaN/Inf anywhere in the
    chain propagates into the final input gradient, which is checked once."""
    grads: list = [None] * len(active)
    delta = grad_logits
    for i in reversed(range(len(active))):
        w, _ = active[i]
        x = inputs[i]
        grads[i] = (x.T @ delta, delta.sum(axis=0))
        delta = delta @ w.T
        if i > 0:
            # inputs[i] is the post-ReLU output of layer i-1
            delta = delta * (inputs[i] > 0.0)
    if not np.isfinite(delta).all():
        raise ArithmeticError("backward pass produced non-finite values")
    return Gradients(grads, delta)


def backward(
    params: ModelParams,
    batch: np.ndarray,
    grad_logits: np.ndarray,
    from_classifier_only: bool = False,
) -> Gradients:
    """Exact gradients of ``sum(grad_logits * logits)`` for every active layer."""
    _, active = _active_layers(params, from_classifier_only)
    logits, inputs = _forward_trace(params, batch, from_classifier_only)
    grad_logits = np.asarray(grad_logits, dtype=np.float64)
    if grad_logits.shape != logits.shape:
        raise ShapeError(
            f"grad_logits shape {grad_logits.shape} != logits shape {logits.shape}"
        )
    return _backward_from_trace(active, inputs, grad_logits)


def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Row-wise tempered softmax, max-shifted for stability."""
    if temperature <= 0:
        raise ParameterError(f"temperature must be > 0, got {temperature}")
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _target_rows(targets, n_rows: int, n_cols: int) -> np.ndarray:
    targets = np.asarray(targets)
    if targets.ndim == 1:
        if targets.shape[0] != n_rows:
            raise ShapeError(f"{targets.shape[0]} labels for {n_rows} logit rows")
        if targets.min() < 0 or targets.max() >= n_cols:
            raise ParameterError("label outside [0, n_classes)")
        rows = np.zeros((n_rows, n_cols))
        rows[np.arange(n_rows), targets.astype(np.int64)] = 1.0
        return rows
    if targets.shape != (n_rows, n_cols):
        raise ShapeError(
            f"target rows shaped {targets.shape}, logits {(n_rows, n_cols)}"
        )
    sums = targets.sum(axis=1)
    if np.abs(sums - 1.0).max() > 1e-9:
        raise ParameterError("probability-row targets must each sum to 1")
    return targets.astype(np.float64)


def softmax_ce_loss(
    logits: np.ndarray, targets, temperature: float = 1.0
) -> tuple[float, np.ndarray]:
    """Mean tempered-softmax cross-entropy and its exact gradient w.r.t. logits.

    ``targets`` is either an integer label vector or a matrix of probability
    rows. The gradient already includes the 1/batch and 1/temperature factors.
    """
    if temperature <= 0:
        raise ParameterError(f"temperature must be > 0, got {temperature}")
    logits = np.asarray(logits, dtype=np.float64)
    n, c = logits.shape
    t = _target_rows(targets, n, c)
    z = logits / temperature
    z = z - z.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = float(-(t * log_probs).sum() / n)
    grad = (np.exp(log_probs) - t) / (n * temperature)
    return loss, grad


@dataclass
class OptimizerState:
    """Hyperparameters plus per-layer slot buffers for SGD-momentum or Adam.

    Slot buffers mirror the shapes of the ModelParams they update:
    ``(vel_w, vel_b)`` per layer for SGD, ``(m_w, v_w, m_b, v_b)`` for Adam.
    """

    kind: str
    learning_rate: float
    weight_decay: float
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    slots: list = field(default_factory=list)


def sgd_state(
    params: ModelParams,
    learning_rate: float,
    momentum: float = 0.0,
    weight_decay: float = 0.0,
) -> OptimizerState:
    slots = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params.layers]
    return OptimizerState(
        "sgd", learning_rate, weight_decay, momentum=momentum, slots=slots
    )


def adam_state(
    params: ModelParams,
    learning_rate: float,
    weight_decay: float = 0.0,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> OptimizerState:
    slots = [
        (np.zeros_like(w), np.zeros_like(w), np.zeros_like(b), np.zeros_like(b))
        for w, b in params.layers
    ]
    return OptimizerState(
        "adam",
        learning_rate,
        weight_decay,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
        slots=slots,
    )


def optimizer_step(
    params: ModelParams, grads: Gradients, state: OptimizerState
) -> tuple[ModelParams, OptimizerState]:
    """One update step. Returns fresh params and state; inputs are untouched.

    Weight decay is coupled for both optimizers: ``wd * theta`` is added to
    the raw gradient before any momentum/moment bookkeeping.
    """
    if len(grads.layers) != len(params.layers):
        raise ShapeError(
            f"{len(grads.layers)} gradient layers for {len(params.layers)} layers"
        )
    new_layers = []
    new_slots = []
    lr, wd = state.learning_rate, state.weight_decay
    if state.kind == "sgd":
        for (w, b), (gw, gb), (vw, vb) in zip(params.layers, grads.layers, state.slots):
            vw = state.momentum * vw + gw + wd * w
            vb = state.momentum * vb + gb + wd * b
            new_layers.append((w - lr * vw, b - lr * vb))
            new_slots.append((vw, vb))
    elif state.kind == "adam":
        t = state.step_count + 1
        c1 = 1.0 - state.beta1**t
        c2 = 1.0 - state.beta2**t
        b1, b2 = state.beta1, state.beta2
        for (w, b), (gw, gb), (mw, vw, mb, vb) in zip(
            params.layers, grads.layers, state.slots
        ):
            new_slot, new_layer = [], []
            for theta, g, m, v in ((w, gw, mw, vw), (b, gb, mb, vb)):
                g = g + wd * theta
                m = b1 * m + (1.0 - b1) * g
                np.multiply(g, g, out=g)
                v = b2 * v + (1.0 - b2) * g
                step = np.sqrt(v / c2)
                step += state.epsilon
                np.divide(m / c1, step, out=step)
                step *= lr
                new_layer.append(theta - step)
                new_slot.append((m, v))
            new_layers.append(tuple(new_layer))
            new_slots.append((*new_slot[0], *new_slot[1]))
    else:
        raise ParameterError(f"unknown optimizer kind {state.kind!r}")
    new_state = OptimizerState(
        state.kind,
        lr,
        wd,
        momentum=state.momentum,
        beta1=state.beta1,
        beta2=state.beta2,
        epsilon=state.epsilon,
        step_count=state.step_count + 1,
        slots=new_slots,
    )
    return ModelParams(new_layers, params.split_index), new_state


def save_checkpoint(params: ModelParams, path) -> None:
    """Write the versioned binary checkpoint: magic, per-layer
    (rows, cols, weights, bias), then split_index, all little-endian."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        for w, b in params.layers:
            fh.write(struct.pack("<QQ", w.shape[0], w.shape[1]))
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
        fh.write(struct.pack("<Q", params.split_index))


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise ProtocolError(f"{path}: bad checkpoint magic")
    pos = len(CHECKPOINT_MAGIC)
    layers = []
    # every layer block is >= 32 bytes, so >8 remaining bytes means another layer
    while len(blob) - pos > 8:
        rows, cols = struct.unpack_from("<QQ", blob, pos)
        pos += 16
        need = 8 * (rows * cols + cols)
        if len(blob) - pos < need + 8:
            raise ProtocolError(f"{path}: truncated checkpoint")
        w = np.frombuffer(blob, dtype="<f8", count=rows * cols, offset=pos)
        pos += 8 * rows * cols
        b = np.frombuffer(blob, dtype="<f8", count=cols, offset=pos)
        pos += 8 * cols
        layers.append((w.reshape(rows, cols).copy(), b.copy()))
    (split_index,) = struct.unpack_from("<Q", blob, pos)
    return ModelParams(layers, split_index)
