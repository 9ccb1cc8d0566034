"""The black-box classifier boundary and an in-repo dense reference model.

Attacks only ever see :class:`ClassifierOracle`, which maps a batch of
images to logits and counts every row it answers. The reference model is a
stack of dense layers with relu activations, trained here by mini-batch
gradient descent with hand-written backpropagation.

Weight file layout (little-endian)::

    "NNW1", u32 layer_count,
    per layer: u8 activation (0 identity, 1 relu), u32 rows, u32 cols,
               rows*cols float32 weights (row-major), cols float32 biases

A layer maps ``h -> act(h @ W + b)`` with ``W`` of shape (rows, cols).
"""

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DivergenceError, ParseError, ShapeError
from .losses import cross_entropy_rows

log = logging.getLogger(__name__)

NNW_MAGIC = b"NNW1"
ACTIVATIONS = {0: "identity", 1: "relu"}
ACTIVATION_TAGS = {v: k for k, v in ACTIVATIONS.items()}


@dataclass
class DenseLayer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.activation not in ACTIVATION_TAGS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ShapeError(
                f"weight {self.weight.shape} and bias {self.bias.shape} do not form a layer"
            )


@dataclass
class FeedForwardModel:
    layers: list
    input_shape: tuple = None

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("model needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.weight.shape[1] != b.weight.shape[0]:
                raise ShapeError(
                    f"layer output {a.weight.shape[1]} does not feed input {b.weight.shape[0]}"
                )
        if self.layers[-1].activation != "identity":
            raise ShapeError("the final layer must output raw logits (identity activation)")
        n_in = self.layers[0].weight.shape[0]
        if self.input_shape is None:
            self.input_shape = (n_in,)
        self.input_shape = tuple(int(s) for s in self.input_shape)
        if int(np.prod(self.input_shape)) != n_in:
            raise ShapeError(f"input shape {self.input_shape} does not flatten to {n_in}")

    @property
    def input_size(self):
        return self.layers[0].weight.shape[0]

    @property
    def class_count(self):
        return self.layers[-1].weight.shape[1]

    def __call__(self, x):
        return forward(self, x)

    def copy(self):
        return FeedForwardModel(
            [DenseLayer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers],
            self.input_shape,
        )

    def round_to_float32(self):
        for layer in self.layers:
            layer.weight = layer.weight.astype(np.float32).astype(np.float64)
            layer.bias = layer.bias.astype(np.float32).astype(np.float64)
        return self


def _flatten(model, x):
    x = np.asarray(x, dtype=np.float64)
    n_in = model.input_size
    if x.shape == model.input_shape or x.shape == (n_in,):
        return x.reshape(1, n_in), True
    if x.ndim < 2 or int(np.prod(x.shape[1:])) != n_in:
        raise ShapeError(f"input of shape {x.shape} does not match model input size {n_in}")
    return x.reshape(len(x), n_in), False


def forward(model, x):
    """Logits for one image (returns shape (K,)) or a batch (returns (N, K))."""
    h, single = _flatten(model, x)
    for layer in model.layers:
        h = h @ layer.weight + layer.bias
        if layer.activation == "relu":
            h = np.maximum(h, 0.0)
    return h[0] if single else h


class ClassifierOracle:
    """Query-counted black box around any batch -> logits callable."""

    def __init__(self, behavior, record=False):
        self.behavior = behavior
        self.query_counter = 0
        self.history = [] if record else None

    def query(self, points):
        points = np.asarray(points, dtype=np.float64)
        logits = np.asarray(self.behavior(points), dtype=np.float64)
        if logits.ndim != 2 or len(logits) != len(points):
            raise ShapeError("oracle must return one logit vector per input")
        self.query_counter += len(points)
        if self.history is not None:
            self.history.append(logits.copy())
        return logits

    def __call__(self, points):
        return self.query(points)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def init_model(layer_sizes, rng, input_shape=None):
    """He-initialised dense stack; relu everywhere except the last layer."""
    layers = []
    pairs = list(zip(layer_sizes[:-1], layer_sizes[1:]))
    for k, (fan_in, fan_out) in enumerate(pairs):
        last = k == len(pairs) - 1
        scale = np.sqrt((1.0 if last else 2.0) / fan_in)
        layers.append(
            DenseLayer(
                rng.standard_normal((fan_in, fan_out)) * scale,
                np.zeros(fan_out),
                "identity" if last else "relu",
            )
        )
    return FeedForwardModel(layers, input_shape)


def loss_and_gradients(model, x, y):
    """Mean cross entropy over a batch and its gradient for every layer.

    Returns ``(loss, [(dW, db), ...])`` in layer order.
    """
    h, _ = _flatten(model, x)
    if h.shape[0] == 1 and np.ndim(y) == 0:
        y = [y]
    y = np.asarray(y, dtype=np.int64)
    acts = [h]
    pre = []
    for layer in model.layers:
        z = acts[-1] @ layer.weight + layer.bias
        pre.append(z)
        acts.append(np.maximum(z, 0.0) if layer.activation == "relu" else z)
    logits = acts[-1]
    n = len(y)
    loss = float(cross_entropy_rows(logits, y).mean())

    top = logits.max(axis=1, keepdims=True)
    p = np.exp(logits - top)
    p /= p.sum(axis=1, keepdims=True)
    g = p
    g[np.arange(n), y] -= 1.0
    g /= n
    grads = []
    for k in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[k]
        if layer.activation == "relu":
            g = g * (pre[k] > 0)
        grads.append((acts[k].T @ g, g.sum(axis=0)))
        if k:
            g = g @ layer.weight.T
    grads.reverse()
    return loss, grads


def accuracy(model, images, labels, chunk=4096):
    if len(images) == 0:
        return float("nan")
    hits = 0
    for s in range(0, len(images), chunk):
        pred = forward(model, images[s : s + chunk]).argmax(axis=1)
        hits += int(np.count_nonzero(pred == labels[s : s + chunk]))
    return hits / len(images)


@dataclass
class TrainingReport:
    epochs: int
    final_loss: float
    train_accuracy: float
    holdout_accuracy: float | None = None
    losses: list = field(default_factory=list)


def train_reference(
    dataset,
    hidden=(128,),
    learning_rate=0.1,
    epochs=5,
    seed=0,
    batch_size=64,
    holdout=None,
):
    """Fit a dense relu classifier to ``dataset`` by mini-batch SGD.

    The returned parameters are rounded to float32 so the in-memory model
    is exactly what a weight file stores. Raises ``DivergenceError`` when a
    batch loss stops being finite.
    """
    if dataset.labels is None:
        raise ValueError("training requires labels")
    rng = np.random.default_rng(seed)
    images = dataset.images
    labels = dataset.labels
    n_in = int(np.prod(images.shape[1:]))
    classes = int(labels.max()) + 1
    model = init_model([n_in, *hidden, max(classes, 2)], rng, images.shape[1:])
    losses = []
    last = float("nan")
    for epoch in range(epochs):
        order = rng.permutation(len(images))
        total = 0.0
        for s in range(0, len(order), batch_size):
            idx = order[s : s + batch_size]
            loss, grads = loss_and_gradients(model, images[idx], labels[idx])
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"loss became {loss} in epoch {epoch}; try a smaller learning rate"
                )
            for layer, (dw, db) in zip(model.layers, grads):
                layer.weight -= learning_rate * dw
                layer.bias -= learning_rate * db
            total += loss * len(idx)
        last = total / len(order)
        losses.append(last)
        log.info("epoch %d: mean loss %.4f", epoch, last)
    model.round_to_float32()
    report = TrainingReport(
        epochs=epochs,
        final_loss=last,
        train_accuracy=accuracy(model, images, labels),
        holdout_accuracy=None if holdout is None else accuracy(model, holdout.images, holdout.labels),
        losses=losses,
    )
    return model, report


# ---------------------------------------------------------------------------
# NNW1 weight files
# ---------------------------------------------------------------------------


def model_to_bytes(model):
    out = [NNW_MAGIC, struct.pack("<I", len(model.layers))]
    for layer in model.layers:
        rows, cols = layer.weight.shape
        out.append(struct.pack("<BII", ACTIVATION_TAGS[layer.activation], rows, cols))
        out.append(np.ascontiguousarray(layer.weight, dtype="<f4").tobytes())
        out.append(np.ascontiguousarray(layer.bias, dtype="<f4").tobytes())
    return b"".join(out)


def save_model(path, model):
    Path(path).write_bytes(model_to_bytes(model))


def model_from_bytes(buf, input_shape=None):
    if len(buf) < 8:
        raise ParseError("file too short for an NNW1 header", len(buf))
    if buf[:4] != NNW_MAGIC:
        raise ParseError(f"bad NNW1 magic {bytes(buf[:4])!r}", 0)
    (count,) = struct.unpack_from("<I", buf, 4)
    off = 8
    layers = []
    for _ in range(count):
        if len(buf) < off + 9:
            raise ParseError("truncated layer header", len(buf))
        tag, rows, cols = struct.unpack_from("<BII", buf, off)
        if tag not in ACTIVATIONS:
            raise ParseError(f"unknown activation tag {tag}", off)
        off += 9
        need = 4 * (rows * cols + cols)
        if len(buf) < off + need:
            raise ParseError(f"truncated layer payload: need {need} bytes", len(buf))
        w = np.frombuffer(buf, dtype="<f4", count=rows * cols, offset=off).reshape(rows, cols)
        off += 4 * rows * cols
        b = np.frombuffer(buf, dtype="<f4", count=cols, offset=off)
        off += 4 * cols
        layers.append(DenseLayer(w.astype(np.float64), b.astype(np.float64), ACTIVATIONS[tag]))
    if off != len(buf):
        raise ParseError("trailing bytes after the last layer", off)
    try:
        return FeedForwardModel(layers, input_shape)
    except ShapeError as exc:
        raise ParseError(str(exc), 8) from exc


def load_model(path, input_shape=None):
    return model_from_bytes(Path(path).read_bytes(), input_shape)
