"""VT-CNN2 style modulation classifier: construction, training, evaluation.

A complex frame enters the network as a 2x128 single-channel real image
(I row, Q row). Input gradients are returned in complex form ``g_I + 1j * g_Q`` so attack
code can conjugate and rotate them along with channel taps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingError
from .iqcore import FRAME_LEN, Dataset
from .nnad import AdamState, Conv2d, Dense, Network, Tensor, adam_step, ops


@dataclass(frozen=True)
class ClassifierConfig:
    n_classes: int = 8
    conv1_filters: int = 64
    conv2_filters: int = 16
    dense_units: int = 128
    extra_hidden: int = 0       # >0 adds one more hidden dense layer (surrogate variant)
    dropout: float = 0.5


def frames_to_input(frames) -> np.ndarray:
    frames = np.atleast_2d(frames)
    return np.stack([frames.real, frames.imag], axis=1)[..., None]


class ClassifierModel(Network):
    """conv(1x3, same) -> conv(2x3, valid) -> dense -> [dense] -> dense(C)."""

    def __init__(self, config: ClassifierConfig = ClassifierConfig(), seed: int = 0, dtype=np.float32):
        super().__init__()
        if config.n_classes < 2:
            raise ValueError("need at least two classes")
        self.config = config
        rng = np.random.default_rng(seed)
        c = config
        self.conv1 = Conv2d(1, c.conv1_filters, (1, 3), rng, padding="same", dtype=dtype)
        self.conv2 = Conv2d(c.conv1_filters, c.conv2_filters, (2, 3), rng, padding="valid", dtype=dtype)
        flat = c.conv2_filters * (FRAME_LEN - 2)
        self.dense1 = Dense(flat, c.dense_units, rng, dtype)
        names = ["conv1", "conv2", "dense1"]
        width = c.dense_units
        if c.extra_hidden:
            self.hidden = Dense(width, c.extra_hidden, rng, dtype)
            names.append("hidden")
            width = c.extra_hidden
        self.out = Dense(width, c.n_classes, rng, dtype)
        names.append("out")
        self.layer_names = tuple(names)

    @property
    def n_classes(self) -> int:
        return self.config.n_classes

    def forward(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        rate, train = self.config.dropout, self.training
        h = ops.dropout(ops.relu(self.conv1(x)), rate, train, rng)
        h = ops.dropout(ops.relu(self.conv2(h)), rate, train, rng)
        h = ops.dropout(ops.relu(self.dense1(ops.flatten(h))), rate, train, rng)
        if "hidden" in self.layer_names:
            h = ops.dropout(ops.relu(self.hidden(h)), rate, train, rng)
        return self.out(h)

    __call__ = forward

    # --- inference helpers (always eval mode) ---

    def logits(self, frames, batch_size: int = 1024) -> np.ndarray:
        frames = np.atleast_2d(frames)
        was = self.training
        self.training = False
        try:
            outs = [self.forward(Tensor(frames_to_input(frames[i:i + batch_size]).astype(self.dtype))).data
                    for i in range(0, len(frames), batch_size)]
        finally:
            self.training = was
        return np.concatenate(outs).astype(np.float64) if outs else np.zeros((0, self.n_classes))

    def predict(self, frames) -> np.ndarray:
        return self.logits(frames).argmax(axis=1)

    def proba(self, frames) -> np.ndarray:
        z = self.logits(frames)
        e = np.exp(z - z.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def input_gradient(self, frames, labels, batch_size: int = 512) -> np.ndarray:
        """Per-frame gradient of cross-entropy(f(x), onehot(label)) w.r.t. x, complex form."""
        frames = np.atleast_2d(frames)
        labels = np.broadcast_to(np.asarray(labels), (len(frames),))
        out = np.empty(frames.shape, dtype=complex)
        was = self.training
        self.training = False
        try:
            for i in range(0, len(frames), batch_size):
                sl = slice(i, i + batch_size)
                x = Tensor(frames_to_input(frames[sl]).astype(self.dtype), requires_grad=True)
                onehot = np.eye(self.n_classes)[labels[sl]]
                ops.cross_entropy(self.forward(x), onehot, reduction="sum").backward()
                g = x.grad[..., 0].astype(np.float64)
                out[sl] = g[:, 0, :] + 1j * g[:, 1, :]
                self.zero_grad()
        finally:
            self.training = was
            self.zero_grad()
        return out

    def loss(self, frames, labels) -> float:
        z = self.logits(frames)
        onehot = np.eye(self.n_classes)[np.broadcast_to(labels, (len(z),))]
        return float(ops.cross_entropy(Tensor(z), onehot, reduction="sum").data)


def build_vtcnn2(n_classes: int = 8, seed: int = 0, **overrides) -> ClassifierModel:
    return ClassifierModel(ClassifierConfig(n_classes=n_classes, **overrides), seed)


def build_surrogate(n_classes: int = 8, seed: int = 0, extra_hidden: int = 256, **overrides) -> ClassifierModel:
    return ClassifierModel(ClassifierConfig(n_classes=n_classes, extra_hidden=extra_hidden, **overrides), seed)


def config_from_state(state: dict, dropout: float = 0.5) -> ClassifierConfig:
    """Layer widths read off checkpoint tensor shapes (dropout is not stored)."""
    try:
        hidden = state["hidden.weight"].shape[1] if "hidden.weight" in state else 0
        return ClassifierConfig(n_classes=state["out.weight"].shape[1], conv1_filters=state["conv1.weight"].shape[3],
                                conv2_filters=state["conv2.weight"].shape[3],
                                dense_units=state["dense1.weight"].shape[1], extra_hidden=hidden, dropout=dropout)
    except (KeyError, IndexError) as exc:
        raise ValueError(f"not a classifier checkpoint: {exc}") from None


def surrogate_indices(ds: Dataset) -> np.ndarray:
    """Second half of the training split, the surrogate's training set."""
    return ds.train_idx[len(ds.train_idx) // 2:]


def count_parameters(config: ClassifierConfig) -> int:
    """Closed-form parameter count for a given configuration."""
    c = config
    n = c.conv1_filters * 3 + c.conv1_filters
    n += c.conv2_filters * c.conv1_filters * 6 + c.conv2_filters
    flat = c.conv2_filters * (FRAME_LEN - 2)
    n += flat * c.dense_units + c.dense_units
    width = c.dense_units
    if c.extra_hidden:
        n += width * c.extra_hidden + c.extra_hidden
        width = c.extra_hidden
    return n + width * c.n_classes + c.n_classes


@dataclass
class TrainHyper:
    epochs: int = 12
    batch_size: int = 128
    lr: float = 2e-3
    seed: int = 0


@dataclass
class TrainHistory:
    loss: list = field(default_factory=list)
    train_accuracy: list = field(default_factory=list)
    test_accuracy: list = field(default_factory=list)


def train(model: ClassifierModel, ds: Dataset, hyper: TrainHyper = TrainHyper(),
          frames=None, labels=None, log=None) -> TrainHistory:
    """Adam on mini-batch cross-entropy over ``ds``'s train split.

    ``frames``/``labels`` override the training set (e.g. augmented data); the
    test split of ``ds`` is still used for the per-epoch test accuracy.
    """
    if frames is None:
        train_set = ds.train()
        frames, labels = train_set.frames, train_set.labels
    if len(frames) == 0:
        raise ValueError("empty training set")
    test = ds.test() if len(ds.test_idx) else None
    rng = np.random.default_rng([hyper.seed, 1])
    drop_rng = np.random.default_rng([hyper.seed, 2])
    state = AdamState(lr=hyper.lr)
    params = model.parameters()
    history = TrainHistory()
    onehot_all = np.eye(model.n_classes, dtype=model.dtype)
    for epoch in range(hyper.epochs):
        order = rng.permutation(len(frames))
        model.train()
        total, correct = 0.0, 0
        for start in range(0, len(order), hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            x = Tensor(frames_to_input(frames[idx]).astype(model.dtype))
            logits = model.forward(x, drop_rng)
            loss = ops.cross_entropy(logits, onehot_all[labels[idx]])
            model.zero_grad()
            loss.backward()
            value = float(loss.data)
            if not np.isfinite(value):
                model.eval()
                raise TrainingError("loss is not finite", epoch)
            total += value * len(idx)
            correct += int((logits.data.argmax(axis=1) == labels[idx]).sum())
            new = adam_step({k: p.data for k, p in params.items()},
                            {k: p.grad for k, p in params.items()}, state)
            for k, p in params.items():
                p.data = new[k]
        model.eval()
        history.loss.append(total / len(order))
        history.train_accuracy.append(correct / len(order))
        if test is not None:
            history.test_accuracy.append(accuracy(model, test.frames, test.labels))
        if log:
            log(f"epoch {epoch + 1}/{hyper.epochs} loss={history.loss[-1]:.4f} "
                f"train_acc={history.train_accuracy[-1]:.4f}"
                + (f" test_acc={history.test_accuracy[-1]:.4f}" if test is not None else ""))
    model.zero_grad()
    return history


def accuracy(model, frames, labels, perturb=None) -> float:
    """Fraction of frames classified as their label.

    ``perturb``, if given, maps ``(frames, labels)`` to the frames actually
    seen by the receiver (channel plus perturbation).
    """
    frames = np.atleast_2d(frames)
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("accuracy of an empty record set")
    if perturb is not None:
        frames = perturb(frames, labels)
    return float(np.mean(model.predict(frames) == labels))
