"""Training entry points shared by the CLI and scripted experiments."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from ..classifier import ClassifierModel, TrainHyper, surrogate_indices, train
from ..defense import augment_training
from . import sweep


def _fit(cfg, ds, frames, labels, epochs, log):
    model = ClassifierModel(sweep.model_config(cfg, ds.n_classes), seed=cfg.model.init_seed)
    hyper = TrainHyper(epochs=epochs, batch_size=cfg.train.batch_size, lr=cfg.train.lr, seed=cfg.seed)
    train(model, ds, hyper, frames=frames, labels=labels, log=log)
    return model


def train_from_config(cfg, ds, role: str = "target", log=None) -> ClassifierModel:
    """Train the model a config describes. ``role`` is "target", "surrogate" or "defended".

    The surrogate gets one more hidden layer (256 wide unless configured) and
    trains on a disjoint half of the training split. The defended model trains
    on the noise-augmented training split for ``defense.epochs`` epochs.
    """
    if role == "target":
        return _fit(cfg, ds, None, None, cfg.train.epochs, log)
    if role == "surrogate":
        if not cfg.model.extra_hidden:
            cfg = replace(cfg, model=replace(cfg.model, extra_hidden=256))
        idx = surrogate_indices(ds)
        return _fit(cfg, ds, ds.frames[idx], ds.labels[idx], cfg.train.epochs, log)
    if role == "defended":
        aug = augment_training(ds.train(), sweep.smoothing(cfg), np.random.default_rng([cfg.seed, 0xDEF]))
        return _fit(cfg, ds, aug.frames, aug.labels, cfg.defense.epochs or cfg.train.epochs, log)
    raise ValueError(f"unknown role {role!r}")
