"""Randomized smoothing: noisy-copy training augmentation and certified prediction with abstention."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .iqcore import Dataset

ABSTAIN = -1


@dataclass(frozen=True)
class SmoothingParams:
    k: int = 20
    sigma: float = 0.001
    alpha: float = 0.05
    q: float = 0.5

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0, 1)")
        if not 0 < self.q < 1:
            raise ValueError("q must be in (0, 1)")


def _noise(rng, shape, sigma):
    return sigma * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def augment_training(ds: Dataset, params: SmoothingParams, rng: np.random.Generator) -> Dataset:
    """Each record followed by ``k`` copies with N(0, sigma^2) noise on I and Q.

    The train/test split carries over: copies land on the side of their original.
    """
    k = params.k
    if k == 0:
        return ds
    reps = k + 1
    frames = np.repeat(ds.frames.astype(complex), reps, axis=0)
    noisy = np.ones(len(frames), dtype=bool)
    noisy[::reps] = False
    frames[noisy] += _noise(rng, (int(noisy.sum()), frames.shape[1]), params.sigma)
    spread = lambda idx: (np.asarray(idx)[:, None] * reps + np.arange(reps)).ravel()
    return Dataset(frames, np.repeat(ds.labels, reps), np.repeat(ds.snr_db, reps), ds.seed, ds.n_classes,
                   ds.flags, train_idx=spread(ds.train_idx), test_idx=spread(ds.test_idx))


@lru_cache(maxsize=4096)
def _binom_p_value(n_success: int, n_trials: int, q: Fraction) -> Fraction:
    probs = [math.comb(n_trials, i) * q ** i * (1 - q) ** (n_trials - i) for i in range(n_trials + 1)]
    obs = probs[n_success]
    return sum((p for p in probs if p <= obs), Fraction(0))


def binom_p_value(n_success: int, n_trials: int, q: float = 0.5) -> float:
    """Two-sided exact binomial test: total probability of outcomes no likelier than the observed one.

    Evaluated in exact rational arithmetic, then rounded once.
    """
    if not 0 <= n_success <= n_trials:
        raise ValueError(f"need 0 <= n_success <= n_trials, got {n_success}, {n_trials}")
    if not 0 < q < 1:
        raise ValueError("q must be in (0, 1)")
    return min(1.0, float(_binom_p_value(int(n_success), int(n_trials), Fraction(q))))


@dataclass
class CertifiedPrediction:
    outcome: int               # class index, or ABSTAIN
    counts: np.ndarray
    p_value: float
    n_a: int
    n_b: int

    @property
    def abstained(self) -> bool:
        return self.outcome == ABSTAIN


def decide(counts, params: SmoothingParams) -> CertifiedPrediction:
    """Binomial test on the top two vote counts."""
    counts = np.asarray(counts, dtype=int)
    order = np.argsort(-counts, kind="stable")
    n_a = int(counts[order[0]])
    n_b = int(counts[order[1]]) if len(counts) > 1 else 0
    p = binom_p_value(n_a, n_a + n_b, params.q) if n_a + n_b else 1.0
    outcome = int(order[0]) if p <= params.alpha else ABSTAIN
    return CertifiedPrediction(outcome, counts, p, n_a, n_b)


def certified_predict_batch(model, frames, params: SmoothingParams, rng) -> list:
    """Classify ``k`` noisy copies of each frame and apply :func:`decide`.

    ``rng`` is one generator, or a sequence with one generator per frame.
    """
    if params.k < 1:
        raise ValueError("certification needs k >= 1")
    frames = np.atleast_2d(np.asarray(frames, dtype=complex))
    if len(frames) == 0:
        return []
    shape = (params.k, frames.shape[1])
    if isinstance(rng, np.random.Generator):
        noise = _noise(rng, (len(frames) * params.k, frames.shape[1]), params.sigma)
    else:
        noise = np.concatenate([_noise(g, shape, params.sigma) for g in rng])
    copies = np.repeat(frames, params.k, axis=0) + noise
    votes = np.asarray(model.predict(copies)).reshape(len(frames), params.k)
    return [decide(np.bincount(v, minlength=model.n_classes), params) for v in votes]


def certified_predict(model, frame, params: SmoothingParams, rng: np.random.Generator) -> CertifiedPrediction:
    return certified_predict_batch(model, np.asarray(frame)[None], params, rng)[0]
