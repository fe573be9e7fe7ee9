"""One perturbation transmission aimed at m receivers at once.

Arrays carry a receiver axis first: inputs ``r`` and taps are (m, N, p) for
N frames (a single frame may be given as (m, p)). A broadcast sample counts
as a success only when every receiver misclassifies it.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import attack_wb as wb
from .errors import DegenerateError


@dataclass
class ReceiverEnsemble:
    models: list
    taps: np.ndarray
    r: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        m = len(self.models)
        if m < 1:
            raise ValueError("need at least one receiver")
        self.r = np.asarray(self.r, dtype=complex)
        if self.r.ndim == 2:
            self.r = self.r[:, None, :]
        taps = np.asarray(self.taps, dtype=complex)
        if taps.ndim == 2:
            taps = taps[:, None, :]
        self.taps = np.broadcast_to(taps, self.r.shape)
        if self.r.shape[0] != m:
            raise ValueError(f"{m} models but inputs for {self.r.shape[0]} receivers")
        self.weights = check_weights(np.full(m, 1.0 / m) if self.weights is None else self.weights, m)

    @property
    def m(self) -> int:
        return len(self.models)

    @property
    def n_frames(self) -> int:
        return self.r.shape[1]

    def with_weights(self, w) -> "ReceiverEnsemble":
        return ReceiverEnsemble(self.models, self.taps, self.r, w)


def check_weights(w, m) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (m,) or np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
        raise ValueError(f"weights must be {m} nonnegative values summing to 1, got {w.tolist()}")
    return w


def heuristic_weights(rayleigh_scales) -> np.ndarray:
    """Weights inversely proportional to each receiver's Rayleigh parameter."""
    inv = 1.0 / np.asarray(rayleigh_scales, dtype=float)
    return inv / inv.sum()


def fooled(ens: ReceiverEnsemble, delta, labels) -> np.ndarray:
    """(m, N) bool: receiver i misclassifies frame n under the common perturbation."""
    delta = np.atleast_2d(delta)
    return np.stack([ens.models[i].predict(ens.r[i] + ens.taps[i] * delta) != labels
                     for i in range(ens.m)])


def joint_success(ens, delta, labels) -> np.ndarray:
    return fooled(ens, delta, labels).all(axis=0)


def individual_perturbations(ens: ReceiverEnsemble, labels, pmax, eps_acc=None) -> np.ndarray:
    """(m, N, p) Algorithm-1 MRPP perturbation designed for each receiver alone."""
    return np.stack([wb.mrpp_targeted_batch(ens.models[i], ens.r[i], ens.taps[i], labels, pmax, eps_acc).delta
                     for i in range(ens.m)])


def idba_combine(deltas, weights, pmax) -> np.ndarray:
    mix = np.tensordot(np.asarray(weights, float), deltas, axes=1)
    n = np.linalg.norm(mix, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise DegenerateError("weighted perturbations cancel")
    return np.sqrt(pmax) * mix / n


def idba(ens: ReceiverEnsemble, labels, pmax, eps_acc=None, deltas=None) -> np.ndarray:
    """Normalized weighted sum of the per-receiver MRPP perturbations, (N, p)."""
    labels = np.broadcast_to(labels, (ens.n_frames,))
    if deltas is None:
        deltas = individual_perturbations(ens, labels, pmax, eps_acc)
    return idba_combine(deltas, ens.weights, pmax)


def receiver_gradients(ens: ReceiverEnsemble) -> np.ndarray:
    """(m, N, C, p) per-class input gradients at each receiver."""
    return np.stack([wb.class_gradients(ens.models[i], ens.r[i]) for i in range(ens.m)])


@dataclass
class JdbaResult:
    delta: np.ndarray
    target: np.ndarray
    fool_count: np.ndarray
    eps: np.ndarray


def jdba(ens: ReceiverEnsemble, labels, pmax, eps_acc=None, grads=None) -> JdbaResult:
    """Algorithm 1 with the joint direction ``sum_i w_i conj(h_i) grad_i`` per class.

    The eps search requires every receiver to be fooled. Classes whose search
    fooled all receivers at some eps within budget come first, by smallest eps;
    the rest rank by the number of receivers fooled at full budget. Remaining
    ties go to more receivers fooled at full budget, then the lower mean
    true-class probability there, then the lower class index. With m = 1 this
    is exactly Algorithm 1's choice.
    """
    m, n, p = ens.r.shape
    labels = np.broadcast_to(np.asarray(labels, dtype=int), (n,))
    eps_acc = wb.default_eps_acc(pmax) if eps_acc is None else eps_acc
    if grads is None:
        grads = receiver_gradients(ens)
    c = grads.shape[2]
    rot = np.conj(ens.taps)[:, :, None, :] * grads
    mix = rot[0] * ens.weights[0] if m == 1 else np.tensordot(ens.weights, rot, axes=1)
    directions, norms = wb._unit(mix)
    valid = norms > 0
    ll = np.repeat(labels, c)
    rr = [np.repeat(ens.r[i], c, axis=0) for i in range(m)]
    hd = [(ens.taps[i][:, None, :] * directions).reshape(n * c, p) for i in range(m)]

    def all_fooled(e):
        ok = np.ones(n * c, dtype=bool)
        for i in range(m):
            ok &= ens.models[i].predict(rr[i] - e[:, None] * hd[i]) != ll
        return ok

    emax = float(np.sqrt(pmax))
    eps = wb.bisect_eps(all_fooled, n * c, emax, eps_acc).reshape(n, c)
    count = np.zeros(n * c, dtype=int)
    p_true = np.zeros(n * c)
    for i in range(m):
        full = rr[i] - emax * hd[i]
        count += ens.models[i].predict(full) != ll
        p_true += wb._true_prob(ens.models[i], full, ll) / m
    count, p_true = count.reshape(n, c), p_true.reshape(n, c)
    target = np.empty(n, dtype=int)
    for k in range(n):
        cand = [j for j in range(c) if j != labels[k] and valid[k, j]]
        if not cand:
            raise DegenerateError(f"frame {k}: every joint direction vanishes")
        reached = lambda j: m if eps[k, j] < emax else count[k, j]
        target[k] = min(cand, key=lambda j: (-reached(j), eps[k, j], -count[k, j], p_true[k, j], j))
    idx = np.arange(n)
    return JdbaResult(delta=-emax * directions[idx, target], target=target,
                      fool_count=count[idx, target], eps=eps[idx, target])


def simplex_grid(m: int, step: float) -> np.ndarray:
    k = int(round(1.0 / step))
    if not np.isclose(k * step, 1.0):
        raise ValueError("grid step must divide 1")
    pts = [np.array(c, float) / k for c in itertools.product(range(k + 1), repeat=m) if sum(c) == k]
    return np.array(pts)


def weight_line_search(ens: ReceiverEnsemble, labels, pmax, step: float = 0.1, kind: str = "jdba",
                       center=None, eps_acc=None):
    """Grid weights minimizing joint accuracy (1 - all-fooled rate) over the ensemble's frames.

    Ties go to the candidate closest to ``center`` (uniform by default).
    Returns (weights, table) with table rows (weights, joint accuracy).
    """
    labels = np.broadcast_to(labels, (ens.n_frames,))
    center = np.full(ens.m, 1.0 / ens.m) if center is None else np.asarray(center, float)
    grid = simplex_grid(ens.m, step)
    if kind == "jdba":
        grads = receiver_gradients(ens)
        craft = lambda e: jdba(e, labels, pmax, eps_acc, grads=grads).delta
    elif kind == "idba":
        deltas = individual_perturbations(ens, labels, pmax, eps_acc)
        craft = lambda e: idba(e, labels, pmax, deltas=deltas)
    else:
        raise ValueError(f"unknown broadcast kind {kind!r}")
    table = []
    for w in grid:
        e = ens.with_weights(w)
        acc = 1.0 - float(joint_success(e, craft(e), labels).mean())
        table.append((w, acc))
    best = min(table, key=lambda t: (t[1], float(np.linalg.norm(t[0] - center))))
    return best[0], table
