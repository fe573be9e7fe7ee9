"""White-box perturbations against a receiver whose input and channel the adversary knows.

Every attack exists in a batched form (``*_batch``, rows are frames) used by
the sweep harness and a single-frame form taking an :class:`AttackContext`.

The model only needs ``predict(frames)``, ``input_gradient(frames, labels)``
(complex ``dL/dI + 1j dL/dQ`` of the cross-entropy) and ``n_classes``.

Sign conventions: the targeted direction ``d`` is the unit gradient of the
loss toward the target class (rotated by ``conj(h)`` for MRPP). Perturbations
step against it, ``delta = -sqrt(P) d``. Non-targeted ones step along the
true-class gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import TAP_FLOOR
from .errors import DegenerateError, NumericError

DEFAULT_GAMMA_GRID = (0.6, 0.8, 1.0, 1.2, 1.4, 1.6)
DEFAULT_E = 10
MMSE_MAX_ITER = 200


@dataclass
class Perturbation:
    delta: np.ndarray
    pmax: float
    target: int | None = None
    eps: float | None = None
    flipping: bool = True
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.delta = np.asarray(self.delta, dtype=complex)
        if self.power > self.pmax * (1 + 1e-9):
            raise ValueError(f"perturbation power {self.power} exceeds budget {self.pmax}")

    @property
    def power(self) -> float:
        return float(np.sum(np.abs(self.delta) ** 2))


@dataclass
class AttackContext:
    model: object
    r_tr: np.ndarray
    taps: np.ndarray
    label: int
    pmax: float
    eps_acc: float | None = None
    E: int = DEFAULT_E

    def __post_init__(self):
        self.r_tr = np.asarray(self.r_tr, dtype=complex)
        self.taps = np.broadcast_to(np.asarray(self.taps, dtype=complex), self.r_tr.shape)
        if self.pmax <= 0:
            raise ValueError("pmax must be positive")
        if self.eps_acc is None:
            self.eps_acc = default_eps_acc(self.pmax)
        if self.eps_acc <= 0:
            raise ValueError("eps_acc must be positive")
        if self.E < 1:
            raise ValueError("E must be >= 1")


@dataclass
class TargetedResult:
    """Batched Algorithm-1 output. ``direction`` is the unit ``d`` of the chosen class."""
    delta: np.ndarray
    direction: np.ndarray
    target: np.ndarray
    eps: np.ndarray
    flipping: np.ndarray


def default_eps_acc(pmax: float) -> float:
    return float(np.sqrt(pmax)) / 100.0


def _rows(x) -> np.ndarray:
    return np.atleast_2d(np.asarray(x, dtype=complex))


def _unit(v, axis=-1):
    n = np.linalg.norm(v, axis=axis, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(n > 0, v / np.where(n > 0, n, 1.0), 0.0), n[..., 0]


def bisect_eps(fooled, n: int, emax: float, eps_acc: float) -> np.ndarray:
    """Vectorized Algorithm-1 search: smallest eps in [0, emax] with ``fooled(eps)`` true.

    ``fooled`` maps an (n,) array of eps values to an (n,) bool array. Returns
    the upper end of the final bracket, which stays ``emax`` if nothing flips.
    """
    lo = np.zeros(n)
    hi = np.full(n, float(emax))
    width = float(emax)
    while n and width > eps_acc:
        width /= 2
        mid = 0.5 * (lo + hi)
        hit = np.asarray(fooled(mid), dtype=bool)
        hi = np.where(hit, mid, hi)
        lo = np.where(hit, lo, mid)
    return hi


def class_gradients(model, r) -> np.ndarray:
    """(N, C, p) input gradients of every class loss at every frame."""
    r = _rows(r)
    n, p = r.shape
    c = model.n_classes
    g = model.input_gradient(np.repeat(r, c, axis=0), np.tile(np.arange(c), n))
    return np.asarray(g).reshape(n, c, p)


def select_target(eps, flips, p_true, labels, valid) -> np.ndarray:
    """argmin eps over valid wrong classes; ties by full-budget flip, then lower true-class probability."""
    n, c = eps.shape
    out = np.empty(n, dtype=int)
    for i in range(n):
        cand = [k for k in range(c) if k != labels[i] and valid[i, k]]
        if not cand:
            raise DegenerateError(f"frame {i}: every class gradient vanishes")
        out[i] = min(cand, key=lambda k: (eps[i, k], not flips[i, k], p_true[i, k], k))
    return out


def _true_prob(model, frames, labels):
    if hasattr(model, "proba"):
        pr = model.proba(frames)
        return pr[np.arange(len(frames)), labels]
    return np.zeros(len(frames))


def targeted_batch(model, r, taps, labels, pmax, eps_acc=None, grads=None,
                   directions=None, search_taps=None) -> TargetedResult:
    """Algorithm 1 on a batch of frames.

    ``directions`` (N, C, p) overrides the per-class unit directions (the
    default is the MRPP rotation ``conj(h) grad``). ``search_taps`` is the
    channel the adversary simulates during the eps search (defaults to ``taps``).
    """
    r = _rows(r)
    n, p = r.shape
    labels = np.broadcast_to(np.asarray(labels, dtype=int), (n,))
    taps = np.broadcast_to(np.asarray(taps, dtype=complex), r.shape)
    search_taps = taps if search_taps is None else np.broadcast_to(search_taps, r.shape)
    eps_acc = default_eps_acc(pmax) if eps_acc is None else eps_acc
    c = model.n_classes
    if directions is None:
        if grads is None:
            grads = class_gradients(model, r)
        directions, norms = _unit(np.conj(taps)[:, None, :] * grads)
    else:
        norms = np.linalg.norm(directions, axis=2)
    valid = norms > 0
    # every (frame, class) pair searched at once
    rr = np.repeat(r, c, axis=0)
    hd = (search_taps[:, None, :] * directions).reshape(n * c, p)
    ll = np.repeat(labels, c)
    emax = float(np.sqrt(pmax))
    eps = bisect_eps(lambda e: model.predict(rr - e[:, None] * hd) != ll, n * c, emax, eps_acc)
    full = rr - emax * hd
    flips = (model.predict(full) != ll).reshape(n, c)
    p_true = _true_prob(model, full, ll).reshape(n, c)
    eps = eps.reshape(n, c)
    target = select_target(eps, flips, p_true, labels, valid)
    idx = np.arange(n)
    direction = directions[idx, target]
    return TargetedResult(delta=-emax * direction, direction=direction, target=target,
                          eps=eps[idx, target], flipping=flips[idx, target])


def nochannel_batch(model, r, labels, pmax, eps_acc=None, grads=None) -> TargetedResult:
    """Channel-unaware targeted attack (Algorithm 1 with identity channel)."""
    r = _rows(r)
    return targeted_batch(model, r, np.ones_like(r), labels, pmax, eps_acc, grads=grads)


def mrpp_targeted_batch(model, r, taps, labels, pmax, eps_acc=None, grads=None) -> TargetedResult:
    return targeted_batch(model, r, taps, labels, pmax, eps_acc, grads=grads)


def _check_taps(taps):
    if np.min(np.abs(taps)) < TAP_FLOOR:
        raise DegenerateError(f"channel tap magnitude {np.min(np.abs(taps)):.3g} below {TAP_FLOOR}")


def channel_inversion_batch(noch_direction, taps, pmax) -> np.ndarray:
    """delta_j = d_j / h_j rescaled to the budget, sent opposite to ``d``."""
    taps = np.broadcast_to(np.asarray(taps, dtype=complex), np.shape(noch_direction))
    _check_taps(taps)
    inv, _ = _unit(np.asarray(noch_direction) / taps)
    return -np.sqrt(pmax) * inv


def mmse_solve(taps, d, gamma: float, pmax: float, sign: float = -1.0) -> tuple[np.ndarray, float]:
    """Power-constrained least squares ``min ||H delta - sign*gamma*d||^2 s.t. ||delta||^2 <= pmax``.

    Solution ``delta_j = sign * gamma * conj(h_j) d_j / (|h_j|^2 + lam)`` with
    ``lam >= 0`` found by bisection (0 when the unconstrained optimum fits).
    """
    taps = np.asarray(taps, dtype=complex)
    d = np.asarray(d, dtype=complex)
    a = np.abs(taps) ** 2
    num = gamma ** 2 * a * np.abs(d) ** 2

    def power(lam):
        return float(np.sum(num / (a + lam) ** 2))

    if power(0.0) <= pmax:
        lam = 0.0
    else:
        # power(lam) <= sum(num) / lam^2, so this upper end is feasible
        lo, hi = 0.0, float(np.sqrt(num.sum() / pmax))
        for _ in range(MMSE_MAX_ITER):
            mid = 0.5 * (lo + hi)
            if power(mid) > pmax:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 4 * np.finfo(float).eps * hi:
                break
        else:
            raise NumericError(f"mmse bisection did not converge (bracket {lo}, {hi})")
        lam = hi
    delta = sign * gamma * np.conj(taps) * d / (a + lam)
    return delta, lam


def _mmse_search(model, r, taps, d, labels, pmax, gamma_grid, sign, score_class):
    """Per frame, the gamma in the grid whose received perturbation scores best.

    Needs ``model.proba``.
    Targeted runs maximize the target-class probability; non-targeted runs
    minimize the true-class probability.
    """
    r = _rows(r)
    n = len(r)
    grid = list(gamma_grid)
    if not grid:
        raise ValueError("gamma_grid is empty")
    cands = np.empty((len(grid), n, r.shape[1]), dtype=complex)
    lams = np.empty((len(grid), n))
    for gi, g in enumerate(grid):
        for i in range(n):
            cands[gi, i], lams[gi, i] = mmse_solve(taps[i], d[i], g, pmax, sign)
    frames = (r[None] + taps[None] * cands).reshape(-1, r.shape[1])
    pr = model.proba(frames).reshape(len(grid), n, -1)
    score = pr[:, np.arange(n), score_class]
    best = score.argmax(axis=0) if sign < 0 else score.argmin(axis=0)
    idx = np.arange(n)
    return cands[best, idx], np.asarray(grid)[best], lams[best, idx]


def mmse_targeted_batch(model, r, taps, labels, pmax, gamma_grid=DEFAULT_GAMMA_GRID, noch=None,
                        eps_acc=None):
    """Targeted MMSE; ``noch`` is a precomputed :func:`nochannel_batch` result."""
    r = _rows(r)
    taps = np.broadcast_to(np.asarray(taps, dtype=complex), r.shape)
    if noch is None:
        noch = nochannel_batch(model, r, labels, pmax, eps_acc)
    d = np.sqrt(pmax) * noch.direction
    return _mmse_search(model, r, taps, d, labels, pmax, gamma_grid, -1.0, noch.target)


def nontargeted_batch(model, r, taps, labels, pmax, E=DEFAULT_E, mrpp=False, return_flags=False):
    """Algorithm 2. ``mrpp`` rotates each step's gradient by ``conj(h)``.

    Frames whose gradient vanishes at some step skip that step; a frame whose
    accumulated direction is zero raises :class:`DegenerateError`.
    """
    r = _rows(r)
    taps = np.broadcast_to(np.asarray(taps, dtype=complex), r.shape)
    labels = np.broadcast_to(np.asarray(labels, dtype=int), (len(r),))
    if E < 1:
        raise ValueError("E must be >= 1")
    step = np.sqrt(pmax / E)
    x = r.copy()
    acc = np.zeros_like(r)
    skipped = np.zeros(len(r), dtype=int)
    for _ in range(E):
        g = np.asarray(model.input_gradient(x, labels))
        d, n = _unit(np.conj(taps) * g if mrpp else g)
        skipped += n == 0
        x = x + step * taps * d
        acc = acc + step * d
    out, n = _unit(acc)
    if np.any(n == 0):
        raise DegenerateError(f"vanishing gradient on frames {np.flatnonzero(n == 0).tolist()}")
    out = np.sqrt(pmax) * out
    return (out, skipped) if return_flags else out


def mmse_nontargeted_batch(model, r, taps, labels, pmax, gamma_grid=DEFAULT_GAMMA_GRID, E=DEFAULT_E,
                           ref=None):
    """Non-targeted MMSE around the identity-channel naive attack ``ref``."""
    r = _rows(r)
    taps = np.broadcast_to(np.asarray(taps, dtype=complex), r.shape)
    labels = np.broadcast_to(np.asarray(labels, dtype=int), (len(r),))
    if ref is None:
        ref = nontargeted_batch(model, r, np.ones_like(r), labels, pmax, E)
    return _mmse_search(model, r, taps, ref, labels, pmax, gamma_grid, 1.0, labels)


# --- single-frame API ---

def _from_targeted(res: TargetedResult, pmax, **info) -> Perturbation:
    return Perturbation(res.delta[0], pmax, target=int(res.target[0]), eps=float(res.eps[0]),
                        flipping=bool(res.flipping[0]), info=info)


def fgm_targeted_nochannel(ctx: AttackContext) -> Perturbation:
    res = nochannel_batch(ctx.model, ctx.r_tr, [ctx.label], ctx.pmax, ctx.eps_acc)
    return _from_targeted(res, ctx.pmax)


def mrpp_targeted(ctx: AttackContext) -> Perturbation:
    res = mrpp_targeted_batch(ctx.model, ctx.r_tr, ctx.taps[None], [ctx.label], ctx.pmax, ctx.eps_acc)
    return _from_targeted(res, ctx.pmax)


def channel_inversion(ctx: AttackContext) -> Perturbation:
    res = nochannel_batch(ctx.model, ctx.r_tr, [ctx.label], ctx.pmax, ctx.eps_acc)
    delta = channel_inversion_batch(res.direction, ctx.taps[None], ctx.pmax)
    return Perturbation(delta[0], ctx.pmax, target=int(res.target[0]))


def mmse_targeted(ctx: AttackContext, gamma_grid=DEFAULT_GAMMA_GRID) -> Perturbation:
    delta, gamma, lam = mmse_targeted_batch(ctx.model, ctx.r_tr, ctx.taps[None], [ctx.label], ctx.pmax,
                                            gamma_grid, eps_acc=ctx.eps_acc)
    return Perturbation(delta[0], ctx.pmax, info={"gamma": float(gamma[0]), "lam": float(lam[0])})


def naive_nontargeted(ctx: AttackContext) -> Perturbation:
    delta, skipped = nontargeted_batch(ctx.model, ctx.r_tr, ctx.taps[None], [ctx.label], ctx.pmax, ctx.E,
                                       return_flags=True)
    return Perturbation(delta[0], ctx.pmax, info={"skipped_steps": int(skipped[0])})


def mrpp_nontargeted(ctx: AttackContext) -> Perturbation:
    delta, skipped = nontargeted_batch(ctx.model, ctx.r_tr, ctx.taps[None], [ctx.label], ctx.pmax, ctx.E,
                                       mrpp=True, return_flags=True)
    return Perturbation(delta[0], ctx.pmax, info={"skipped_steps": int(skipped[0])})


def mmse_nontargeted(ctx: AttackContext, gamma_grid=DEFAULT_GAMMA_GRID) -> Perturbation:
    delta, gamma, lam = mmse_nontargeted_batch(ctx.model, ctx.r_tr, ctx.taps[None], [ctx.label], ctx.pmax,
                                               gamma_grid, ctx.E)
    return Perturbation(delta[0], ctx.pmax, info={"gamma": float(gamma[0]), "lam": float(lam[0])})
