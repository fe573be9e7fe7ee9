"""Attacks with partial knowledge: channel distribution only, no input, or a surrogate model.

Banks of per-input (or per-channel) white-box perturbations are compressed
into one direction, either with the first principal component or by
averaging latent codes of a VAE.
"""

from __future__ import annotations

import numpy as np

from . import attack_wb as wb
from .channel import ChannelParams, sample_taps
from .errors import DegenerateError
from .vae import VaeModel, normalize_rows

PCA_TOL = 1e-10
PCA_MAX_ITER = 10_000


def _as_real(bank) -> tuple[np.ndarray, bool]:
    bank = np.atleast_2d(np.asarray(bank))
    if np.iscomplexobj(bank):
        return np.concatenate([bank.real, bank.imag], axis=1), True
    return bank.astype(float), False


def _as_complex(v, p):
    return v[:p] + 1j * v[p:]


def canonical_sign(v: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    nz = np.flatnonzero(np.abs(v) > tol * np.max(np.abs(v)))
    return -v if nz.size and v[nz[0]] < 0 else v


def first_principal_component(bank) -> np.ndarray:
    """Unit top right-singular vector of the stacked (uncentered) bank, by power iteration on B^T B.

    Complex rows are treated as [real | imag]; the result has the same kind as
    the rows. Sign: first nonzero coordinate positive.
    """
    B, cplx = _as_real(bank)
    if B.shape[0] < 1:
        raise ValueError("empty perturbation bank")
    if not np.all(np.isfinite(B)):
        raise ValueError("bank rows must be finite")
    M = B.T @ B
    scale = np.max(np.abs(M))
    if scale == 0:
        raise DegenerateError("perturbation bank has rank 0")
    M = M / scale
    # start from the largest row, which cannot be orthogonal to the top direction unless B has rank 0
    v = B[np.argmax(np.linalg.norm(B, axis=1))]
    v = v / np.linalg.norm(v)
    for _ in range(PCA_MAX_ITER):
        w = M @ v
        w /= np.linalg.norm(w)
        if w @ v < 0:
            w = -w
        done = np.linalg.norm(w - v) <= PCA_TOL
        v = w
        if done:
            break
    v = canonical_sign(v)
    return _as_complex(v, B.shape[1] // 2) if cplx else v


def _oriented(bank, v):
    """Flip v to point along the bank's mean so the UAP keeps the attack's sense."""
    mean = np.mean(bank, axis=0)
    return -v if np.real(np.vdot(v, mean)) < 0 else v


def pca_uap(bank, pmax) -> np.ndarray:
    v = first_principal_component(bank)
    return np.sqrt(pmax) * _oriented(np.atleast_2d(bank), v)


def attack_limited_channel(model, r_tr, label, channel: ChannelParams, N: int, pmax: float,
                           rng: np.random.Generator, eps_acc=None) -> wb.Perturbation:
    """MRPP against N sampled channels, compressed to the first principal direction."""
    if N < 1:
        raise ValueError("N must be >= 1")
    r = np.asarray(r_tr, dtype=complex)
    taps = np.stack([sample_taps(channel, rng, r.size) for _ in range(N)])
    res = wb.mrpp_targeted_batch(model, np.tile(r, (N, 1)), taps, label, pmax, eps_acc)
    return wb.Perturbation(pca_uap(res.delta, pmax), pmax, info={"N": N})


def limited_channel_batch(model, r, labels, channel: ChannelParams, N, pmax, rngs, eps_acc=None):
    """Row-wise :func:`attack_limited_channel`; ``rngs`` holds one generator per frame."""
    r = np.atleast_2d(r)
    p = r.shape[1]
    taps = np.stack([np.stack([sample_taps(channel, g, p) for _ in range(N)]) for g in rngs])
    res = wb.mrpp_targeted_batch(model, np.repeat(r, N, axis=0), taps.reshape(-1, p),
                                 np.repeat(labels, N), pmax, eps_acc)
    bank = res.delta.reshape(len(r), N, p)
    return np.stack([pca_uap(b, pmax) for b in bank])


def uap_pca_input_independent(model, inputs, labels, taps, pmax, eps_acc=None) -> wb.Perturbation:
    """MRPP on each precollected input with the true channel, then PCA."""
    inputs = np.atleast_2d(inputs)
    res = wb.mrpp_targeted_batch(model, inputs, np.broadcast_to(taps, inputs.shape), labels, pmax, eps_acc)
    return wb.Perturbation(pca_uap(res.delta, pmax), pmax, info={"N": len(inputs)})


def uap_pca_channel_independent(model, inputs, labels, channel: ChannelParams, pmax,
                                rng: np.random.Generator, eps_acc=None, taps=None) -> wb.Perturbation:
    """As the input-independent UAP but each input sees its own sampled channel.

    ``taps`` (N, p) supplies the realizations directly (e.g. a point mass).
    """
    inputs = np.atleast_2d(inputs)
    if taps is None:
        taps = np.stack([sample_taps(channel, rng, inputs.shape[1]) for _ in range(len(inputs))])
    res = wb.mrpp_targeted_batch(model, inputs, taps, labels, pmax, eps_acc)
    return wb.Perturbation(pca_uap(res.delta, pmax), pmax, info={"N": len(inputs)})


def vae_average(vae: VaeModel, rows) -> np.ndarray:
    """decode(mean of encoder means) for a set of rows."""
    mu, _ = vae.encode(normalize_rows(rows))
    return vae.decode(mu.mean(axis=0, keepdims=True))[0]


def _conj_match(h, d_avg, pmax):
    out = np.conj(h) * d_avg
    n = np.linalg.norm(out)
    if n < 1e-12:
        raise DegenerateError("decoded perturbation vanishes after channel matching")
    return np.sqrt(pmax) * out / n


def uap_vae_input_independent(vae: VaeModel, perturbations, taps, pmax) -> wb.Perturbation:
    """``sqrt(P) conj(H) d_avg / ||conj(H) d_avg||`` with ``d_avg`` the decoded mean latent.

    ``perturbations`` are identity-channel attack vectors (``-sqrt(P) d``); the
    decoded average is returned with their sign.
    """
    d_avg = vae_average(vae, perturbations)
    h = np.broadcast_to(np.asarray(taps, dtype=complex), d_avg.shape)
    return wb.Perturbation(_conj_match(h, d_avg, pmax), pmax, info={"k": len(np.atleast_2d(perturbations))})


def uap_vae_channel_independent(pert_vae: VaeModel, chan_vae: VaeModel, perturbations, channel_samples,
                                pmax) -> wb.Perturbation:
    """Channel replaced by ``H_avg``, the channel VAE's decoded mean over sampled realizations."""
    d_avg = vae_average(pert_vae, perturbations)
    h_avg = vae_average(chan_vae, channel_samples)
    return wb.Perturbation(_conj_match(h_avg, d_avg, pmax), pmax,
                           info={"k": len(np.atleast_2d(perturbations))})


def uap_blackbox(uap_op, surrogate, *args, **kwargs) -> wb.Perturbation:
    """Run any UAP construction against ``surrogate`` instead of the target model."""
    return uap_op(surrogate, *args, **kwargs)
