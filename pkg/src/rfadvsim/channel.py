"""Flat per-symbol fading between the adversary and a receiver, plus AWGN and PNR bookkeeping.

A tap is ``K * (d0/d)**gamma * psi * h_ray``: deterministic path loss, one
log-normal shadowing draw per frame, and i.i.d. Rayleigh fading per symbol.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .iqcore import FRAME_LEN, add_noise

TAP_FLOOR = 1e-12


@dataclass(frozen=True)
class ChannelParams:
    K: float = 1.0
    d0: float = 1.0
    d: float = 10.0
    gamma_pl: float = 2.7
    shadow_sigma_db: float = 8.0
    rayleigh_scale: float = 1.0
    # "db": psi = 10**(X/20), X ~ N(0, sigma) in dB; "ln": psi = exp(X)
    shadow_units: str = "db"

    def __post_init__(self):
        if self.d <= 0 or self.d0 <= 0:
            raise ValueError("distances must be positive")
        if self.gamma_pl < 0:
            raise ValueError("path-loss exponent must be >= 0")
        if self.rayleigh_scale <= 0:
            raise ValueError("rayleigh_scale must be positive")
        if self.shadow_sigma_db < 0:
            raise ValueError("shadowing std must be >= 0")
        if self.shadow_units not in ("db", "ln"):
            raise ValueError("shadow_units must be 'db' or 'ln'")

    @property
    def path_loss(self) -> float:
        """Deterministic amplitude factor K (d0/d)^gamma."""
        return self.K * (self.d0 / self.d) ** self.gamma_pl

    def mean_power_gain(self) -> float:
        """E|h|^2 excluding shadowing: path_loss^2 * 2 * scale^2."""
        return self.path_loss ** 2 * 2.0 * self.rayleigh_scale ** 2

    def replace(self, **kw) -> "ChannelParams":
        from dataclasses import replace
        return replace(self, **kw)


def identity_taps(p: int = FRAME_LEN) -> np.ndarray:
    return np.ones(p, dtype=complex)


def _rayleigh(rng, scale, n):
    mag = rng.rayleigh(scale, n)
    return mag * np.exp(1j * rng.uniform(0.0, 2 * np.pi, n))


def sample_shadowing(params: ChannelParams, rng: np.random.Generator) -> float:
    x = rng.normal(0.0, params.shadow_sigma_db)
    return 10.0 ** (x / 20.0) if params.shadow_units == "db" else float(np.exp(x))


def sample_taps(params: ChannelParams, rng: np.random.Generator, p: int = FRAME_LEN) -> np.ndarray:
    """Diagonal of H_ar for one frame. Taps below ``TAP_FLOOR`` in magnitude are redrawn."""
    psi = sample_shadowing(params, rng)
    h = _rayleigh(rng, params.rayleigh_scale, p)
    while True:
        taps = params.path_loss * psi * h
        small = np.abs(taps) < TAP_FLOOR
        if not small.any():
            return taps
        h[small] = _rayleigh(rng, params.rayleigh_scale, int(small.sum()))


def apply_channel(taps, x) -> np.ndarray:
    taps, x = np.asarray(taps), np.asarray(x)
    if taps.shape[-1] != x.shape[-1]:
        raise DimensionError(f"apply_channel: taps {taps.shape} vs frame {x.shape}")
    return taps * x


def add_awgn(x, noise_power: float, rng: np.random.Generator) -> np.ndarray:
    """Circularly-symmetric complex Gaussian noise with per-symbol variance ``noise_power``."""
    if noise_power < 0:
        raise ValueError("noise_power must be >= 0")
    return add_noise(np.asarray(x, dtype=complex), noise_power, rng)


def snr_to_noise_power(snr_db: float) -> float:
    """Per-symbol noise variance for a unit-power signal."""
    return 10.0 ** (-snr_db / 10.0)


def pnr_to_pmax(pnr_db: float, noise_power: float, path_loss: float | None = None) -> float:
    """Perturbation budget ``noise_power * 10**(pnr/10)``.

    ``noise_power`` must be in the same units as the budget (the harness passes
    the frame noise energy). With ``path_loss`` (amplitude factor) the ratio is
    referred to the receiver: the budget is divided by ``path_loss**2`` so the
    mean received perturbation power, before fading, hits the target PNR.
    """
    if noise_power <= 0:
        raise ValueError("noise_power must be positive")
    pmax = noise_power * 10.0 ** (pnr_db / 10.0)
    if path_loss is not None:
        pmax /= path_loss ** 2
    return pmax
