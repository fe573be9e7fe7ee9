"""Convolutional VAE over 2x128 frames (perturbations or channel realizations).

Encoder: conv(1x3) -> conv(2x3) -> dense(16) -> dense(4); decoder: dense ->
deconv(2x3) -> deconv(1x3) -> deconv(3x3, 1 filter). All convolutions keep the
2x128 grid. ``scale_divisor`` shrinks the filter counts (1 gives full size).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classifier import frames_to_input
from .errors import TrainingError
from .iqcore import FRAME_LEN
from .nnad import AdamState, Conv2d, ConvTranspose2d, Dense, Network, Tensor, adam_step, ops


@dataclass(frozen=True)
class VaeConfig:
    latent: int = 2                 # 2: dense-2 output split mean|logvar; 4: separate variance head
    scale_divisor: int = 4
    conv1_filters: int = 128
    conv2_filters: int = 40
    hidden: int = 16
    frame_len: int = FRAME_LEN

    def __post_init__(self):
        if self.latent not in (2, 4):
            raise ValueError("latent must be 2 or 4")
        if self.scale_divisor < 1:
            raise ValueError("scale_divisor must be >= 1")

    @property
    def f1(self):
        return max(1, self.conv1_filters // self.scale_divisor)

    @property
    def f2(self):
        return max(1, self.conv2_filters // self.scale_divisor)


class VaeModel(Network):
    def __init__(self, config: VaeConfig = VaeConfig(), seed: int = 0, dtype=np.float32):
        super().__init__()
        self.config = c = config
        rng = np.random.default_rng(seed)
        flat = 2 * c.frame_len * c.f2
        self.enc_conv1 = Conv2d(1, c.f1, (1, 3), rng, "same", dtype)
        self.enc_conv2 = Conv2d(c.f1, c.f2, (2, 3), rng, "same", dtype)
        self.enc_dense1 = Dense(flat, c.hidden, rng, dtype)
        self.enc_dense2 = Dense(c.hidden, 4, rng, dtype)
        names = ["enc_conv1", "enc_conv2", "enc_dense1", "enc_dense2"]
        if c.latent == 4:
            self.enc_logvar = Dense(c.hidden, 4, rng, dtype)
            names.append("enc_logvar")
        self.dec_dense = Dense(c.latent, flat, rng, dtype)
        self.dec_deconv1 = ConvTranspose2d(c.f2, c.f2, (2, 3), rng, "same", dtype)
        self.dec_deconv2 = ConvTranspose2d(c.f2, c.f1, (1, 3), rng, "same", dtype)
        self.dec_deconv3 = ConvTranspose2d(c.f1, 1, (3, 3), rng, "same", dtype)
        names += ["dec_dense", "dec_deconv1", "dec_deconv2", "dec_deconv3"]
        self.layer_names = tuple(names)

    @property
    def latent(self) -> int:
        return self.config.latent

    def encode_t(self, x: Tensor) -> tuple[Tensor, Tensor]:
        h = ops.relu(self.enc_conv1(x))
        h = ops.relu(self.enc_conv2(h))
        h = ops.relu(self.enc_dense1(ops.flatten(h)))
        out = self.enc_dense2(h)
        if self.latent == 4:
            return out, self.enc_logvar(h)
        q = self.latent
        return _cols(out, 0, q), _cols(out, q, 2 * q)

    def decode_t(self, z: Tensor) -> Tensor:
        c = self.config
        h = ops.relu(self.dec_dense(z))
        h = ops.reshape(h, (-1, 2, c.frame_len, c.f2))
        h = ops.relu(self.dec_deconv1(h))
        h = ops.relu(self.dec_deconv2(h))
        return self.dec_deconv3(h)

    # complex-row helpers
    def encode(self, rows) -> tuple[np.ndarray, np.ndarray]:
        mu, lv = self.encode_t(Tensor(frames_to_input(rows).astype(self.dtype)))
        return mu.data.astype(np.float64), lv.data.astype(np.float64)

    def decode(self, z) -> np.ndarray:
        out = self.decode_t(Tensor(np.atleast_2d(z).astype(self.dtype))).data[..., 0].astype(np.float64)
        return out[:, 0, :] + 1j * out[:, 1, :]

    def layer_shapes(self) -> dict[str, tuple]:
        """Output shape of every layer for one input frame (channel-last)."""
        x = Tensor(np.zeros((1, 2, self.config.frame_len, 1), dtype=self.dtype))
        shapes = {}
        h = self.enc_conv1(x); shapes["enc_conv1"] = h.shape[1:]
        h = self.enc_conv2(ops.relu(h)); shapes["enc_conv2"] = h.shape[1:]
        h = self.enc_dense1(ops.flatten(ops.relu(h))); shapes["enc_dense1"] = h.shape[1:]
        shapes["enc_dense2"] = self.enc_dense2(ops.relu(h)).shape[1:]
        z = Tensor(np.zeros((1, self.latent), dtype=self.dtype))
        h = self.dec_dense(z); shapes["dec_dense"] = h.shape[1:]
        h = ops.reshape(ops.relu(h), (-1, 2, self.config.frame_len, self.config.f2))
        h = self.dec_deconv1(h); shapes["dec_deconv1"] = h.shape[1:]
        h = self.dec_deconv2(ops.relu(h)); shapes["dec_deconv2"] = h.shape[1:]
        shapes["dec_deconv3"] = self.dec_deconv3(ops.relu(h)).shape[1:]
        return shapes


def _cols(t: Tensor, a: int, b: int) -> Tensor:
    """Column slice t[:, a:b] as a differentiable op."""
    sel = np.zeros((t.shape[1], b - a), dtype=t.data.dtype)
    sel[np.arange(a, b), np.arange(b - a)] = 1
    return ops.matmul(t, Tensor(sel))


@dataclass
class VaeHyper:
    epochs: int = 20
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    beta: float = 1.0


@dataclass
class VaeHistory:
    loss: list = field(default_factory=list)
    recon: list = field(default_factory=list)
    kl: list = field(default_factory=list)


def normalize_rows(rows) -> np.ndarray:
    """Scale each row to unit average power per symbol (zero rows left as is)."""
    rows = np.atleast_2d(np.asarray(rows, dtype=complex))
    n = np.linalg.norm(rows, axis=1, keepdims=True)
    return np.where(n > 0, rows * np.sqrt(rows.shape[1]) / np.where(n > 0, n, 1), rows)


def train_vae(rows, config: VaeConfig = VaeConfig(), hyper: VaeHyper = VaeHyper(), log=None):
    """Fit a VAE to complex rows (normalized first). Returns (model, history)."""
    rows = normalize_rows(rows)
    if len(rows) < 100:
        raise ValueError(f"need >= 100 training rows, got {len(rows)}")
    model = VaeModel(config, seed=hyper.seed)
    data = frames_to_input(rows).astype(model.dtype)
    rng = np.random.default_rng([hyper.seed, 1])
    noise_rng = np.random.default_rng([hyper.seed, 2])
    state = AdamState(lr=hyper.lr)
    params = model.parameters()
    hist = VaeHistory()
    for epoch in range(hyper.epochs):
        order = rng.permutation(len(data))
        tot = rec_tot = kl_tot = 0.0
        for s in range(0, len(order), hyper.batch_size):
            xb = data[order[s:s + hyper.batch_size]]
            mu, lv = model.encode_t(Tensor(xb))
            z = ops.gaussian_reparam(mu, lv, noise_rng)
            recon = ops.squared_error(model.decode_t(z), xb, reduction="mean")
            kl = ops.kl_divergence(mu, lv, reduction="mean")
            loss = recon + kl * hyper.beta
            model.zero_grad()
            loss.backward()
            v = float(loss.data)
            if not np.isfinite(v):
                raise TrainingError("VAE loss is not finite", epoch)
            n = len(xb)
            tot += v * n
            rec_tot += float(recon.data) * n
            kl_tot += float(kl.data) * n
            new = adam_step({k: p.data for k, p in params.items()},
                            {k: p.grad for k, p in params.items()}, state)
            for k, p in params.items():
                p.data = new[k]
        hist.loss.append(tot / len(data))
        hist.recon.append(rec_tot / len(data))
        hist.kl.append(kl_tot / len(data))
        if log:
            log(f"vae epoch {epoch + 1}/{hyper.epochs} loss={hist.loss[-1]:.4f} "
                f"recon={hist.recon[-1]:.4f} kl={hist.kl[-1]:.4f}")
    model.zero_grad()
    return model, hist
