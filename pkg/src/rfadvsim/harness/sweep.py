"""Accuracy-versus-PNR sweeps over test frames, one CurvePoint per (attack, pnr).

Frame ``i`` draws everything random (adversary channel, sampled channel
banks, smoothing noise) from ``default_rng([seed, i, purpose])``, so results
do not depend on batch order.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .. import attack_limited as al
from .. import attack_wb as wb
from .. import broadcast as bc
from ..channel import pnr_to_pmax, sample_taps, snr_to_noise_power
from ..classifier import ClassifierConfig, ClassifierModel, config_from_state
from ..defense import SmoothingParams, certified_predict_batch
from ..errors import ConfigError, RfAdvError
from ..iqcore import FRAME_LEN, Dataset, generate_dataset, read_dataset
from ..nnad import load_checkpoint
from ..vae import VaeConfig, VaeHyper, train_vae
from .config import ExperimentConfig

CSV_HEADER = ("attack", "pnr_db", "accuracy", "n_frames", "abstain_rate", "seed")

# purpose tags of the per-frame random streams
TAPS, BANK, CERT, RX = 0, 1, 2, 10

WB_KINDS = ("none", "fgm_nochannel", "channel_inversion", "mmse_targeted", "mrpp_targeted",
            "naive_nontargeted", "mrpp_nontargeted", "mmse_nontargeted")
LIMITED_KINDS = ("limited_channel", "uap_pca_input", "uap_pca_channel", "uap_vae_input", "uap_vae_channel")
BROADCAST_KINDS = ("idba", "jdba")


@dataclass
class CurvePoint:
    attack: str
    pnr_db: float
    accuracy: float
    n_frames: int
    abstain_rate: float | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy {self.accuracy} outside [0, 1]")
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")

    def row(self) -> list[str]:
        ab = "" if self.abstain_rate is None else f"{self.abstain_rate:.6f}"
        return [self.attack, f"{self.pnr_db:g}", f"{self.accuracy:.6f}", str(self.n_frames), ab, str(self.seed)]


def write_csv(points, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for p in points:
        w.writerow(p.row())
    text = buf.getvalue()
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def read_csv(path) -> list[CurvePoint]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        ab = r["abstain_rate"]
        out.append(CurvePoint(r["attack"], float(r["pnr_db"]), float(r["accuracy"]), int(r["n_frames"]),
                              float(ab) if ab else None, int(r["seed"])))
    return out


# --- loading ---

def load_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset.path:
        return read_dataset(cfg.dataset.path, seed=cfg.seed)
    return generate_dataset(cfg.dataset.n_records, cfg.seed, cfg.dataset.snr_grid, rrc_sps=cfg.dataset.rrc_sps)


def model_config(cfg: ExperimentConfig, n_classes: int = 8) -> ClassifierConfig:
    m = cfg.model
    return ClassifierConfig(n_classes, m.conv1_filters, m.conv2_filters, m.dense_units, m.extra_hidden, m.dropout)


def load_model(cfg: ExperimentConfig, path: str, n_classes: int = 8) -> ClassifierModel:
    """Checkpoint with layer widths taken from its tensors; dropout from the config."""
    if not path:
        raise ConfigError("no checkpoint given", "model.checkpoint")
    try:
        state = load_checkpoint(path)
    except OSError as exc:
        raise ConfigError(f"cannot read checkpoint: {exc.strerror}", "model.checkpoint") from None
    try:
        model = ClassifierModel(config_from_state(state, cfg.model.dropout))
        if model.n_classes != n_classes:
            raise ValueError(f"{model.n_classes} classes, dataset has {n_classes}")
        model.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"checkpoint {path} does not fit: {exc}", "model.checkpoint") from None
    return model


def eval_set(cfg: ExperimentConfig, ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """First ``n_frames`` test-split frames at the evaluation SNR."""
    test = ds.test()
    sel = np.flatnonzero(test.snr_db == cfg.eval.snr_db)[:cfg.eval.n_frames]
    return test.frames[sel].astype(complex), test.labels[sel]


def frame_rng(seed: int, i: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng([seed, i, purpose])


def frame_taps(cfg: ExperimentConfig, n: int, purpose: int = TAPS, rayleigh_scale=None) -> np.ndarray:
    params = cfg.channel.params()
    if rayleigh_scale is not None:
        params = params.replace(rayleigh_scale=float(rayleigh_scale))
    taps = np.empty((n, FRAME_LEN), dtype=complex)
    for i in range(n):
        taps[i] = sample_taps(params, frame_rng(cfg.seed, i, purpose))
    return taps


def budget(cfg: ExperimentConfig, pnr_db: float) -> float:
    """P_max for a PNR relative to the frame noise energy ``p * sigma^2``."""
    noise = FRAME_LEN * snr_to_noise_power(cfg.eval.snr_db)
    pl = cfg.channel.params().path_loss if cfg.channel.pnr_reference == "receiver" else None
    return pnr_to_pmax(pnr_db, noise, pl)


def parse_kind(kind: str) -> tuple[str, str, tuple | None]:
    """``[blackbox_]name[@gamma]`` -> (name, model role, gamma grid override)."""
    role = "target"
    name = kind
    if name.startswith("blackbox_"):
        role, name = "surrogate", name[len("blackbox_"):]
    grid = None
    if "@" in name:
        name, g = name.split("@", 1)
        try:
            grid = (float(g),)
        except ValueError:
            raise ConfigError(f"bad gamma in attack kind {kind!r}", "attack.kinds") from None
    if name not in WB_KINDS + LIMITED_KINDS:
        raise ConfigError(f"unknown attack kind {kind!r}", "attack.kinds")
    if grid is not None and not name.startswith("mmse"):
        raise ConfigError(f"only mmse kinds take @gamma: {kind!r}", "attack.kinds")
    return name, role, grid


# --- the engine ---

class Crafter:
    """Crafts batched perturbations for one model over fixed frames and channels; caches per-frame work."""

    def __init__(self, cfg: ExperimentConfig, model, frames, labels, taps, ds: Dataset | None = None, log=None):
        self.cfg, self.model = cfg, model
        self.frames, self.labels, self.taps = frames, labels, taps
        self.ds = ds
        self.log = log
        self._grads = None
        self._noch = {}
        self._vae = {}

    @property
    def eps_acc(self):
        return self.cfg.attack.eps_acc or None

    def grads(self):
        if self._grads is None:
            self._grads = wb.class_gradients(self.model, self.frames)
        return self._grads

    def noch(self, pmax):
        if pmax not in self._noch:
            self._noch = {pmax: wb.nochannel_batch(self.model, self.frames, self.labels, pmax, self.eps_acc,
                                                   grads=self.grads())}
        return self._noch[pmax]

    def pool(self, n: int):
        """Precollected attacker inputs: training-split frames, fixed by the seed."""
        if self.ds is None:
            raise ConfigError("this attack needs the dataset for precollected inputs", "attack.kinds")
        train = self.ds.train()
        idx = np.random.default_rng([self.cfg.seed, 0xADD]).permutation(len(train))[:n]
        return train.frames[idx].astype(complex), train.labels[idx]

    def vae_parts(self, which: str):
        if which in self._vae:
            return self._vae[which]
        c, u = self.cfg.vae, self.cfg.uap
        vcfg = VaeConfig(latent=c.latent, scale_divisor=c.scale_divisor)
        hyper = VaeHyper(epochs=c.epochs, batch_size=c.batch_size, lr=c.lr, seed=self.cfg.seed)
        if which == "pert":
            x, y = self.pool(u.n_train)
            rows = wb.nochannel_batch(self.model, x, y, 1.0).delta
        else:
            rng = np.random.default_rng([self.cfg.seed, 0xC4A])
            rows = np.stack([sample_taps(self.cfg.channel.params(), rng) for _ in range(u.n_train)])
        vae, _ = train_vae(rows, vcfg, hyper, log=self.log)
        self._vae[which] = vae
        return vae

    def craft(self, name: str, pmax: float, grid=None) -> np.ndarray | None:
        cfg, m, r, y, h = self.cfg, self.model, self.frames, self.labels, self.taps
        eps = self.eps_acc
        grid = tuple(cfg.attack.gamma_grid) if grid is None else grid
        if name == "none":
            return None
        if name == "fgm_nochannel":
            return self.noch(pmax).delta
        if name == "channel_inversion":
            return wb.channel_inversion_batch(self.noch(pmax).direction, h, pmax)
        if name == "mmse_targeted":
            return wb.mmse_targeted_batch(m, r, h, y, pmax, grid, noch=self.noch(pmax))[0]
        if name == "mrpp_targeted":
            return wb.mrpp_targeted_batch(m, r, h, y, pmax, eps, grads=self.grads()).delta
        if name == "naive_nontargeted":
            return wb.nontargeted_batch(m, r, h, y, pmax, cfg.attack.E)
        if name == "mrpp_nontargeted":
            return wb.nontargeted_batch(m, r, h, y, pmax, cfg.attack.E, mrpp=True)
        if name == "mmse_nontargeted":
            return wb.mmse_nontargeted_batch(m, r, h, y, pmax, grid, cfg.attack.E)[0]
        if name == "limited_channel":
            rngs = [frame_rng(cfg.seed, i, BANK) for i in range(len(r))]
            return al.limited_channel_batch(m, r, y, cfg.channel.params(), cfg.uap.N, pmax, rngs, eps)
        if name == "uap_pca_input":
            x, lab = self.pool(cfg.uap.N)
            return np.stack([al.uap_pca_input_independent(m, x, lab, h[i], pmax, eps).delta
                             for i in range(len(r))])
        if name == "uap_pca_channel":
            x, lab = self.pool(cfg.uap.N)
            rng = np.random.default_rng([cfg.seed, 0xBA2])
            d = al.uap_pca_channel_independent(m, x, lab, cfg.channel.params(), pmax, rng, eps).delta
            return np.broadcast_to(d, r.shape)
        if name == "uap_vae_input":
            vae = self.vae_parts("pert")
            x, lab = self.pool(cfg.uap.k)
            d_avg = al.vae_average(vae, wb.nochannel_batch(m, x, lab, pmax, eps).delta)
            return np.stack([al._conj_match(h[i], d_avg, pmax) for i in range(len(r))])
        if name == "uap_vae_channel":
            pert, chan = self.vae_parts("pert"), self.vae_parts("chan")
            x, lab = self.pool(cfg.uap.k)
            rng = np.random.default_rng([cfg.seed, 0xBA3])
            samples = np.stack([sample_taps(cfg.channel.params(), rng) for _ in range(cfg.uap.k)])
            d = al.uap_vae_channel_independent(pert, chan, wb.nochannel_batch(m, x, lab, pmax, eps).delta,
                                               samples, pmax).delta
            return np.broadcast_to(d, r.shape)
        raise ConfigError(f"unknown attack kind {name!r}", "attack.kinds")


def smoothing(cfg: ExperimentConfig) -> SmoothingParams:
    d = cfg.defense
    return SmoothingParams(k=d.k, sigma=d.sigma, alpha=d.alpha, q=d.q)


def certify_frames(cfg: ExperimentConfig, model, received):
    rngs = [frame_rng(cfg.seed, i, CERT) for i in range(len(received))]
    return certified_predict_batch(model, received, smoothing(cfg), rngs)


def evaluate(cfg, model, received, labels) -> tuple[float, float | None]:
    if cfg.defense.certify:
        res = certify_frames(cfg, model, received)
        correct = np.mean([c.outcome == l for c, l in zip(res, labels)])
        abstain = np.mean([c.abstained for c in res])
        return float(correct), float(abstain)
    return float(np.mean(model.predict(received) == labels)), None


def run_sweep(cfg: ExperimentConfig, model=None, ds: Dataset | None = None, surrogate=None,
              log=None) -> list[CurvePoint]:
    if ds is None:
        ds = load_dataset(cfg)
    if model is None:
        model = load_model(cfg, cfg.model.checkpoint, ds.n_classes)
    kinds = [parse_kind(k) for k in cfg.attack.kinds]
    if any(role == "surrogate" for _, role, _ in kinds) and surrogate is None:
        if not cfg.attack.surrogate:
            raise ConfigError("blackbox attacks need a surrogate checkpoint", "attack.surrogate")
        surrogate = load_model(cfg, cfg.attack.surrogate, ds.n_classes)
    frames, labels = eval_set(cfg, ds)
    if len(frames) == 0:
        raise RfAdvError(f"no test frames at SNR {cfg.eval.snr_db:g} dB")
    taps = frame_taps(cfg, len(frames))
    crafters = {"target": Crafter(cfg, model, frames, labels, taps, ds, log)}
    if surrogate is not None:
        crafters["surrogate"] = Crafter(cfg, surrogate, frames, labels, taps, ds, log)
    points = []
    for kind, (name, role, grid) in zip(cfg.attack.kinds, kinds):
        for pnr in cfg.eval.pnr_grid:
            pmax = budget(cfg, pnr)
            delta = crafters[role].craft(name, pmax, grid)
            received = frames if delta is None else frames + taps * delta
            acc, ab = evaluate(cfg, model, received, labels)
            points.append(CurvePoint(kind, float(pnr), acc, len(frames), ab, cfg.seed))
            if log:
                log(f"{kind} pnr={pnr:g} acc={acc:.4f}")
    return points


def weights_label(w) -> str:
    return "[" + ",".join(f"{x:.4g}" for x in w) + "]"


def run_broadcast(cfg: ExperimentConfig, models=None, ds: Dataset | None = None, log=None) -> list[CurvePoint]:
    """Joint accuracy (some receiver still correct) for every broadcast kind x weights x pnr."""
    b = cfg.broadcast
    if ds is None:
        ds = load_dataset(cfg)
    if models is None:
        if len(b.models) != b.m:
            raise ConfigError(f"expected {b.m} checkpoints", "broadcast.models")
        models = [load_model(cfg, p, ds.n_classes) for p in b.models]
    for k in b.kinds:
        if k not in BROADCAST_KINDS:
            raise ConfigError(f"unknown broadcast kind {k!r}", "broadcast.kinds")
    frames, labels = eval_set(cfg, ds)
    if len(frames) == 0:
        raise RfAdvError(f"no test frames at SNR {cfg.eval.snr_db:g} dB")
    taps = np.stack([frame_taps(cfg, len(frames), RX + i, b.rayleigh_scales[i]) for i in range(b.m)])
    ens = bc.ReceiverEnsemble(list(models), taps, np.stack([frames] * b.m))
    eps = cfg.attack.eps_acc or None
    grads = bc.receiver_gradients(ens)
    points = []
    for kind in b.kinds:
        for w in b.weights:
            e = ens.with_weights(np.asarray(w, float) / np.sum(w))
            name = f"{kind}{weights_label(w)}"
            for pnr in cfg.eval.pnr_grid:
                pmax = budget(cfg, pnr)
                if kind == "jdba":
                    delta = bc.jdba(e, labels, pmax, eps, grads=grads).delta
                else:
                    delta = bc.idba(e, labels, pmax, eps)
                fooled = bc.fooled(e, delta, labels)
                points.append(CurvePoint(name, float(pnr), 1.0 - float(fooled.all(axis=0).mean()), len(frames),
                                         None, cfg.seed))
                if b.per_receiver:
                    for i in range(b.m):
                        points.append(CurvePoint(f"{name}:rx{i + 1}", float(pnr), 1.0 - float(fooled[i].mean()),
                                                 len(frames), None, cfg.seed))
                if log:
                    log(f"{name} pnr={pnr:g} joint_acc={points[-1 - (b.m if b.per_receiver else 0)].accuracy:.4f}")
    return points


CERT_HEADER = ("frame_id", "true_label", "outcome", "n_A", "n_B", "p_value")


def run_certify(cfg: ExperimentConfig, model=None, ds: Dataset | None = None) -> str:
    """Per-frame certified predictions under the first configured attack at ``defense.pnr_db``."""
    if ds is None:
        ds = load_dataset(cfg)
    if model is None:
        model = load_model(cfg, cfg.model.checkpoint, ds.n_classes)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CERT_HEADER)
    frames, labels = eval_set(cfg, ds)
    if len(frames) == 0:
        return buf.getvalue()
    name, role, grid = parse_kind(cfg.attack.kinds[0] if cfg.attack.kinds else "none")
    if role != "target":
        raise ConfigError("certify runs white-box attacks only", "attack.kinds")
    taps = frame_taps(cfg, len(frames))
    delta = Crafter(cfg, model, frames, labels, taps, ds).craft(name, budget(cfg, cfg.defense.pnr_db), grid)
    received = frames if delta is None else frames + taps * delta
    for i, (res, lab) in enumerate(zip(certify_frames(cfg, model, received), labels)):
        outcome = "abstain" if res.abstained else str(res.outcome)
        w.writerow([i, int(lab), outcome, res.n_a, res.n_b, f"{res.p_value:.6g}"])
    return buf.getvalue()
