"""Experiment configuration: TOML files with dotted sections, validated into dataclasses.

Every key is optional; unknown keys and wrong types are rejected with the
offending dotted key path. ``RFADVSIM_SEED`` overrides ``seed``.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field, fields, is_dataclass, replace

from ..channel import ChannelParams
from ..errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SEED_ENV = "RFADVSIM_SEED"


@dataclass
class DatasetSection:
    n_records: int = 40_000
    snr_grid: list = field(default_factory=lambda: list(range(0, 20, 2)))
    rrc_sps: int = 1
    path: str = ""                  # read this file instead of synthesizing


@dataclass
class ChannelSection:
    K: float = 1.0
    d0: float = 1.0
    d: float = 10.0
    gamma_pl: float = 2.7
    shadow_sigma_db: float = 8.0
    rayleigh_scale: float = 1.0
    shadow_units: str = "db"
    # "transmitter": P_max = noise * 10^(pnr/10); "receiver": also divided by path_loss^2
    pnr_reference: str = "transmitter"

    def params(self) -> ChannelParams:
        return ChannelParams(self.K, self.d0, self.d, self.gamma_pl, self.shadow_sigma_db,
                             self.rayleigh_scale, self.shadow_units)


@dataclass
class ModelSection:
    checkpoint: str = ""
    conv1_filters: int = 64
    conv2_filters: int = 16
    dense_units: int = 128
    extra_hidden: int = 0
    dropout: float = 0.5
    init_seed: int = 0


@dataclass
class TrainSection:
    epochs: int = 12
    batch_size: int = 128
    lr: float = 2e-3


@dataclass
class AttackSection:
    kinds: list = field(default_factory=lambda: ["none", "mrpp_targeted"])
    gamma_grid: list = field(default_factory=lambda: [0.6, 0.8, 1.0, 1.2, 1.4, 1.6])
    E: int = 10
    eps_acc: float = 0.0            # 0: sqrt(P_max) / 100
    surrogate: str = ""             # checkpoint used by blackbox_* kinds


@dataclass
class UapSection:
    N: int = 100
    k: int = 40
    n_train: int = 2000


@dataclass
class VaeSection:
    latent: int = 2
    scale_divisor: int = 4
    epochs: int = 20
    batch_size: int = 64
    lr: float = 1e-3


@dataclass
class BroadcastSection:
    m: int = 2
    models: list = field(default_factory=list)          # one checkpoint per receiver
    kinds: list = field(default_factory=lambda: ["jdba"])
    weights: list = field(default_factory=lambda: [[0.5, 0.5]])
    rayleigh_scales: list = field(default_factory=lambda: [1.0, 1.0])
    per_receiver: bool = False


@dataclass
class DefenseSection:
    k: int = 10
    sigma: float = 0.001
    alpha: float = 0.05
    q: float = 0.5
    certify: bool = False
    pnr_db: float = 0.0             # operating point of the certify command
    epochs: int = 0                 # defend-train epochs over the augmented set; 0: train.epochs


@dataclass
class EvalSection:
    pnr_grid: list = field(default_factory=lambda: [-20.0, -10.0, 0.0, 10.0])
    snr_db: float = 10.0
    n_frames: int = 500


@dataclass
class ExperimentConfig:
    seed: int = 0
    output: str = ""
    dataset: DatasetSection = field(default_factory=DatasetSection)
    channel: ChannelSection = field(default_factory=ChannelSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    attack: AttackSection = field(default_factory=AttackSection)
    uap: UapSection = field(default_factory=UapSection)
    vae: VaeSection = field(default_factory=VaeSection)
    broadcast: BroadcastSection = field(default_factory=BroadcastSection)
    defense: DefenseSection = field(default_factory=DefenseSection)
    eval: EvalSection = field(default_factory=EvalSection)


def _coerce(value, default, key):
    kind = type(default)
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", key)
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", key)
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", key)
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", key)
        return value
    if kind is list:
        if not isinstance(value, list):
            raise ConfigError(f"expected a list, got {value!r}", key)
        return value
    raise ConfigError(f"unsupported value {value!r}", key)


def _fill(obj, data: dict, prefix: str):
    known = {f.name: f for f in fields(obj)}
    updates = {}
    for name, value in data.items():
        key = f"{prefix}{name}"
        if name not in known:
            raise ConfigError("unknown key", key)
        current = getattr(obj, name)
        if is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError("expected a section", key)
            updates[name] = _fill(current, value, key + ".")
        else:
            updates[name] = _coerce(value, current, key)
    return replace(obj, **updates)


def _check_number_list(values, key, sort=False):
    for v in values:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"expected numbers, got {v!r}", key)
    if sort and list(values) != sorted(values):
        raise ConfigError("must be sorted ascending", key)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    if not cfg.eval.pnr_grid:
        raise ConfigError("pnr grid is empty", "eval.pnr_grid")
    _check_number_list(cfg.eval.pnr_grid, "eval.pnr_grid", sort=True)
    _check_number_list(cfg.dataset.snr_grid, "dataset.snr_grid")
    _check_number_list(cfg.attack.gamma_grid, "attack.gamma_grid")
    if cfg.eval.n_frames < 0:
        raise ConfigError("must be >= 0", "eval.n_frames")
    if cfg.dataset.n_records < 1:
        raise ConfigError("must be >= 1", "dataset.n_records")
    if cfg.channel.pnr_reference not in ("transmitter", "receiver"):
        raise ConfigError("must be 'transmitter' or 'receiver'", "channel.pnr_reference")
    try:
        cfg.channel.params()
    except ValueError as exc:
        raise ConfigError(str(exc), "channel") from None
    if cfg.attack.E < 1:
        raise ConfigError("must be >= 1", "attack.E")
    if cfg.attack.eps_acc < 0:
        raise ConfigError("must be >= 0", "attack.eps_acc")
    if not cfg.attack.gamma_grid:
        raise ConfigError("must not be empty", "attack.gamma_grid")
    for k in cfg.attack.kinds:
        if not isinstance(k, str):
            raise ConfigError(f"expected attack names, got {k!r}", "attack.kinds")
    if cfg.vae.latent not in (2, 4):
        raise ConfigError("must be 2 or 4", "vae.latent")
    if cfg.vae.scale_divisor < 1:
        raise ConfigError("must be >= 1", "vae.scale_divisor")
    b = cfg.broadcast
    if b.m < 1:
        raise ConfigError("must be >= 1", "broadcast.m")
    for i, w in enumerate(b.weights):
        key = f"broadcast.weights[{i}]"
        if not isinstance(w, list) or len(w) != b.m:
            raise ConfigError(f"expected {b.m} weights", key)
        _check_number_list(w, key)
        if any(x < 0 for x in w) or abs(sum(w) - 1) > 1e-9:
            raise ConfigError("weights must be nonnegative and sum to 1", key)
    if len(b.rayleigh_scales) != b.m:
        raise ConfigError(f"expected {b.m} values", "broadcast.rayleigh_scales")
    _check_number_list(b.rayleigh_scales, "broadcast.rayleigh_scales")
    d = cfg.defense
    if d.k < 0:
        raise ConfigError("must be >= 0", "defense.k")
    if d.epochs < 0:
        raise ConfigError("must be >= 0", "defense.epochs")
    if d.sigma < 0:
        raise ConfigError("must be >= 0", "defense.sigma")
    if not 0 < d.alpha < 1:
        raise ConfigError("must be in (0, 1)", "defense.alpha")
    if not 0 < d.q < 1:
        raise ConfigError("must be in (0, 1)", "defense.q")
    refs = [("model.checkpoint", cfg.model.checkpoint), ("attack.surrogate", cfg.attack.surrogate),
            ("dataset.path", cfg.dataset.path)]
    refs += [(f"broadcast.models[{i}]", p) for i, p in enumerate(b.models)]
    for key, path in refs:
        if not isinstance(path, str):
            raise ConfigError(f"expected a path, got {path!r}", key)
        if path and not os.path.isfile(path):
            raise ConfigError(f"no such file: {path}", key)
    return cfg


def config_from_dict(data: dict, env=None) -> ExperimentConfig:
    cfg = _fill(ExperimentConfig(), data, "")
    env = os.environ if env is None else env
    if env.get(SEED_ENV, "") != "":
        try:
            cfg = replace(cfg, seed=int(env[SEED_ENV]))
        except ValueError:
            raise ConfigError(f"not an integer: {env[SEED_ENV]!r}", SEED_ENV) from None
    return validate(cfg)


def parse_config(text: str, env=None) -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"syntax error: {exc}", "") from None
    return config_from_dict(data, env)


def load_config(path, env=None) -> ExperimentConfig:
    if path is None:
        return config_from_dict({}, env)
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from None
    return parse_config(text, env)
