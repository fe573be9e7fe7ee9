"""I/Q frames, digital modulators and the binary dataset format.

Frames are 128 complex baseband samples at one sample per symbol. Every
scheme is scaled to unit average symbol energy. The phase-continuous
schemes (CPFSK, GFSK) have unit amplitude.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InputLengthError

FRAME_LEN = 128
DEFAULT_SNR_GRID = tuple(range(0, 20, 2))

CPFSK_INDEX = 0.5
GFSK_BT = 0.35
_FSK_OVERSAMPLE = 8
_GFSK_SPAN = 4


class ModulationScheme(enum.IntEnum):
    BPSK = 0
    QPSK = 1
    PSK8 = 2
    QAM16 = 3
    QAM64 = 4
    PAM4 = 5
    CPFSK = 6
    GFSK = 7

    @property
    def bits_per_symbol(self) -> int:
        return _BITS_PER_SYMBOL[self]


N_CLASSES = len(ModulationScheme)

_BITS_PER_SYMBOL = {
    ModulationScheme.BPSK: 1,
    ModulationScheme.QPSK: 2,
    ModulationScheme.PSK8: 3,
    ModulationScheme.QAM16: 4,
    ModulationScheme.QAM64: 6,
    ModulationScheme.PAM4: 2,
    ModulationScheme.CPFSK: 1,
    ModulationScheme.GFSK: 1,
}


def _gray(n: int) -> np.ndarray:
    k = np.arange(n)
    return k ^ (k >> 1)


def _pam_levels(m: int) -> np.ndarray:
    """Gray-labelled PAM amplitudes: entry i is the level for bit pattern i."""
    levels = np.empty(m)
    levels[_gray(m)] = np.arange(-(m - 1), m, 2)
    return levels


def constellation(scheme: ModulationScheme) -> np.ndarray:
    """Unit-average-energy points indexed by the integer value of each bit group.

    Only defined for the memoryless schemes.
    """
    if scheme == ModulationScheme.BPSK:
        return np.array([1.0 + 0j, -1.0 + 0j])
    if scheme == ModulationScheme.QPSK:
        return np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2)
    if scheme == ModulationScheme.PSK8:
        pts = np.empty(8, dtype=complex)
        pts[_gray(8)] = np.exp(2j * np.pi * np.arange(8) / 8)
        return pts
    if scheme in (ModulationScheme.QAM16, ModulationScheme.QAM64):
        side = 4 if scheme == ModulationScheme.QAM16 else 8
        half = side.bit_length() - 1
        lv = _pam_levels(side)
        idx = np.arange(side * side)
        pts = lv[idx >> half] + 1j * lv[idx & (side - 1)]
        return pts / np.sqrt(2 * (side * side - 1) / 3)
    if scheme == ModulationScheme.PAM4:
        return _pam_levels(4).astype(complex) / np.sqrt(5)
    raise ValueError(f"{scheme.name} has no fixed constellation")


def _gaussian_pulse(bt: float, sps: int, span: int) -> np.ndarray:
    t = np.arange(-span * sps / 2, span * sps / 2 + 1) / sps
    alpha = np.sqrt(np.log(2) / 2) / bt
    h = np.sqrt(np.pi) / alpha * np.exp(-(np.pi * t / alpha) ** 2)
    return h / h.sum()


def _fsk(symbols: np.ndarray, gaussian: bool) -> np.ndarray:
    """Continuous-phase FSK sampled once per symbol at symbol boundaries."""
    sps = _FSK_OVERSAMPLE
    freq = np.repeat(symbols.astype(float), sps)
    if gaussian:
        freq = np.convolve(freq, _gaussian_pulse(GFSK_BT, sps, _GFSK_SPAN), mode="same")
    phase = np.concatenate([[0.0], np.cumsum(np.pi * CPFSK_INDEX * freq / sps)])
    return np.exp(1j * phase[:-1:sps][: len(symbols)])


def _rrc_taps(beta: float, sps: int, span: int) -> np.ndarray:
    t = np.arange(-span * sps / 2, span * sps / 2 + 1) / sps
    taps = np.empty_like(t)
    for i, ti in enumerate(t):
        if ti == 0:
            taps[i] = 1 + beta * (4 / np.pi - 1)
        elif beta > 0 and abs(abs(4 * beta * ti) - 1) < 1e-12:
            taps[i] = beta / np.sqrt(2) * ((1 + 2 / np.pi) * np.sin(np.pi / (4 * beta))
                                           + (1 - 2 / np.pi) * np.cos(np.pi / (4 * beta)))
        else:
            taps[i] = (np.sin(np.pi * ti * (1 - beta)) + 4 * beta * ti * np.cos(np.pi * ti * (1 + beta))) / (
                np.pi * ti * (1 - (4 * beta * ti) ** 2))
    return taps / np.sqrt(np.sum(taps ** 2))


def symbols_needed(scheme: ModulationScheme, length: int = FRAME_LEN, sps: int = 1) -> int:
    return -(-length // sps) + (8 if sps > 1 else 0)


def modulate(scheme, bits=None, rng: np.random.Generator | None = None,
             length: int = FRAME_LEN, rrc_sps: int = 1, rrc_beta: float = 0.35) -> np.ndarray:
    """Map bits to a complex frame of ``length`` samples.

    When ``bits`` is None they are drawn uniformly from ``rng``. ``rrc_sps > 1``
    switches on root-raised-cosine pulse shaping at that oversampling factor.
    """
    scheme = ModulationScheme(scheme)
    bps = scheme.bits_per_symbol
    n_sym = symbols_needed(scheme, length, rrc_sps)
    if bits is None:
        if rng is None:
            raise ValueError("need either bits or an rng")
        bits = rng.integers(0, 2, n_sym * bps)
    bits = np.asarray(bits, dtype=np.int64).ravel()
    if bits.size < n_sym * bps:
        raise InputLengthError(
            f"{scheme.name} needs {n_sym * bps} bits for {length} samples, got {bits.size}")
    groups = bits[: n_sym * bps].reshape(n_sym, bps)
    values = groups @ (1 << np.arange(bps - 1, -1, -1))
    if scheme == ModulationScheme.CPFSK:
        sym = _fsk(2 * values - 1, gaussian=False)
    elif scheme == ModulationScheme.GFSK:
        sym = _fsk(2 * values - 1, gaussian=True)
    else:
        sym = constellation(scheme)[values]
    if rrc_sps > 1:
        up = np.zeros(n_sym * rrc_sps, dtype=complex)
        up[::rrc_sps] = sym
        shaped = np.convolve(up, _rrc_taps(rrc_beta, rrc_sps, 8), mode="same")
        sym = shaped[4 * rrc_sps: 4 * rrc_sps + length]
        sym = sym / np.sqrt(np.mean(np.abs(sym) ** 2))
    return sym[:length]


@dataclass
class DatasetRecord:
    frame: np.ndarray
    label: int
    snr_db: int


@dataclass
class Dataset:
    """Columnar record store plus a seed-derived train/test split."""

    frames: np.ndarray          # (N, 128) complex64
    labels: np.ndarray          # (N,) int64
    snr_db: np.ndarray          # (N,) int64
    seed: int = 0
    n_classes: int = N_CLASSES
    flags: int = 0
    train_idx: np.ndarray = field(default=None, repr=False)
    test_idx: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.complex64).reshape(-1, FRAME_LEN)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.snr_db = np.asarray(self.snr_db, dtype=np.int64)
        if self.train_idx is None or self.test_idx is None:
            self.train_idx, self.test_idx = split_indices(len(self), self.seed)

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i) -> DatasetRecord:
        return DatasetRecord(self.frames[i], int(self.labels[i]), int(self.snr_db[i]))

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.frames[idx], self.labels[idx], self.snr_db[idx], self.seed, self.n_classes, self.flags)

    def train(self) -> "Dataset":
        return self.subset(self.train_idx)

    def test(self) -> "Dataset":
        return self.subset(self.test_idx)


def split_indices(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng([seed, 0x5EED]).permutation(n)
    half = (n + 1) // 2
    return np.sort(perm[:half]), np.sort(perm[half:])


def add_noise(frame: np.ndarray, noise_power: float, rng: np.random.Generator) -> np.ndarray:
    if noise_power == 0:
        return frame.copy()
    std = np.sqrt(noise_power / 2)
    return frame + std * (rng.standard_normal(frame.shape) + 1j * rng.standard_normal(frame.shape))


def synth_record(scheme, snr_db, rng: np.random.Generator, tx_taps=None, rrc_sps: int = 1) -> DatasetRecord:
    """One labelled frame: modulated symbols, transmitter channel, AWGN at ``snr_db``.

    ``snr_db=inf`` gives the noiseless signal.
    """
    x = modulate(scheme, rng=rng, rrc_sps=rrc_sps)
    if tx_taps is not None:
        x = np.asarray(tx_taps) * x
    noise_power = 0.0 if np.isinf(snr_db) else 10.0 ** (-snr_db / 10.0)
    return DatasetRecord(add_noise(x, noise_power, rng), int(ModulationScheme(scheme)),
                         snr_db if np.isinf(snr_db) else int(snr_db))


def record_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def generate_dataset(n_records: int, seed: int, snr_grid=DEFAULT_SNR_GRID,
                     schemes=tuple(ModulationScheme), rrc_sps: int = 1) -> Dataset:
    """Balanced dataset; record i depends only on (seed, i) so it can be built in any order."""
    schemes = [ModulationScheme(s) for s in schemes]
    frames = np.empty((n_records, FRAME_LEN), dtype=np.complex64)
    labels = np.empty(n_records, dtype=np.int64)
    snrs = np.empty(n_records, dtype=np.int64)
    for i in range(n_records):
        scheme = schemes[i % len(schemes)]
        snr = snr_grid[(i // len(schemes)) % len(snr_grid)]
        rec = synth_record(scheme, snr, record_rng(seed, i), rrc_sps=rrc_sps)
        frames[i], labels[i], snrs[i] = rec.frame, rec.label, rec.snr_db
    return Dataset(frames, labels, snrs, seed, flags=int(rrc_sps > 1))


# --- binary format ------------------------------------------------------------
# b"RFIQ" | u8 version | u32 count | u16 p | u8 C | u8 flags, then per record:
# u8 label | i16 snr_db | p * (f32 I, f32 Q)

MAGIC = b"RFIQ"
VERSION = 1
_HEADER = struct.Struct("<4sBIHBB")
HEADER_SIZE = _HEADER.size


def _record_dtype(p: int) -> np.dtype:
    return np.dtype([("label", "u1"), ("snr", "<i2"), ("iq", "<f4", (p, 2))])


def encode_dataset(ds: Dataset) -> bytes:
    rec = np.empty(len(ds), dtype=_record_dtype(FRAME_LEN))
    rec["label"] = ds.labels
    rec["snr"] = ds.snr_db
    rec["iq"][..., 0] = ds.frames.real
    rec["iq"][..., 1] = ds.frames.imag
    return _HEADER.pack(MAGIC, VERSION, len(ds), FRAME_LEN, ds.n_classes, ds.flags) + rec.tobytes()


def decode_dataset(buf: bytes, seed: int = 0) -> Dataset:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatError("bad magic, expected b'RFIQ'", 0)
    if len(buf) < HEADER_SIZE:
        raise FormatError("truncated header", len(buf))
    _, version, count, p, n_classes, flags = _HEADER.unpack_from(buf)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if p != FRAME_LEN:
        raise FormatError(f"frame length {p} != {FRAME_LEN}", 9)
    dt = _record_dtype(p)
    need = HEADER_SIZE + count * dt.itemsize
    if len(buf) < need:
        complete = (len(buf) - HEADER_SIZE) // dt.itemsize
        raise FormatError(f"truncated: {count} records declared, {complete} present",
                          HEADER_SIZE + complete * dt.itemsize)
    if len(buf) > need:
        raise FormatError("trailing bytes after last record", need)
    rec = np.frombuffer(buf, dtype=dt, count=count, offset=HEADER_SIZE)
    bad = np.flatnonzero(rec["label"] >= n_classes)
    if bad.size:
        raise FormatError(f"label {rec['label'][bad[0]]} >= C={n_classes}",
                          HEADER_SIZE + int(bad[0]) * dt.itemsize)
    frames = rec["iq"][..., 0] + 1j * rec["iq"][..., 1]
    return Dataset(frames, rec["label"], rec["snr"], seed, n_classes, flags)


def write_dataset(ds: Dataset, path):
    Path(path).write_bytes(encode_dataset(ds))


def read_dataset(path, seed: int = 0) -> Dataset:
    """Load records; the split is recomputed from ``seed`` since it is not stored."""
    return decode_dataset(Path(path).read_bytes(), seed)
