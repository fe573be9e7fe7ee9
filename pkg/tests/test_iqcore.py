import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rfadvsim.errors import FormatError, InputLengthError
from rfadvsim.iqcore import (FRAME_LEN, HEADER_SIZE, MAGIC, Dataset, ModulationScheme as M, constellation,
                             decode_dataset, encode_dataset, generate_dataset, modulate, read_dataset,
                             split_indices, symbols_needed, synth_record, write_dataset)

MEMORYLESS = [M.BPSK, M.QPSK, M.PSK8, M.QAM16, M.QAM64, M.PAM4]


def zeros_for(scheme):
    return np.zeros(symbols_needed(scheme) * scheme.bits_per_symbol, dtype=int)


class TestConstellations:
    @pytest.mark.parametrize("scheme", MEMORYLESS)
    def test_unit_energy(self, scheme):
        pts = constellation(scheme)
        assert abs(np.mean(np.abs(pts) ** 2) - 1) <= 1e-12
        assert len(pts) == 2 ** scheme.bits_per_symbol
        assert len(set(np.round(pts, 9))) == len(pts)

    def test_bpsk_bits(self):
        bits = zeros_for(M.BPSK)
        bits[1] = 1
        x = modulate(M.BPSK, bits)
        assert x[0] == 1 + 0j and x[1] == -1 + 0j

    def test_qam16_scale(self):
        pts = constellation(M.QAM16)
        assert np.min(np.abs(pts.real)) == pytest.approx(1 / np.sqrt(10), abs=1e-15)
        assert np.max(np.abs(pts.real)) == pytest.approx(3 / np.sqrt(10), abs=1e-15)

    def test_qpsk_zeros(self):
        x = modulate(M.QPSK, zeros_for(M.QPSK))
        assert x.shape == (FRAME_LEN,)
        np.testing.assert_array_equal(x, np.full(FRAME_LEN, (1 + 1j) / np.sqrt(2)))

    @pytest.mark.parametrize("scheme", MEMORYLESS)
    def test_gray_neighbours_differ_by_one_bit(self, scheme):
        pts = constellation(scheme)
        if scheme == M.BPSK:
            return
        # nearest neighbours of every point carry labels at Hamming distance 1
        for i, p in enumerate(pts):
            d = np.abs(pts - p)
            d[i] = np.inf
            nearest = np.flatnonzero(np.isclose(d, d.min()))
            assert any(bin(i ^ j).count("1") == 1 for j in nearest)


class TestModulate:
    def test_too_few_bits(self):
        with pytest.raises(InputLengthError):
            modulate(M.QAM64, np.zeros(10, dtype=int))

    @pytest.mark.parametrize("scheme", list(M))
    def test_deterministic(self, scheme):
        a = modulate(scheme, rng=np.random.default_rng(4))
        b = modulate(scheme, rng=np.random.default_rng(4))
        np.testing.assert_array_equal(a, b)
        assert a.shape == (FRAME_LEN,) and np.all(np.isfinite(a))

    @pytest.mark.parametrize("scheme", MEMORYLESS)
    def test_memoryless(self, scheme):
        bps = scheme.bits_per_symbol
        bits = np.random.default_rng(1).integers(0, 2, symbols_needed(scheme) * bps)
        x = modulate(scheme, bits)
        bits2 = bits.copy()
        bits2[5 * bps] ^= 1
        diff = np.flatnonzero(modulate(scheme, bits2) != x)
        assert diff.tolist() == [5]

    def test_cpfsk_phase_steps(self):
        x = modulate(M.CPFSK, rng=np.random.default_rng(0))
        np.testing.assert_allclose(np.abs(x), 1, atol=1e-12)
        steps = np.angle(x[1:] / x[:-1])
        # modulation index 1/2: every symbol advances the phase by +-pi/2
        np.testing.assert_allclose(np.abs(steps), np.pi / 2, atol=1e-9)

    def test_gfsk_phase_continuous(self):
        x = modulate(M.GFSK, rng=np.random.default_rng(0))
        np.testing.assert_allclose(np.abs(x), 1, atol=1e-12)
        steps = np.abs(np.angle(x[1:] / x[:-1]))
        assert steps.max() <= np.pi / 2 + 1e-9
        assert steps.min() < np.pi / 2 - 0.1       # smoothing shortens steps around transitions

    def test_fsk_constant_symbols(self):
        bits = np.ones(symbols_needed(M.CPFSK), dtype=int)
        x = modulate(M.CPFSK, bits)
        np.testing.assert_allclose(x, np.exp(1j * np.pi / 2 * np.arange(FRAME_LEN)), atol=1e-9)

    @pytest.mark.parametrize("scheme", [M.QPSK, M.QAM16, M.GFSK])
    def test_rrc_unit_power(self, scheme):
        x = modulate(scheme, rng=np.random.default_rng(2), rrc_sps=4)
        assert x.shape == (FRAME_LEN,)
        assert np.mean(np.abs(x) ** 2) == pytest.approx(1.0, abs=1e-12)


class TestSynth:
    def test_noiseless_limit(self):
        rec = synth_record(M.QAM16, np.inf, np.random.default_rng(3))
        x = modulate(M.QAM16, rng=np.random.default_rng(3))
        np.testing.assert_array_equal(rec.frame, x)
        assert rec.label == int(M.QAM16)

    def test_empirical_snr(self):
        rng = np.random.default_rng(7)
        sig = noise = 0.0
        for _ in range(800):            # 800 * 128 > 1e5 symbols
            seed = int(rng.integers(1 << 31))
            x = modulate(M.QPSK, rng=np.random.default_rng(seed))
            r = synth_record(M.QPSK, 10, np.random.default_rng(seed)).frame
            sig += np.sum(np.abs(x) ** 2)
            noise += np.sum(np.abs(r - x) ** 2)
        assert abs(10 * np.log10(sig / noise) - 10) <= 0.2

    def test_tx_taps(self):
        taps = np.full(FRAME_LEN, 2j)
        rec = synth_record(M.BPSK, np.inf, np.random.default_rng(0), tx_taps=taps)
        x = modulate(M.BPSK, rng=np.random.default_rng(0))
        np.testing.assert_array_equal(rec.frame, 2j * x)

    def test_dataset_balanced_and_reproducible(self):
        a = generate_dataset(160, seed=5)
        b = generate_dataset(160, seed=5)
        np.testing.assert_array_equal(a.frames, b.frames)
        assert np.bincount(a.labels).tolist() == [20] * 8
        assert set(a.snr_db.tolist()) == set(range(0, 20, 2))
        # record i depends only on (seed, i)
        np.testing.assert_array_equal(generate_dataset(40, seed=5).frames, a.frames[:40])


class TestSplit:
    @given(st.integers(0, 3000), st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_disjoint_cover_balanced(self, n, seed):
        tr, te = split_indices(n, seed)
        assert len(np.intersect1d(tr, te)) == 0
        assert np.array_equal(np.sort(np.concatenate([tr, te])), np.arange(n))
        assert abs(len(tr) - len(te)) <= 1


def _tiny(n=3):
    return generate_dataset(n, seed=1)


class TestFormat:
    def test_roundtrip_bit_identical(self, tmp_path):
        ds = _tiny()
        write_dataset(ds, tmp_path / "a.rfiq")
        back = read_dataset(tmp_path / "a.rfiq", seed=1)
        np.testing.assert_array_equal(back.frames, ds.frames)
        np.testing.assert_array_equal(back.labels, ds.labels)
        np.testing.assert_array_equal(back.snr_db, ds.snr_db)
        np.testing.assert_array_equal(back.train_idx, ds.train_idx)
        write_dataset(back, tmp_path / "b.rfiq")
        assert (tmp_path / "a.rfiq").read_bytes() == (tmp_path / "b.rfiq").read_bytes()

    def test_layout(self):
        raw = encode_dataset(_tiny(2))
        assert HEADER_SIZE == 13
        assert raw[:5] == MAGIC + b"\x01"
        assert int.from_bytes(raw[5:9], "little") == 2
        assert int.from_bytes(raw[9:11], "little") == 128
        assert raw[11] == 8
        assert len(raw) == 13 + 2 * (1 + 2 + 128 * 8)

    def test_empty(self):
        raw = encode_dataset(Dataset(np.zeros((0, FRAME_LEN)), [], []))
        assert len(raw) == 13
        assert len(decode_dataset(raw)) == 0

    def test_bad_magic(self):
        raw = bytearray(encode_dataset(_tiny()))
        raw[0] = ord("X")
        with pytest.raises(FormatError) as info:
            decode_dataset(bytes(raw))
        assert info.value.offset == 0

    def test_truncated(self):
        raw = encode_dataset(_tiny())
        rec = (len(raw) - 13) // 3
        with pytest.raises(FormatError) as info:
            decode_dataset(raw[:-5])
        assert info.value.offset == 13 + 2 * rec
        with pytest.raises(FormatError):
            decode_dataset(raw[:8])

    def test_label_out_of_range(self):
        raw = bytearray(encode_dataset(_tiny()))
        rec = (len(raw) - 13) // 3
        raw[13 + rec] = 9
        with pytest.raises(FormatError) as info:
            decode_dataset(bytes(raw))
        assert info.value.offset == 13 + rec

    def test_bad_version(self):
        raw = bytearray(encode_dataset(_tiny()))
        raw[4] = 2
        with pytest.raises(FormatError) as info:
            decode_dataset(bytes(raw))
        assert info.value.offset == 4
