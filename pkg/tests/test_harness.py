import os
import struct

import numpy as np
import pytest

from rfadvsim.classifier import ClassifierModel, TrainHyper, accuracy, train
from rfadvsim.errors import ConfigError, RfAdvError
from rfadvsim.harness import cli, sweep
from rfadvsim.harness.config import SEED_ENV, config_from_dict, load_config, parse_config
from rfadvsim.iqcore import MAGIC, read_dataset
from rfadvsim.nnad import save_checkpoint

SMALL = {
    "dataset": {"n_records": 4000, "snr_grid": [10]},
    "model": {"conv1_filters": 16, "conv2_filters": 8, "dense_units": 32, "dropout": 0.2},
    "train": {"epochs": 8, "lr": 3e-3},
    "eval": {"n_frames": 100, "pnr_grid": [-10.0, 0.0]},
}


def small_cfg(**over):
    data = {k: dict(v) for k, v in SMALL.items()}
    for key, value in over.items():
        sec, name = key.split("__")
        data.setdefault(sec, {})[name] = value
    return config_from_dict(data, env={})


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    cfg = small_cfg()
    ds = sweep.load_dataset(cfg)
    model = ClassifierModel(sweep.model_config(cfg), seed=0)
    train(model, ds, TrainHyper(epochs=cfg.train.epochs, lr=cfg.train.lr))
    path = tmp_path_factory.mktemp("ckpt") / "m.nnad"
    save_checkpoint(path, model.state_dict())
    return ds, model, str(path)


def toml_for(ckpt, extra=""):
    return f"""
seed = 0
[dataset]
n_records = 4000
snr_grid = [10]
[model]
checkpoint = "{ckpt}"
conv1_filters = 16
conv2_filters = 8
dense_units = 32
dropout = 0.2
[eval]
n_frames = 40
pnr_grid = [-10.0, 0.0]
{extra}
"""


class TestConfig:
    def test_defaults(self):
        cfg = load_config(None, env={})
        assert cfg.eval.snr_db == 10.0
        assert cfg.eval.n_frames == 500
        assert cfg.seed == 0

    @pytest.mark.parametrize("text,key", [
        ("[eval]\nbogus = 1", "eval.bogus"),
        ("[eval]\nn_frames = 'many'", "eval.n_frames"),
        ("[eval]\npnr_grid = [0, -10]", "eval.pnr_grid"),
        ("[eval]\npnr_grid = []", "eval.pnr_grid"),
        ("[model]\ncheckpoint = '/nonexistent/m.nnad'", "model.checkpoint"),
        ("[broadcast]\nweights = [[0.5, 0.6]]", "broadcast.weights[0]"),
        ("[defense]\nalpha = 1.5", "defense.alpha"),
        ("[channel]\npnr_reference = 'moon'", "channel.pnr_reference"),
        ("nope = 3", "nope"),
        ("[dataset]\nn_records = true", "dataset.n_records"),
    ])
    def test_errors_carry_key_path(self, text, key):
        with pytest.raises(ConfigError) as info:
            parse_config(text, env={})
        assert info.value.key == key
        assert str(info.value).startswith(key)

    def test_syntax_error(self):
        with pytest.raises(ConfigError):
            parse_config("[eval\n", env={})

    def test_seed_env_override(self):
        assert parse_config("seed = 3", env={SEED_ENV: "11"}).seed == 11
        assert parse_config("seed = 3", env={}).seed == 3
        with pytest.raises(ConfigError):
            parse_config("", env={SEED_ENV: "x"})

    def test_int_accepted_for_float(self):
        assert parse_config("[eval]\nsnr_db = 4", env={}).eval.snr_db == 4.0


class TestKinds:
    def test_parse(self):
        assert sweep.parse_kind("mrpp_targeted") == ("mrpp_targeted", "target", None)
        assert sweep.parse_kind("blackbox_uap_pca_input") == ("uap_pca_input", "surrogate", None)
        assert sweep.parse_kind("mmse_targeted@1.2") == ("mmse_targeted", "target", (1.2,))

    @pytest.mark.parametrize("bad", ["mrpp", "mrpp_targeted@1.0", "mmse_targeted@x", "blackbox_"])
    def test_rejects(self, bad):
        with pytest.raises(ConfigError):
            sweep.parse_kind(bad)


class TestCurvePoint:
    def test_invariants(self):
        with pytest.raises(ValueError):
            sweep.CurvePoint("none", 0.0, 1.5, 10)
        with pytest.raises(ValueError):
            sweep.CurvePoint("none", 0.0, 0.5, 0)

    def test_csv_roundtrip(self, tmp_path):
        pts = [sweep.CurvePoint("a", -10.0, 1 / 3, 3), sweep.CurvePoint("b", 0.5, 1.0, 3, 0.25, 7)]
        text = sweep.write_csv(pts, tmp_path / "c.csv")
        assert text.splitlines()[0] == "attack,pnr_db,accuracy,n_frames,abstain_rate,seed"
        assert text.splitlines()[1] == "a,-10,0.333333,3,,0"
        back = sweep.read_csv(tmp_path / "c.csv")
        assert back[1] == pts[1]
        assert back[0].accuracy == 0.333333


class TestBudget:
    def test_transmitter_reference(self):
        cfg = small_cfg()
        # frame noise energy at 10 dB is 128 * 0.1
        assert sweep.budget(cfg, 0.0) == pytest.approx(12.8)
        assert sweep.budget(cfg, 10.0) == pytest.approx(128.0)

    def test_receiver_reference_scales_by_path_loss(self):
        tx = small_cfg()
        rx = small_cfg(channel__pnr_reference="receiver")
        pl = tx.channel.params().path_loss
        assert sweep.budget(rx, 0.0) == pytest.approx(12.8 / pl ** 2)


class TestSweep:
    def test_none_equals_clean(self, trained):
        ds, model, _ = trained
        cfg = small_cfg(attack__kinds=["none"])
        frames, labels = sweep.eval_set(cfg, ds)
        clean = accuracy(model, frames, labels)
        pts = sweep.run_sweep(cfg, model=model, ds=ds)
        assert [p.accuracy for p in pts] == [clean] * 2
        assert all(p.n_frames == 100 for p in pts)

    def test_vanishing_budget(self, trained):
        ds, model, _ = trained
        cfg = small_cfg(attack__kinds=["none", "mrpp_targeted", "mrpp_nontargeted", "channel_inversion"],
                        eval__pnr_grid=[-40.0])
        pts = sweep.run_sweep(cfg, model=model, ds=ds)
        clean = pts[0].accuracy
        for p in pts[1:]:
            assert abs(p.accuracy - clean) <= 0.02, p

    def test_attack_lowers_accuracy(self, trained):
        ds, model, _ = trained
        cfg = small_cfg(attack__kinds=["none", "mrpp_targeted"], eval__pnr_grid=[0.0],
                        channel__pnr_reference="receiver")
        none, mrpp = sweep.run_sweep(cfg, model=model, ds=ds)
        assert mrpp.accuracy < none.accuracy - 0.2

    def test_byte_identical_repeat(self, trained, tmp_path):
        ds, model, _ = trained
        cfg = small_cfg(attack__kinds=["mrpp_targeted", "mmse_targeted", "limited_channel"],
                        uap__N=4, eval__n_frames=20)
        a = sweep.write_csv(sweep.run_sweep(cfg, model=model, ds=ds), tmp_path / "a.csv")
        b = sweep.write_csv(sweep.run_sweep(cfg, model=model, ds=ds), tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert a == b

    def test_frame_results_independent_of_batch(self, trained):
        ds, model, _ = trained
        cfg = small_cfg(attack__kinds=["mrpp_targeted"], eval__n_frames=30, eval__pnr_grid=[0.0])
        frames, labels = sweep.eval_set(cfg, ds)
        taps = sweep.frame_taps(cfg, 30)
        full = sweep.Crafter(cfg, model, frames, labels, taps).craft("mrpp_targeted", 1.0)
        head = sweep.Crafter(cfg, model, frames[:7], labels[:7], taps[:7]).craft("mrpp_targeted", 1.0)
        np.testing.assert_allclose(full[:7], head, atol=1e-12)
        np.testing.assert_array_equal(sweep.frame_taps(cfg, 7), taps[:7])

    def test_row_count(self, trained):
        ds, model, _ = trained
        grid = [-40.0, -30.0, -20.0, -15.0, -10.0, -5.0, 0.0, 5.0]
        cfg = small_cfg(attack__kinds=["none", "fgm_nochannel", "mrpp_targeted"], eval__pnr_grid=grid,
                        eval__n_frames=10)
        pts = sweep.run_sweep(cfg, model=model, ds=ds)
        assert len(pts) == 24
        assert [p.pnr_db for p in pts[:8]] == grid

    def test_certified_accuracy_has_abstain_rate(self, trained):
        ds, model, _ = trained
        cfg = small_cfg(attack__kinds=["none"], defense__certify=True, defense__k=5, eval__n_frames=20)
        pts = sweep.run_sweep(cfg, model=model, ds=ds)
        assert all(p.abstain_rate is not None and p.accuracy + p.abstain_rate <= 1 for p in pts)

    def test_blackbox_needs_surrogate(self, trained):
        ds, model, _ = trained
        cfg = small_cfg(attack__kinds=["blackbox_mrpp_targeted"])
        with pytest.raises(ConfigError):
            sweep.run_sweep(cfg, model=model, ds=ds)

    def test_blackbox_with_self_surrogate_matches_whitebox(self, trained):
        ds, model, _ = trained
        cfg = small_cfg(attack__kinds=["mrpp_targeted", "blackbox_mrpp_targeted"], eval__n_frames=20)
        wbox, bbox = sweep.run_sweep(cfg, model=model, ds=ds, surrogate=model)[::2]
        assert wbox.accuracy == bbox.accuracy

    def test_no_frames_at_snr(self, trained):
        ds, model, _ = trained
        with pytest.raises(RfAdvError):
            sweep.run_sweep(small_cfg(eval__snr_db=11.0), model=model, ds=ds)


class TestBroadcastSweep:
    def test_rows(self, trained):
        ds, model, _ = trained
        cfg = small_cfg(broadcast__kinds=["idba", "jdba"], broadcast__weights=[[1.0, 0.0], [0.5, 0.5]],
                        broadcast__per_receiver=True, eval__n_frames=10)
        pts = sweep.run_broadcast(cfg, models=[model, model], ds=ds)
        # 2 kinds x 2 weights x 2 pnr x (joint + 2 receivers)
        assert len(pts) == 24
        assert pts[0].attack == "idba[1,0]"
        assert pts[1].attack == "idba[1,0]:rx1"

    def test_joint_never_below_receivers(self, trained):
        ds, model, _ = trained
        cfg = small_cfg(broadcast__per_receiver=True, eval__n_frames=20)
        pts = sweep.run_broadcast(cfg, models=[model, model], ds=ds)
        for i in range(0, len(pts), 3):
            assert pts[i].accuracy >= max(pts[i + 1].accuracy, pts[i + 2].accuracy)


class TestCertify:
    def test_zero_frames_header_only(self, trained):
        ds, model, _ = trained
        text = sweep.run_certify(small_cfg(eval__n_frames=0), model=model, ds=ds)
        assert text == "frame_id,true_label,outcome,n_A,n_B,p_value\n"

    def test_rows(self, trained):
        ds, model, _ = trained
        cfg = small_cfg(eval__n_frames=15, defense__k=20, attack__kinds=["mrpp_targeted"])
        lines = sweep.run_certify(cfg, model=model, ds=ds).splitlines()
        assert len(lines) == 16
        for line in lines[1:]:
            fid, lab, outcome, na, nb, p = line.split(",")
            assert outcome == "abstain" or 0 <= int(outcome) < 8
            assert int(na) + int(nb) <= 20


class TestCli:
    def run(self, *argv):
        return cli.main([str(a) for a in argv])

    def test_synth(self, tmp_path):
        (tmp_path / "c.toml").write_text("[dataset]\nn_records = 37\n")
        out = tmp_path / "ds.rfiq"
        assert self.run("synth", "--config", tmp_path / "c.toml", "--out", out) == 0
        raw = out.read_bytes()
        assert raw[:4] == MAGIC
        assert struct.unpack_from("<I", raw, 5)[0] == 37
        assert len(read_dataset(out)) == 37

    def test_usage_errors_exit_1(self, tmp_path, capsys):
        assert self.run() == 1
        assert self.run("fly") == 1
        assert self.run("synth") == 1              # --out missing
        assert "rfadvsim" in capsys.readouterr().err

    def test_config_error_exit_1(self, tmp_path, capsys):
        (tmp_path / "c.toml").write_text("[eval]\npnr_grid = [3, 1]\n")
        assert self.run("attack-sweep", "--config", tmp_path / "c.toml", "--out", tmp_path / "o.csv") == 1
        assert "eval.pnr_grid" in capsys.readouterr().err
        assert self.run("synth", "--config", tmp_path / "missing.toml", "--out", tmp_path / "d") == 1

    def test_missing_checkpoint_exit_1(self, tmp_path, capsys):
        (tmp_path / "c.toml").write_text("[dataset]\nn_records = 50\n")
        assert self.run("attack-sweep", "--config", tmp_path / "c.toml", "--out", tmp_path / "o.csv") == 1
        assert "model.checkpoint" in capsys.readouterr().err

    def test_runtime_error_exit_2(self, trained, tmp_path, capsys):
        _, _, ckpt = trained
        (tmp_path / "c.toml").write_text(toml_for(ckpt, "snr_db = 11.0\n"))
        assert self.run("attack-sweep", "--config", tmp_path / "c.toml", "--out", tmp_path / "o.csv") == 2
        assert "no test frames" in capsys.readouterr().err

    def test_sweep_certify_report(self, trained, tmp_path, capsys):
        _, _, ckpt = trained
        cfg = tmp_path / "c.toml"
        cfg.write_text(toml_for(ckpt, '[attack]\nkinds = ["none", "mrpp_targeted"]\n[defense]\nk = 5\n'))
        csv = tmp_path / "o.csv"
        assert self.run("attack-sweep", "--config", cfg, "--out", csv) == 0
        assert len(csv.read_text().splitlines()) == 5
        assert self.run("certify", "--config", cfg, "--out", tmp_path / "cert.csv") == 0
        assert len((tmp_path / "cert.csv").read_text().splitlines()) == 41
        capsys.readouterr()
        assert self.run("report", csv) == 0
        table = capsys.readouterr().out.splitlines()
        assert table[0].split() == ["attack", "-10", "0"]
        assert table[1].split()[0] == "none"
        assert self.run("report", tmp_path / "cert.csv") == 2

    def test_train_writes_checkpoint(self, tmp_path):
        (tmp_path / "c.toml").write_text(
            "[dataset]\nn_records = 200\nsnr_grid = [10]\n[model]\nconv1_filters = 4\nconv2_filters = 2\n"
            "dense_units = 8\n[train]\nepochs = 1\n[eval]\nn_frames = 10\n")
        out = tmp_path / "m.nnad"
        assert self.run("train", "--config", tmp_path / "c.toml", "--out", out) == 0
        assert os.path.getsize(out) > 0
        assert self.run("defend-train", "--config", tmp_path / "c.toml", "--out", tmp_path / "d.nnad") == 0

    def test_surrogate_checkpoint_loads_under_target_config(self, trained, tmp_path):
        _, _, ckpt = trained
        cfg = tmp_path / "c.toml"
        cfg.write_text(toml_for(ckpt, "[train]\nepochs = 1\n"))
        sur = tmp_path / "s.nnad"
        assert self.run("train", "--surrogate", "--config", cfg, "--out", sur) == 0
        model = sweep.load_model(load_config(cfg, env={}), str(sur))
        assert model.config.extra_hidden == 256
        assert model.config.conv1_filters == 16
        cfg.write_text(toml_for(ckpt, f'[attack]\nkinds = ["blackbox_mrpp_targeted"]\nsurrogate = "{sur}"\n'))
        assert self.run("attack-sweep", "--config", cfg, "--out", tmp_path / "o.csv") == 0
        assert (tmp_path / "o.csv").read_text().count("blackbox_mrpp_targeted") == 2

    def test_report_summary_fills_gaps(self):
        pts = [sweep.CurvePoint("a", 0.0, 0.5, 2), sweep.CurvePoint("b", 10.0, 0.25, 2)]
        lines = cli.summarize(pts).splitlines()
        assert lines[1].split() == ["a", "0.5000", "-"]
        assert lines[2].split() == ["b", "-", "0.2500"]
