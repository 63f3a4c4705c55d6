import json
import struct
from dataclasses import replace

import numpy as np
import pytest

from survwalk.checkpoint import (
    load_checkpoint,
    load_dataset,
    pack,
    save_checkpoint,
    save_dataset,
    unpack,
)
from survwalk.cli import main
from survwalk.config import RunConfig, load_config
from survwalk.errors import CheckpointError, ConfigError, DataFormatError
from survwalk.images import emit_image_grid, quantize, read_pgm, tile
from survwalk.survdata import SimulationConfig, SurvivalDataset, simulate
from survwalk.train import init_checkpoint, train

SMALL = RunConfig(
    latent_dim=2,
    epochs=2,
    batch_size=16,
    encoder_widths=(8,),
    decoder_widths=(8,),
    simulation=SimulationConfig(samples_per_class=6, image_size=10),
)


@pytest.fixture(scope="module")
def small_data():
    return simulate(SMALL.simulation)


def same_arrays(a, b):
    return a.keys() == b.keys() and all(a[k].tobytes() == b[k].tobytes() and a[k].dtype == b[k].dtype for k in a)


class TestContainer:
    def test_pack_unpack(self, rng):
        arrays = {"a": rng.standard_normal((2, 3)).astype(np.float32), "b": np.arange(4), "c": rng.standard_normal(3)}
        out, meta = unpack(pack(arrays, {"k": [1, 2]}))
        assert same_arrays(arrays, out) and meta == {"k": [1, 2]}

    def test_layout(self):
        blob = pack({"w": np.ones(2, np.float32)}, {})
        assert blob[:4] == b"SVHW" and blob[4] == 1
        (hlen,) = struct.unpack("<I", blob[5:9])
        header = json.loads(blob[9 : 9 + hlen])
        assert header["tensors"] == [{"name": "w", "shape": [2], "dtype": "<f4", "offset": 0, "nbytes": 8}]
        assert blob[9 + hlen :] == np.ones(2, "<f4").tobytes()

    def test_checksum(self):
        blob = bytearray(pack({"w": np.ones(4, np.float32)}, {}))
        blob[-1] ^= 0xFF
        with pytest.raises(CheckpointError, match="checksum"):
            unpack(bytes(blob))

    def test_old_version(self):
        blob = bytearray(pack({}, {}))
        blob[4] = 0
        with pytest.raises(CheckpointError, match="unsupported checkpoint version"):
            unpack(bytes(blob))

    def test_bad_magic(self):
        with pytest.raises(CheckpointError, match="magic"):
            unpack(b"NOPE" + pack({}, {})[4:])

    def test_truncation(self):
        blob = pack({"w": np.ones(4, np.float32)}, {})
        with pytest.raises(CheckpointError, match="truncated"):
            unpack(blob[:-3])
        with pytest.raises(CheckpointError, match="truncated"):
            unpack(blob[:6])

    def test_unsupported_dtype(self):
        with pytest.raises(CheckpointError):
            pack({"w": np.ones(2, np.int16)}, {})

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "absent.svhw")


class TestCheckpointRoundTrip:
    def test_bitwise(self, tmp_path, small_data):
        ckpt = train(SMALL, small_data)
        save_checkpoint(tmp_path / "a.svhw", ckpt)
        back = load_checkpoint(tmp_path / "a.svhw")
        assert same_arrays(ckpt.model.named_arrays(), back.model.named_arrays())
        assert back.rng_state == ckpt.rng_state and back.epoch == 2 and back.config == SMALL
        assert back.history == ckpt.history
        save_checkpoint(tmp_path / "b.svhw", back)
        assert (tmp_path / "a.svhw").read_bytes() == (tmp_path / "b.svhw").read_bytes()

    def test_dataset_roundtrip(self, tmp_path, small_data):
        save_dataset(tmp_path / "d.svhw", small_data)
        back = load_dataset(tmp_path / "d.svhw")
        assert same_arrays(small_data.to_arrays(), back.to_arrays())
        assert back.image_shape == small_data.image_shape

    def test_kind_checked(self, tmp_path, small_data):
        save_dataset(tmp_path / "d.svhw", small_data)
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "d.svhw")


class TestImages:
    def test_single_frame(self, tmp_path):
        grid = emit_image_grid([np.zeros((16, 16))], 1, tmp_path / "a.pgm")
        assert grid.shape == (16, 16)
        raw = (tmp_path / "a.pgm").read_bytes()
        assert raw.startswith(b"P5\n16 16\n255\n") and len(raw) == len(b"P5\n16 16\n255\n") + 256

    def test_two_frames(self):
        assert tile([np.zeros((16, 16)), np.ones((16, 16))], 2).shape == (16, 33)

    def test_wraps_rows(self):
        assert tile([np.zeros((4, 4))] * 5, 2).shape == (3 * 4 + 2, 2 * 4 + 1)

    def test_quantize(self):
        assert quantize(np.array([0.0, 0.5, 1.0])).tolist() == [0, 128, 255]

    def test_order_and_separator(self, tmp_path):
        frames = [np.full(16, 0.0), np.full(16, 1.0)]
        emit_image_grid(frames, 2, tmp_path / "g.pgm", (4, 4))
        g = read_pgm(tmp_path / "g.pgm")
        assert np.all(g[:, :4] == 0) and np.all(g[:, 4] == 255) and np.all(g[:, 5:] == 255)

    def test_empty(self):
        with pytest.raises(ValueError):
            tile([], 1)

    def test_mismatched_sizes(self):
        with pytest.raises(ValueError):
            tile([np.zeros((2, 2)), np.zeros((3, 3))], 2)


class TestConfig:
    def test_defaults(self):
        c = RunConfig()
        assert (c.latent_dim, c.beta, c.tau, c.lr_vae, c.lr_cox) == (4, 1.0, 0.5, 1e-4, 1e-5)

    def test_yaml_and_override(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("tau: 0.25\nepochs: 3\nsimulation:\n  samples_per_class: 7\n")
        c = load_config(p)
        assert c.tau == 0.25 and c.epochs == 3 and c.simulation.samples_per_class == 7
        c2 = c.override(epochs=9, tau=None, **{"simulation.seed": 4})
        assert c2.epochs == 9 and c2.tau == 0.25 and c2.simulation.seed == 4

    def test_dict_roundtrip(self):
        assert RunConfig.from_dict(SMALL.to_dict()) == SMALL

    @pytest.mark.parametrize("bad", [dict(tau=1.2), dict(lr_vae=0.0), dict(lr_cox=-1.0), dict(latent_dim=0)])
    def test_invariants(self, bad):
        with pytest.raises(ConfigError):
            RunConfig(**bad)

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("learning_rate: 3\n")
        with pytest.raises(ConfigError):
            load_config(p)


class TestTraining:
    def test_zero_epochs_is_initialisation(self, tmp_path, small_data):
        ckpt = train(replace(SMALL, epochs=0), small_data)
        init = init_checkpoint(SMALL, small_data.n_features)
        assert same_arrays(ckpt.model.named_arrays(), init.model.named_arrays())
        save_checkpoint(tmp_path / "c.svhw", ckpt)
        assert load_checkpoint(tmp_path / "c.svhw").epoch == 0

    def test_deterministic(self, tmp_path, small_data):
        for name in ("a", "b"):
            save_checkpoint(tmp_path / f"{name}.svhw", train(SMALL, small_data))
        assert (tmp_path / "a.svhw").read_bytes() == (tmp_path / "b.svhw").read_bytes()

    def test_loss_decreases_on_default_simulation(self):
        cfg = RunConfig(epochs=20)
        ckpt = train(cfg, simulate(cfg.simulation))
        h = ckpt.history
        assert len(h) == 20 and h[-1]["joint"] < h[0]["joint"]

    def test_resume_matches_uninterrupted(self, small_data):
        full = train(replace(SMALL, epochs=4), small_data)
        half = train(replace(SMALL, epochs=2), small_data)
        resumed = train(replace(SMALL, epochs=4), small_data, resume=half)
        assert same_arrays(full.model.named_arrays(), resumed.model.named_arrays())
        assert full.history == resumed.history and full.rng_state == resumed.rng_state

    def test_resume_does_not_mutate_input(self, small_data):
        half = train(replace(SMALL, epochs=1), small_data)
        before = {k: v.copy() for k, v in half.model.named_arrays().items()}
        train(replace(SMALL, epochs=2), small_data, resume=half)
        assert same_arrays(before, half.model.named_arrays())

    def test_zero_events_rejected(self, small_data):
        # the dataset type refuses all-censored data, so bypass it to exercise the trainer guard
        data = object.__new__(SurvivalDataset)
        data.__dict__.update(small_data.__dict__)
        data.events = np.zeros_like(small_data.events)
        with pytest.raises(DataFormatError):
            train(SMALL, data)


def _write_small_config(tmp_path):
    p = tmp_path / "cfg.yaml"
    p.write_text(
        "latent_dim: 2\nepochs: 2\nbatch_size: 16\nencoder_widths: [8]\ndecoder_widths: [8]\n"
        "simulation:\n  samples_per_class: 6\n  image_size: 10\n"
    )
    return p


def _pipeline(tmp_path, cfg):
    data, ckpt, walks = tmp_path / "data", tmp_path / "model.svhw", tmp_path / "walks"
    assert main(["simulate", "--config", str(cfg), "--out", str(data)]) == 0
    assert main(["train", "--config", str(cfg), "--data", str(data), "--out", str(ckpt)]) == 0
    assert main(["embed", "--ckpt", str(ckpt), "--data", str(data), "--out", str(tmp_path / "emb.csv")]) == 0
    argv = ["walk", "--ckpt", str(ckpt), "--data", str(data), "--index", "0,3", "--index", "5"]
    argv += ["--iters", "30", "--snapshot-every", "10", "--out", str(walks)]
    assert main(argv) == 0
    assert main(argv[:-1] + [str(walks), "--direction", "decrease"]) == 0
    return sorted(p for p in tmp_path.rglob("*") if p.is_file() and p.suffix != ".yaml")


class TestCli:
    def test_end_to_end_is_byte_identical(self, tmp_path, capsys):
        cfg = _write_small_config(tmp_path)
        a = _pipeline(tmp_path / "a", cfg)
        b = _pipeline(tmp_path / "b", cfg)
        rel = [p.relative_to(tmp_path / "a") for p in a]
        assert rel == [p.relative_to(tmp_path / "b") for p in b]
        assert len([p for p in rel if p.suffix == ".pgm"]) == 6
        for p, q in zip(a, b):
            if p.name == "summary.json":
                continue  # records absolute paths
            assert p.read_bytes() == q.read_bytes(), p.name
        summary = json.loads(((tmp_path / "a") / "walks" / "summary.json").read_text())
        assert [s["index"] for s in summary] == [0, 3, 5]

    def test_eval_prints_metrics(self, tmp_path, capsys):
        cfg = _write_small_config(tmp_path)
        main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "d")])
        main(["train", "--config", str(cfg), "--data", str(tmp_path / "d"), "--out", str(tmp_path / "m.svhw")])
        capsys.readouterr()
        assert main(["eval", "--ckpt", str(tmp_path / "m.svhw"), "--data", str(tmp_path / "d")]) == 0
        out = json.loads(capsys.readouterr().out)
        assert {"c_index", "hazard_rank_agreement", "reconstruction_nll"} <= set(out)

    def test_resume_via_cli(self, tmp_path):
        cfg = _write_small_config(tmp_path)
        d = str(tmp_path / "d")
        main(["simulate", "--config", str(cfg), "--out", d])
        main(["train", "--config", str(cfg), "--data", d, "--out", str(tmp_path / "full.svhw"), "--epochs", "3"])
        main(["train", "--config", str(cfg), "--data", d, "--out", str(tmp_path / "h.svhw"), "--epochs", "1"])
        argv = ["train", "--config", str(cfg), "--data", d, "--out", str(tmp_path / "r.svhw")]
        assert main(argv + ["--epochs", "3", "--resume", str(tmp_path / "h.svhw")]) == 0
        assert (tmp_path / "full.svhw").read_bytes() == (tmp_path / "r.svhw").read_bytes()

    def test_usage_errors_exit_1(self, tmp_path, capsys):
        assert main([]) == 1
        assert main(["train", "--data", "x"]) == 1
        assert main(["walk", "--ckpt", "a", "--data", "b", "--index", "0", "--direction", "up", "--out", "c"]) == 1
        bad = tmp_path / "bad.yaml"
        bad.write_text("tau: 5\n")
        assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1

    def test_data_errors_exit_2(self, tmp_path, capsys):
        junk = tmp_path / "junk.svhw"
        junk.write_bytes(b"garbage")
        assert main(["eval", "--ckpt", str(junk), "--data", str(junk)]) == 2
        assert main(["eval", "--ckpt", str(tmp_path / "none.svhw"), "--data", str(tmp_path)]) == 2
        assert "error" in capsys.readouterr().err

    def test_walk_index_out_of_range(self, tmp_path, capsys):
        cfg = _write_small_config(tmp_path)
        d = str(tmp_path / "d")
        main(["simulate", "--config", str(cfg), "--out", d])
        main(["train", "--config", str(cfg), "--data", d, "--out", str(tmp_path / "m.svhw"), "--epochs", "0"])
        argv = ["walk", "--ckpt", str(tmp_path / "m.svhw"), "--data", d, "--index", "999", "--out", str(tmp_path / "w")]
        assert main(argv) == 1
