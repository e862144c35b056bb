"""End-to-end runs of the command-line interface on tiny synthetic data."""

import json
import re
import shutil

import numpy as np
import pandas as pd
import pytest

from fdftnet.commands import main
from fdftnet.services.verification import GRADIENT_SUITE
from fdftnet.utils.checkpoint import load_checkpoint
from fdftnet.utils.imaging import encode_ppm

SYNTH = ["--data", "synth", "--synth-n-per-class", "10", "--synth-amplitude", "0.3"]
SMALL_DETECTOR = ["--ftt-repeats", "2", "--mb-repeats", "1", "--mb-channels", "16", "--epochs", "1", "--patience", "1"]
METRICS_LINE = re.compile(r"ACC \(%\): \d+\.\d{2}  AUROC: \d+\.\d{2}")


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def backbone_path(workdir):
    out = workdir / "backbone.ckpt"
    code = main([
        "pretrain", "--backbone", "plain-cnn", *SYNTH, "--resolution", "16",
        "--epochs", "1", "--patience", "1", "--batch-size", "8", "--out", str(out), "--seed", "0",
    ])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def model_path(workdir, backbone_path):
    out = workdir / "model.ckpt"
    code = main([
        "finetune", "--backbone-ckpt", str(backbone_path), *SYNTH, *SMALL_DETECTOR,
        "--out", str(out), "--seed", "0",
    ])
    assert code == 0
    return out


class TestPretrainAndFinetune:
    def test_pretrain_outputs(self, backbone_path):
        assert load_checkpoint(backbone_path).kind == "backbone"
        manifest = json.loads(backbone_path.with_name("backbone.ckpt.manifest.json").read_text())
        assert manifest["command"] == "pretrain"
        assert manifest["argv"][0] == "pretrain"
        assert manifest["argv"][-2:] == ["--seed", "0"]
        assert manifest["resolved_config"]["input_resolution"] == 16
        epochs = pd.read_csv(backbone_path.with_name("backbone.ckpt.epochs.csv"), header=None)
        assert len(epochs) == 1

    def test_finetune_outputs(self, model_path):
        ckpt = load_checkpoint(model_path)
        assert ckpt.kind == "model"
        assert ckpt.config.ftt_channels == [32, 64]
        assert ckpt.config.use_channel_attention

    def test_finetune_rejects_model_checkpoint(self, model_path, workdir):
        code = main(["finetune", "--backbone-ckpt", str(model_path), *SYNTH, *SMALL_DETECTOR,
                     "--out", str(workdir / "nested.ckpt")])
        assert code == 3

    def test_invalid_cutout_is_a_config_error(self, backbone_path, workdir):
        code = main(["finetune", "--backbone-ckpt", str(backbone_path), *SYNTH, *SMALL_DETECTOR,
                     "--cutout-alpha", "0", "--out", str(workdir / "bad.ckpt")])
        assert code == 2

    def test_rerun_reproduces_checkpoint(self, backbone_path, workdir):
        original = backbone_path.read_bytes()
        copy = workdir / "backbone-first.ckpt"
        shutil.copyfile(backbone_path, copy)
        assert main(["rerun", str(backbone_path.with_name("backbone.ckpt.manifest.json"))]) == 0
        assert backbone_path.read_bytes() == original == copy.read_bytes()


class TestEval:
    def test_prints_metrics_and_writes_result(self, model_path, capsys):
        assert main(["eval", "--ckpt", str(model_path), *SYNTH, "--seed", "0"]) == 0
        assert METRICS_LINE.search(capsys.readouterr().out)
        result = pd.read_csv(model_path.with_name("model.ckpt.test.eval.csv"))
        assert result.loc[0, "kind"] == "model"
        assert result.loc[0, "n_samples"] == 4

    def test_backbone_baseline(self, backbone_path, workdir, capsys):
        out = workdir / "baseline.csv"
        assert main(["eval", "--ckpt", str(backbone_path), *SYNTH, "--out", str(out), "--seed", "0"]) == 0
        assert METRICS_LINE.search(capsys.readouterr().out)
        assert out.with_name("baseline.csv.manifest.json").exists()

    def test_single_class_split(self, backbone_path, tmp_path, capsys):
        real = tmp_path / "data" / "test" / "real"
        real.mkdir(parents=True)
        for i in range(3):
            (real / f"{i}.ppm").write_bytes(encode_ppm(np.full((3, 16, 16), i / 4)))
        code = main(["eval", "--ckpt", str(backbone_path), "--data", str(tmp_path / "data")])
        assert code == 3
        assert "AUROC: undefined" in capsys.readouterr().out

    def test_missing_checkpoint(self, tmp_path):
        assert main(["eval", "--ckpt", str(tmp_path / "nope.ckpt"), *SYNTH]) == 3

    def test_corrupt_tensor_name_exits_with_data_error(self, backbone_path, tmp_path):
        data = bytearray(backbone_path.read_bytes())
        meta_len = int.from_bytes(data[8:12], "little")
        data[12 + meta_len + 4] = 0xFF
        corrupt = tmp_path / "corrupt.ckpt"
        corrupt.write_bytes(bytes(data))
        assert main(["eval", "--ckpt", str(corrupt), *SYNTH]) == 3

    def test_not_a_checkpoint(self, tmp_path):
        bogus = tmp_path / "bogus.ckpt"
        bogus.write_bytes(b"hello, world")
        assert main(["eval", "--ckpt", str(bogus), *SYNTH]) == 3


class TestAblate:
    def test_writes_report(self, backbone_path, tmp_path, capsys):
        out_dir = tmp_path / "ablation"
        code = main([
            "ablate", "--backbone-ckpt", str(backbone_path), *SYNTH, *SMALL_DETECTOR,
            "--out-dir", str(out_dir), "--with-baseline", "--seed", "0",
        ])
        assert code == 0
        text = (out_dir / "ablation.txt").read_text()
        assert "DA-FDFtNet" in text and "FDFtNet" in text and "Backbone" in text
        assert list(pd.read_csv(out_dir / "ablation.csv")["model"]) == ["Backbone", "FDFtNet", "DA-FDFtNet"]
        assert (out_dir / "da_fdftnet.ckpt").exists() and (out_dir / "fdftnet.ckpt").exists()
        assert (out_dir / "manifest.json").exists()
        assert "DA-FDFtNet" in capsys.readouterr().out


class TestGradcheck:
    def test_single_op_passes(self, capsys):
        assert main(["gradcheck", "--only", "softmax", "--seeds", "1"]) == 0
        out = capsys.readouterr().out
        assert "softmax" in out and "ok" in out
        assert "1/1 ops passed" in out

    def test_defaults_pass_and_list_every_op(self, capsys):
        assert main(["gradcheck"]) == 0
        out = capsys.readouterr().out
        listed = {line.split()[0] for line in out.splitlines() if line and not line.startswith(" ")}
        assert {name for name, _ in GRADIENT_SUITE} <= listed
        assert f"{len(GRADIENT_SUITE)}/{len(GRADIENT_SUITE)} ops passed" in out

    def test_impossible_tolerance_fails(self, capsys):
        assert main(["gradcheck", "--only", "softmax", "--seeds", "1", "--tolerance", "1e-12"]) == 1
        assert "FAIL" in capsys.readouterr().out

    def test_self_attention_lists_gamma(self, tmp_path, capsys):
        report = tmp_path / "grad.csv"
        assert main(["gradcheck", "--only", "self_attention", "--seeds", "1", "--report", str(report)]) == 0
        assert "gamma" in capsys.readouterr().out
        frame = pd.read_csv(report)
        assert "gamma" in set(frame["parameter"])
        manifest = json.loads(report.with_name("grad.csv.manifest.json").read_text())
        assert "--seed" not in manifest["argv"]


class TestSynthAndFlags:
    def test_synth_writes_layout_and_manifest(self, tmp_path, capsys):
        out = tmp_path / "fixture"
        assert main(["synth", "--out", str(out), "--n-per-class", "10", "--resolution", "16", "--seed", "3"]) == 0
        for role in ("train", "validation", "test", "finetune"):
            for name in ("real", "fake"):
                assert any((out / role / name).iterdir())
        assert (out / "manifest.json").exists()
        assert "finetune" in capsys.readouterr().out

    def test_missing_required_flag(self):
        assert main(["pretrain", "--backbone", "plain-cnn", *SYNTH]) == 2

    def test_unknown_command(self):
        assert main(["train"]) == 2

    def test_bad_resolution(self, tmp_path):
        code = main(["pretrain", "--backbone", "sep-cnn", *SYNTH, "--resolution", "60", "--out", str(tmp_path / "b.ckpt")])
        assert code == 2


@pytest.mark.slow
def test_ablation_on_two_thousand_images(backbone_path, tmp_path):
    out_dir = tmp_path / "ablation"
    code = main([
        "ablate", "--backbone-ckpt", str(backbone_path), "--data", "synth", "--synth-n-per-class", "1000",
        *SMALL_DETECTOR, "--out-dir", str(out_dir), "--seed", "0",
    ])
    assert code == 0
    frame = pd.read_csv(out_dir / "ablation.csv")
    assert list(frame["n_samples"]) == [400, 400]
