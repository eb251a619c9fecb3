import json

import pytest

from fvsrn.cli import main
from fvsrn.model import checkpoint_load


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def sphere_vraw(tmp_path):
    path = tmp_path / "s.vraw"
    code = main(["make-synthetic", "--kind", "sphere", "--res", "24",
                 "--out", str(path)])
    assert code == 0
    return path


class TestBasicCommands:
    def test_make_synthetic_writes_volume_and_manifest(self, tmp_path, capsys):
        out = tmp_path / "vol.vraw"
        code, stdout, _ = run(capsys, "make-synthetic", "--kind", "gaussians",
                              "--res", "16", "--out", str(out))
        assert code == 0
        assert out.exists()
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["command"] == "make-synthetic"
        assert manifest["config"]["res"] == 16
        assert "versions" in manifest

    def test_metrics_identical_volume_hits_cap(self, sphere_vraw, capsys):
        code, stdout, _ = run(capsys, "metrics", str(sphere_vraw), str(sphere_vraw))
        assert code == 0
        assert "99" in stdout

    def test_unknown_flag_is_usage_error(self, capsys):
        code, _, err = run(capsys, "metrics", "--frobnicate", "a", "b")
        assert code == 1

    def test_missing_subcommand_is_usage_error(self, capsys):
        assert run(capsys)[0] == 1

    def test_runtime_error_exit_code(self, tmp_path, capsys):
        code, _, err = run(capsys, "metrics", str(tmp_path / "missing.vraw"),
                           str(tmp_path / "missing.vraw"))
        assert code == 2


class TestTrainRenderLoop:
    def test_train_world_render_evaluate_quantize(self, sphere_vraw, tmp_path, capsys):
        out = tmp_path / "run"
        code, stdout, err = run(
            capsys, "train-world", "--volume", str(sphere_vraw), "--out", str(out),
            "--epochs", "2", "--samples", "2048", "--batch", "512",
            "--layers", "2", "--channels", "16", "--grid-r", "4", "--grid-f", "4",
            "--fourier-m", "6",
        )
        assert code == 0, err
        assert (out / "model.fvsrn").exists()
        assert (out / "loss.csv").read_text().startswith("epoch,loss")
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "train-world"
        assert manifest["config"]["epochs"] == 2

        png = tmp_path / "frame.png"
        code, _, err = run(capsys, "render", "--model", str(out / "model.fvsrn"),
                           "--out", str(png), "--width", "32", "--height", "32",
                           "--native-res", "24")
        assert code == 0, err
        assert png.exists()

        code, _, err = run(capsys, "render", "--model", str(out / "model.fvsrn"),
                           "--out", str(tmp_path / "frame2.png"), "--width", "32",
                           "--height", "32", "--native-res", "24")
        assert code == 0
        assert png.read_bytes() == (tmp_path / "frame2.png").read_bytes()

        ev = tmp_path / "eval"
        code, stdout, err = run(capsys, "evaluate", "--model", str(out / "model.fvsrn"),
                                "--volume", str(sphere_vraw), "--views", "2",
                                "--resolution", "24", "--out", str(ev))
        assert code == 0, err
        lines = (ev / "metrics.csv").read_text().splitlines()
        assert lines[0] == "view,psnr,ssim"
        assert len(lines) == 4  # 2 views + mean + header

        q = tmp_path / "quant.fvsrn"
        code, stdout, err = run(capsys, "quantize", "--model", str(out / "model.fvsrn"),
                                "--out", str(q))
        assert code == 0, err
        back = checkpoint_load(q)
        assert back.config.grid_resolution == 4

    def test_config_file_with_flag_override(self, sphere_vraw, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"epochs": 1, "samples": 1024, "batch": 256,
                                   "layers": 2, "channels": 16, "grid_r": 0,
                                   "fourier_m": 6}))
        out = tmp_path / "run"
        code, _, err = run(capsys, "train-world", "--volume", str(sphere_vraw),
                           "--out", str(out), "--config", str(cfg), "--epochs", "2")
        assert code == 0, err
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["epochs"] == 2  # flag wins
        assert manifest["config"]["samples"] == 1024

    def test_render_from_volume(self, sphere_vraw, tmp_path, capsys):
        png = tmp_path / "direct.png"
        code, _, err = run(capsys, "render", "--volume", str(sphere_vraw),
                           "--out", str(png), "--width", "24", "--height", "24")
        assert code == 0, err
        assert png.exists()


class TestTemporalAndBench:
    def test_train_temporal_synthetic(self, tmp_path, capsys):
        out = tmp_path / "temporal"
        code, _, err = run(
            capsys, "train-temporal", "--synthetic", "moving_blobs", "--res", "16",
            "--timesteps", "11", "--keyframe-every", "5", "--train-every", "5",
            "--out", str(out), "--epochs", "1", "--samples", "1024", "--batch", "256",
            "--layers", "2", "--channels", "16", "--grid-r", "4", "--grid-f", "4",
            "--fourier-m", "6", "--time-encoding", "direct",
        )
        assert code == 0, err
        model = checkpoint_load(out / "model.fvsrn")
        assert model.keyframes.times == [1, 6, 11]

    def test_benchmark_csv(self, tmp_path, capsys):
        out = tmp_path / "bench"
        code, stdout, err = run(capsys, "benchmark", "--batches", "256,512",
                                "--runs", "3", "--out", str(out))
        assert code == 0, err
        lines = (out / "benchmark.csv").read_text().splitlines()
        assert lines[0] == "batch,evaluator,samples_per_sec"
        assert len(lines) == 5

    def test_ablate_csv_one_row_per_config(self, sphere_vraw, tmp_path, capsys):
        out = tmp_path / "ablate"
        code, stdout, err = run(
            capsys, "ablate", "--volume", str(sphere_vraw), "--out", str(out),
            "--grid", "R=0,4", "--features", "F=4", "--layers", "l=2",
            "--channels", "c=16", "--epochs", "1", "--samples", "512",
            "--batch", "256", "--views", "1", "--resolution", "16",
        )
        assert code == 0, err
        lines = (out / "ablate.csv").read_text().splitlines()
        assert lines[0].startswith("grid_r,grid_f,layers,channels")
        assert len(lines) == 3  # header + two configs
