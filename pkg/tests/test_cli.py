import json
from pathlib import Path

import numpy as np
import pytest

from sixdpose.augment import AugmentationConfig
from sixdpose.cli import cli
from sixdpose.config import (
    DEFAULT_CAMERA,
    EvalThresholds,
    GenSettings,
    ObjectConfig,
    PipelineConfig,
    load_config,
    save_config,
)
from sixdpose.dataset import load_dataset, write_detections
from sixdpose.geom import pose_to_json, random_pose
from sixdpose.mesh import make_lshape, save_obj
from sixdpose.metrics import Detection, bundle_offset
from sixdpose.train import TrainConfig


def tiny_config(tmp: Path, iterations=30) -> Path:
    """Config small enough to run the whole chain in tens of seconds."""
    mesh_path = tmp / "lshape.obj"
    save_obj(make_lshape(100.0), mesh_path)
    cfg = PipelineConfig(
        camera=DEFAULT_CAMERA,
        objects={
            "lshape": ObjectConfig(
                mesh=str(mesh_path),
                render_distance=700.0,
                n_views=40,
                inplane_steps=1,
                train=TrainConfig(
                    latent_dim=16,
                    batch_size=8,
                    iterations=iterations,
                    seed=5,
                    crop_size=32,
                    conv_channels=(8, 16, 32),
                ),
                augment=AugmentationConfig(square_occlusion_fraction=0.3),
            )
        },
        eval=EvalThresholds(),
        gen=GenSettings(frames=6, depth_range_mm=(550.0, 1000.0)),
        seed=9,
    )
    path = tmp / "config.json"
    save_config(cfg, path)
    return path


class TestUsage:
    def test_no_command_usage_error(self, capsys):
        assert cli([]) == 1

    def test_unknown_command(self):
        assert cli(["frobnicate"]) == 1

    def test_help_exits_zero(self):
        assert cli(["--help"]) == 0

    def test_subcommand_help_exits_zero(self):
        assert cli(["eval-pose", "--help"]) == 0

    def test_missing_required_flag(self):
        assert cli(["gen", "--out", "/tmp/x"]) == 1


class TestDataErrors:
    def test_missing_config_file(self, tmp_path):
        assert cli(["gen", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 2

    def test_estimate_missing_codebook_names_path(self, tmp_path, capsys):
        cfg = tiny_config(tmp_path)
        assert cli(["gen", "--config", str(cfg), "--out", str(tmp_path / "ds")]) == 0
        models = tmp_path / "models"
        models.mkdir()
        code = cli([
            "estimate", "--config", str(cfg), "--dataset", str(tmp_path / "ds"),
            "--models", str(models), "--out", str(tmp_path / "est"),
        ])
        assert code == 2
        err = capsys.readouterr().err
        assert "encoder_lshape.bin" in err

    def test_unknown_object(self, tmp_path):
        cfg = tiny_config(tmp_path)
        assert cli(["train", "--config", str(cfg), "--object", "nope",
                    "--out", str(tmp_path / "m")]) == 2


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    """gen -> train -> codebook -> estimate -> eval-pose, once per module."""
    tmp = tmp_path_factory.mktemp("chain")
    cfg = tiny_config(tmp)
    ds = tmp / "ds"
    models = tmp / "models"
    est = tmp / "est"
    rep = tmp / "report"
    assert cli(["gen", "--config", str(cfg), "--out", str(ds)]) == 0
    assert cli(["train", "--config", str(cfg), "--out", str(models)]) == 0
    assert cli(["codebook", "--config", str(cfg), "--models", str(models),
                "--out", str(models)]) == 0
    assert cli(["estimate", "--config", str(cfg), "--dataset", str(ds),
                "--models", str(models), "--detections", "gt", "--out", str(est)]) == 0
    assert cli(["eval-pose", "--config", str(cfg), "--dataset", str(ds),
                "--estimates", str(est / "estimates.json"), "--out", str(rep)]) == 0
    return tmp, cfg, ds, models, est, rep


class TestChain:
    def test_outputs_exist(self, chain):
        tmp, cfg, ds, models, est, rep = chain
        assert (models / "encoder_lshape.bin").exists()
        assert (models / "encoder_lshape.bin.json").exists()
        assert (models / "codebook_lshape.bin").exists()
        assert (est / "estimates.json").exists()
        assert (est / "timing.log").exists()
        assert (rep / "report.json").exists()
        assert (rep / "report.txt").exists()

    def test_estimates_schema(self, chain):
        tmp, cfg, ds, models, est, rep = chain
        payload = json.loads((est / "estimates.json").read_text())
        assert len(payload["records"]) == 6
        rec = payload["records"][0]
        assert set(rec) >= {"scene_id", "frame_id", "class_id", "bbox", "pose"}

    def test_timing_not_in_estimates(self, chain):
        tmp, cfg, ds, models, est, rep = chain
        text = (est / "estimates.json").read_text()
        assert "_ms" not in text
        timing = json.loads((est / "timing.log").read_text())
        assert "estimate" in timing

    def test_report_monotone_recall(self, chain):
        tmp, cfg, ds, models, est, rep = chain
        report = json.loads((rep / "report.json").read_text())
        for metric in ("add", "adi", "cou"):
            vals = list(report["recall"]["lshape"][metric].values())
            assert vals == sorted(vals)

    def test_estimate_rerun_byte_identical(self, chain):
        tmp, cfg, ds, models, est, rep = chain
        first = (est / "estimates.json").read_bytes()
        est2 = tmp / "est2"
        assert cli(["estimate", "--config", str(cfg), "--dataset", str(ds),
                    "--models", str(models), "--detections", "gt", "--out", str(est2)]) == 0
        assert (est2 / "estimates.json").read_bytes() == first

    def test_eval_detect(self, chain):
        tmp, cfg, ds, models, est, rep = chain
        dataset = load_dataset(ds)
        dets = {
            f.frame_id: [Detection("lshape", f.gts[0].bbox, 0.9, frame_id=f.frame_id)]
            for f in dataset.frames
        }
        write_detections(ds / "scenes" / "000" / "detections.json", dets)
        out = tmp / "detrep"
        assert cli(["eval-detect", "--config", str(cfg), "--dataset", str(ds),
                    "--out", str(out)]) == 0
        payload = json.loads((out / "detect_report.json").read_text())
        assert payload["map"] == pytest.approx(1.0)

    def test_bench_monotone(self, chain):
        tmp, cfg, ds, models, est, rep = chain
        out = tmp / "bench"
        assert cli(["bench", "--config", str(cfg), "--models", str(models),
                    "--iterations", "4", "--out", str(out)]) == 0
        payload = json.loads((out / "bench.json").read_text())
        for stage, p in payload["lshape"].items():
            assert p["p50_ms"] <= p["p90_ms"] <= p["p99_ms"]


class TestGtOffset:
    def test_round_trip(self, tmp_path):
        cfg = tiny_config(tmp_path)
        ds = tmp_path / "ds"
        assert cli(["gen", "--config", str(cfg), "--out", str(ds)]) == 0
        # write a consistent bundle pose per frame: B = O * T
        dataset = load_dataset(ds)
        offset = random_pose(33)
        from sixdpose.geom import compose

        bundle = {
            f"{f.frame_id:06d}": pose_to_json(compose(f.gts[0].pose, offset))
            for f in dataset.frames
        }
        (ds / "scenes" / "000" / "bundle.json").write_text(json.dumps(bundle))
        out = tmp_path / "offset.json"
        assert cli(["gt-offset", "--dataset", str(ds), "--object", "lshape",
                    "--out", str(out)]) == 0
        got = json.loads(out.read_text())
        est = np.asarray(got["lshape"]["R"]).reshape(3, 3)
        assert np.abs(est - offset.rotation.m).max() < 1e-6
        assert np.abs(np.asarray(got["lshape"]["t"]) - offset.translation).max() < 1e-6


class TestConfigIO:
    def test_round_trip(self, tmp_path):
        path = tiny_config(tmp_path)
        cfg = load_config(path)
        assert "lshape" in cfg.objects
        assert cfg.objects["lshape"].train.crop_size == 32
        save_config(cfg, tmp_path / "again.json")
        assert load_config(tmp_path / "again.json") == cfg
