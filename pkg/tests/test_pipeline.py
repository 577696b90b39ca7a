import filecmp
import json
from pathlib import Path

import numpy as np
import pytest

from leaffit.asset import (controls_blob, evaluate_leaf, export_asset,
                           import_asset)
from leaffit.cli import main as cli_main
from leaffit.config import PipelineConfig
from leaffit.errors import AssetError, ParameterError
from leaffit.pipeline import resolve_root, resolve_template, run_pipeline
from leaffit.registration import evaluate_mls
from leaffit.synthetic import PlantSpec, generate


def fast_config():
    cfg = PipelineConfig()
    cfg.segmentation.backend = "dijkstra"
    cfg.segmentation.tau = 0.055
    cfg.registration.steps = 30
    cfg.registration.depth_resolution = 96
    return cfg


@pytest.fixture(scope="module")
def plant_dir(tmp_path_factory):
    directory = tmp_path_factory.mktemp("plant")
    plant = generate(PlantSpec(leaf_count=3, seed=0))
    plant.write(directory)
    return directory, plant


@pytest.fixture(scope="module")
def finished_run(plant_dir, tmp_path_factory):
    directory, plant = plant_dir
    out = tmp_path_factory.mktemp("run")
    run = run_pipeline(directory / "plant.ply", plant.root_index, out,
                       cfg=fast_config())
    return run


class TestRunPipeline:
    def test_asset_shape(self, finished_run):
        asset = finished_run.asset
        n = finished_run.segmentation.leaf_count()
        assert asset.leaf_count == n
        assert asset.leaf_controls.shape == (n, asset.control_count, 3)
        assert asset.template_mesh.two_sided
        assert not asset.stem_mesh.is_empty

    def test_manifest_records_config(self, finished_run):
        manifest = finished_run.asset.manifest
        cfg = fast_config()
        assert manifest["config"]["segmentation"]["tau"] == \
            cfg.segmentation.tau
        assert manifest["config"]["registration"]["steps"] == \
            cfg.registration.steps
        assert manifest["template_id"] == finished_run.template_id
        assert len(manifest["leaves"]) == finished_run.asset.leaf_count

    def test_stage_artifacts_exist(self, finished_run):
        stages = finished_run.out_dir / "stages"
        for name in ("segmentation.json", "tree.json", "registration.json",
                     "template.obj", "template.png", "stem.obj"):
            assert (stages / name).exists()

    def test_report_outputs(self, finished_run):
        report = finished_run.out_dir / "report"
        assert (report / "segmentation.png").exists()
        assert (report / "leaves.csv").exists()
        header = (report / "leaves.csv").read_text().splitlines()[0]
        assert "chamfer_final" in header

    def test_template_self_fit(self, finished_run):
        fit = finished_run.fits[finished_run.template_id]
        assert fit.result.chamfer <= 1e-6

    def test_no_per_leaf_geometry_in_export(self, finished_run):
        asset_dir = finished_run.out_dir / "asset"
        names = {p.name for p in asset_dir.iterdir()}
        assert names == {"manifest.json", "template.obj", "template.mtl",
                         "template.png", "stem.obj", "controls.bin"}
        k = finished_run.asset.control_count
        n = finished_run.asset.leaf_count
        expected = 4 * (2 + 3 * k + 3 * n * k + 12 * n)
        assert (asset_dir / "controls.bin").stat().st_size == expected


class TestAssetRoundTrip:
    def test_export_import_equality(self, finished_run, tmp_path):
        asset = finished_run.asset
        export_asset(asset, tmp_path / "a")
        back = import_asset(tmp_path / "a")
        assert np.array_equal(back.template_controls,
                              asset.template_controls)
        assert np.array_equal(back.leaf_controls, asset.leaf_controls)
        assert np.array_equal(back.leaf_frames_rot, asset.leaf_frames_rot)
        assert np.array_equal(back.leaf_frames_t, asset.leaf_frames_t)
        assert np.array_equal(back.template_mesh.faces,
                              asset.template_mesh.faces)
        assert np.array_equal(back.template_mesh.vertices,
                              asset.template_mesh.vertices)
        assert np.array_equal(back.texture.pixels, asset.texture.pixels)
        assert np.array_equal(back.stem_mesh.vertices,
                              asset.stem_mesh.vertices)
        # a re-export of the imported asset is byte-identical
        export_asset(back, tmp_path / "b")
        for name in ("template.obj", "template.png", "stem.obj",
                     "controls.bin"):
            assert (tmp_path / "a" / name).read_bytes() == \
                (tmp_path / "b" / name).read_bytes()

    def test_controls_blob_layout(self, finished_run):
        asset = finished_run.asset
        blob = controls_blob(asset)
        k, n = asset.control_count, asset.leaf_count
        assert len(blob) == 4 * (2 + 3 * k + 3 * n * k + 12 * n)
        header = np.frombuffer(blob[:8], dtype="<f4")
        assert int(header[0]) == k and int(header[1]) == n

    def test_version_mismatch_rejected(self, finished_run, tmp_path):
        export_asset(finished_run.asset, tmp_path / "v")
        manifest = json.loads((tmp_path / "v" / "manifest.json").read_text())
        manifest["version"] = 99
        (tmp_path / "v" / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(AssetError, match="migration"):
            import_asset(tmp_path / "v")

    def test_corruption_detected(self, finished_run, tmp_path):
        export_asset(finished_run.asset, tmp_path / "c")
        blob = bytearray((tmp_path / "c" / "controls.bin").read_bytes())
        blob[20] ^= 0xFF
        (tmp_path / "c" / "controls.bin").write_bytes(bytes(blob))
        with pytest.raises(AssetError, match="checksum"):
            import_asset(tmp_path / "c")


class TestEvaluateLeaf:
    def test_identity_template_leaf(self, finished_run):
        asset = finished_run.asset
        t = finished_run.template_id
        out = evaluate_leaf(asset, t)
        frame = asset.frame(t)
        # the template's own controls equal C_t, so the warp is the identity
        expected = frame.to_plant(asset.template_mesh.vertices)
        assert np.allclose(out, expected, atol=1e-9)

    def test_unknown_leaf_rejected(self, finished_run):
        with pytest.raises(ParameterError, match="unknown leaf"):
            evaluate_leaf(finished_run.asset, 99)

    def test_bit_identical_across_calls(self, finished_run):
        a = evaluate_leaf(finished_run.asset, 0)
        b = evaluate_leaf(finished_run.asset, 0)
        assert np.array_equal(a, b)


class TestDeterminism:
    def test_two_runs_byte_identical(self, plant_dir, tmp_path):
        directory, plant = plant_dir
        runs = []
        for name in ("r1", "r2"):
            run_pipeline(directory / "plant.ply", plant.root_index,
                         tmp_path / name, cfg=fast_config(),
                         write_reports=False)
            runs.append(tmp_path / name / "asset")
        files = sorted(p.name for p in runs[0].iterdir())
        assert files == sorted(p.name for p in runs[1].iterdir())
        for name in files:
            assert (runs[0] / name).read_bytes() == \
                (runs[1] / name).read_bytes(), f"{name} differs"


class TestResume:
    def test_stagewise_equals_single_shot(self, plant_dir, tmp_path):
        directory, plant = plant_dir
        cfg = fast_config()
        staged = tmp_path / "staged"
        for stage in ("segment", "register", "mesh", "stem", "export"):
            run_pipeline(directory / "plant.ply", plant.root_index, staged,
                         cfg=cfg, write_reports=False, stop_after=stage)
        oneshot = tmp_path / "oneshot"
        run_pipeline(directory / "plant.ply", plant.root_index, oneshot,
                     cfg=cfg, write_reports=False)
        for name in ("controls.bin", "template.obj", "stem.obj",
                     "template.png"):
            assert (staged / "asset" / name).read_bytes() == \
                (oneshot / "asset" / name).read_bytes(), name


class TestResolvers:
    def test_resolve_root_coordinates(self, plant_dir):
        directory, plant = plant_dir
        target = plant.cloud.centers[37]
        text = ",".join(f"{v:.9f}" for v in target)
        assert resolve_root(plant.cloud, text) == 37

    def test_resolve_root_bad_index(self, plant_dir):
        _, plant = plant_dir
        with pytest.raises(ParameterError):
            resolve_root(plant.cloud, 10 ** 9)

    def test_resolve_template_auto(self, finished_run):
        seg = finished_run.segmentation
        auto = resolve_template(seg, "auto")
        sizes = {leaf.id: leaf.member_indices.shape[0] for leaf in seg.leaves}
        assert sizes[auto] == max(sizes.values())
        with pytest.raises(ParameterError):
            resolve_template(seg, 55)


class TestCli:
    def test_run_and_eval(self, plant_dir, tmp_path, capsys):
        directory, plant = plant_dir
        out = tmp_path / "cli"
        code = cli_main([
            "run", "--input", str(directory / "plant.ply"),
            "--root", str(plant.root_index), "--out", str(out),
            "--backend", "dijkstra", "--tau", "0.055", "--steps", "20",
        ])
        assert code == 0
        assert (out / "asset" / "manifest.json").exists()
        code = cli_main(["eval", "--asset", str(out / "asset"),
                         "--leaf", "0",
                         "--out", str(tmp_path / "leaf0.obj")])
        assert code == 0
        assert (tmp_path / "leaf0.obj").exists()

    def test_segment_only(self, plant_dir, tmp_path):
        directory, plant = plant_dir
        out = tmp_path / "segonly"
        code = cli_main([
            "segment", "--input", str(directory / "plant.ply"),
            "--root", str(plant.root_index), "--out", str(out),
            "--backend", "dijkstra", "--tau", "0.055",
        ])
        assert code == 0
        assert (out / "stages" / "segmentation.json").exists()
        assert not (out / "asset").exists()

    def test_bad_config_exit_code(self, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text("[nonexistent]\nfoo = 1\n")
        code = cli_main(["--config", str(bad), "segment", "--input", "x.ply",
                         "--root", "0", "--out", str(tmp_path / "o")])
        assert code == 2

    def test_stage_error_exit_code(self, tmp_path):
        missing = tmp_path / "nope.ply"
        code = cli_main(["run", "--input", str(missing), "--root", "0",
                         "--out", str(tmp_path / "o2")])
        assert code == 3
