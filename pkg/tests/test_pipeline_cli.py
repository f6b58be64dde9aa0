import json
import subprocess
import sys

import pytest
import yaml

from cloudinspect import cli, synth
from cloudinspect.config import ConfigError, RunConfig
from cloudinspect.formats import read_ply, save_cloud
from cloudinspect.geometry import PointCloud, SimilarityTransform, invert, transform_distance
from cloudinspect.pipeline import PipelineError, canonical_form, run


def write_config(path, data):
    path.write_text(yaml.safe_dump(data))
    return path


def run_cli(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("scene")
    assert cli.main(["synth", "--preset", "shiba-tail", "--seed", "1", "--points", "6000", "--out", str(out)]) == 0
    return out


class TestConfig:
    def test_defaults_and_overrides(self, tmp_path):
        p = write_config(tmp_path / "c.yaml", {"input": {"reference": "a.ply", "current": "b.ply"}})
        cfg = RunConfig.load(p, ["diff.threshold=0.02", "registration.with_scale=true"])
        assert cfg.data["diff"]["threshold"] == 0.02
        assert cfg.data["registration"]["with_scale"] is True
        assert cfg.data["registration"]["max_iterations"] == 50
        assert cfg.resolve("a.ply") == tmp_path / "a.ply"

    @pytest.mark.parametrize(
        "data",
        [
            {"input": {"reference": "a.ply"}},
            {"input": {"reference": "a.ply", "current": "b.ply", "synth": {"preset": "tower"}}},
            {"input": {"synth": {"preset": "tower", "colour": 1}}},
            {"input": {"reference": "a", "current": "b"}, "diff": {"threshold": -1}},
            {"input": {"reference": "a", "current": "b"}, "bogus": {}},
            {"input": {"reference": "a", "current": "b"}, "output": {"ply_format": "xml"}},
        ],
    )
    def test_invalid(self, data):
        with pytest.raises(ConfigError):
            RunConfig(data)

    def test_exponent_without_dot(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("input: {reference: a, current: b}\nregistration: {tolerance: 1e-6}\n")
        assert RunConfig.load(p).data["registration"]["tolerance"] == 1e-6

    def test_unknown_override(self, tmp_path):
        p = write_config(tmp_path / "c.yaml", {"input": {"reference": "a", "current": "b"}})
        with pytest.raises(ConfigError):
            RunConfig.load(p, ["diff.nope=1"])


class TestRun:
    def test_identical_files(self, tmp_path, rng):
        save_cloud(tmp_path / "a.ply", PointCloud(rng.normal(size=(500, 3))))
        cfg = RunConfig({"input": {"reference": "a.ply", "current": "a.ply"},
                         "registration": {"enabled": False}, "output": {"figures": False}}, tmp_path)
        rr = run(cfg)
        doc = json.loads((tmp_path / "out" / "report.json").read_text())
        assert doc["diff"]["matched_fraction_reference"] == 1.0
        assert doc["diff"]["matched_fraction_current"] == 1.0
        assert doc["diff"]["regions"] == [] and rr.diff.regions == []
        assert "icp" not in doc["timing"]["stages"]
        for name in ("reference_labeled.ply", "current_labeled.ply", "overlay.ply", "regions.csv"):
            assert (tmp_path / "out" / name).exists()

    def test_synth_with_truth(self, scene_dir, tmp_path):
        cfg = RunConfig({
            "input": {"reference": str(scene_dir / "reference.ply"), "current": str(scene_dir / "current.ply"),
                      "truth": str(scene_dir / "truth.json")},
            "registration": {"trim_fraction": 0.1, "max_iterations": 100},
            "output": {"directory": str(tmp_path / "o")},
        }, tmp_path)
        rr = run(cfg)
        assert rr.evaluation.precision >= 0.9 and rr.evaluation.recall >= 0.9
        for fig in ("overlay.png", "icp_convergence.png", "deviation_histogram.png"):
            assert (tmp_path / "o" / fig).stat().st_size > 0
        overlay = read_ply(tmp_path / "o" / "overlay.ply")
        assert len(overlay) == len(rr.reference) + len(rr.current_aligned)

    def test_unreadable_input_cleans_up(self, tmp_path):
        cfg = RunConfig({"input": {"reference": "missing.ply", "current": "missing.ply"}}, tmp_path)
        with pytest.raises(PipelineError) as info:
            run(cfg)
        assert info.value.stage == "load" and "missing.ply" in str(info.value)
        assert not (tmp_path / "out").exists()

    def test_failure_removes_partial_outputs(self, tmp_path, monkeypatch, rng):
        save_cloud(tmp_path / "a.ply", PointCloud(rng.normal(size=(100, 3))))
        cfg = RunConfig({"input": {"reference": "a.ply", "current": "a.ply"}}, tmp_path)

        def boom(*a, **k):
            raise RuntimeError("renderer exploded")

        from cloudinspect import plotting

        monkeypatch.setattr(plotting, "plot_overlay", boom)
        with pytest.raises(PipelineError):
            run(cfg)
        assert not (tmp_path / "out").exists()

    def test_canonical_form(self):
        doc = {"timing": {}, "evaluation": {"wall_time_seconds": {}, "f1": 1},
               "config": {"output": {"directory": "/x", "figures": True}}}
        assert canonical_form(doc) == {"evaluation": {"f1": 1}, "config": {"output": {"figures": True}}}


class TestCli:
    def test_synth_deterministic(self, tmp_path, capsys):
        for name in ("a", "b"):
            assert run_cli(capsys, "synth", "--preset", "tower", "--seed", 7, "--points", 3000,
                           "--out", tmp_path / name)[0] == 0
        for f in ("reference.ply", "current.ply", "truth.json", "scene.json"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_register_recovers_generator_inverse(self, scene_dir, tmp_path, capsys):
        ref_only = tmp_path / "clean"
        spec = synth.preset("shiba-tail", seed=1, defects=False)
        scene = synth.generate(spec)
        g = scene.generator_misalignment
        ref_only.mkdir()
        save_cloud(ref_only / "reference.ply", scene.reference)
        save_cloud(ref_only / "current.ply", scene.current)
        code, out, _ = run_cli(capsys, "register", "--reference", ref_only / "reference.ply",
                               "--current", ref_only / "current.ply", "--max-iter", 200)
        assert code == 0
        t = SimilarityTransform.from_dict(json.loads(out)["transform"])
        assert transform_distance(t, invert(g)) < 1e-3
        assert (ref_only / "current_aligned.ply").exists()

    def test_diff_auto_identical(self, scene_dir, capsys, tmp_path):
        code, out, _ = run_cli(capsys, "diff", "--reference", scene_dir / "reference.ply",
                               "--current", scene_dir / "reference.ply", "--threshold", "auto",
                               "--out", tmp_path / "d")
        assert code == 0
        summary = json.loads(out)
        assert summary["regions"] == [] and summary["matched_fraction_current"] == 1.0
        assert read_ply(tmp_path / "d" / "reference_labeled.ply").labels.max() == 0

    def test_inspect_eval_and_echo(self, scene_dir, tmp_path, capsys):
        cfg = write_config(tmp_path / "run.yaml", {
            "input": {"reference": str(scene_dir / "reference.ply"),
                      "current": str(scene_dir / "current.ply")},
            "registration": {"trim_fraction": 0.1, "max_iterations": 100},
            "output": {"figures": False},
        })
        code, out, _ = run_cli(capsys, "inspect", "--config", cfg, "--output", tmp_path / "r1", "--canonical")
        assert code == 0 and json.loads(out)["regions"] >= 1
        code, out, _ = run_cli(capsys, "eval", "--report", tmp_path / "r1" / "report.json",
                               "--truth", scene_dir / "truth.json")
        assert code == 0
        metrics = json.loads(out)
        assert metrics["precision"] >= 0.9 and metrics["recall"] >= 0.9

        # the report's echoed config reproduces the run
        code, _, _ = run_cli(capsys, "inspect", "--config", tmp_path / "r1" / "report.json",
                             "--output", tmp_path / "r2", "--canonical")
        assert code == 0
        a = (tmp_path / "r1" / "report.json").read_text()
        b = (tmp_path / "r2" / "report.json").read_text()
        assert a == b

    def test_missing_config(self, tmp_path, capsys):
        code, _, err = run_cli(capsys, "inspect", "--config", tmp_path / "nope.yaml")
        assert code == 1
        line = json.loads(err.strip())
        assert line["stage"] == "config" and "nope.yaml" in line["error"]

    def test_unreadable_input(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.yaml", {"input": {"reference": "gone.ply", "current": "gone.ply"}})
        code, _, err = run_cli(capsys, "inspect", "--config", cfg)
        assert code == 1
        assert len(err.strip().splitlines()) == 1
        line = json.loads(err)
        assert line["stage"] == "load" and "gone.ply" in line["error"]
        assert not (tmp_path / "out").exists()

    def test_bad_ply(self, tmp_path, capsys):
        (tmp_path / "bad.ply").write_bytes(b"junk")
        code, _, err = run_cli(capsys, "diff", "--reference", tmp_path / "bad.ply",
                               "--current", tmp_path / "bad.ply", "--threshold", "0.1")
        assert code == 1 and "ply parse error" in json.loads(err)["error"]

    @pytest.mark.parametrize("argv", [["synth", "--preset", "teapot", "--out", "x"],
                                      ["diff", "--reference", "a", "--current", "b", "--threshold", "-1"],
                                      ["frobnicate"]])
    def test_usage_errors(self, argv, capsys):
        with pytest.raises(SystemExit) as info:
            cli.main(argv)
        assert info.value.code == 2
        assert "usage" in capsys.readouterr().err


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "cloudinspect.cli", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "cloudinspect" in proc.stdout
