import math

import numpy as np
import pytest

from cloudinspect import synth
from cloudinspect.diff import DiffConfig, diff
from cloudinspect.geometry import (
    SimilarityTransform,
    invert,
    rotation_about_axis,
    transform_distance,
)
from cloudinspect.registration import IcpConfig, icp
from cloudinspect.synth import Box, BoxRegion, Cylinder, DefectSpec, SceneSpec, Sphere

UNIT_CUBE = Box((0, 0, 0), (1, 1, 1))


class TestSampling:
    def test_unit_cube_count(self):
        for seed in range(5):
            assert abs(len(synth.sample_surface([UNIT_CUBE], 100, seed)) - 600) <= 30

    def test_points_lie_on_surface(self):
        pts = synth.sample_surface([UNIT_CUBE], 400, 1).points
        assert np.all(np.abs(pts) <= 0.5 + 1e-12)
        assert np.allclose(np.abs(pts).max(axis=1), 0.5)
        cyl = synth.sample_surface([Cylinder((0, 0, 0), 0.5, 2.0)], 400, 1).points
        r = np.hypot(cyl[:, 0], cyl[:, 1])
        side = np.abs(cyl[:, 2]) < 1 - 1e-9
        assert np.allclose(r[side], 0.5) and np.all(r <= 0.5 + 1e-12)

    def test_deterministic(self):
        a = synth.sample_surface(synth.tower_primitives(), 500, 7)
        b = synth.sample_surface(synth.tower_primitives(), 500, 7)
        assert a.points.tobytes() == b.points.tobytes()
        assert a.points.tobytes() != synth.sample_surface(synth.tower_primitives(), 500, 8).points.tobytes()

    def test_density_doubling(self):
        prims = synth.chair_primitives()
        n1 = len(synth.sample_surface(prims, 2000, 0))
        n2 = len(synth.sample_surface(prims, 4000, 0))
        assert n2 / n1 == pytest.approx(2, rel=0.05)

    def test_expected_count(self):
        prims = synth.shiba_primitives()
        density = 15000 / synth.surface_area(prims)
        assert len(synth.sample_surface(prims, density, 3)) == pytest.approx(15000, rel=0.05)

    def test_degenerate(self):
        with pytest.raises(synth.SynthError, match="degenerate shape"):
            synth.sample_surface([Box((0, 0, 0), (0, 0, 0))], 100)
        with pytest.raises(synth.SynthError):
            synth.sample_surface([Box((0, 0, 0), (1, -1, 1))], 100)


class TestDefects:
    def test_no_defects(self):
        c = synth.sample_surface([UNIT_CUBE], 100, 0)
        out, ids = synth.apply_defects(c, ())
        assert out == c and np.all(ids == -1)

    def test_remove_top_box(self):
        c = synth.sample_surface(synth.tower_primitives(), 2000, 0)
        top = Sphere((0.15, 0.0, 0.45), 0.39)
        inside = int(top.contains(c.points).sum())
        out, ids = synth.apply_defects(c, (DefectSpec("remove_region", top),))
        assert inside > 0 and len(out) == len(c) - inside
        assert np.all(ids == -1)

    def test_translate_marks_moved_points(self):
        c = synth.sample_surface([UNIT_CUBE], 400, 0)
        region = BoxRegion((0.4, -1, -1), (1, 1, 1))
        out, ids = synth.apply_defects(c, (DefectSpec("translate_region", region, translation=(1, 0, 0)),))
        sel = region.contains(c.points)
        assert np.array_equal(ids >= 0, sel)
        assert np.array_equal(out.points[sel], c.points[sel] + [1, 0, 0])
        assert np.array_equal(out.points[~sel], c.points[~sel])

    def test_rotate_about_pivot(self):
        c = synth.sample_surface([UNIT_CUBE], 400, 0)
        d = DefectSpec("rotate_region", BoxRegion((-1, -1, -1), (1, 1, 1)), axis=(0, 0, 1),
                       angle_degrees=90, pivot=(0.5, 0.5, 0))
        out, _ = synth.apply_defects(c, (d,))
        rel = c.points - [0.5, 0.5, 0]
        assert np.allclose(out.points, rel @ rotation_about_axis((0, 0, 1), math.pi / 2).T + [0.5, 0.5, 0])

    def test_empty_selection(self):
        c = synth.sample_surface([UNIT_CUBE], 100, 0)
        with pytest.raises(synth.SynthError, match="defect selects no points"):
            synth.apply_defects(c, (DefectSpec("remove_region", Sphere((9, 9, 9), 0.1)),))

    def test_sub_threshold_translation_is_invisible(self):
        spec = SceneSpec(
            primitives=synth.tower_primitives(), sampling_density=2000,
            defects=(DefectSpec("translate_region", BoxRegion((0.59, -0.21, -0.21), (0.81, 0.11, 0.01)),
                                translation=(0.0, 0.01, 0.0)),),
            noise_sigma=0.0, seed=1,
        )
        scene = synth.generate(spec)
        report = diff(scene.reference, scene.current, None, DiffConfig(0.08, 0.08))
        assert report.regions == []


class TestGenerate:
    def test_deterministic(self):
        a = synth.generate(synth.preset("tower", seed=4, points=4000))
        b = synth.generate(synth.preset("tower", seed=4, points=4000))
        assert a.reference.points.tobytes() == b.reference.points.tobytes()
        assert a.current.points.tobytes() == b.current.points.tobytes()
        assert a.truth.to_dict() == b.truth.to_dict()

    def test_truth_consistency(self):
        spec = synth.preset("tower", seed=2, points=6000, misalignment=SimilarityTransform.identity(),
                            noise_sigma=0.0)
        scene = synth.generate(spec)
        flagged = np.zeros(len(scene.reference), dtype=bool)
        for d in spec.defects:
            flagged |= d.region.contains(scene.reference.points)
        assert np.array_equal(scene.truth.reference, flagged)
        # the current side carries the moved points; their pre-move location lies in the region
        moved = scene.truth.current_regions
        assert set(np.unique(moved[moved >= 0]).tolist()) == {1, 2}
        assert set(np.unique(scene.truth.reference_regions[scene.truth.reference]).tolist()) == {0, 1, 2}

    def test_independent_resampling_still_matches(self):
        spec = synth.preset("chair-armrest", seed=3, points=8000, defects=False,
                            misalignment=SimilarityTransform.identity(), noise_sigma=0.0)
        scene = synth.generate(spec)
        assert scene.reference.points.tobytes() != scene.current.points.tobytes()
        report = diff(scene.reference, scene.current)
        assert report.matched_fraction_reference >= 0.99
        assert report.matched_fraction_current >= 0.99

    def test_null_scene(self):
        spec = synth.preset("tower", seed=5, points=5000, defects=False, noise_sigma=0.0,
                            shared_sampling=True, misalignment=SimilarityTransform.identity())
        scene = synth.generate(spec)
        assert scene.reference == scene.current
        assert diff(scene.reference, scene.current).regions == []

    def test_shiba_single_truth_component(self):
        scene = synth.generate(synth.preset("shiba-tail", seed=0))
        assert not scene.truth.current.any()
        assert set(scene.truth.reference_regions[scene.truth.reference].tolist()) == {0}
        assert scene.truth.reference.sum() > 200

    def test_misalignment_recovered(self):
        g = SimilarityTransform(rotation_about_axis((0, 0, 1), math.radians(15)), (0.3, 0, 0))
        scene = synth.generate(synth.preset("tower", seed=1, misalignment=g, defects=False))
        r = icp(scene.current, scene.reference, IcpConfig(max_iterations=200))
        assert r.converged
        assert transform_distance(r.transform, invert(g)) < 1e-3

    def test_noise_default(self):
        scene = synth.generate(synth.preset("shiba-tail", seed=0, points=5000))
        assert 0 < scene.noise_sigma < 0.01

    def test_spec_round_trip(self):
        spec = synth.preset("tower", seed=9)
        assert SceneSpec.from_dict(spec.to_dict()) == spec

    def test_unknown_preset(self):
        with pytest.raises(synth.SynthError, match="unknown preset"):
            synth.preset("teapot")
