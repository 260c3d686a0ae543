import numpy as np
import pytest

from rangesam.projection import ProjectionConfig, rasterize
from rangesam.synthetic import (BUILDING, CAR, POLE, ROAD, SIDEWALK, VEGETATION, SceneConfig, SyntheticDataset,
                                _hit_box, _hit_cylinder, _hit_ground, pixel_rays, synthetic_scene)

CFG = ProjectionConfig(height=16, width=256, row_anchor="fov_down")


def test_rays_are_unit_and_hit_pixel_centres():
    d = pixel_rays(CFG)
    assert d.shape == (16 * 256, 3)
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-12)


def test_single_occupancy():
    pc = SyntheticDataset(1, CFG)[0]
    img = rasterize(pc, CFG)
    assert img.valid.sum() == len(pc)


def test_scene_has_all_classes_and_labels_everywhere():
    counts = np.zeros(19, int)
    for pc in (SyntheticDataset(8, CFG)[i] for i in range(8)):
        counts += np.bincount(pc.labels, minlength=19)
    for c in (CAR, ROAD, SIDEWALK, BUILDING, VEGETATION, POLE):
        assert counts[c] > 100, c
    assert counts.sum() == counts[[CAR, ROAD, SIDEWALK, BUILDING, VEGETATION, POLE]].sum()


def test_dataset_is_deterministic_and_index_local():
    a = SyntheticDataset(4, CFG, seed=3)
    b = SyntheticDataset(10, CFG, seed=3)
    np.testing.assert_array_equal(a[2].xyz, b[2].xyz)
    assert not np.array_equal(a[1].xyz, a[2].xyz)
    with pytest.raises(IndexError):
        a[4]


def test_returned_clouds_are_copies():
    ds = SyntheticDataset(1, CFG)
    pc = ds[0]
    pc.xyz[:] = 0
    assert np.abs(ds[0].xyz).sum() > 0


def test_ground_hit_height():
    d = np.array([[1.0, 0, -1.0]]) / np.sqrt(2)
    t = _hit_ground(d, 1.73)
    np.testing.assert_allclose(t * d[0, 2], -1.73)
    assert np.isinf(_hit_ground(np.array([[1.0, 0, 0.1]]), 1.73))[0]


def test_box_and_cylinder_distances():
    d = np.array([[1.0, 0, 0], [0, 1.0, 0], [-1.0, 0, 0]])
    t = _hit_box(d, np.array([5.0, -1, -1]), np.array([7.0, 1, 1]))
    assert t[0] == pytest.approx(5.0) and np.isinf(t[1]) and np.isinf(t[2])
    t = _hit_cylinder(d, 10.0, 0.0, 0.5, -1, 1)
    assert t[0] == pytest.approx(9.5) and np.isinf(t[1:]).all()


def test_max_range_respected():
    pc = synthetic_scene(np.random.default_rng(0), CFG, SceneConfig(max_range=20.0))
    assert np.linalg.norm(pc.xyz, axis=1).max() <= 20.0 + 1e-3


def test_jittered_rays_stay_single_occupancy():
    pc = synthetic_scene(np.random.default_rng(1), CFG, jitter=0.4)
    img = rasterize(pc, CFG)
    assert img.valid.sum() == len(pc)
