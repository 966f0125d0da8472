import json
import math

import numpy as np
import pytest

import spinereg as sr


def rotation(axis, deg):
    return sr.RigidTransform.from_axis_angle(np.asarray(axis, float) / np.linalg.norm(axis), math.radians(deg))


def small_spec():
    s = sr.PhantomSpec()
    s.body_radii = np.array([15.0, 12.0, 10.0])
    s.process_size = np.array([10.0, 14.0, 8.0])
    s.margin = 8.0
    return s


def test_transform_roundtrip():
    T = sr.RigidTransform(np.eye(3), np.array([1.0, 2.0, 3.0]), 1.0)
    pts = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
    assert np.allclose(T.apply(pts), pts + [1, 2, 3])
    R = rotation([0, 0, 1], 90)
    assert np.allclose(R.rotation @ [1, 0, 0], [0, 1, 0])
    both = R @ T
    assert np.allclose((both.inverse() @ both).rotation, np.eye(3))
    assert sr.rotation_angle_between(R.rotation, np.eye(3)) == pytest.approx(math.pi / 2)


def test_point_set_registration_recovers_motion():
    rng = np.random.default_rng(3)
    Y = rng.uniform(-10, 10, size=(150, 3)) * [1.5, 1.0, 0.6]
    G = sr.RigidTransform(rotation([1, 2, 0], 12).rotation, np.array([3.0, -2.0, 1.0]), 1.0)
    X = G.apply(Y)
    cfg = sr.GmmConfig()
    cfg.outlier_weight = 0.0
    r = sr.register_point_sets(X, Y, cfg)
    assert sr.rotation_angle_between(r.transform.rotation, G.rotation) < math.radians(0.1)
    assert np.allclose(r.transform.translation, G.translation, atol=1e-2)
    h = np.array(r.objective_history)
    assert np.all(np.diff(h) <= 1e-9 * np.abs(h[:-1]))
    assert len(r.weighted_objective_history) == len(h) == r.iterations


def test_bad_point_array_raises():
    with pytest.raises(sr.PreconditionError):
        sr.register_point_sets(np.zeros((4, 2)), np.zeros((4, 3)))
    assert issubclass(sr.IoError, sr.SpineregError)


def test_icosphere_and_decimation():
    s = sr.make_icosphere(4, 10.0)
    assert s.triangles.shape == (5120, 3)
    assert s.is_watertight()
    p = sr.DecimationParams()
    p.target_triangles = 1000
    p.max_edge_length = 0.0
    d = sr.decimate(s, p)
    assert d.triangles.shape[0] <= 1000
    assert d.is_watertight()
    assert sr.hausdorff_stats(d, s).mean <= p.max_geometric_error
    assert d.enclosed_volume() == pytest.approx(4 / 3 * math.pi * 1000, rel=0.05)


def test_mesh_from_arrays_validates():
    v = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])
    m = sr.TriangleMesh(v, np.array([[0, 1, 2]]))
    assert not m.is_watertight()
    with pytest.raises(sr.PreconditionError):
        sr.TriangleMesh(v, np.array([[0, 1, 7]]))


def test_phantom_followup_dice(tmp_path):
    vol, counts = sr.make_phantom(small_spec())
    assert vol.labels() == [1, 2, 3]
    assert vol.count(2) == counts[2]
    arr = vol.labels_array
    assert arr.shape == tuple(vol.dims)
    assert int((arr == 1).sum()) == counts[1]

    path = tmp_path / "v.nii"
    sr.write_volume(vol, path)
    back = sr.read_volume(path)
    assert np.array_equal(back.labels_array, arr)
    assert sr.dice(vol, back, 1) == 1.0

    same = sr.LabelVolume(arr, spacing=vol.spacing, origin=vol.origin, direction=vol.direction)
    assert sr.dice(vol, same, 3) == 1.0

    p = sr.PerturbationSpec()
    p.max_rotation = 0.0
    p.max_translation = 0.0
    p.max_grid_offset = 0.0
    fu, transforms = sr.make_followup(vol, p)
    assert sorted(transforms) == [1, 2, 3]
    assert np.allclose(transforms[1].rotation, np.eye(3))
    assert sr.dice(vol, fu, 2) == 1.0


def test_surface_registration_on_phantom():
    vol, _ = sr.make_phantom(small_spec())
    mesh = sr.label_surface(vol, 1)
    assert mesh.is_watertight()
    G = sr.RigidTransform.from_axis_angle(np.array([0.0, 0.6, 0.8]), math.radians(8), np.array([2.0, 1.0, 0.0]))
    moved = mesh.transformed(G)
    r = sr.register_meshes(moved, mesh)
    assert sr.rotation_angle_between(r.transform.rotation, G.rotation) < math.radians(0.5)
    assert sr.hausdorff_stats(moved.transformed(r.transform.inverse()), mesh).mean < 0.05


def test_read_missing_file_raises():
    with pytest.raises(sr.IoError):
        sr.read_volume("/nonexistent/spinereg/volume.nii")
    with pytest.raises(sr.IoError):
        sr.read_ply("/nonexistent/spinereg/mesh.ply")


def test_study_manifest(tmp_path):
    vol, _ = sr.make_phantom(small_spec())
    sr.write_volume(vol, tmp_path / "base.nii")
    p = sr.PerturbationSpec()
    p.max_rotation = 10.0
    p.max_translation = 5.0
    fu, _ = sr.make_followup(vol, p)
    sr.write_volume(fu, tmp_path / "fu.nii")
    (tmp_path / "m.json").write_text(
        json.dumps({"baseline": "base.nii", "followups": [{"timepoint": "3m", "path": "fu.nii"}]})
    )
    n = sr.run_study_manifest(tmp_path / "m.json", tmp_path / "out")
    assert n == 3
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["counts"]["registered"] == 3
    assert all(e["dice"] >= 0.95 for e in summary["entries"])
    assert sr.default_label_map()[1] == "C7"
