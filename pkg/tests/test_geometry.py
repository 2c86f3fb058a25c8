import numpy as np
import pytest

from hypercloud.errors import CloudFormatError, DomainError
from hypercloud.geometry import (
    DatasetSpec,
    TriMesh,
    as_cloud,
    edge_lengths,
    gaussian_confidence_radius,
    icosphere,
    load_cloud,
    load_cloud_dir,
    load_mesh_obj,
    make_rng,
    normalize_cloud,
    sample_ball,
    sample_sphere,
    save_cloud,
    save_mesh_obj,
    subsample_cloud,
    synth_dataset,
)


def test_as_cloud_validation():
    with pytest.raises(ValueError, match="shape"):
        as_cloud(np.zeros((4, 2)))
    with pytest.raises(ValueError, match="empty"):
        as_cloud(np.zeros((0, 3)))
    with pytest.raises(DomainError):
        as_cloud([[0.0, np.nan, 0.0]])


def test_ball_samples_stay_inside(rng):
    pts = sample_ball(10_000, rng)
    assert pts.shape == (10_000, 3)
    assert np.all(np.linalg.norm(pts, axis=1) <= 1.0)


def test_ball_radius_distribution(rng):
    r = np.linalg.norm(sample_ball(100_000, rng), axis=1)
    assert r.mean() == pytest.approx(0.75, abs=0.01)
    assert np.mean(r <= 0.5) == pytest.approx(0.125, abs=0.01)


def test_ball_is_centred(rng):
    np.testing.assert_allclose(sample_ball(100_000, rng).mean(axis=0), 0.0, atol=0.01)


def test_ball_rejects_empty(rng):
    with pytest.raises(ValueError):
        sample_ball(0, rng)


def test_sphere_samples(rng):
    pts = sample_sphere(100_000, 2.5, rng)
    np.testing.assert_allclose(np.linalg.norm(pts, axis=1), 2.5, rtol=1e-12)
    np.testing.assert_allclose(pts.mean(axis=0), 0.0, atol=0.02 * 2.5)
    with pytest.raises(ValueError):
        sample_sphere(10, 0.0, rng)


def test_samplers_are_deterministic():
    np.testing.assert_array_equal(sample_ball(50, make_rng(3)), sample_ball(50, make_rng(3)))


@pytest.mark.parametrize("p, radius", [(0.95, 2.795), (0.98, 3.136), (0.99, 3.368)])
def test_gaussian_confidence_radius(p, radius):
    assert gaussian_confidence_radius(p) == pytest.approx(radius, abs=1e-3)


@pytest.mark.parametrize("level, n_vertices, n_faces", [(0, 12, 20), (1, 42, 80), (2, 162, 320), (3, 642, 1280)])
def test_icosphere_counts(level, n_vertices, n_faces):
    mesh = icosphere(level)
    assert mesh.vertices.shape == (n_vertices, 3)
    assert mesh.triangles.shape == (n_faces, 3)
    np.testing.assert_allclose(np.linalg.norm(mesh.vertices, axis=1), 1.0, atol=1e-12)


def test_icosphere_edges_shrink_with_level():
    assert edge_lengths(icosphere(3)).max() < edge_lengths(icosphere(2)).max()


def test_icosphere_level_guard():
    with pytest.raises(ValueError):
        icosphere(8)
    with pytest.raises(ValueError):
        icosphere(-1)


def test_icosphere_connectivity_is_stable():
    np.testing.assert_array_equal(icosphere(2).triangles, icosphere(2).triangles)


def test_trimesh_rejects_bad_indices():
    with pytest.raises(ValueError):
        TriMesh(np.zeros((3, 3)), [[0, 1, 3]])
    with pytest.raises(ValueError):
        TriMesh(np.zeros((3, 3)), [[0, 1, 1]])


def test_normalize_two_points():
    pc, centroid, scale = normalize_cloud([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    np.testing.assert_array_equal(pc, [[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    np.testing.assert_array_equal(centroid, [1.0, 0.0, 0.0])
    assert scale == 1.0


def test_normalize_single_point():
    pc, centroid, scale = normalize_cloud([[5.0, 5.0, 5.0]])
    np.testing.assert_array_equal(pc, [[0.0, 0.0, 0.0]])
    assert scale == 1.0


def test_normalize_is_idempotent(rng):
    once, _, _ = normalize_cloud(rng.normal(size=(200, 3)) * 4.0 + 3.0)
    twice, _, _ = normalize_cloud(once)
    np.testing.assert_allclose(twice, once, atol=1e-12)
    assert np.linalg.norm(once, axis=1).max() == pytest.approx(1.0)


def test_normalize_rejects_non_finite():
    with pytest.raises(DomainError):
        normalize_cloud([[0.0, 0.0, np.inf]])


def test_subsample_cloud(rng):
    pc = rng.normal(size=(50, 3))
    sub = subsample_cloud(pc, 20, rng)
    assert sub.shape == (20, 3)
    assert len(np.unique(sub, axis=0)) == 20
    assert subsample_cloud(pc, 80, rng).shape == (80, 3)


def test_load_cloud(tmp_path):
    path = tmp_path / "a.xyz"
    path.write_text("# comment\n0 0 0\n1 0 0\n")
    np.testing.assert_array_equal(load_cloud(path), [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])


def test_load_cloud_reports_line(tmp_path):
    path = tmp_path / "bad.xyz"
    path.write_text("a b c\n")
    with pytest.raises(CloudFormatError, match=r"bad\.xyz:1"):
        load_cloud(path)


def test_load_cloud_errors(tmp_path):
    (tmp_path / "short.xyz").write_text("1 2\n")
    with pytest.raises(CloudFormatError, match="expected 3 fields"):
        load_cloud(tmp_path / "short.xyz")
    (tmp_path / "empty.xyz").write_text("# nothing\n")
    with pytest.raises(CloudFormatError, match="no points"):
        load_cloud(tmp_path / "empty.xyz")
    with pytest.raises(CloudFormatError):
        load_cloud(tmp_path / "missing.xyz")


def test_cloud_file_is_bit_exact(tmp_path, rng):
    pc = rng.normal(size=(100, 3)) * 1e-3
    save_cloud(pc, tmp_path / "c.xyz")
    np.testing.assert_array_equal(load_cloud(tmp_path / "c.xyz"), pc)


def test_load_cloud_dir(tmp_path, rng):
    for name in ("b.xyz", "a.xyz"):
        save_cloud(rng.normal(size=(4, 3)), tmp_path / name)
    (tmp_path / "notes.txt").write_text("ignored")
    clouds = load_cloud_dir(tmp_path)
    assert len(clouds) == 2
    np.testing.assert_array_equal(clouds[0], load_cloud(tmp_path / "a.xyz"))
    with pytest.raises(CloudFormatError):
        load_cloud_dir(tmp_path / "nowhere")


def test_icosphere_obj(tmp_path):
    path = tmp_path / "ico.obj"
    save_mesh_obj(icosphere(0), path)
    lines = path.read_text().splitlines()
    assert sum(line.startswith("v ") for line in lines) == 12
    assert sum(line.startswith("f ") for line in lines) == 20
    back = load_mesh_obj(path)
    np.testing.assert_array_equal(back.vertices, icosphere(0).vertices)
    np.testing.assert_array_equal(back.triangles, icosphere(0).triangles)


def test_load_obj_with_texture_indices(tmp_path):
    path = tmp_path / "tri.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1/1/1 2//1 3/2\n")
    mesh = load_mesh_obj(path)
    np.testing.assert_array_equal(mesh.triangles, [[0, 1, 2]])


def test_unit_ellipsoid_is_sphere(rng):
    (pc,) = synth_dataset(DatasetSpec("ellipsoid", 1, 100, {"axes": [1, 1, 1]}), rng)
    np.testing.assert_allclose(np.linalg.norm(pc, axis=1), 1.0, atol=1e-9)


def test_ellipsoid_surface_equation(rng):
    (pc,) = synth_dataset(DatasetSpec("ellipsoid", 1, 200, {"axes": [2, 1, 1]}), rng)
    np.testing.assert_allclose((pc[:, 0] / 2) ** 2 + pc[:, 1] ** 2 + pc[:, 2] ** 2, 1.0, atol=1e-9)


def test_box_points_lie_on_faces(rng):
    (pc,) = synth_dataset(DatasetSpec("box", 1, 300, {"half_range": [0.5, 0.5]}), rng)
    np.testing.assert_allclose(np.abs(pc).max(axis=1), 0.5, atol=1e-12)


def test_two_lobe_points_lie_on_outer_surface(rng):
    (pc,) = synth_dataset(
        DatasetSpec("two-lobe", 1, 300, {"radius_range": [0.5, 0.5], "offset_range": [0.4, 0.4]}), rng
    )
    d_left = np.linalg.norm(pc - [-0.4, 0.0, 0.0], axis=1)
    d_right = np.linalg.norm(pc - [0.4, 0.0, 0.0], axis=1)
    on_left = np.isclose(d_left, 0.5, atol=1e-9)
    on_right = np.isclose(d_right, 0.5, atol=1e-9)
    assert np.all(on_left | on_right)
    assert np.all(d_left >= 0.5 - 1e-9) and np.all(d_right >= 0.5 - 1e-9)


@pytest.mark.parametrize("family", ["ellipsoid", "box", "two-lobe"])
def test_synth_is_deterministic(family):
    spec = DatasetSpec(family, 3, 64)
    a = synth_dataset(spec, make_rng(11))
    b = synth_dataset(spec, make_rng(11))
    assert len(a) == 3
    for x, y in zip(a, b):
        assert x.shape == (64, 3)
        np.testing.assert_array_equal(x, y)


def test_dataset_spec_validation():
    with pytest.raises(ValueError, match="Unknown family"):
        DatasetSpec("torus", 1, 64)
    with pytest.raises(ValueError, match="points"):
        DatasetSpec("box", 1, 4)
    with pytest.raises(ValueError, match="count"):
        DatasetSpec("box", 0, 64)
