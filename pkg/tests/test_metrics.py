import json
import logging

import numpy as np
import pytest

from hypercloud.geometry import DatasetSpec, make_rng, synth_dataset
from hypercloud.metrics import (
    DistanceTable,
    cov,
    evaluate_sets,
    jsd,
    jsd_from_histograms,
    mmd,
    nna_1,
    occupancy_grid,
    pairwise_distance_matrix,
    sphere_sweep,
)
from hypercloud.setdist import chamfer


@pytest.fixture
def clouds(rng):
    return [rng.uniform(-0.9, 0.9, size=(32, 3)) for _ in range(4)]


def test_jsd_identical_sets(clouds):
    assert jsd(clouds, clouds) == 0.0


def test_jsd_disjoint_occupancy():
    a = [np.full((10, 3), -0.5)]
    b = [np.full((10, 3), 0.5)]
    assert jsd(a, b) == pytest.approx(np.log(2.0))


def test_jsd_two_cell_toy():
    assert jsd_from_histograms([1.0, 0.0], [0.5, 0.5]) == pytest.approx(0.21576, abs=1e-5)


def test_jsd_histogram_validation():
    with pytest.raises(ValueError):
        jsd_from_histograms([1.0, 0.0], [1.0])
    with pytest.raises(ValueError):
        jsd_from_histograms([1.0, -1.0], [1.0, 1.0])


def test_occupancy_clamps_outside_points(caplog):
    grid = occupancy_grid([np.array([[2.0, 0.0, 0.0], [0.0, 0.0, 0.0]])], resolution=4)
    assert grid.total == 2
    assert grid.clamped == 1
    with caplog.at_level(logging.WARNING, logger="hypercloud.metrics"):
        jsd([np.array([[2.0, 0.0, 0.0]])], [np.array([[0.0, 0.0, 0.0]])])
    assert "clamped" in caplog.text


def test_occupancy_resolution_guard():
    with pytest.raises(ValueError):
        occupancy_grid([np.zeros((1, 3))], resolution=0)


def test_pairwise_matrix_layout(clouds):
    d = pairwise_distance_matrix(clouds[:2], clouds[1:], "cd")
    assert d.shape == (2, 3)
    assert d[1, 0] == 0.0
    assert d[0, 2] == chamfer(clouds[0], clouds[3])


def test_emd_matrix_rejects_unequal_sizes(rng):
    with pytest.raises(ValueError, match="resample"):
        pairwise_distance_matrix([rng.normal(size=(4, 3))], [rng.normal(size=(5, 3))], "emd")


def test_mmd(clouds):
    assert mmd(clouds, clouds) == 0.0
    a, b, c, d = clouds
    assert mmd([a], [b]) == chamfer(a, b)
    table = pairwise_distance_matrix([a, b], [c, d])
    assert mmd([a, b], [c, d]) == pytest.approx(table.min(axis=0).mean())


def test_cov(clouds):
    assert cov(clouds, clouds) == 1.0
    far = [c + 10.0 for c in clouds]
    # every generated cloud is nearest to the same reference cloud
    one_ref = [clouds[0]] + far[1:]
    assert cov([clouds[0], clouds[0] + 0.01], one_ref) == 1 / len(one_ref)


def test_cov_three_onto_two():
    r1 = np.zeros((4, 3))
    r2 = np.full((4, 3), 5.0)
    gen = [r1 + 0.1, r1 - 0.1, r2 + 0.1]
    assert cov(gen, [r1, r2]) == 1.0


def test_nna_identical_sets(clouds):
    assert nna_1(clouds, clouds) == 0.0


def test_nna_separated_families():
    a = synth_dataset(DatasetSpec("ellipsoid", 6, 64), make_rng(1))
    b = [c + 5.0 for c in synth_dataset(DatasetSpec("box", 6, 64), make_rng(2))]
    assert nna_1(a, b) == 1.0


def test_nna_needs_two_clouds(clouds):
    with pytest.raises(ValueError):
        nna_1(clouds[:1], clouds)


def test_nna_iid_samples_near_half():
    scores = []
    for seed in range(5):
        rng = make_rng(seed)
        spec = DatasetSpec("ellipsoid", 50, 64)
        scores.append(nna_1(synth_dataset(spec, rng), synth_dataset(spec, rng)))
    assert 0.4 <= np.mean(scores) <= 0.6


@pytest.fixture
def two_sets():
    gen = synth_dataset(DatasetSpec("ellipsoid", 6, 48), make_rng(11))
    ref = synth_dataset(DatasetSpec("box", 5, 48), make_rng(12))
    return gen, ref


def test_metrics_are_symmetric_where_defined(two_sets):
    gen, ref = two_sets
    assert jsd(gen, ref) == pytest.approx(jsd(ref, gen), abs=1e-15)
    assert nna_1(gen, ref) == nna_1(ref, gen)


def test_metrics_ignore_cloud_order(two_sets):
    gen, ref = two_sets
    gen_r, ref_r = gen[::-1], [ref[i] for i in (2, 4, 0, 1, 3)]
    assert jsd(gen_r, ref_r) == jsd(gen, ref)
    assert mmd(gen_r, ref_r) == pytest.approx(mmd(gen, ref), rel=1e-12)
    assert cov(gen_r, ref_r) == cov(gen, ref)
    assert nna_1(gen_r, ref_r) == nna_1(gen, ref)


def test_metrics_ignore_point_order(two_sets):
    gen, ref = two_sets
    rng = make_rng(5)
    gen_p = [pc[rng.permutation(len(pc))] for pc in gen]
    ref_p = [pc[rng.permutation(len(pc))] for pc in ref]
    assert jsd(gen_p, ref_p) == jsd(gen, ref)
    assert mmd(gen_p, ref_p) == pytest.approx(mmd(gen, ref), rel=1e-12)
    assert cov(gen_p, ref_p) == cov(gen, ref)
    assert nna_1(gen_p, ref_p) == nna_1(gen, ref)
    assert mmd(gen_p, ref_p, "emd") == pytest.approx(mmd(gen, ref, "emd"), rel=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_metric_bounds(seed):
    rng = make_rng(seed)
    gen = [rng.uniform(-0.9, 0.9, size=(24, 3)) * rng.uniform(0.2, 1.0) for _ in range(int(rng.integers(2, 6)))]
    ref = [rng.normal(0.0, 0.3, size=(24, 3)) for _ in range(int(rng.integers(2, 6)))]
    assert 0.0 <= jsd(gen, ref) <= np.log(2.0) + 1e-12
    assert mmd(gen, ref) >= 0.0
    assert 0.0 <= cov(gen, ref) <= 1.0
    assert 0.0 <= nna_1(gen, ref) <= 1.0


def test_distance_table_reuses_cells(clouds):
    t = DistanceTable.build(clouds[:2], clouds[2:], "cd")
    assert t.gg.shape == (2, 2) and t.rr.shape == (2, 2)
    assert DistanceTable.build(clouds[:2], clouds[2:], "cd", with_within=False).gg is None


def test_evaluate_identical_sets(clouds):
    report = evaluate_sets(clouds, clouds, "cd", seed=3)
    assert (report.jsd, report.mmd, report.cov, report.nna_1) == (0.0, 0.0, 1.0, 0.0)
    doc = json.loads(report.to_json())
    assert {m["name"] for m in doc["metrics"]} == {"jsd", "mmd", "mmd_smp", "cov", "nna_1"}
    assert doc["set_sizes"] == {"generated": 4, "reference": 4}
    assert doc["resolution"] == 32
    assert doc["seed"] == 3


def test_evaluate_with_emd(clouds):
    report = evaluate_sets(clouds[:2], clouds[2:], "emd")
    assert report.distance == "emd"
    assert report.mmd > 0


def test_evaluate_single_cloud_skips_nna(clouds, caplog):
    with caplog.at_level(logging.WARNING, logger="hypercloud.metrics"):
        report = evaluate_sets(clouds[:1], clouds, "cd")
    assert report.nna_1 is None
    assert "1-NNA skipped" in caplog.text


def test_sphere_sweep(small_model, clouds, rng):
    latents = [rng.normal(size=small_model.latent_dim) for _ in range(2)]
    reports = sphere_sweep(small_model, latents, clouds, radii=[1.0, 2.0], n=32, rng=make_rng(0))
    assert [r.sphere_radius for r in reports] == [1.0, 2.0]
    assert all(r.n_generated == 2 for r in reports)
    assert "sphere_radius" in reports[0].to_dict()
