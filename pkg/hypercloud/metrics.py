"""Evaluation of a generated cloud set against a reference set.

JSD over pooled voxel occupancy, MMD, COV and 1-NNA under either Chamfer or
EMD. Conventions: COV maps generated -> reference, MMD averages over
reference clouds, nearest-neighbor ties go to the lowest index, logs are
natural.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import entropy

from hypercloud.generation import generate_cloud
from hypercloud.geometry import PointCloud, as_cloud
from hypercloud.parallel import parallel_map
from hypercloud.setdist import distance, warn_if_large

log = logging.getLogger(__name__)

DEFAULT_RESOLUTION = 32
DISTANCES = ("cd", "emd")


def _check_set(clouds, name: str) -> list[PointCloud]:
    if len(clouds) == 0:
        raise ValueError(f"{name} set is empty")
    return [as_cloud(c, f"{name} cloud {i}") for i, c in enumerate(clouds)]


# --- JSD ---


@dataclass(frozen=True)
class OccupancyGrid:
    resolution: int
    counts: np.ndarray  # flat, resolution**3 cells over [-1, 1]^3
    clamped: int = 0

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def probabilities(self) -> np.ndarray:
        return self.counts / self.counts.sum()


def occupancy_grid(clouds, resolution: int = DEFAULT_RESOLUTION) -> OccupancyGrid:
    """Pool every point of every cloud into one histogram over [-1, 1]^3.

    Points outside the cube fall into the nearest boundary cell.
    """
    if resolution < 1:
        raise ValueError(f"resolution must be >= 1, got {resolution}")
    pts = np.concatenate([np.asarray(c, dtype=np.float64) for c in clouds])
    outside = int(np.sum(np.any(np.abs(pts) > 1.0, axis=1)))
    cell = np.floor((pts + 1.0) / 2.0 * resolution).astype(np.int64)
    cell = np.clip(cell, 0, resolution - 1)
    flat = (cell[:, 0] * resolution + cell[:, 1]) * resolution + cell[:, 2]
    counts = np.bincount(flat, minlength=resolution**3)
    return OccupancyGrid(resolution, counts, outside)


def jsd_from_histograms(P, Q) -> float:
    """JSD(P||Q) = (KL(P||M) + KL(Q||M)) / 2 with M = (P + Q) / 2, natural log."""
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if P.shape != Q.shape:
        raise ValueError(f"histograms differ in size: {P.shape} vs {Q.shape}")
    if np.any(P < 0) or np.any(Q < 0):
        raise ValueError("histograms must be non-negative")
    P = P / P.sum()
    Q = Q / Q.sum()
    M = (P + Q) / 2.0
    # scipy's entropy treats 0 * log 0 as 0, so cells empty in both drop out
    return float((entropy(P, M) + entropy(Q, M)) / 2.0)


def jsd(setA, setB, resolution: int = DEFAULT_RESOLUTION) -> float:
    setA = _check_set(setA, "first")
    setB = _check_set(setB, "second")
    grid_a = occupancy_grid(setA, resolution)
    grid_b = occupancy_grid(setB, resolution)
    clamped = grid_a.clamped + grid_b.clamped
    if clamped:
        log.warning("JSD: %d point(s) outside [-1, 1]^3 were clamped to boundary cells", clamped)
    return jsd_from_histograms(grid_a.counts, grid_b.counts)


# --- Distance matrices ---


def _check_emd_sizes(clouds: list[PointCloud]):
    sizes = sorted({len(c) for c in clouds})
    if len(sizes) > 1:
        raise ValueError(
            f"EMD needs all clouds to have the same size, found sizes {sizes}; resample the clouds first"
        )
    warn_if_large(sizes[0])


def pairwise_distance_matrix(A, B, dist: str = "cd") -> np.ndarray:
    """(|A|, |B|) matrix of distances; cells are filled in parallel."""
    if dist not in DISTANCES:
        raise ValueError(f"Unknown distance '{dist}'. Choose from {list(DISTANCES)}")
    A = _check_set(A, "first")
    B = _check_set(B, "second")
    if dist == "emd":
        _check_emd_sizes(A + B)
    cells = [(i, j) for i in range(len(A)) for j in range(len(B))]
    values = parallel_map(lambda ij: distance(dist, A[ij[0]], B[ij[1]], warn=False), cells,
                          desc=f"pairwise {dist}")
    return np.array(values, dtype=np.float64).reshape(len(A), len(B))


@dataclass(frozen=True)
class DistanceTable:
    """Distances among generated (g) and reference (r) clouds, computed once."""

    gr: np.ndarray
    gg: np.ndarray | None = None
    rr: np.ndarray | None = None

    @classmethod
    def build(cls, Sg, Sr, dist: str, with_within: bool = True) -> "DistanceTable":
        gr = pairwise_distance_matrix(Sg, Sr, dist)
        if not with_within:
            return cls(gr)
        return cls(gr, pairwise_distance_matrix(Sg, Sg, dist), pairwise_distance_matrix(Sr, Sr, dist))


def _mmd(gr: np.ndarray) -> float:
    return float(gr.min(axis=0).mean())


def _mmd_smp(gr: np.ndarray) -> float:
    return float(gr.min(axis=1).mean())


def _cov(gr: np.ndarray) -> float:
    matched = np.argmin(gr, axis=1)
    return len(np.unique(matched)) / gr.shape[1]


def _nna(gg: np.ndarray, gr: np.ndarray, rr: np.ndarray) -> float:
    ng, nr = gr.shape
    full = np.block([[gg, gr], [gr.T, rr]]).astype(np.float64)
    np.fill_diagonal(full, np.inf)
    nearest = np.argmin(full, axis=1)
    is_gen = np.arange(ng + nr) < ng
    correct = is_gen[nearest] == is_gen
    return float(correct.sum() / (ng + nr))


def mmd(Sg, Sr, dist: str = "cd") -> float:
    """Mean over reference clouds of the distance to the closest generated cloud."""
    return _mmd(pairwise_distance_matrix(Sg, Sr, dist))


def cov(Sg, Sr, dist: str = "cd") -> float:
    """Fraction of reference clouds that are the nearest neighbor of some generated cloud."""
    return _cov(pairwise_distance_matrix(Sg, Sr, dist))


def nna_1(Sg, Sr, dist: str = "cd") -> float:
    """Leave-one-out 1-NN two-sample accuracy over Sg + Sr; 0.5 is ideal."""
    if len(Sg) < 2 or len(Sr) < 2:
        raise ValueError(f"1-NNA needs at least 2 clouds per set, got {len(Sg)} and {len(Sr)}")
    t = DistanceTable.build(Sg, Sr, dist)
    return _nna(t.gg, t.gr, t.rr)


# --- Report ---


@dataclass(frozen=True)
class MetricReport:
    distance: str
    jsd: float
    mmd: float
    mmd_smp: float
    cov: float
    nna_1: float | None
    n_generated: int
    n_reference: int
    resolution: int
    seed: int | None = None
    sphere_radius: float | None = None

    def to_dict(self) -> dict:
        metrics = [{"name": "jsd", "distance": None, "value": self.jsd}]
        for name in ("mmd", "mmd_smp", "cov", "nna_1"):
            metrics.append({"name": name, "distance": self.distance, "value": getattr(self, name)})
        doc = {
            "distance": self.distance,
            "metrics": metrics,
            "set_sizes": {"generated": self.n_generated, "reference": self.n_reference},
            "resolution": self.resolution,
            "seed": self.seed,
        }
        if self.sphere_radius is not None:
            doc["sphere_radius"] = self.sphere_radius
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def values(self) -> dict:
        return asdict(self)


def evaluate_sets(
    Sg, Sr, dist: str = "cd", resolution: int = DEFAULT_RESOLUTION, seed: int | None = None,
) -> MetricReport:
    """All metrics from one shared distance table."""
    Sg = _check_set(Sg, "generated")
    Sr = _check_set(Sr, "reference")
    with_nna = len(Sg) >= 2 and len(Sr) >= 2
    if not with_nna:
        log.warning("1-NNA skipped: needs at least 2 clouds per set (got %d and %d)", len(Sg), len(Sr))
    table = DistanceTable.build(Sg, Sr, dist, with_within=with_nna)
    return MetricReport(
        distance=dist,
        jsd=jsd(Sg, Sr, resolution),
        mmd=_mmd(table.gr),
        mmd_smp=_mmd_smp(table.gr),
        cov=_cov(table.gr),
        nna_1=_nna(table.gg, table.gr, table.rr) if with_nna else None,
        n_generated=len(Sg),
        n_reference=len(Sr),
        resolution=resolution,
        seed=seed,
    )


def sphere_sweep(
    model, latents, reference, radii, n: int, dist: str = "cd",
    rng: np.random.Generator | None = None, resolution: int = DEFAULT_RESOLUTION,
) -> list[MetricReport]:
    """Mesh-quality sweep: for each radius R, push R-sphere samples through the
    target network of every latent and score that set against `reference`.

    R = 1 is the boundary of the training prior; Gaussian-prior models would
    use `gaussian_confidence_radius` instead.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    reports = []
    for radius in radii:
        generated = [generate_cloud(model, z, n, rng, sphere_radius=radius) for z in latents]
        report = evaluate_sets(generated, reference, dist, resolution)
        log.info("sphere R=%g: jsd %.4g mmd %.4g cov %.3f", radius, report.jsd, report.mmd, report.cov)
        reports.append(MetricReport(**{**report.values(), "sphere_radius": float(radius)}))
    return reports
