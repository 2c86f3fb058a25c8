"""Priors and shapes: ball/sphere samplers, icosphere, normalization, file I/O
and synthetic shape families.

A point cloud is an (N, 3) float64 array. Randomness always comes from a
`numpy.random.Generator` (PCG64 via `make_rng`); never from global state.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import chi2

from hypercloud.errors import CloudFormatError, DomainError

log = logging.getLogger(__name__)

PointCloud = np.ndarray

MAX_ICOSPHERE_LEVEL = 7
MIN_SYNTH_POINTS = 8
FAMILIES = ("ellipsoid", "box", "two-lobe")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def as_cloud(points, name: str = "cloud") -> PointCloud:
    pc = np.asarray(points, dtype=np.float64)
    if pc.ndim != 2 or pc.shape[1] != 3:
        raise ValueError(f"{name} must have shape (N, 3), got {pc.shape}")
    if pc.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(pc)):
        raise DomainError(f"{name} contains non-finite coordinates")
    return pc


@dataclass
class TriMesh:
    vertices: np.ndarray  # (V, 3) float64
    triangles: np.ndarray  # (F, 3) int64, 0-based

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise ValueError("triangle index out of range")
        t = self.triangles
        if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
            raise ValueError("triangle with repeated vertex index")


# --- Priors ---


def _unit_directions(n: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((n, 3))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    # A zero Gaussian draw has probability zero; map it to a fixed axis.
    bad = norms[:, 0] == 0.0
    if np.any(bad):
        g[bad] = (1.0, 0.0, 0.0)
        norms[bad] = 1.0
    return g / norms


def sample_ball(n: int, rng: np.random.Generator) -> PointCloud:
    """n points uniform on the closed unit ball (inverse-CDF radius u^(1/3))."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    directions = _unit_directions(n, rng)
    radius = np.cbrt(rng.random(n))
    return directions * radius[:, None]


def sample_sphere(n: int, radius: float, rng: np.random.Generator) -> PointCloud:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    return _unit_directions(n, rng) * radius


def gaussian_confidence_radius(p: float) -> float:
    """Radius of the sphere holding probability mass p of a standard 3D Gaussian."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    return float(math.sqrt(chi2.ppf(p, df=3)))


# --- Icosphere ---

_GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0

_ICO_VERTICES = [
    (-1, _GOLDEN, 0), (1, _GOLDEN, 0), (-1, -_GOLDEN, 0), (1, -_GOLDEN, 0),
    (0, -1, _GOLDEN), (0, 1, _GOLDEN), (0, -1, -_GOLDEN), (0, 1, -_GOLDEN),
    (_GOLDEN, 0, -1), (_GOLDEN, 0, 1), (-_GOLDEN, 0, -1), (-_GOLDEN, 0, 1),
]

_ICO_FACES = [
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
]


def icosphere(level: int) -> TriMesh:
    """Icosahedron subdivided `level` times, vertices on the unit sphere.

    V = 10*4^level + 2 and F = 20*4^level; connectivity depends on the level only.
    """
    if not 0 <= level <= MAX_ICOSPHERE_LEVEL:
        raise ValueError(f"icosphere level must be in [0, {MAX_ICOSPHERE_LEVEL}], got {level}")

    vertices = [np.array(v, dtype=np.float64) for v in _ICO_VERTICES]
    vertices = [v / np.linalg.norm(v) for v in vertices]
    faces = list(_ICO_FACES)

    for _ in range(level):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i: int, j: int) -> int:
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = (vertices[i] + vertices[j]) / 2.0
                vertices.append(m / np.linalg.norm(m))
                cache[key] = len(vertices) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces.extend([(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)])
        faces = new_faces

    return TriMesh(np.array(vertices), np.array(faces))


def edge_lengths(mesh: TriMesh) -> np.ndarray:
    t = mesh.triangles
    edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    edges = np.unique(np.sort(edges, axis=1), axis=0)
    v = mesh.vertices
    return np.linalg.norm(v[edges[:, 0]] - v[edges[:, 1]], axis=1)


# --- Normalization ---


def normalize_cloud(pc: PointCloud) -> tuple[PointCloud, np.ndarray, float]:
    """Center on the centroid and scale into the closed unit ball.

    Returns (normalized, centroid, scale) with pc = normalized * scale + centroid.
    """
    pc = as_cloud(pc)
    centroid = pc.mean(axis=0)
    centered = pc - centroid
    scale = float(np.linalg.norm(centered, axis=1).max())
    if scale == 0.0:
        scale = 1.0
    return centered / scale, centroid, scale


def subsample_cloud(pc: PointCloud, n: int, rng: np.random.Generator) -> PointCloud:
    pc = as_cloud(pc)
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    idx = rng.choice(len(pc), size=n, replace=n > len(pc))
    return pc[idx]


# --- File I/O ---


def load_cloud(path) -> PointCloud:
    """Read a `.xyz` file: three numbers per line, `#` starts a comment line."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise CloudFormatError(f"Cannot read point cloud {path}: {e}") from e

    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = stripped.split()
        if len(fields) != 3:
            raise CloudFormatError(f"{path}:{lineno}: expected 3 fields, got {len(fields)}")
        try:
            rows.append([float(f) for f in fields])
        except ValueError as e:
            raise CloudFormatError(f"{path}:{lineno}: non-numeric field in '{stripped}'") from e

    if not rows:
        raise CloudFormatError(f"{path}: no points")
    pc = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(pc)):
        raise CloudFormatError(f"{path}: non-finite coordinate")
    return pc


def save_cloud(pc: PointCloud, path) -> None:
    pc = as_cloud(pc)
    lines = [f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in pc]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_cloud_dir(directory) -> list[PointCloud]:
    directory = Path(directory)
    if not directory.is_dir():
        raise CloudFormatError(f"Not a directory: {directory}")
    files = sorted(directory.glob("*.xyz"))
    if not files:
        raise CloudFormatError(f"No .xyz files in {directory}")
    log.debug("Loading %d clouds from %s", len(files), directory)
    return [load_cloud(f) for f in files]


def save_mesh_obj(mesh: TriMesh, path) -> None:
    lines = [f"# {len(mesh.vertices)} vertices, {len(mesh.triangles)} triangles"]
    lines += [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_mesh_obj(path) -> TriMesh:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise CloudFormatError(f"Cannot read mesh {path}: {e}") from e

    vertices, faces = [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        try:
            if fields[0] == "v":
                vertices.append([float(f) for f in fields[1:4]])
            elif fields[0] == "f":
                # v, v/vt, v//vn and v/vt/vn all start with the vertex index
                faces.append([int(f.split("/")[0]) - 1 for f in fields[1:4]])
        except ValueError as e:
            raise CloudFormatError(f"{path}:{lineno}: malformed record '{line.strip()}'") from e
    try:
        return TriMesh(np.array(vertices), np.array(faces))
    except ValueError as e:
        raise CloudFormatError(f"{path}: {e}") from e


# --- Synthetic shapes ---


@dataclass(frozen=True)
class DatasetSpec:
    """Describe a synthetic dataset.

    `params` per family (all optional):
      ellipsoid: axes=[a, b, c] fixed, or axes_range=[lo, hi] (default [0.5, 1.0])
      box:       half_range=[lo, hi] (default [0.3, 1.0])
      two-lobe:  radius_range=[lo, hi] (default [0.35, 0.6]), offset_range (default [0.3, 0.5])
    """

    family: str
    count: int
    points: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"Unknown family '{self.family}'. Choose from {list(FAMILIES)}")
        if self.count < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")
        if self.points < MIN_SYNTH_POINTS:
            raise ValueError(f"points must be >= {MIN_SYNTH_POINTS}, got {self.points}")


def _ellipsoid_surface(n: int, axes, rng: np.random.Generator) -> PointCloud:
    """Area-uniform points on an ellipsoid surface.

    Sphere samples are mapped onto the ellipsoid and kept with probability
    proportional to the local area stretch of that map.
    """
    a, b, c = axes
    stretch_max = max(b * c, a * c, a * b)
    out = []
    have = 0
    while have < n:
        u = _unit_directions(2 * (n - have) + 16, rng)
        stretch = np.sqrt((b * c * u[:, 0]) ** 2 + (a * c * u[:, 1]) ** 2 + (a * b * u[:, 2]) ** 2)
        keep = u[rng.random(len(u)) * stretch_max <= stretch]
        out.append(keep * np.array([a, b, c]))
        have += len(keep)
    return np.concatenate(out)[:n]


def _box_surface(n: int, half, rng: np.random.Generator) -> PointCloud:
    hx, hy, hz = half
    areas = np.array([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    uv = rng.uniform(-1.0, 1.0, size=(n, 2))
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    h = np.array([hx, hy, hz])
    for k in range(3):
        on = axis == k
        others = [j for j in range(3) if j != k]
        pts[on, k] = sign[on] * h[k]
        pts[on, others[0]] = uv[on, 0] * h[others[0]]
        pts[on, others[1]] = uv[on, 1] * h[others[1]]
    return pts


def _two_lobe_surface(n: int, radii, offset: float, rng: np.random.Generator) -> PointCloud:
    """Union of two spheres centred at (-offset, 0, 0) and (+offset, 0, 0);
    only the outer surface is sampled."""
    centers = np.array([[-offset, 0.0, 0.0], [offset, 0.0, 0.0]])
    radii = np.asarray(radii, dtype=np.float64)
    weights = radii**2 / np.sum(radii**2)
    out = []
    have = 0
    while have < n:
        m = 2 * (n - have) + 16
        lobe = rng.choice(2, size=m, p=weights)
        pts = centers[lobe] + _unit_directions(m, rng) * radii[lobe][:, None]
        other = 1 - lobe
        outside = np.linalg.norm(pts - centers[other], axis=1) >= radii[other]
        keep = pts[outside]
        out.append(keep)
        have += len(keep)
    return np.concatenate(out)[:n]


def synth_dataset(spec: DatasetSpec, rng: np.random.Generator) -> list[PointCloud]:
    """`spec.count` clouds of `spec.points` surface samples, shape parameters
    drawn per cloud. Deterministic for a given generator state."""
    p = spec.params
    clouds = []
    for _ in range(spec.count):
        if spec.family == "ellipsoid":
            if "axes" in p:
                axes = [float(x) for x in p["axes"]]
            else:
                lo, hi = p.get("axes_range", (0.5, 1.0))
                axes = rng.uniform(lo, hi, size=3)
            if min(axes) <= 0:
                raise ValueError(f"ellipsoid semi-axes must be positive, got {axes}")
            clouds.append(_ellipsoid_surface(spec.points, axes, rng))
        elif spec.family == "box":
            lo, hi = p.get("half_range", (0.3, 1.0))
            clouds.append(_box_surface(spec.points, rng.uniform(lo, hi, size=3), rng))
        else:
            lo, hi = p.get("radius_range", (0.35, 0.6))
            olo, ohi = p.get("offset_range", (0.3, 0.5))
            radii = rng.uniform(lo, hi, size=2)
            clouds.append(_two_lobe_surface(spec.points, radii, rng.uniform(olo, ohi), rng))
    return clouds
