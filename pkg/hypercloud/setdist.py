"""Set-to-set distances between point clouds.

Chamfer pseudo-distance (sum of squared nearest-neighbor distances, both
directions) and Earth Mover's Distance with transport cost 1/2 |x - y|^2 over
bijections of equally sized clouds. Nearest-neighbor ties go to the lowest
index everywhere.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from hypercloud.autodiff import Tape
from hypercloud.geometry import PointCloud, as_cloud

log = logging.getLogger(__name__)

BRUTEFORCE_MAX = 8
EMD_COMFORT_SIZE = 512

# Bounds the (rows, N2, 3) temporary in pairwise_sq_dists.
_CHUNK_ELEMENTS = 4_000_000


@dataclass(frozen=True)
class Matching:
    perm: np.ndarray  # perm[i] = index in X2 matched to X1[i]
    cost: float


def pairwise_sq_dists(X1: PointCloud, X2: PointCloud) -> np.ndarray:
    """(N1, N2) squared Euclidean distances, computed from explicit differences
    so that D(X1, X2) == D(X2, X1).T bit for bit."""
    X1 = np.asarray(X1, dtype=np.float64)
    X2 = np.asarray(X2, dtype=np.float64)
    out = np.empty((len(X1), len(X2)))
    rows = max(1, _CHUNK_ELEMENTS // max(1, 3 * len(X2)))
    for start in range(0, len(X1), rows):
        diff = X1[start:start + rows, None, :] - X2[None, :, :]
        out[start:start + rows] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def chamfer(X1: PointCloud, X2: PointCloud) -> float:
    X1 = as_cloud(X1, "X1")
    X2 = as_cloud(X2, "X2")
    d = pairwise_sq_dists(X1, X2)
    return float(d.min(axis=1).sum() + d.min(axis=0).sum())


def chamfer_node(tape: Tape, pred: int, target: PointCloud) -> int:
    """Chamfer distance between the cloud at node `pred` and a constant cloud.

    Nearest-neighbor indices are taken from the forward values and stay fixed
    during backward; both directions are gathers on the tape.
    """
    target = as_cloud(target, "target")
    pred_val = tape.value(pred)
    d = pairwise_sq_dists(target, pred_val)

    # target -> nearest predicted point
    nearest_pred = np.argmin(d, axis=1)
    diff1 = tape.sub(tape.slice(pred, nearest_pred), tape.const(target))
    # predicted point -> nearest target point
    nearest_target = np.argmin(d, axis=0)
    diff2 = tape.sub(pred, tape.const(target[nearest_target]))

    term1 = tape.sum(tape.mul(diff1, diff1))
    term2 = tape.sum(tape.mul(diff2, diff2))
    return tape.add(term1, term2)


def _check_equal_sizes(X1: np.ndarray, X2: np.ndarray):
    if len(X1) != len(X2):
        raise ValueError(
            f"EMD needs equally sized clouds, got {len(X1)} and {len(X2)} points; resample first"
        )


def warn_if_large(n: int) -> None:
    if n > EMD_COMFORT_SIZE:
        log.warning("EMD on %d points: the O(n^3) assignment will be slow", n)


def emd_exact(X1: PointCloud, X2: PointCloud, warn: bool = True) -> tuple[float, Matching]:
    """Optimal transport cost and one optimal bijection (exact, O(n^3))."""
    X1 = as_cloud(X1, "X1")
    X2 = as_cloud(X2, "X2")
    _check_equal_sizes(X1, X2)
    if warn:
        warn_if_large(len(X1))
    cost = 0.5 * pairwise_sq_dists(X1, X2)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(len(X1), dtype=np.int64)
    perm[rows] = cols
    total = float(cost[rows, cols].sum())
    return total, Matching(perm, total)


def emd_bruteforce(X1: PointCloud, X2: PointCloud) -> float:
    """Minimum over all n! bijections. Test oracle for `emd_exact`."""
    X1 = as_cloud(X1, "X1")
    X2 = as_cloud(X2, "X2")
    _check_equal_sizes(X1, X2)
    n = len(X1)
    if n > BRUTEFORCE_MAX:
        raise ValueError(f"emd_bruteforce is limited to n <= {BRUTEFORCE_MAX}, got {n}")
    cost = 0.5 * pairwise_sq_dists(X1, X2)
    rows = np.arange(n)
    return float(min(cost[rows, list(p)].sum() for p in itertools.permutations(range(n))))


def _check_matching(matching: Matching, n: int):
    perm = np.asarray(matching.perm)
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
        raise ValueError(f"matching is not a bijection on {n} points")


def emd_grad(X1: PointCloud, X2: PointCloud, matching: Matching) -> np.ndarray:
    """Gradient of the EMD w.r.t. X1 with the optimal matching held fixed."""
    X1 = as_cloud(X1, "X1")
    X2 = as_cloud(X2, "X2")
    _check_equal_sizes(X1, X2)
    _check_matching(matching, len(X1))
    return X1 - X2[np.asarray(matching.perm)]


def emd_node(tape: Tape, pred: int, target: PointCloud) -> int:
    """EMD between the cloud at node `pred` and a constant cloud; the optimal
    matching is solved on forward values and treated as a constant."""
    target = as_cloud(target, "target")
    _, matching = emd_exact(tape.value(pred), target, warn=False)
    diff = tape.sub(pred, tape.const(target[matching.perm]))
    return tape.scale(tape.sum(tape.mul(diff, diff)), 0.5)


def distance(kind: str, X1: PointCloud, X2: PointCloud, warn: bool = True) -> float:
    if kind == "cd":
        return chamfer(X1, X2)
    if kind == "emd":
        return emd_exact(X1, X2, warn=warn)[0]
    raise ValueError(f"Unknown distance '{kind}'. Choose 'cd' or 'emd'")


def nearest_distances(src: PointCloud, dst: PointCloud) -> np.ndarray:
    """Distance from every point of `src` to its nearest point in `dst`."""
    d, _ = cKDTree(as_cloud(dst, "dst")).query(as_cloud(src, "src"), k=1)
    return d


def mean_nn_spacing(pc: PointCloud) -> float:
    """Mean distance from each point to its nearest other point."""
    pc = as_cloud(pc)
    if len(pc) < 2:
        raise ValueError("spacing needs at least 2 points")
    d, _ = cKDTree(pc).query(pc, k=2)
    return float(d[:, 1].mean())
