"""
Geometric primitives: point clouds, rigid transforms, Kabsch superposition,
Chamfer distance and RMSD.

All coordinates are float64 Ångström. Functions are pure; clouds are
immutable once built.
"""

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from models.errors import InvalidInputError, NumericError

# Above this many points on either side the tree-based nearest neighbour path is used.
BRUTE_FORCE_LIMIT = 512


def _as_points(points) -> np.ndarray:
    array = np.array(points, dtype=np.float64, copy=True)
    if array.ndim == 1 and array.size == 3:
        array = array.reshape(1, 3)
    if array.ndim != 2 or array.shape[1] != 3:
        raise InvalidInputError(f"Expected an (n, 3) array of points, got shape {array.shape}")
    return array


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    label: Optional[str] = None

    def __post_init__(self):
        array = _as_points(self.points)
        if array.shape[0] < 1:
            raise InvalidInputError("Point cloud is empty")
        if not np.all(np.isfinite(array)):
            raise InvalidInputError("Point cloud contains non-finite coordinates")
        array.setflags(write=False)
        object.__setattr__(self, "points", array)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def with_points(self, points) -> "PointCloud":
        return PointCloud(points, self.label)


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rotation = np.array(self.rotation, dtype=np.float64, copy=True).reshape(3, 3)
        translation = np.array(self.translation, dtype=np.float64, copy=True).reshape(3)
        rotation.setflags(write=False)
        translation.setflags(write=False)
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points) -> np.ndarray:
        """Map (n, 3) points: x -> R x + t."""
        array = np.asarray(points, dtype=np.float64)
        return array @ self.rotation.T + self.translation

    def apply_cloud(self, cloud: PointCloud) -> PointCloud:
        return cloud.with_points(self.apply(cloud.points))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Transform equivalent to applying `other` first, then self."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        rotation_t = self.rotation.T
        return RigidTransform(rotation_t, -rotation_t @ self.translation)

    def as_matrix(self) -> np.ndarray:
        matrix = np.eye(4)
        matrix[:3, :3] = self.rotation
        matrix[:3, 3] = self.translation
        return matrix

    def is_proper(self, tol: float = 1e-9) -> bool:
        orthonormal = np.allclose(self.rotation.T @ self.rotation, np.eye(3), atol=tol)
        return orthonormal and abs(np.linalg.det(self.rotation) - 1.0) < tol


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed proper rotation matrix."""
    return Rotation.random(random_state=rng).as_matrix()


def center_to_origin(cloud: PointCloud) -> Tuple[PointCloud, np.ndarray]:
    """Translate `cloud` so its centroid is the origin; returns the removed centroid."""
    if cloud is None or len(cloud) == 0:
        raise InvalidInputError("Cannot center an empty point cloud")
    centroid = cloud.points.mean(axis=0)
    centered = cloud.points - centroid
    # second pass removes the rounding residue of the first subtraction
    centered = centered - centered.mean(axis=0)
    return cloud.with_points(centered), centroid


def deterministic_svd(matrix: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """SVD with column signs fixed so the largest-magnitude entry of each U column is positive.

    Flipping u_i and v_i together leaves U S Vt unchanged.
    """
    u, s, vt = np.linalg.svd(matrix)
    for i in range(u.shape[1]):
        pivot = np.argmax(np.abs(u[:, i]))
        if u[pivot, i] < 0:
            u[:, i] = -u[:, i]
            vt[i, :] = -vt[i, :]
    return u, s, vt


def _check_pair(p: np.ndarray, q: np.ndarray, minimum: int, operation: str) -> None:
    if p.shape != q.shape:
        raise InvalidInputError(f"{operation}: size mismatch ({p.shape[0]} vs {q.shape[0]} points)")
    if p.shape[0] < minimum:
        raise InvalidInputError(f"{operation}: needs at least {minimum} points, got {p.shape[0]}")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
        raise NumericError(f"{operation}: non-finite input coordinates", layer="kabsch")


def kabsch_rotation(p_centered: np.ndarray, q_centered: np.ndarray):
    """Optimal proper rotation for centred, corresponding points.

    Returns (R, U, S, Vt, D) so callers can differentiate through the SVD.
    """
    covariance = p_centered.T @ q_centered
    u, s, vt = deterministic_svd(covariance)
    v = vt.T
    sign = 1.0 if np.linalg.det(v @ u.T) >= 0 else -1.0
    d = np.diag([1.0, 1.0, sign])
    rotation = v @ d @ u.T
    return rotation, u, s, vt, d


def kabsch(p: PointCloud, q: PointCloud) -> RigidTransform:
    """Rigid transform minimising RMSD(transform(P), Q) for index-corresponding clouds."""
    p_points = np.asarray(p.points if isinstance(p, PointCloud) else p, dtype=np.float64)
    q_points = np.asarray(q.points if isinstance(q, PointCloud) else q, dtype=np.float64)
    _check_pair(p_points, q_points, 3, "kabsch")

    p_mean = p_points.mean(axis=0)
    q_mean = q_points.mean(axis=0)
    rotation, _, _, _, _ = kabsch_rotation(p_points - p_mean, q_points - q_mean)
    translation = q_mean - rotation @ p_mean
    return RigidTransform(rotation, translation)


def squared_distance_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def nearest_neighbors(a: np.ndarray, b: np.ndarray, method: str = "auto") -> Tuple[np.ndarray, np.ndarray]:
    """For every row of `a`, index of and squared distance to its nearest row of `b`.

    Both paths are exact. The brute path breaks ties by lowest index; squared
    distances are always recomputed from coordinates so the two paths agree.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if method == "auto":
        method = "tree" if max(len(a), len(b)) >= BRUTE_FORCE_LIMIT else "brute"

    if method == "brute":
        d2 = squared_distance_matrix(a, b)
        index = np.argmin(d2, axis=1)
        return index, d2[np.arange(len(a)), index]
    if method == "tree":
        _, index = cKDTree(b).query(a, k=1)
        index = np.asarray(index, dtype=np.int64)
        diff = a - b[index]
        return index, np.einsum("ij,ij->i", diff, diff)
    raise InvalidInputError(f"Unknown nearest-neighbour method '{method}'")


def _cloud_array(cloud, name: str) -> np.ndarray:
    array = np.asarray(cloud.points if isinstance(cloud, PointCloud) else cloud, dtype=np.float64)
    if array.ndim != 2 or array.shape[0] == 0:
        raise InvalidInputError(f"chamfer_distance: {name} is empty")
    return array


def chamfer_distance(a, b, method: str = "auto", centered: bool = False) -> float:
    """Symmetric Chamfer distance normalised by |A| + |B| (Å²).

    With `centered=True` both clouds are moved to the origin first.
    """
    a_points = _cloud_array(a, "A")
    b_points = _cloud_array(b, "B")
    if centered:
        a_points = a_points - a_points.mean(axis=0)
        b_points = b_points - b_points.mean(axis=0)
    _, d_ab = nearest_neighbors(a_points, b_points, method)
    _, d_ba = nearest_neighbors(b_points, a_points, method)
    return float((d_ab.sum() + d_ba.sum()) / (len(a_points) + len(b_points)))


def chamfer_gradient(a: np.ndarray, b: np.ndarray) -> Tuple[float, np.ndarray]:
    """Chamfer distance and its gradient with respect to the rows of `a`.

    Nearest-neighbour ties resolve to the lowest index, giving a deterministic
    subgradient.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d2 = squared_distance_matrix(a, b)
    nn_ab = np.argmin(d2, axis=1)
    nn_ba = np.argmin(d2, axis=0)
    total = len(a) + len(b)
    value = (d2[np.arange(len(a)), nn_ab].sum() + d2[nn_ba, np.arange(len(b))].sum()) / total

    grad = 2.0 * (a - b[nn_ab])
    np.add.at(grad, nn_ba, 2.0 * (a[nn_ba] - b))
    return float(value), grad / total


def rmsd(p, q) -> float:
    """Root-mean-square deviation of index-corresponding points."""
    p_points = np.asarray(p.points if isinstance(p, PointCloud) else p, dtype=np.float64)
    q_points = np.asarray(q.points if isinstance(q, PointCloud) else q, dtype=np.float64)
    if p_points.shape != q_points.shape:
        raise InvalidInputError(f"rmsd: size mismatch ({len(p_points)} vs {len(q_points)} points)")
    diff = p_points - q_points
    return float(np.sqrt(np.einsum("ij,ij->i", diff, diff).mean()))
