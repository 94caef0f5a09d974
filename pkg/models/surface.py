"""
Molecular surface point clouds.

Seeds are scattered around every atom, pulled onto a level set of a smooth
(log-sum-exp) distance to the atom spheres by gradient descent, filtered and
finally averaged within cubic bins so the density is uniform.
"""

from dataclasses import dataclass, asdict
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from models.errors import InvalidInputError, SamplingFailedError
from models.geometry import PointCloud
from utils.logger import get_logger

logger = get_logger(__name__)

ELEMENT_VOCABULARY = ("C", "H", "O", "N", "S", "Se")
OTHER = "other"

# van der Waals radii in Å; unknown elements use carbon's radius
ATOM_RADII = {
    "C": 1.70,
    "H": 1.10,
    "O": 1.52,
    "N": 1.55,
    "S": 1.80,
    "Se": 1.90,
    OTHER: 1.70,
}

# Tolerance (Å) on the level-set residual; anything further inside is interior.
LEVEL_TOLERANCE = 0.05
DESCENT_STEP = 0.2
NEWTON_STEPS = 4


def atom_type(element: str) -> str:
    """Map an element symbol onto the surface vocabulary."""
    symbol = (element or "").strip()
    if symbol in ELEMENT_VOCABULARY:
        return symbol
    # accept lower-case aromatic symbols and all-caps files
    normalised = symbol[:1].upper() + symbol[1:].lower()
    return normalised if normalised in ELEMENT_VOCABULARY else OTHER


def atom_radius(element: str) -> float:
    return ATOM_RADII[atom_type(element)]


@dataclass(frozen=True)
class AtomSet:
    elements: Tuple[str, ...]
    positions: np.ndarray
    label: Optional[str] = None
    strained: bool = False

    def __post_init__(self):
        elements = tuple(str(e) for e in self.elements)
        positions = np.array(self.positions, dtype=np.float64, copy=True).reshape(-1, 3)
        if len(elements) < 1:
            raise InvalidInputError("Atom set is empty")
        if len(elements) != positions.shape[0]:
            raise InvalidInputError(
                f"Atom set has {len(elements)} elements but {positions.shape[0]} positions")
        if not np.all(np.isfinite(positions)):
            raise InvalidInputError("Atom set contains non-finite positions")
        positions.setflags(write=False)
        object.__setattr__(self, "elements", elements)
        object.__setattr__(self, "positions", positions)

    @classmethod
    def from_pairs(cls, pairs: Iterable[Tuple[str, Sequence[float]]], label: Optional[str] = None) -> "AtomSet":
        pairs = list(pairs)
        if not pairs:
            raise InvalidInputError("Atom set is empty")
        return cls(tuple(e for e, _ in pairs), np.array([p for _, p in pairs], dtype=np.float64), label)

    def __len__(self) -> int:
        return len(self.elements)

    @property
    def types(self) -> Tuple[str, ...]:
        return tuple(atom_type(e) for e in self.elements)

    @property
    def radii(self) -> np.ndarray:
        return np.array([ATOM_RADII[t] for t in self.types])

    def with_positions(self, positions) -> "AtomSet":
        return AtomSet(self.elements, positions, self.label, self.strained)


@dataclass
class SurfaceParams:
    level: float = 0.9
    resolution: float = 0.9
    sigma: float = 0.1
    descent_steps: int = 40
    seeds_per_atom: int = 160
    rng_seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("level", "resolution", "sigma"):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"SurfaceParams.{name} must be > 0, got {getattr(self, name)}")
        if self.descent_steps < 0 or self.seeds_per_atom < 1:
            raise InvalidInputError("SurfaceParams needs descent_steps >= 0 and seeds_per_atom >= 1")

    @classmethod
    def from_dict(cls, data: Dict) -> "SurfaceParams":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidInputError(f"Unknown surface parameter(s): {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class SurfaceResult:
    cloud: PointCloud
    seeds: int
    converged: int
    interior_removed: int
    bins: int
    max_residual: float

    def diagnostics(self) -> Dict:
        return {
            "points": len(self.cloud),
            "seeds": self.seeds,
            "converged": self.converged,
            "interior_removed": self.interior_removed,
            "bins": self.bins,
            "max_residual": self.max_residual,
        }


def smooth_distance_field(points: np.ndarray, atoms: AtomSet, sigma: float) -> Tuple[np.ndarray, np.ndarray]:
    """Soft-min of (|x - a_i| - r_i) and its gradient, for many points at once."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    diff = points[:, None, :] - atoms.positions[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    shifted = -(dist - atoms.radii[None, :]) / sigma
    lse = logsumexp(shifted, axis=1)
    values = -sigma * lse

    weights = np.exp(shifted - lse[:, None])
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(dist[:, :, None] > 0, diff / dist[:, :, None], 0.0)
    gradients = np.einsum("ij,ijk->ik", weights, unit)
    return values, gradients


def smooth_distance(x: Sequence[float], atoms: AtomSet, sigma: float) -> float:
    """Soft-min distance from `x` to the atom spheres (Å)."""
    values, _ = smooth_distance_field(np.asarray(x, dtype=np.float64).reshape(1, 3), atoms, sigma)
    return float(values[0])


def _seed_points(atoms: AtomSet, params: SurfaceParams, rng: np.random.Generator) -> np.ndarray:
    n_atoms = len(atoms)
    count = params.seeds_per_atom
    directions = rng.normal(size=(n_atoms, count, 3))
    directions /= np.linalg.norm(directions, axis=2, keepdims=True)
    radii = atoms.radii[:, None]
    shells = radii + rng.uniform(0.0, 2.0 * params.level, size=(n_atoms, count))
    seeds = atoms.positions[:, None, :] + directions * shells[:, :, None]
    return seeds.reshape(-1, 3)


def _project(points: np.ndarray, atoms: AtomSet, params: SurfaceParams) -> np.ndarray:
    """Newton steps along the gradient onto the level set."""
    for _ in range(NEWTON_STEPS):
        values, gradients = smooth_distance_field(points, atoms, params.sigma)
        norm2 = np.einsum("ij,ij->i", gradients, gradients)
        safe = np.where(norm2 > 1e-12, norm2, 1.0)
        step = np.where(norm2 > 1e-12, (values - params.level) / safe, 0.0)
        points = points - step[:, None] * gradients
    return points


def _descend(points: np.ndarray, atoms: AtomSet, params: SurfaceParams) -> np.ndarray:
    for _ in range(params.descent_steps):
        values, gradients = smooth_distance_field(points, atoms, params.sigma)
        points = points - DESCENT_STEP * 2.0 * (values - params.level)[:, None] * gradients
    return _project(points, atoms, params)


def _bin_keys(points: np.ndarray, origin: np.ndarray, resolution: float) -> np.ndarray:
    return np.floor((points - origin) / resolution).astype(np.int64)


def _bin_average(points: np.ndarray, origin: np.ndarray, resolution: float) -> np.ndarray:
    keys = _bin_keys(points, origin, resolution)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    sums = np.zeros((len(counts), 3))
    np.add.at(sums, inverse, points)
    return sums / counts[:, None]


def _unique_bins(points: np.ndarray, origin: np.ndarray, resolution: float) -> np.ndarray:
    """Keep the first point (in lexicographic order) of every occupied bin."""
    points = _sort_lexicographic(points)
    keys = _bin_keys(points, origin, resolution)
    _, first = np.unique(keys, axis=0, return_index=True)
    return points[np.sort(first)]


def _sort_lexicographic(points: np.ndarray) -> np.ndarray:
    order = np.lexsort((points[:, 2], points[:, 1], points[:, 0]))
    return points[order]


def sample_surface_detailed(atoms: AtomSet, params: Optional[SurfaceParams] = None) -> SurfaceResult:
    """Sample the surface and report diagnostics alongside the cloud."""
    params = params or SurfaceParams()
    params.validate()
    if atoms is None or len(atoms) == 0:
        raise InvalidInputError("Cannot sample the surface of an empty atom set")

    rng = np.random.default_rng(params.rng_seed)
    seeds = _seed_points(atoms, params, rng)
    points = _descend(seeds, atoms, params)

    values, _ = smooth_distance_field(points, atoms, params.sigma)
    residual = values - params.level
    finite = np.all(np.isfinite(points), axis=1) & np.isfinite(residual)
    on_level = finite & (np.abs(residual) < LEVEL_TOLERANCE)
    interior = finite & (residual <= -LEVEL_TOLERANCE)
    converged = int(on_level.sum())

    diagnostics = {
        "seeds": len(seeds),
        "converged": converged,
        "interior": int(interior.sum()),
        "diverged": int((~on_level & ~interior).sum()),
    }
    if converged * 2 < len(seeds):
        raise SamplingFailedError(
            f"Surface descent failed for {len(seeds) - converged}/{len(seeds)} seeds", diagnostics)

    # the bin grid is anchored on the atoms so sampling is translation equivariant
    origin = atoms.positions.mean(axis=0)
    averaged = _bin_average(points[on_level], origin, params.resolution)
    projected = _project(averaged, atoms, params)
    unique = _unique_bins(projected, origin, params.resolution)

    final_values, _ = smooth_distance_field(unique, atoms, params.sigma)
    keep = np.abs(final_values - params.level) < LEVEL_TOLERANCE
    surface = _sort_lexicographic(unique[keep])
    if len(surface) == 0:
        raise SamplingFailedError("No surface points survived binning", diagnostics)

    result = SurfaceResult(
        cloud=PointCloud(surface, atoms.label),
        seeds=len(seeds),
        converged=converged,
        interior_removed=int(interior.sum()),
        bins=len(averaged),
        max_residual=float(np.max(np.abs(final_values[keep] - params.level))),
    )
    logger.debug(f"🫧 Surface sampled: {result.diagnostics()}")
    return result


def sample_surface(atoms: AtomSet, params: Optional[SurfaceParams] = None) -> PointCloud:
    """Surface point cloud at `params.level` Å outside the atom spheres."""
    return sample_surface_detailed(atoms, params).cloud
