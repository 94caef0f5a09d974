"""
Non-learned registration around the aligner: a RANSAC baseline and the
flip-resampling loop that re-aligns conformers stuck in a high-RMSD mode.
"""

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from models.aligner import AlignerModel, AlignmentResult, align
from models.errors import InvalidInputError
from models.geometry import (PointCloud, RigidTransform, center_to_origin, chamfer_distance, kabsch,
                             random_rotation, rmsd)
from utils.logger import get_logger

logger = get_logger(__name__)

AlignFn = Callable[[PointCloud, PointCloud], AlignmentResult]


def _pick_consistent(distances: np.ndarray, anchors: List[int], targets: List[float], threshold: float,
                     rng: np.random.Generator) -> int:
    """Random reference index whose distances to `anchors` match `targets` within `threshold`."""
    mask = np.ones(distances.shape[0], dtype=bool)
    mask[anchors] = False
    for anchor, target in zip(anchors, targets):
        mask &= np.abs(distances[anchor] - target) < threshold
    candidates = np.flatnonzero(mask)
    if len(candidates) == 0:
        free = np.flatnonzero(~np.isin(np.arange(distances.shape[0]), anchors))
        return int(rng.choice(free))
    return int(rng.choice(candidates))


def ransac_align(query: PointCloud, reference: PointCloud, iterations: int = 1000,
                 inlier_threshold: float = 1.0, rng_seed: int = 0) -> AlignmentResult:
    """Best-of-N rigid hypotheses from three point correspondences, scored by Chamfer.

    Each iteration draws from its own child seed, so running more iterations
    only ever adds hypotheses and the best Chamfer is non-increasing.
    """
    if len(query) < 3 or len(reference) < 3:
        raise InvalidInputError("RANSAC needs at least 3 points in both clouds")
    if iterations < 1:
        raise InvalidInputError(f"RANSAC needs at least one iteration, got {iterations}")

    q_centered, q_centroid = center_to_origin(query)
    r_centered, r_centroid = center_to_origin(reference)
    q_points, r_points = q_centered.points, r_centered.points
    q_dist = np.linalg.norm(q_points[:, None, :] - q_points[None, :, :], axis=2)
    r_dist = np.linalg.norm(r_points[:, None, :] - r_points[None, :, :], axis=2)

    best: Optional[Tuple[float, RigidTransform]] = None
    for child in np.random.SeedSequence(rng_seed).spawn(iterations):
        rng = np.random.default_rng(child)
        qi, qj, qk = (int(x) for x in rng.choice(len(q_points), size=3, replace=False))
        r1 = int(rng.integers(len(r_points)))
        r2 = _pick_consistent(r_dist, [r1], [q_dist[qi, qj]], inlier_threshold, rng)
        r3 = _pick_consistent(r_dist, [r1, r2], [q_dist[qi, qk], q_dist[qj, qk]], inlier_threshold, rng)

        transform = kabsch(q_points[[qi, qj, qk]], r_points[[r1, r2, r3]])
        score = chamfer_distance(transform.apply(q_points), r_points)
        if best is None or score < best[0]:
            best = (score, transform)

    score, transform = best
    aligned = PointCloud(transform.apply(q_points), query.label)
    logger.debug(f"🎲 RANSAC best chamfer {score:.4f} after {iterations} iterations")
    return AlignmentResult(transform=transform, chamfer=score, pseudo_coords=aligned, aligned_coords=aligned,
                           query_centroid=q_centroid, reference_centroid=r_centroid, method="ransac")


@dataclass
class FlipRealignment:
    results: List[AlignmentResult]
    rmsds: List[float]
    iterations: int
    lower_fraction: float
    history: List[float] = field(default_factory=list)


def split_modes(values: Sequence[float], tolerance: float = 1.0) -> Tuple[float, np.ndarray]:
    """Two-means split of 1-D values. Returns (threshold, lower-mode mask).

    When the two cluster means are closer than `tolerance` everything is one mode.
    """
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 2:
        return float("inf"), np.ones(len(values), dtype=bool)
    ordered = np.sort(values)
    best_cost, best_cut = np.inf, None
    for cut in range(1, len(ordered)):
        low, high = ordered[:cut], ordered[cut:]
        cost = ((low - low.mean()) ** 2).sum() + ((high - high.mean()) ** 2).sum()
        if cost < best_cost:
            best_cost, best_cut = cost, cut
    low, high = ordered[:best_cut], ordered[best_cut:]
    if high.mean() - low.mean() < tolerance:
        return float("inf"), np.ones(len(values), dtype=bool)
    threshold = 0.5 * (low[-1] + high[0])
    return threshold, values <= threshold


def _anchor_rmsd(result: AlignmentResult, reference_centered: np.ndarray,
                 anchor_pairs: Sequence[Tuple[int, int]]) -> float:
    pairs = np.asarray(anchor_pairs, dtype=np.int64).reshape(-1, 2)
    return rmsd(result.aligned_coords.points[pairs[:, 0]], reference_centered[pairs[:, 1]])


def realign_flips(model: Optional[AlignerModel], conformer_clouds: Sequence[PointCloud], reference: PointCloud,
                  anchor_pairs: Sequence[Tuple[int, int]], align_fn: Optional[AlignFn] = None,
                  rng_seed: int = 0, max_iterations: int = 5, target_fraction: float = 0.9,
                  mode_tolerance: float = 1.0) -> FlipRealignment:
    """Re-align conformers whose anchor RMSD sits in the upper mode.

    Each round rotates the high-RMSD inputs randomly and aligns them again,
    keeping whichever result has the lower RMSD. Stops once `target_fraction`
    of the samples are in the lower mode or after `max_iterations` rounds.
    """
    if align_fn is None:
        if model is None:
            raise InvalidInputError("realign_flips needs a model or an align_fn")
        align_fn = lambda q, r: align(model, q, r)  # noqa: E731
    if not anchor_pairs:
        raise InvalidInputError("realign_flips needs at least one anchor pair")

    reference_centered, _ = center_to_origin(reference)
    results = [align_fn(cloud, reference) for cloud in conformer_clouds]
    rmsds = [_anchor_rmsd(r, reference_centered.points, anchor_pairs) for r in results]
    if len(results) < 2:
        return FlipRealignment(results, rmsds, 0, 1.0)

    rng = np.random.default_rng(rng_seed)
    _, lower = split_modes(rmsds, mode_tolerance)
    history = [float(lower.mean())]
    iterations = 0
    while lower.mean() < target_fraction and iterations < max_iterations:
        iterations += 1
        for i in np.flatnonzero(~lower):
            cloud = conformer_clouds[i]
            rotation = random_rotation(rng)
            perturbed = cloud.with_points((cloud.points - cloud.centroid) @ rotation.T + cloud.centroid)
            candidate = align_fn(perturbed, reference)
            candidate_rmsd = _anchor_rmsd(candidate, reference_centered.points, anchor_pairs)
            if candidate_rmsd < rmsds[i]:
                # express the result relative to the unperturbed input
                composed = candidate.transform.compose(RigidTransform(rotation, np.zeros(3)))
                results[i] = AlignmentResult(
                    transform=composed, chamfer=candidate.chamfer, pseudo_coords=candidate.pseudo_coords,
                    aligned_coords=candidate.aligned_coords, query_centroid=results[i].query_centroid,
                    reference_centroid=candidate.reference_centroid, method=candidate.method)
                rmsds[i] = candidate_rmsd
        _, lower = split_modes(rmsds, mode_tolerance)
        history.append(float(lower.mean()))
        logger.debug(f"🔁 Flip resampling round {iterations}: {lower.mean():.0%} in lower mode")

    return FlipRealignment(results, rmsds, iterations, float(lower.mean()), history)
