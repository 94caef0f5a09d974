"""
Attention-based global point-cloud aligner.

Query and reference surface clouds are centred, lifted to `d_a` dimensions by a
linear layer, passed through one self-attention block (shared by both
branches) and a cross-attention block (queries from the query branch,
keys/values from the reference branch). A final linear layer predicts
pseudo-coordinates for every query point and the centred query is
Kabsch-superposed onto them. Training minimises the Chamfer distance between
the superposed query and the centred reference, with gradients propagated by
hand through Chamfer, the SVD inside Kabsch and every attention layer.
"""

from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from models.attention import (attention_backward, attention_forward, attention_parameter_names,
                              init_attention)
from models.checkpoint import (FORMAT_VERSION, check_version, decode_params, encode_params, read_checkpoint,
                               write_checkpoint)
from models.errors import InvalidInputError, NumericError
from models.geometry import (PointCloud, RigidTransform, center_to_origin, chamfer_distance,
                             chamfer_gradient, kabsch_rotation)
from models.surface import AtomSet
from utils.logger import get_logger

logger = get_logger(__name__)

SVD_JITTER = 1e-8
OUTPUT_DIM = 3


@dataclass
class AlignerModel:
    d_a: int
    h: int
    params: Dict[str, np.ndarray]
    d_o: int = OUTPUT_DIM

    def __post_init__(self):
        if self.d_a < 1 or self.h < 1 or self.d_a % self.h != 0:
            raise InvalidInputError(f"d_a ({self.d_a}) must be a positive multiple of h ({self.h})")
        if self.d_o != OUTPUT_DIM:
            raise InvalidInputError(f"Output dimension must be {OUTPUT_DIM}, got {self.d_o}")
        expected = set(self.parameter_names())
        missing = expected - set(self.params)
        if missing:
            raise InvalidInputError(f"Aligner parameters missing: {sorted(missing)}")
        for name, value in self.params.items():
            if not np.all(np.isfinite(value)):
                raise InvalidInputError(f"Aligner parameter '{name}' contains non-finite values")

    @staticmethod
    def parameter_names() -> Tuple[str, ...]:
        return (("input.w", "input.b")
                + attention_parameter_names("self_attn")
                + attention_parameter_names("cross_attn")
                + ("output.w", "output.b"))

    @classmethod
    def create(cls, d_a: int = 16, h: int = 8, rng_seed: int = 0) -> "AlignerModel":
        """Freshly initialised model (Glorot-uniform weights, zero biases)."""
        if d_a < 1 or h < 1 or d_a % h != 0:
            raise InvalidInputError(f"d_a ({d_a}) must be a positive multiple of h ({h})")
        rng = np.random.default_rng(rng_seed)
        params: Dict[str, np.ndarray] = {}
        limit_in = np.sqrt(6.0 / (3 + d_a))
        params["input.w"] = rng.uniform(-limit_in, limit_in, size=(3, d_a))
        params["input.b"] = np.zeros(d_a)
        init_attention(params, "self_attn", d_a, rng)
        init_attention(params, "cross_attn", d_a, rng)
        limit_out = np.sqrt(6.0 / (d_a + OUTPUT_DIM))
        params["output.w"] = rng.uniform(-limit_out, limit_out, size=(d_a, OUTPUT_DIM))
        params["output.b"] = np.zeros(OUTPUT_DIM)
        return cls(d_a=d_a, h=h, params=params)

    def copy(self) -> "AlignerModel":
        return AlignerModel(self.d_a, self.h, {k: v.copy() for k, v in self.params.items()})

    def zero_grads(self) -> Dict[str, np.ndarray]:
        return {name: np.zeros_like(value) for name, value in self.params.items()}

    def to_dict(self) -> Dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "aligner",
            "d_a": self.d_a,
            "h": self.h,
            "parameters": encode_params(self.params),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "AlignerModel":
        check_version(data, "aligner")
        try:
            return cls(d_a=int(data["d_a"]), h=int(data["h"]), params=decode_params(data["parameters"]))
        except (KeyError, TypeError) as e:
            raise InvalidInputError(f"Malformed aligner checkpoint: {e}") from e


def save_checkpoint(model: AlignerModel, path: str) -> None:
    write_checkpoint(model.to_dict(), path)


def load_checkpoint(path: str) -> AlignerModel:
    return AlignerModel.from_dict(read_checkpoint(path))


@dataclass(frozen=True)
class AlignmentResult:
    transform: RigidTransform
    chamfer: float
    pseudo_coords: PointCloud
    aligned_coords: PointCloud
    query_centroid: np.ndarray = field(default_factory=lambda: np.zeros(3))
    reference_centroid: np.ndarray = field(default_factory=lambda: np.zeros(3))
    method: str = "aligner"

    def to_dict(self) -> Dict:
        return {
            "method": self.method,
            "chamfer": self.chamfer,
            "rotation": self.transform.rotation.tolist(),
            "translation": self.transform.translation.tolist(),
            "query_centroid": np.asarray(self.query_centroid).tolist(),
            "reference_centroid": np.asarray(self.reference_centroid).tolist(),
        }


@dataclass
class _ForwardCache:
    query: np.ndarray
    reference: np.ndarray
    caches: Dict
    q_cross: np.ndarray
    pseudo: np.ndarray
    svd: Tuple


def _check_finite(array: np.ndarray, layer: str) -> None:
    if not np.all(np.isfinite(array)):
        raise NumericError("Non-finite activations", layer=layer)


def _centered_inputs(query: PointCloud, reference: PointCloud):
    if query is None or reference is None:
        raise InvalidInputError("Aligner needs both a query and a reference cloud")
    if len(query) < 3:
        raise InvalidInputError(f"Query cloud needs at least 3 points for Kabsch, got {len(query)}")
    q_centered, q_centroid = center_to_origin(query)
    r_centered, r_centroid = center_to_origin(reference)
    return q_centered, q_centroid, r_centered, r_centroid


def _forward(model: AlignerModel, query: np.ndarray, reference: np.ndarray):
    p = model.params
    q_scaled = query @ p["input.w"] + p["input.b"]
    r_scaled = reference @ p["input.w"] + p["input.b"]
    _check_finite(q_scaled, "input")
    _check_finite(r_scaled, "input")

    q_self, cache_q = attention_forward(p, "self_attn", q_scaled, q_scaled, model.h)
    r_self, cache_r = attention_forward(p, "self_attn", r_scaled, r_scaled, model.h)
    _check_finite(q_self, "self_attn")
    _check_finite(r_self, "self_attn")

    q_cross, cache_c = attention_forward(p, "cross_attn", q_self, r_self, model.h)
    _check_finite(q_cross, "cross_attn")

    pseudo = q_cross @ p["output.w"] + p["output.b"]
    _check_finite(pseudo, "output")

    query_mean = query.mean(axis=0)
    pseudo_mean = pseudo.mean(axis=0)
    rotation, u, s, vt, d = kabsch_rotation(query - query_mean, pseudo - pseudo_mean)
    translation = pseudo_mean - rotation @ query_mean
    aligned = query @ rotation.T + translation

    cache = _ForwardCache(query, reference, {"q_self": cache_q, "r_self": cache_r, "cross": cache_c},
                          q_cross, pseudo, (rotation, u, s, vt, d, query_mean))
    return RigidTransform(rotation, translation), pseudo, aligned, cache


def forward(model: AlignerModel, query: PointCloud, reference: PointCloud) -> AlignmentResult:
    """Align `query` onto `reference` with the learned model (both are centred first)."""
    q_centered, q_centroid, r_centered, r_centroid = _centered_inputs(query, reference)
    transform, pseudo, aligned, _ = _forward(model, q_centered.points, r_centered.points)
    return AlignmentResult(
        transform=transform,
        chamfer=chamfer_distance(aligned, r_centered.points),
        pseudo_coords=PointCloud(pseudo, query.label),
        aligned_coords=PointCloud(aligned, query.label),
        query_centroid=q_centroid,
        reference_centroid=r_centroid,
    )


def align(model: AlignerModel, query: PointCloud, reference: PointCloud) -> AlignmentResult:
    """Inference: aligned query cloud plus its Chamfer distance to the reference."""
    return forward(model, query, reference)


def kabsch_backward(grad_rotation: np.ndarray, u: np.ndarray, s: np.ndarray, vt: np.ndarray,
                    d: np.ndarray, jitter: float = SVD_JITTER) -> np.ndarray:
    """Gradient w.r.t. the cross-covariance H = U S Vt given dL/dR for R = V D Ut."""
    v = vt.T
    m = v.T @ grad_rotation @ u
    j_u = m.T @ d - d @ m
    j_v = m @ d - d @ m.T

    s2 = s * s
    gap = s2[None, :] - s2[:, None]
    gap = np.where(np.abs(gap) < jitter, np.where(gap < 0, -jitter, jitter), gap)
    f = 1.0 / gap
    np.fill_diagonal(f, 0.0)

    sigma = np.diag(s)
    inner = (f * j_u) @ sigma + sigma @ (f * j_v)
    return u @ inner @ vt


def _backward(model: AlignerModel, cache: _ForwardCache, grad_aligned: np.ndarray) -> Dict[str, np.ndarray]:
    p = model.params
    grads = model.zero_grads()
    rotation, u, s, vt, d, query_mean = cache.svd
    query = cache.query
    n = len(query)

    # aligned = query R^T + t,  t = mean(pseudo) - R mean(query)
    grad_translation = grad_aligned.sum(axis=0)
    grad_rotation = grad_aligned.T @ query - np.outer(grad_translation, query_mean)

    grad_cov = kabsch_backward(grad_rotation, u, s, vt, d)
    grad_pseudo_centered = (query - query_mean) @ grad_cov
    grad_pseudo = grad_pseudo_centered - grad_pseudo_centered.mean(axis=0) + grad_translation / n

    grads["output.w"] += cache.q_cross.T @ grad_pseudo
    grads["output.b"] += grad_pseudo.sum(axis=0)
    grad_q_cross = grad_pseudo @ p["output.w"].T

    grad_q_self, grad_r_self = attention_backward(p, "cross_attn", cache.caches["cross"],
                                                  grad_q_cross, grads, model.h)
    grad_q_in, grad_q_ctx = attention_backward(p, "self_attn", cache.caches["q_self"],
                                               grad_q_self, grads, model.h)
    grad_r_in, grad_r_ctx = attention_backward(p, "self_attn", cache.caches["r_self"],
                                               grad_r_self, grads, model.h)
    grad_q_scaled = grad_q_in + grad_q_ctx
    grad_r_scaled = grad_r_in + grad_r_ctx

    grads["input.w"] += query.T @ grad_q_scaled + cache.reference.T @ grad_r_scaled
    grads["input.b"] += grad_q_scaled.sum(axis=0) + grad_r_scaled.sum(axis=0)

    for name, value in grads.items():
        if not np.all(np.isfinite(value)):
            raise NumericError("Non-finite gradient", layer=name)
    return grads


def loss_and_grads(model: AlignerModel, query: PointCloud,
                   reference: PointCloud) -> Tuple[float, Dict[str, np.ndarray]]:
    """Chamfer loss of the aligned query against the centred reference, with gradients."""
    q_centered, _, r_centered, _ = _centered_inputs(query, reference)
    _, _, aligned, cache = _forward(model, q_centered.points, r_centered.points)
    loss, grad_aligned = chamfer_gradient(aligned, r_centered.points)
    return loss, _backward(model, cache, grad_aligned)


def loss_only(model: AlignerModel, query: PointCloud, reference: PointCloud) -> float:
    return forward(model, query, reference).chamfer


def transform_atoms(result: AlignmentResult, atoms: AtomSet) -> AtomSet:
    """Move atoms rigidly with their surface: centre on the query centroid,
    apply the alignment, then shift into the reference frame."""
    centered = atoms.positions - np.asarray(result.query_centroid)
    moved = result.transform.apply(centered) + np.asarray(result.reference_centroid)
    return atoms.with_positions(moved)
