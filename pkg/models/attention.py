"""
Multi-head scaled dot-product attention with a hand-written backward pass.

Parameters live in a flat dict under a name prefix (``<prefix>.w_q`` ...), so the
same functions serve the shared self-attention block and the cross-attention
block of the aligner.
"""

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

PROJECTIONS = ("q", "k", "v", "o")


def attention_parameter_names(prefix: str) -> Tuple[str, ...]:
    names = []
    for p in PROJECTIONS:
        names.extend((f"{prefix}.w_{p}", f"{prefix}.b_{p}"))
    return tuple(names)


def init_attention(params: Dict[str, np.ndarray], prefix: str, d_model: int, rng: np.random.Generator) -> None:
    limit = np.sqrt(6.0 / (2 * d_model))
    for p in PROJECTIONS:
        params[f"{prefix}.w_{p}"] = rng.uniform(-limit, limit, size=(d_model, d_model))
        params[f"{prefix}.b_{p}"] = np.zeros(d_model)


def softmax(scores: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = scores - scores.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=axis, keepdims=True)


def split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    """(n, d) -> (heads, n, d / heads)"""
    n, d = x.shape
    return x.reshape(n, heads, d // heads).transpose(1, 0, 2)


def merge_heads(x: np.ndarray) -> np.ndarray:
    """(heads, n, d_k) -> (n, heads * d_k)"""
    heads, n, d_k = x.shape
    return x.transpose(1, 0, 2).reshape(n, heads * d_k)


@dataclass
class AttentionCache:
    query_input: np.ndarray
    context_input: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    weights: np.ndarray
    merged: np.ndarray
    scale: float


def attention_forward(params: Dict[str, np.ndarray], prefix: str, query_input: np.ndarray,
                      context_input: np.ndarray, heads: int) -> Tuple[np.ndarray, AttentionCache]:
    """Full (all-pairs) attention of `query_input` rows over `context_input` rows."""
    q = split_heads(query_input @ params[f"{prefix}.w_q"] + params[f"{prefix}.b_q"], heads)
    k = split_heads(context_input @ params[f"{prefix}.w_k"] + params[f"{prefix}.b_k"], heads)
    v = split_heads(context_input @ params[f"{prefix}.w_v"] + params[f"{prefix}.b_v"], heads)
    scale = 1.0 / np.sqrt(q.shape[-1])

    weights = softmax(np.einsum("hid,hjd->hij", q, k) * scale)
    merged = merge_heads(np.einsum("hij,hjd->hid", weights, v))
    output = merged @ params[f"{prefix}.w_o"] + params[f"{prefix}.b_o"]
    cache = AttentionCache(query_input, context_input, q, k, v, weights, merged, scale)
    return output, cache


def attention_backward(params: Dict[str, np.ndarray], prefix: str, cache: AttentionCache,
                       grad_output: np.ndarray, grads: Dict[str, np.ndarray],
                       heads: int) -> Tuple[np.ndarray, np.ndarray]:
    """Accumulate parameter gradients into `grads`; return input gradients (query, context)."""
    grads[f"{prefix}.w_o"] += cache.merged.T @ grad_output
    grads[f"{prefix}.b_o"] += grad_output.sum(axis=0)
    grad_heads = split_heads(grad_output @ params[f"{prefix}.w_o"].T, heads)

    grad_weights = np.einsum("hid,hjd->hij", grad_heads, cache.v)
    grad_v = np.einsum("hij,hid->hjd", cache.weights, grad_heads)
    # softmax backward, row-wise
    inner = np.sum(grad_weights * cache.weights, axis=-1, keepdims=True)
    grad_scores = cache.weights * (grad_weights - inner) * cache.scale
    grad_q = np.einsum("hij,hjd->hid", grad_scores, cache.k)
    grad_k = np.einsum("hij,hid->hjd", grad_scores, cache.q)

    grad_query_input = np.zeros_like(cache.query_input)
    grad_context_input = np.zeros_like(cache.context_input)
    for name, grad, source, target in (
        ("q", merge_heads(grad_q), cache.query_input, grad_query_input),
        ("k", merge_heads(grad_k), cache.context_input, grad_context_input),
        ("v", merge_heads(grad_v), cache.context_input, grad_context_input),
    ):
        grads[f"{prefix}.w_{name}"] += source.T @ grad
        grads[f"{prefix}.b_{name}"] += grad.sum(axis=0)
        target += grad @ params[f"{prefix}.w_{name}"].T
    return grad_query_input, grad_context_input
