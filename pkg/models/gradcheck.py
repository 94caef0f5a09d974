"""Central finite-difference checks for the hand-written backward passes."""

from typing import Callable, Dict, Iterable, Optional

import numpy as np

DEFAULT_EPSILON = 1e-5


def numeric_gradient(loss_fn: Callable[[], float], array: np.ndarray, eps: float = DEFAULT_EPSILON) -> np.ndarray:
    """Central differences of `loss_fn()` w.r.t. every entry of `array` (perturbed in place)."""
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        plus = loss_fn()
        flat[i] = original - eps
        minus = loss_fn()
        flat[i] = original
        out[i] = (plus - minus) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-7) -> float:
    """‖a − n‖ / max(‖a‖, ‖n‖), with an absolute floor for all-zero gradients."""
    diff = float(np.linalg.norm(analytic - numeric))
    scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)))
    if scale < floor:
        return diff
    return diff / scale


def check_gradients(loss_fn: Callable[[], float], params: Dict[str, np.ndarray],
                    analytic: Dict[str, np.ndarray], names: Optional[Iterable[str]] = None,
                    eps: float = DEFAULT_EPSILON) -> Dict[str, float]:
    """Relative error per parameter name; `loss_fn` must read `params` live."""
    errors = {}
    for name in sorted(names if names is not None else params):
        numeric = numeric_gradient(loss_fn, params[name], eps)
        errors[name] = relative_error(analytic[name], numeric)
    return errors
