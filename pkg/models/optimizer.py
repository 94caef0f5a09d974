"""Adam optimiser over a flat {name: array} parameter store (shared by aligner and RL)."""

from dataclasses import dataclass, asdict
from typing import Dict

import numpy as np

from models.errors import InvalidInputError, NumericError


@dataclass
class AdamSettings:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 0.0  # global-norm clipping, 0 disables

    @classmethod
    def from_dict(cls, data: Dict) -> "AdamSettings":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidInputError(f"Unknown optimizer setting(s): {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> Dict:
        return asdict(self)


class Adam:
    def __init__(self, params: Dict[str, np.ndarray], lr: float, settings: AdamSettings = None):
        if not lr > 0:
            raise InvalidInputError(f"Learning rate must be > 0, got {lr}")
        self.lr = lr
        self.settings = settings or AdamSettings()
        self.step_count = 0
        self.m = {name: np.zeros_like(value) for name, value in params.items()}
        self.v = {name: np.zeros_like(value) for name, value in params.items()}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        """Update `params` in place. Parameters are visited in sorted name order."""
        names = sorted(params)
        for name in names:
            if not np.all(np.isfinite(grads[name])):
                raise NumericError(f"Non-finite gradient for '{name}'", layer=name)

        scale = 1.0
        if self.settings.grad_clip > 0:
            norm = np.sqrt(sum(float(np.sum(grads[name] ** 2)) for name in names))
            if norm > self.settings.grad_clip:
                scale = self.settings.grad_clip / norm

        self.step_count += 1
        b1, b2, eps = self.settings.beta1, self.settings.beta2, self.settings.eps
        correction1 = 1.0 - b1 ** self.step_count
        correction2 = 1.0 - b2 ** self.step_count
        for name in names:
            grad = grads[name] * scale if scale != 1.0 else grads[name]
            self.m[name] = b1 * self.m[name] + (1.0 - b1) * grad
            self.v[name] = b2 * self.v[name] + (1.0 - b2) * grad * grad
            m_hat = self.m[name] / correction1
            v_hat = self.v[name] / correction2
            params[name] -= self.lr * m_hat / (np.sqrt(v_hat) + eps)
