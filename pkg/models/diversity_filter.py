"""Scaffold-bucket diversity filter: once a Murcko scaffold has been seen `capacity` times, later samples score zero."""

from dataclasses import dataclass
from typing import Dict, Tuple

from models.errors import InvalidInputError
from utils.logger import get_logger

logger = get_logger(__name__)

DEFAULT_CAPACITY = 25


@dataclass
class DiversityFilterState:
    # scaffold -> samples seen; acyclic molecules share the "" bucket
    buckets: Dict[str, int]
    capacity: int

    @classmethod
    def create(cls, capacity: int = DEFAULT_CAPACITY):
        if capacity < 1:
            raise InvalidInputError(f"Bucket capacity must be >= 1, got {capacity}")
        return cls(buckets={}, capacity=capacity)

    def count(self, scaffold: str) -> int:
        return self.buckets.get(scaffold, 0)

    def is_full(self, scaffold: str) -> bool:
        return self.count(scaffold) >= self.capacity

    def reset(self) -> None:
        self.buckets.clear()

    def to_dict(self) -> Dict:
        return {"capacity": self.capacity, "buckets": dict(sorted(self.buckets.items()))}


def diversity_filter(state: DiversityFilterState, scaffold: str, score: float) -> Tuple[float, DiversityFilterState]:
    """Count the sample in its scaffold bucket; zero the score once the bucket was already full."""
    if not 0.0 <= score <= 1.0:
        raise InvalidInputError(f"Score must lie in [0, 1], got {score}")
    key = scaffold or ""
    full = state.is_full(key)
    state.buckets[key] = state.count(key) + 1
    if full:
        logger.debug(f"🪣 Scaffold bucket '{key}' full ({state.buckets[key]}), score zeroed")
        return 0.0, state
    return score, state
