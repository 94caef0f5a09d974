"""
Training loop for the attention aligner plus the synthetic self-alignment
dataset used when no surface manifest is given.
"""

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from models.aligner import AlignerModel, loss_and_grads, loss_only
from models.errors import InvalidInputError, NumericError, TrainingFailedError
from models.geometry import PointCloud, random_rotation
from models.optimizer import Adam, AdamSettings
from utils.logger import get_logger

logger = get_logger(__name__)

Pair = Tuple[PointCloud, PointCloud]


@dataclass
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 1e-3
    batch_size: int = 8
    rng_seed: int = 0
    validation_fraction: float = 0.1
    d_a: int = 16
    h: int = 8
    optimizer: AdamSettings = field(default_factory=AdamSettings)

    def __post_init__(self):
        if isinstance(self.optimizer, dict):
            self.optimizer = AdamSettings.from_dict(self.optimizer)
        self.validate()

    def validate(self) -> None:
        # epochs == 0 only evaluates the initial model
        if self.epochs < 0:
            raise InvalidInputError(f"epochs must be >= 0, got {self.epochs}")
        if not self.learning_rate > 0:
            raise InvalidInputError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise InvalidInputError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise InvalidInputError(f"validation_fraction must be in [0, 1), got {self.validation_fraction}")

    @classmethod
    def from_dict(cls, data: Dict) -> "TrainConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidInputError(f"Unknown training setting(s): {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float

    def to_row(self) -> Dict:
        return {"epoch": self.epoch, "train_loss": self.train_loss, "val_loss": self.val_loss}


def split_dataset(dataset: Sequence[Pair], fraction: float,
                  rng: np.random.Generator) -> Tuple[List[Pair], List[Pair]]:
    """Seeded train/validation split. Tiny datasets validate on the training pairs."""
    n = len(dataset)
    n_val = int(round(fraction * n))
    if fraction <= 0 or n < 2:
        return list(dataset), list(dataset)
    n_val = min(max(n_val, 1), n - 1)
    order = rng.permutation(n)
    val = [dataset[i] for i in sorted(order[:n_val])]
    train = [dataset[i] for i in sorted(order[n_val:])]
    return train, val


def evaluate(model: AlignerModel, pairs: Sequence[Pair]) -> float:
    """Mean Chamfer loss over `pairs` (no gradients)."""
    if not pairs:
        raise InvalidInputError("Cannot evaluate on an empty set of pairs")
    return float(np.mean([loss_only(model, q, r) for q, r in pairs]))


def train(model: AlignerModel, dataset: Sequence[Pair], config: Optional[TrainConfig] = None,
          validation: Optional[Sequence[Pair]] = None) -> Tuple[AlignerModel, List[EpochRecord]]:
    """Minibatch Adam on the mean Chamfer loss.

    Returns a trained copy of `model` and one record per epoch; record 0 is the
    untrained model. Gradients within a batch are summed in dataset order.
    """
    config = config or TrainConfig()
    config.validate()
    if not dataset:
        raise InvalidInputError("Training dataset is empty")

    rng = np.random.default_rng(config.rng_seed)
    if validation is None:
        train_pairs, val_pairs = split_dataset(dataset, config.validation_fraction, rng)
    else:
        train_pairs, val_pairs = list(dataset), list(validation)

    model = model.copy()
    optimizer = Adam(model.params, config.learning_rate, config.optimizer)
    trace = [EpochRecord(0, evaluate(model, train_pairs), evaluate(model, val_pairs))]
    logger.info(f"🎯 Aligner epoch 0: train {trace[0].train_loss:.4f} val {trace[0].val_loss:.4f} "
                f"({len(train_pairs)} train / {len(val_pairs)} val pairs)")

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_pairs))
        losses = []
        try:
            for start in range(0, len(order), config.batch_size):
                batch = order[start:start + config.batch_size]
                total = model.zero_grads()
                for index in batch:
                    query, reference = train_pairs[index]
                    loss, grads = loss_and_grads(model, query, reference)
                    losses.append(loss)
                    for name, grad in grads.items():
                        total[name] += grad
                for name in total:
                    total[name] /= len(batch)
                optimizer.step(model.params, total)
            val_loss = evaluate(model, val_pairs)
        except NumericError as e:
            raise TrainingFailedError(str(e), epoch, {"last_losses": losses[-5:]}) from e

        train_loss = float(np.mean(losses))
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise TrainingFailedError("Loss diverged", epoch, {"train_loss": train_loss, "val_loss": val_loss})
        trace.append(EpochRecord(epoch, train_loss, val_loss))
        logger.info(f"🎯 Aligner epoch {epoch}/{config.epochs}: train {train_loss:.4f} val {val_loss:.4f}")

    return model, trace


def _ellipsoid_points(n_points: int, axes: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    directions = rng.normal(size=(n_points, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return directions * axes


def _cluster_points(n_points: int, centres: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    owner = rng.integers(0, len(centres), size=n_points)
    return centres[owner] + rng.normal(scale=0.6, size=(n_points, 3))


def synthetic_self_alignment_dataset(n_pairs: int, n_points: int = 48,
                                     rng: Optional[np.random.Generator] = None) -> List[Pair]:
    """Pairs (query, reference) where the query is an independent resampling of the
    reference shape under a random rigid motion. Shapes alternate between
    anisotropic ellipsoids and elongated Gaussian clusters."""
    if n_pairs < 1 or n_points < 3:
        raise InvalidInputError("Synthetic dataset needs n_pairs >= 1 and n_points >= 3")
    rng = rng if rng is not None else np.random.default_rng(0)
    pairs = []
    for i in range(n_pairs):
        if i % 2 == 0:
            axes = np.sort(rng.uniform(1.0, 4.5, size=3))[::-1]
            reference = _ellipsoid_points(n_points, axes, rng)
            query = _ellipsoid_points(n_points, axes, rng)
        else:
            centres = np.zeros((3, 3))
            centres[:, 0] = np.array([-3.0, 0.0, 3.5]) * rng.uniform(0.8, 1.2)
            centres[2, 1] = rng.uniform(0.5, 2.0)
            reference = _cluster_points(n_points, centres, rng)
            query = _cluster_points(n_points, centres, rng)
        rotation = random_rotation(rng)
        shift = rng.normal(scale=2.0, size=3)
        query = query @ rotation.T + shift
        pairs.append((PointCloud(query, f"synthetic-{i}-query"), PointCloud(reference, f"synthetic-{i}-ref")))
    return pairs
