"""
Run configuration: one JSON document with a block per subsystem plus the
input paths a command needs. All seeds are derived from the single run
seed through named sub-streams.
"""

import os
from dataclasses import dataclass, field
from typing import Dict, Optional

from models.aligner_training import TrainConfig
from models.data_manager import read_json
from models.errors import InvalidInputError
from models.reinforcement import RLConfig
from models.scoring import ScoringConfig
from models.sequence_model import PriorConfig
from models.surface import SurfaceParams
from utils.logger import get_logger
from utils.seeding import substream_seed

logger = get_logger(__name__)

INPUT_KEYS = (
    "manifest",
    "corpus",
    "aligner_checkpoint",
    "prior_checkpoint",
    "reference_xyz",
    "reference_atoms",
    "reference_smiles",
    "annotations",
)


@dataclass
class SyntheticDataConfig:
    n_pairs: int = 200
    n_validation: int = 20
    n_points: int = 48

    def __post_init__(self):
        if self.n_pairs < 1 or self.n_validation < 0 or self.n_points < 3:
            raise InvalidInputError("synthetic needs n_pairs >= 1, n_validation >= 0 and n_points >= 3")


@dataclass
class RunConfig:
    seed: int = 0
    surface: SurfaceParams = field(default_factory=SurfaceParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    synthetic: SyntheticDataConfig = field(default_factory=SyntheticDataConfig)
    scoring: ScoringConfig = field(default_factory=ScoringConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    rl: RLConfig = field(default_factory=RLConfig)
    inputs: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        unknown = set(self.inputs) - set(INPUT_KEYS)
        if unknown:
            raise InvalidInputError(f"Unknown input key(s): {sorted(unknown)}")
        self.derive_seeds()

    def derive_seeds(self) -> None:
        """Reset every subsystem seed from `seed`."""
        self.surface.rng_seed = substream_seed(self.seed, "surface")
        self.train.rng_seed = substream_seed(self.seed, "train")
        self.prior.rng_seed = substream_seed(self.seed, "prior")
        self.rl.rng_seed = substream_seed(self.seed, "rl")
        self.scoring.rng_seed = substream_seed(self.seed, "embed")
        self.scoring.surface.rng_seed = self.surface.rng_seed

    def with_seed(self, seed: int) -> "RunConfig":
        self.seed = int(seed)
        self.derive_seeds()
        return self

    def input_path(self, key: str) -> Optional[str]:
        return self.inputs.get(key)

    @classmethod
    def from_dict(cls, data: Dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise InvalidInputError("Run configuration must be a JSON object")
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidInputError(f"Unknown configuration key(s): {sorted(unknown)}")
        blocks = {
            "surface": SurfaceParams.from_dict,
            "train": TrainConfig.from_dict,
            "synthetic": lambda d: SyntheticDataConfig(**d),
            "scoring": ScoringConfig.from_dict,
            "prior": PriorConfig.from_dict,
            "rl": RLConfig.from_dict,
        }
        kwargs = {}
        for key, value in data.items():
            if key in blocks:
                if not isinstance(value, dict):
                    raise InvalidInputError(f"Configuration block '{key}' must be an object")
                try:
                    kwargs[key] = blocks[key](value)
                except TypeError as e:
                    raise InvalidInputError(f"Configuration block '{key}': {e}") from e
            else:
                kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def load(cls, path: Optional[str]) -> "RunConfig":
        if path is None:
            return cls()
        logger.debug(f"Loading run configuration from {path}")
        config = cls.from_dict(read_json(path))
        # input paths are relative to the config file
        base = os.path.dirname(os.path.abspath(path))
        config.inputs = {key: value if os.path.isabs(value) else os.path.join(base, value)
                         for key, value in config.inputs.items()}
        return config

    def to_dict(self) -> Dict:
        return {
            "seed": self.seed,
            "surface": self.surface.to_dict(),
            "train": self.train.to_dict(),
            "synthetic": vars(self.synthetic).copy(),
            "scoring": self.scoring.to_dict(),
            "prior": self.prior.to_dict(),
            "rl": self.rl.to_dict(),
            "inputs": dict(sorted(self.inputs.items())),
        }
