"""
Policy optimisation of the agent towards the augmented likelihood
log π_prior + σ·S, one sampled batch per step.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from models.diversity_filter import DiversityFilterState
from models.errors import InvalidInputError, NumericError, TrainingFailedError
from models.optimizer import Adam, AdamSettings
from models.scoring import COMPONENTS, ScoreRecord, apply_filter
from models.sequence_model import MAX_LENGTH, SequenceModel, likelihood, loglik_and_grads, sample_batch
from utils.logger import get_logger
from utils.seeding import substream

logger = get_logger(__name__)

ScoreFn = Callable[[str], ScoreRecord]
CheckpointFn = Callable[[int, SequenceModel], None]


@dataclass
class RLConfig:
    sigma: float = 120.0
    batch_size: int = 32
    learning_rate: float = 1e-4
    epochs: int = 200
    temperature: float = 1.5
    n_samples: int = 5000
    checkpoint_every: int = 0  # 0 disables
    max_length: int = MAX_LENGTH
    bucket_capacity: int = 25
    rng_seed: int = 0
    optimizer: AdamSettings = field(default_factory=AdamSettings)

    def __post_init__(self):
        if isinstance(self.optimizer, dict):
            self.optimizer = AdamSettings.from_dict(self.optimizer)
        self.validate()

    def validate(self) -> None:
        if not self.sigma > 0:
            raise InvalidInputError(f"sigma must be > 0, got {self.sigma}")
        if not self.temperature > 0:
            raise InvalidInputError(f"temperature must be > 0, got {self.temperature}")
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")
        if self.epochs < 0 or self.n_samples < 0 or self.checkpoint_every < 0:
            raise InvalidInputError("epochs, n_samples and checkpoint_every must be >= 0")
        if not self.learning_rate > 0:
            raise InvalidInputError("learning_rate must be > 0")
        if self.max_length < 1 or self.bucket_capacity < 1:
            raise InvalidInputError("max_length and bucket_capacity must be >= 1")

    @classmethod
    def from_dict(cls, data: Dict) -> "RLConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidInputError(f"Unknown RL setting(s): {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> Dict:
        return asdict(self)


def augmented_likelihood(log_prior, score, sigma: float):
    """log π_aug = log π_prior + σ·S (scalars or arrays)."""
    score = np.asarray(score, dtype=np.float64)
    if np.any(score < 0) or np.any(score > 1):
        raise InvalidInputError(f"Scores must lie in [0, 1], got {score}")
    result = np.asarray(log_prior, dtype=np.float64) + sigma * score
    return float(result) if result.ndim == 0 else result


def policy_loss(log_aug, log_agent):
    """Mean of (log π_aug − log π_agent)²; a scalar pair gives the per-sample loss."""
    gap = np.asarray(log_aug, dtype=np.float64) - np.asarray(log_agent, dtype=np.float64)
    if not np.all(np.isfinite(gap)):
        raise NumericError("Non-finite policy loss input", layer="policy_loss")
    return float(np.mean(gap * gap))


def policy_loss_grad(log_aug: np.ndarray, log_agent: np.ndarray) -> np.ndarray:
    """d(batch loss)/d(log π_agent) per sample."""
    log_aug = np.asarray(log_aug, dtype=np.float64)
    return -2.0 * (log_aug - np.asarray(log_agent, dtype=np.float64)) / log_aug.size


@dataclass
class StepDiagnostics:
    epoch: int
    mean_score: float
    mean_composite: float
    mean_loss: float
    valid_frac: float
    unique_frac: float
    component_means: Dict[str, Optional[float]]
    raw_means: Dict[str, Optional[float]]
    smiles: List[str] = field(default_factory=list, repr=False)

    def to_row(self) -> Dict:
        row = {
            "epoch": self.epoch,
            "mean_score": self.mean_score,
            "mean_composite": self.mean_composite,
            "mean_loss": self.mean_loss,
            "valid_frac": self.valid_frac,
            "unique_frac": self.unique_frac,
        }
        for name in COMPONENTS:
            row[f"mean_{name}"] = self.component_means.get(name)
            row[f"mean_{name}_raw"] = self.raw_means.get(name)
        return row


def _component_means(records: Sequence[ScoreRecord]) -> Tuple[Dict, Dict]:
    values, raws = {}, {}
    for name in COMPONENTS:
        comps = [r.component(name) for r in records]
        comps = [c for c in comps if c is not None]
        values[name] = float(np.mean([c.value for c in comps])) if comps else None
        raw = [c.raw for c in comps if c.raw is not None]
        raws[name] = float(np.mean(raw)) if raw else None
    return values, raws


def score_samples(score_fn: ScoreFn, smiles: Sequence[str], filter_state: Optional[DiversityFilterState],
                  threads: int = 1) -> List[ScoreRecord]:
    """Score in parallel, then filter serially in sample order."""
    if threads > 1 and len(smiles) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(score_fn, smiles))
    else:
        records = [score_fn(s) for s in smiles]
    if filter_state is None:
        return records
    return [apply_filter(filter_state, record) for record in records]


def rl_step(agent: SequenceModel, prior: SequenceModel, score_fn: ScoreFn,
            filter_state: Optional[DiversityFilterState], config: RLConfig, optimizer: Adam,
            rng: np.random.Generator, epoch: int = 1, threads: int = 1) -> Tuple[SequenceModel, StepDiagnostics]:
    """Sample, score, regress the agent onto the augmented likelihood. Updates `agent` in place."""
    samples = sample_batch(agent, config.batch_size, 1.0, rng, config.max_length)
    smiles = [s.smiles for s in samples]
    sequences = [list(s.token_ids) for s in samples]
    records = score_samples(score_fn, smiles, filter_state, threads)
    scores = np.array([r.score for r in records], dtype=np.float64)

    snapshot = {"epoch": epoch, "smiles": smiles[:5], "mean_score": float(scores.mean())}
    try:
        log_prior = likelihood(prior, sequences)
        log_aug = augmented_likelihood(log_prior, scores, config.sigma)
        log_agent_now = likelihood(agent, sequences)
        upstream = policy_loss_grad(log_aug, log_agent_now)
        log_agent, grads = loglik_and_grads(agent, sequences, upstream)
        loss = policy_loss(log_aug, log_agent)
        optimizer.step(agent.params, grads)
    except NumericError as e:
        logger.error(f"RL step {epoch} diverged: {e}")
        raise TrainingFailedError(f"Agent update diverged ({e})", epoch, snapshot) from e

    valid = [r for r in records if r.valid]
    components, raws = _component_means(valid)
    diagnostics = StepDiagnostics(
        epoch=epoch,
        mean_score=float(scores.mean()),
        mean_composite=float(np.mean([r.composite for r in records])),
        mean_loss=loss,
        valid_frac=len(valid) / len(records),
        unique_frac=len({r.canonical for r in valid}) / len(records),
        component_means=components,
        raw_means=raws,
        smiles=smiles,
    )
    return agent, diagnostics


def rl_run(config: RLConfig, prior: SequenceModel, score_fn: ScoreFn, threads: int = 1,
           on_checkpoint: Optional[CheckpointFn] = None) -> Tuple[SequenceModel, List[Dict]]:
    """Run `config.epochs` steps from a copy of the prior; returns the agent and the learning curve."""
    agent = prior.copy()
    rng = substream(config.rng_seed, "rl")
    optimizer = Adam(agent.params, config.learning_rate, config.optimizer)
    filter_state = DiversityFilterState.create(config.bucket_capacity)
    curve = []
    for epoch in range(1, config.epochs + 1):
        agent, diagnostics = rl_step(agent, prior, score_fn, filter_state, config, optimizer, rng, epoch, threads)
        curve.append(diagnostics.to_row())
        logger.info(f"🧪 RL epoch {epoch}/{config.epochs}: score {diagnostics.mean_score:.3f}, "
                    f"loss {diagnostics.mean_loss:.3f}, valid {diagnostics.valid_frac:.2f}, "
                    f"unique {diagnostics.unique_frac:.2f}")
        if on_checkpoint is not None and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            on_checkpoint(epoch, agent)
    return agent, curve


def sample_smiles(agent: SequenceModel, n: int, temperature: float, rng: np.random.Generator,
                  max_length: int = MAX_LENGTH) -> List[str]:
    return [s.smiles for s in sample_batch(agent, n, temperature, rng, max_length)]
