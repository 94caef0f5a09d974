"""
Character-level SMILES language model: a single gated recurrent layer with a
hand-written backward pass through time. Serves as prior and agent.
"""

import re
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, log_softmax, softmax

from models.checkpoint import FORMAT_VERSION, check_version, decode_params, encode_params, read_checkpoint, \
    write_checkpoint
from models.errors import InvalidInputError, NumericError
from models.optimizer import Adam, AdamSettings
from utils.logger import get_logger

logger = get_logger(__name__)

PAD = "<pad>"
BEGIN = "^"
END = "$"
SPECIAL_TOKENS = (PAD, BEGIN, END)
MAX_LENGTH = 128

# bracket atoms, two-letter halogens and two-digit ring closures stay whole
TOKEN_PATTERN = re.compile(
    r"(\[[^\]]+]|Br?|Cl?|N|O|S|P|F|I|b|c|n|o|s|p|\(|\)|\.|=|#|-|\+|\\|/|:|~|@|\?|>|\*|%[0-9]{2}|[0-9])"
)


def tokenize_smiles(smiles: str) -> List[str]:
    tokens = TOKEN_PATTERN.findall(smiles)
    if "".join(tokens) != smiles:
        raise InvalidInputError(f"Cannot tokenize SMILES '{smiles}'")
    return tokens


@dataclass(frozen=True)
class Vocabulary:
    tokens: Tuple[str, ...]

    def __post_init__(self):
        if tuple(self.tokens[:3]) != SPECIAL_TOKENS:
            raise InvalidInputError("Vocabulary must start with the pad, begin and end tokens")
        if len(set(self.tokens)) != len(self.tokens):
            raise InvalidInputError("Vocabulary contains duplicate tokens")

    @classmethod
    def from_corpus(cls, corpus: Sequence[str]) -> "Vocabulary":
        found = set()
        for smiles in corpus:
            found.update(tokenize_smiles(smiles))
        return cls(SPECIAL_TOKENS + tuple(sorted(found)))

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def index(self) -> Dict[str, int]:
        return {token: i for i, token in enumerate(self.tokens)}

    @property
    def pad(self) -> int:
        return 0

    @property
    def begin(self) -> int:
        return 1

    @property
    def end(self) -> int:
        return 2

    def encode(self, smiles: str) -> List[int]:
        """Token ids framed by begin and end."""
        lookup = self.index
        ids = [self.begin]
        for token in tokenize_smiles(smiles):
            if token not in lookup:
                raise InvalidInputError(f"Unknown token '{token}' in '{smiles}'")
            ids.append(lookup[token])
        ids.append(self.end)
        return ids

    def decode(self, ids: Sequence[int]) -> str:
        text = []
        for i in ids:
            if i == self.end:
                break
            if i in (self.pad, self.begin):
                continue
            text.append(self.tokens[i])
        return "".join(text)


@dataclass
class SequenceModel:
    vocabulary: Vocabulary
    params: Dict[str, np.ndarray]
    hidden_size: int
    embedding_dim: int

    @classmethod
    def create(cls, vocabulary: Vocabulary, hidden_size: int = 128, embedding_dim: int = 32,
               rng_seed: int = 0) -> "SequenceModel":
        if hidden_size < 1 or embedding_dim < 1:
            raise InvalidInputError("hidden_size and embedding_dim must be >= 1")
        rng = np.random.default_rng(rng_seed)
        v, h, e = len(vocabulary), hidden_size, embedding_dim
        scale = 1.0 / np.sqrt(h)
        params = {
            "embedding": rng.normal(scale=0.1, size=(v, e)),
            "gru.w_x": rng.uniform(-scale, scale, size=(e, 3 * h)),
            "gru.w_h": rng.uniform(-scale, scale, size=(h, 3 * h)),
            "gru.b_x": np.zeros(3 * h),
            "gru.b_h": np.zeros(3 * h),
            "output.w": rng.uniform(-scale, scale, size=(h, v)),
            "output.b": np.zeros(v),
        }
        return cls(vocabulary, params, hidden_size, embedding_dim)

    def copy(self) -> "SequenceModel":
        return SequenceModel(self.vocabulary, {k: v.copy() for k, v in self.params.items()},
                             self.hidden_size, self.embedding_dim)

    def zero_grads(self) -> Dict[str, np.ndarray]:
        return {name: np.zeros_like(value) for name, value in self.params.items()}

    def to_dict(self) -> Dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "sequence_model",
            "hidden_size": self.hidden_size,
            "embedding_dim": self.embedding_dim,
            "vocabulary": list(self.vocabulary.tokens),
            "parameters": encode_params(self.params),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "SequenceModel":
        check_version(data, "sequence model")
        try:
            return cls(Vocabulary(tuple(data["vocabulary"])), decode_params(data["parameters"]),
                       int(data["hidden_size"]), int(data["embedding_dim"]))
        except (KeyError, TypeError) as e:
            raise InvalidInputError(f"Malformed sequence model checkpoint: {e}") from e

    def save(self, path: str) -> None:
        write_checkpoint(self.to_dict(), path)

    @classmethod
    def load(cls, path: str) -> "SequenceModel":
        return cls.from_dict(read_checkpoint(path))


def _logit_mask(vocabulary: Vocabulary) -> np.ndarray:
    """Pad and begin are never predicted."""
    mask = np.ones(len(vocabulary), dtype=bool)
    mask[[vocabulary.pad, vocabulary.begin]] = False
    return mask


def _gru_step(params: Dict[str, np.ndarray], x: np.ndarray, h: np.ndarray, size: int):
    gx = x @ params["gru.w_x"] + params["gru.b_x"]
    gh = h @ params["gru.w_h"] + params["gru.b_h"]
    r = expit(gx[:, :size] + gh[:, :size])
    z = expit(gx[:, size:2 * size] + gh[:, size:2 * size])
    n = np.tanh(gx[:, 2 * size:] + r * gh[:, 2 * size:])
    h_new = (1.0 - z) * n + z * h
    return h_new, (x, h, r, z, n, gh)


def _masked_logits(model: SequenceModel, h: np.ndarray, allowed: np.ndarray) -> np.ndarray:
    logits = h @ model.params["output.w"] + model.params["output.b"]
    return np.where(allowed, logits, -np.inf)


def pad_batch(sequences: Sequence[Sequence[int]], pad: int = 0) -> np.ndarray:
    length = max(len(s) for s in sequences)
    batch = np.full((len(sequences), length), pad, dtype=np.int64)
    for i, s in enumerate(sequences):
        batch[i, :len(s)] = s
    return batch


def _forward(model: SequenceModel, sequences: Sequence[Sequence[int]], keep_cache: bool):
    if not sequences or any(len(s) < 2 for s in sequences):
        raise InvalidInputError("Every sequence needs a begin token and at least one target")
    batch = pad_batch(sequences, model.vocabulary.pad)
    n, length = batch.shape
    allowed = _logit_mask(model.vocabulary)
    h = np.zeros((n, model.hidden_size))
    loglik = np.zeros(n)
    cache = []
    for t in range(length - 1):
        tokens, targets = batch[:, t], batch[:, t + 1]
        live = targets != model.vocabulary.pad
        x = model.params["embedding"][tokens]
        h, step = _gru_step(model.params, x, h, model.hidden_size)
        log_probs = log_softmax(_masked_logits(model, h, allowed), axis=1)
        picked = log_probs[np.arange(n), targets]
        loglik += np.where(live, picked, 0.0)
        if keep_cache:
            cache.append((tokens, targets, live, h, np.exp(log_probs), step))
    if not np.all(np.isfinite(loglik)):
        raise NumericError("Non-finite sequence log-likelihood", layer="sequence_model")
    return loglik, cache


def likelihood(model: SequenceModel, sequences: Sequence[Sequence[int]]) -> np.ndarray:
    """Log-likelihood (natural log) of each token-id sequence, conditioned on the true prefix."""
    loglik, _ = _forward(model, sequences, keep_cache=False)
    return loglik


def loglik_and_grads(model: SequenceModel, sequences: Sequence[Sequence[int]],
                     upstream: np.ndarray) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """Log-likelihoods and the gradient of Σ_b upstream[b] · loglik[b] w.r.t. every parameter."""
    loglik, cache = _forward(model, sequences, keep_cache=True)
    p = model.params
    size = model.hidden_size
    grads = model.zero_grads()
    upstream = np.asarray(upstream, dtype=np.float64).reshape(-1)
    dh_next = np.zeros((len(sequences), size))
    for tokens, targets, live, h_new, probs, (x, h, r, z, n, gh) in reversed(cache):
        weight = np.where(live, upstream, 0.0)[:, None]
        onehot = np.zeros_like(probs)
        onehot[np.arange(len(targets)), targets] = 1.0
        dlogits = weight * (onehot - probs)
        grads["output.w"] += h_new.T @ dlogits
        grads["output.b"] += dlogits.sum(axis=0)
        dh = dh_next + dlogits @ p["output.w"].T

        dn = dh * (1.0 - z)
        dz = dh * (h - n)
        dn_pre = dn * (1.0 - n * n)
        dr = dn_pre * gh[:, 2 * size:]
        dr_pre = dr * r * (1.0 - r)
        dz_pre = dz * z * (1.0 - z)
        dgx = np.concatenate([dr_pre, dz_pre, dn_pre], axis=1)
        dgh = np.concatenate([dr_pre, dz_pre, dn_pre * r], axis=1)

        grads["gru.w_x"] += x.T @ dgx
        grads["gru.b_x"] += dgx.sum(axis=0)
        grads["gru.w_h"] += h.T @ dgh
        grads["gru.b_h"] += dgh.sum(axis=0)
        np.add.at(grads["embedding"], tokens, dgx @ p["gru.w_x"].T)
        dh_next = dh * z + dgh @ p["gru.w_h"].T
    return loglik, grads


@dataclass(frozen=True)
class Sample:
    token_ids: Tuple[int, ...]
    smiles: str
    log_prob: float
    terminated: bool


def sample_batch(model: SequenceModel, n: int, temperature: float = 1.0,
                 rng: Optional[np.random.Generator] = None, max_length: int = MAX_LENGTH) -> List[Sample]:
    """Draw `n` sequences with logits divided by `temperature`.

    `log_prob` is the model's own (temperature 1) log-likelihood of the draw;
    `token_ids` start with the begin token and end with the end token when
    the sequence terminated within `max_length` tokens.
    """
    if n < 0:
        raise InvalidInputError(f"Sample count must be >= 0, got {n}")
    if not temperature > 0:
        raise InvalidInputError(f"Temperature must be > 0, got {temperature}")
    if n == 0:
        return []
    rng = rng if rng is not None else np.random.default_rng(0)
    vocab = model.vocabulary
    allowed = _logit_mask(vocab)
    h = np.zeros((n, model.hidden_size))
    tokens = np.full(n, vocab.begin, dtype=np.int64)
    sequences = [[vocab.begin] for _ in range(n)]
    log_probs = np.zeros(n)
    done = np.zeros(n, dtype=bool)
    for _ in range(max_length):
        x = model.params["embedding"][tokens]
        h, _ = _gru_step(model.params, x, h, model.hidden_size)
        logits = _masked_logits(model, h, allowed)
        probs = softmax(logits / temperature, axis=1)
        cumulative = np.cumsum(probs, axis=1)
        draws = rng.random(n)
        chosen = np.clip((cumulative < draws[:, None] * cumulative[:, -1:]).sum(axis=1), vocab.end, len(vocab) - 1)
        step_log = log_softmax(logits, axis=1)[np.arange(n), chosen]
        for i in np.flatnonzero(~done):
            sequences[i].append(int(chosen[i]))
            log_probs[i] += step_log[i]
        done |= chosen == vocab.end
        tokens = chosen
        if done.all():
            break
    return [Sample(tuple(seq), vocab.decode(seq), float(lp), bool(d))
            for seq, lp, d in zip(sequences, log_probs, done)]


def perplexity(model: SequenceModel, corpus: Sequence[str]) -> float:
    sequences = [model.vocabulary.encode(s) for s in corpus]
    total = float(likelihood(model, sequences).sum())
    predicted = sum(len(s) - 1 for s in sequences)
    return float(np.exp(-total / predicted))


@dataclass
class PriorConfig:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-3
    hidden_size: int = 128
    embedding_dim: int = 32
    rng_seed: int = 0
    optimizer: AdamSettings = field(default_factory=lambda: AdamSettings(grad_clip=5.0))

    def __post_init__(self):
        if isinstance(self.optimizer, dict):
            self.optimizer = AdamSettings.from_dict(self.optimizer)
        if self.epochs < 0 or self.batch_size < 1 or not self.learning_rate > 0:
            raise InvalidInputError("PriorConfig needs epochs >= 0, batch_size >= 1 and learning_rate > 0")

    @classmethod
    def from_dict(cls, data: Dict) -> "PriorConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidInputError(f"Unknown prior setting(s): {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> Dict:
        return asdict(self)


def pretrain_prior(corpus: Sequence[str], config: Optional[PriorConfig] = None,
                   on_epoch: Optional[Callable[[int, float], None]] = None) -> Tuple[SequenceModel, List[float]]:
    """Maximum-likelihood training on the true prefixes.

    Returns the model and the corpus perplexity before training and after every epoch.
    """
    config = config or PriorConfig()
    if not corpus:
        raise InvalidInputError("Prior corpus is empty")
    vocabulary = Vocabulary.from_corpus(corpus)
    model = SequenceModel.create(vocabulary, config.hidden_size, config.embedding_dim, config.rng_seed)
    encoded = [vocabulary.encode(s) for s in corpus]
    rng = np.random.default_rng(config.rng_seed)
    optimizer = Adam(model.params, config.learning_rate, config.optimizer)

    history = [perplexity(model, corpus)]
    logger.info(f"📚 Prior epoch 0: perplexity {history[0]:.3f} ({len(corpus)} strings, {len(vocabulary)} tokens)")
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(encoded))
        for start in range(0, len(order), config.batch_size):
            batch = [encoded[i] for i in order[start:start + config.batch_size]]
            # minimise the mean negative log-likelihood
            _, grads = loglik_and_grads(model, batch, np.full(len(batch), -1.0 / len(batch)))
            optimizer.step(model.params, grads)
        history.append(perplexity(model, corpus))
        logger.info(f"📚 Prior epoch {epoch}/{config.epochs}: perplexity {history[-1]:.3f}")
        if on_epoch is not None:
            on_epoch(epoch, history[-1])
    return model, history
