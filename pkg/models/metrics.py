"""Generation metrics: validity/uniqueness/novelty and shape novelty."""

from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from models.descriptors import fingerprint, max_similarity
from models.errors import InvalidInputError, SmilesError
from models.molecule import canonical_smiles, parse_smiles
from utils.logger import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class ShapeNovelty:
    values: List[float]
    mean: float


def shape_novelty(cd_values: Sequence[float], similarities: Sequence[float]) -> ShapeNovelty:
    """Inverse min-max scaled Chamfer distance times Tanimoto diversity, per sample."""
    if len(cd_values) != len(similarities):
        raise InvalidInputError(f"shape_novelty: {len(cd_values)} distances but {len(similarities)} similarities")
    if not cd_values:
        raise InvalidInputError("shape_novelty needs at least one sample")
    cd = np.asarray(cd_values, dtype=np.float64)
    sim = np.asarray(similarities, dtype=np.float64)
    span = cd.max() - cd.min()
    scaled = np.ones_like(cd) if span == 0 else (cd.max() - cd) / span
    values = scaled * (1.0 - sim)
    return ShapeNovelty([float(v) for v in values], float(values.mean()))


def _canonical_or_none(smiles: str) -> Optional[str]:
    try:
        return canonical_smiles(parse_smiles(smiles))
    except SmilesError:
        return None


def eval_generation(samples: Sequence[str], reference_set: Iterable[str]) -> Dict[str, Optional[float]]:
    """Validity, uniqueness and novelty; a ratio with an empty denominator is None."""
    reference = set()
    for smiles in reference_set:
        canonical = _canonical_or_none(smiles)
        if canonical is None:
            logger.warning(f"Ignoring unparseable reference SMILES '{smiles}'")
        else:
            reference.add(canonical)

    valid = [c for c in (_canonical_or_none(s) for s in samples) if c is not None]
    unique = set(valid)
    novel = unique - reference
    return {
        "n_samples": len(samples),
        "n_valid": len(valid),
        "n_unique": len(unique),
        "validity": len(valid) / len(samples) if samples else None,
        "uniqueness": len(unique) / len(valid) if valid else None,
        "novelty": len(novel) / len(unique) if unique else None,
    }


def similarities_to(samples: Sequence[str], references: Sequence[str]) -> List[Optional[float]]:
    """Max Tanimoto similarity of each sample to the references (None if unparseable)."""
    reference_fps = [fingerprint(parse_smiles(s)) for s in references]
    result = []
    for smiles in samples:
        try:
            result.append(max_similarity(fingerprint(parse_smiles(smiles)), reference_fps))
        except SmilesError:
            result.append(None)
    return result
