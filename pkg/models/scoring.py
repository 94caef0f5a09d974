"""
Score transforms, the weighted geometric-mean composite and the scoring
function that turns a linker SMILES into a ScoreRecord.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from models.aligner import AlignerModel, AlignmentResult, align
from models.descriptors import (LinkerAnnotation, extract_extended_linker, linker_from_attachment_points,
                                linker_length_ratio, murcko_scaffold, rot_bond_ratio)
from models.diversity_filter import DiversityFilterState, diversity_filter
from models.embedding import embed_3d
from models.errors import InvalidInputError, SmilesError
from models.geometry import PointCloud
from models.molecule import MolGraph, canonical_smiles, parse_smiles
from models.registration import ransac_align
from models.surface import AtomSet, SurfaceParams, sample_surface
from utils.logger import get_logger

logger = get_logger(__name__)

COMPONENTS = ("shape", "rot", "length")

AlignFn = Callable[[PointCloud, PointCloud], AlignmentResult]


def reverse_sigmoid(x: float, low: float, high: float, k: float) -> float:
    """1 / (1 + 10^(10k(x − m)/(high − low))), m the midpoint of [low, high]."""
    if not high > low:
        raise InvalidInputError(f"reverse_sigmoid needs high > low, got [{low}, {high}]")
    if not k > 0:
        raise InvalidInputError(f"reverse_sigmoid needs k > 0, got {k}")
    midpoint = 0.5 * (high + low)
    exponent = 10.0 * k * (x - midpoint) / (high - low)
    return float(expit(-exponent * np.log(10.0)))


def step_score(x: float, low: float, high: float) -> float:
    if low > high:
        raise InvalidInputError(f"step_score needs low <= high, got [{low}, {high}]")
    return 1.0 if low <= x <= high else 0.0


def composite_score(components: Sequence[Tuple[float, float]]) -> float:
    """Weighted geometric mean (Π C_i^w_i)^(1/Σ w_i)."""
    if not components:
        raise InvalidInputError("composite_score needs at least one component")
    values = np.array([c for c, _ in components], dtype=np.float64)
    weights = np.array([w for _, w in components], dtype=np.float64)
    if np.any(values < 0) or np.any(values > 1) or not np.all(np.isfinite(values)):
        raise InvalidInputError(f"Component scores must lie in [0, 1], got {values.tolist()}")
    if np.any(weights <= 0):
        raise InvalidInputError(f"Component weights must be > 0, got {weights.tolist()}")
    if np.any(values == 0):
        return 0.0
    return float(np.exp(np.sum(weights * np.log(values)) / np.sum(weights)))


@dataclass
class SigmoidParams:
    low: float = 0.0
    high: float = 3.5
    k: float = 0.25


def _checked(cls, data: Dict, what: str):
    unknown = set(data) - set(cls.__dataclass_fields__)
    if unknown:
        raise InvalidInputError(f"Unknown {what} key(s): {sorted(unknown)}")
    return cls(**data)


@dataclass
class ScoringConfig:
    weights: Dict[str, float] = field(default_factory=lambda: {"shape": 3.0, "rot": 1.0, "length": 1.0})
    sigmoid: SigmoidParams = field(default_factory=SigmoidParams)
    rot_band: Tuple[float, float] = (0.0, 30.0)
    length_band: Tuple[float, float] = (100.0, 100.0)
    bucket_capacity: int = 25
    n_conformers: int = 16
    extended_hops: int = 2
    ransac_iterations: int = 1000
    surface: SurfaceParams = field(default_factory=SurfaceParams)
    rng_seed: int = 0

    def __post_init__(self):
        if isinstance(self.sigmoid, dict):
            self.sigmoid = _checked(SigmoidParams, self.sigmoid, "sigmoid")
        if isinstance(self.surface, dict):
            self.surface = SurfaceParams.from_dict(self.surface)
        self.rot_band = tuple(self.rot_band)
        self.length_band = tuple(self.length_band)
        self.validate()

    def validate(self) -> None:
        unknown = set(self.weights) - set(COMPONENTS)
        if unknown:
            raise InvalidInputError(f"Unknown score component(s): {sorted(unknown)}")
        if any(not w > 0 for w in self.weights.values()):
            raise InvalidInputError("Score weights must be > 0 (drop a component to disable it)")
        if self.bucket_capacity < 1:
            raise InvalidInputError("bucket_capacity must be >= 1")
        if self.n_conformers < 1:
            raise InvalidInputError("n_conformers must be >= 1")
        for name in ("rot_band", "length_band"):
            band = getattr(self, name)
            if len(band) != 2 or band[0] > band[1]:
                raise InvalidInputError(f"{name} must be [low, high] with low <= high")

    @classmethod
    def from_dict(cls, data: Dict) -> "ScoringConfig":
        return _checked(cls, data, "scoring")

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["rot_band"] = list(self.rot_band)
        data["length_band"] = list(self.length_band)
        return data


@dataclass(frozen=True)
class ComponentScore:
    name: str
    raw: Optional[float]
    value: float
    weight: float
    error: Optional[str] = None


@dataclass(frozen=True)
class ScoreRecord:
    smiles: str
    components: Tuple[ComponentScore, ...]
    composite: float
    scaffold: Optional[str]
    score: float
    filtered: bool = False
    canonical: Optional[str] = None
    error: Optional[str] = None
    sample_id: Optional[int] = None

    @property
    def valid(self) -> bool:
        return self.canonical is not None

    def component(self, name: str) -> Optional[ComponentScore]:
        return next((c for c in self.components if c.name == name), None)

    def with_filter(self, score: float, filtered: bool) -> "ScoreRecord":
        return ScoreRecord(self.smiles, self.components, self.composite, self.scaffold, score, filtered,
                           self.canonical, self.error, self.sample_id)

    def to_row(self) -> Dict:
        row = {"sample_id": self.sample_id, "smiles": self.smiles}
        for name in COMPONENTS:
            comp = self.component(name)
            row[f"{name}_raw"] = None if comp is None else comp.raw
            row[f"{name}_score"] = None if comp is None else comp.value
        row.update({
            "composite": self.composite,
            "score": self.score,
            "scaffold": self.scaffold,
            "filtered": int(self.filtered),
            "note": self.error or "",
        })
        return row


def shape_score(model: Optional[AlignerModel], conformers: Sequence[AtomSet], reference_cloud: PointCloud,
                surface_params: Optional[SurfaceParams] = None, sigmoid: Optional[SigmoidParams] = None,
                align_fn: Optional[AlignFn] = None) -> Tuple[float, float]:
    """(minimum Chamfer over conformers, reverse-sigmoid score of that minimum)."""
    if not conformers:
        raise InvalidInputError("shape_score needs at least one conformer")
    if align_fn is None:
        if model is None:
            raise InvalidInputError("shape_score needs an aligner model or an align_fn")
        align_fn = lambda q, r: align(model, q, r)  # noqa: E731
    sigmoid = sigmoid or SigmoidParams()
    raw = min(align_fn(sample_surface(atoms, surface_params), reference_cloud).chamfer for atoms in conformers)
    return raw, reverse_sigmoid(raw, sigmoid.low, sigmoid.high, sigmoid.k)


class ScoringFunction:
    """Composite scorer for linker SMILES.

    Without a reference cloud the shape component is left out. Without an
    aligner model the shape component aligns with RANSAC.
    """

    def __init__(self, config: Optional[ScoringConfig] = None, model: Optional[AlignerModel] = None,
                 reference_cloud: Optional[PointCloud] = None, align_fn: Optional[AlignFn] = None):
        self.config = config or ScoringConfig()
        self.model = model
        self.reference_cloud = reference_cloud
        if align_fn is None:
            if model is not None:
                align_fn = lambda q, r: align(model, q, r)  # noqa: E731
            else:
                iterations, seed = self.config.ransac_iterations, self.config.rng_seed
                align_fn = lambda q, r: ransac_align(q, r, iterations, rng_seed=seed)  # noqa: E731
        self.align_fn = align_fn

    @property
    def active_components(self) -> List[str]:
        names = [n for n in COMPONENTS if n in self.config.weights]
        if self.reference_cloud is None and "shape" in names:
            names.remove("shape")
        return names

    def _shape_molecule(self, mol: MolGraph, linker: LinkerAnnotation) -> MolGraph:
        non_dummy = {i for i, atom in enumerate(mol.atoms) if not atom.is_dummy}
        if linker.linker_atoms == non_dummy or self.config.extended_hops == 0:
            return mol
        extended, _ = extract_extended_linker(mol, linker, self.config.extended_hops)
        return extended

    def _component(self, name: str, mol: MolGraph, linker: LinkerAnnotation) -> ComponentScore:
        weight = self.config.weights[name]
        try:
            if name == "rot":
                raw = rot_bond_ratio(mol, linker)
                return ComponentScore(name, raw, step_score(raw, *self.config.rot_band), weight)
            if name == "length":
                raw = linker_length_ratio(mol, linker)
                return ComponentScore(name, raw, step_score(raw, *self.config.length_band), weight)
            conformers = embed_3d(self._shape_molecule(mol, linker), self.config.n_conformers,
                                  self.config.rng_seed)
            raw, value = shape_score(self.model, conformers, self.reference_cloud, self.config.surface,
                                     self.config.sigmoid, self.align_fn)
            return ComponentScore(name, raw, value, weight)
        except Exception as e:
            logger.warning(f"Score component '{name}' failed: {e}")
            return ComponentScore(name, None, 0.0, weight, f"{type(e).__name__}: {e}")

    def score(self, smiles: str, annotation: Optional[LinkerAnnotation] = None,
              sample_id: Optional[int] = None) -> ScoreRecord:
        """Score one SMILES; unparseable input scores 0 with a note."""
        names = self.active_components
        try:
            mol = parse_smiles(smiles)
            linker = annotation if annotation is not None else linker_from_attachment_points(mol)
            linker.validate(mol)
        except (SmilesError, InvalidInputError) as e:
            note = f"parse error: {e}" if isinstance(e, SmilesError) else f"invalid linker: {e}"
            zeros = tuple(ComponentScore(n, None, 0.0, self.config.weights[n], note) for n in names)
            return ScoreRecord(smiles, zeros, 0.0, None, 0.0, error=note, sample_id=sample_id)

        components = tuple(self._component(name, mol, linker) for name in names)
        composite = composite_score([(c.value, c.weight) for c in components]) if components else 0.0
        errors = "; ".join(c.error for c in components if c.error)
        return ScoreRecord(smiles, components, composite, murcko_scaffold(mol), composite,
                           canonical=canonical_smiles(mol), error=errors or None, sample_id=sample_id)

    def __call__(self, smiles: str) -> ScoreRecord:
        return self.score(smiles)

    def score_batch(self, smiles: Sequence[str], annotations: Optional[Sequence[Optional[LinkerAnnotation]]] = None,
                    filter_state: Optional[DiversityFilterState] = None, threads: int = 1) -> List[ScoreRecord]:
        """Score in parallel, then apply the diversity filter serially in sample order."""
        annotations = list(annotations) if annotations is not None else [None] * len(smiles)
        if len(annotations) != len(smiles):
            raise InvalidInputError("One annotation (or None) per SMILES is required")
        jobs = list(zip(smiles, annotations, range(len(smiles))))
        if threads > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                records = list(pool.map(lambda job: self.score(*job), jobs))
        else:
            records = [self.score(*job) for job in jobs]
        if filter_state is None:
            return records
        return [apply_filter(filter_state, record) for record in records]


def apply_filter(state: DiversityFilterState, record: ScoreRecord) -> ScoreRecord:
    if not record.valid:
        return record
    adjusted, _ = diversity_filter(state, record.scaffold, record.score)
    return record.with_filter(adjusted, adjusted != record.score)
