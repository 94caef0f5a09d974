"""
Sub-command implementations. Each command reads its inputs, writes its
artifacts into the run's output directory and returns a JSON-serialisable
summary that the app prints on stdout.
"""

import os
from typing import Dict, List, Optional

import numpy as np

from cli.run_config import RunConfig
from models.aligner import AlignerModel, align, load_checkpoint, save_checkpoint
from models.aligner_training import evaluate, synthetic_self_alignment_dataset, train
from models.data_manager import (DataManager, read_annotations, read_atoms, read_csv_rows, read_manifest,
                                 read_point_cloud, read_smiles_file)
from models.descriptors import fingerprint, max_similarity
from models.diversity_filter import DiversityFilterState
from models.embedding import embed_3d
from models.errors import InvalidInputError, SmilesError
from models.geometry import PointCloud
from models.metrics import eval_generation, shape_novelty
from models.molecule import parse_smiles
from models.registration import ransac_align
from models.reinforcement import StepDiagnostics, rl_run, sample_smiles
from models.scoring import ScoringFunction
from models.sequence_model import SequenceModel, pretrain_prior
from models.surface import sample_surface, sample_surface_detailed
from utils.logger import get_logger
from utils.seeding import substream, substream_seed

logger = get_logger(__name__)

DEFAULT_CORPUS = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "data",
                              "linker_corpus.smi")


def _optional_model(path: Optional[str]) -> Optional[AlignerModel]:
    if not path:
        return None
    logger.info(f"📦 Loading aligner checkpoint {path}")
    return load_checkpoint(path)


def reference_cloud(run: RunConfig) -> Optional[PointCloud]:
    """Shape reference from an XYZ cloud, an atoms file or an embedded SMILES, in that order."""
    if run.input_path("reference_xyz"):
        return read_point_cloud(run.input_path("reference_xyz"))
    if run.input_path("reference_atoms"):
        return sample_surface(read_atoms(run.input_path("reference_atoms")), run.surface)
    smiles = run.inputs.get("reference_smiles")
    if smiles:
        conformer = embed_3d(parse_smiles(smiles), 1, substream_seed(run.seed, "embed"), label="reference")[0]
        return sample_surface(conformer, run.surface)
    return None


def cmd_surface(run: RunConfig, out: DataManager, atoms_path: str) -> Dict:
    atoms = read_atoms(atoms_path)
    result = sample_surface_detailed(atoms, run.surface)
    out.save_point_cloud("surface.xyz", result.cloud, f"surface of {atoms.label or atoms_path}")
    summary = {"atoms": len(atoms), **result.diagnostics()}
    logger.info(f"🌐 {summary['points']} surface points, max level-set residual {result.max_residual:.4f}")
    return summary


def cmd_train_aligner(run: RunConfig, out: DataManager, manifest: Optional[str] = None,
                      baseline: bool = False) -> Dict:
    manifest = manifest or run.input_path("manifest")
    config = run.train
    if manifest:
        dataset, validation = read_manifest(manifest), None
    else:
        synthetic = run.synthetic
        rng = substream(run.seed, "train")
        pairs = synthetic_self_alignment_dataset(synthetic.n_pairs + synthetic.n_validation,
                                                 synthetic.n_points, rng)
        dataset, validation = pairs[:synthetic.n_pairs], pairs[synthetic.n_pairs:] or None
        logger.info(f"🧬 Synthetic dataset: {synthetic.n_pairs} train / {synthetic.n_validation} held-out pairs")

    model = AlignerModel.create(config.d_a, config.h, config.rng_seed)
    trained, trace = train(model, dataset, config, validation)
    save_checkpoint(trained, out.path("aligner.json"))
    out.save_csv("aligner_loss.csv", [record.to_row() for record in trace])

    summary = {
        "epochs": config.epochs,
        "initial_val_loss": trace[0].val_loss,
        "final_val_loss": trace[-1].val_loss,
        "checkpoint": out.path("aligner.json"),
    }
    if baseline and validation:
        iterations = run.scoring.ransac_iterations
        ransac = [ransac_align(q, r, iterations, rng_seed=substream_seed(run.seed, "ransac")).chamfer
                  for q, r in validation]
        summary["aligner_val_chamfer"] = evaluate(trained, validation)
        summary["ransac_val_chamfer"] = float(np.mean(ransac))
    return summary


def cmd_align(run: RunConfig, out: DataManager, query_path: str, reference_path: str,
              checkpoint: Optional[str] = None, use_ransac: bool = False, iterations: int = 1000) -> Dict:
    query = read_point_cloud(query_path)
    reference = read_point_cloud(reference_path)
    model = _optional_model(checkpoint or run.input_path("aligner_checkpoint"))
    if model is None and not use_ransac:
        raise InvalidInputError("align needs an aligner checkpoint or --ransac")

    summary = {}
    if model is not None:
        summary = align(model, query, reference).to_dict()
    if use_ransac:
        baseline = ransac_align(query, reference, iterations, rng_seed=substream_seed(run.seed, "ransac")).to_dict()
        if model is None:
            summary = baseline
        else:
            summary["ransac"] = baseline
    out.save_json("alignment.json", summary)
    return summary


def cmd_score(run: RunConfig, out: DataManager, smiles_path: str, annotations_path: Optional[str] = None,
              reference_path: Optional[str] = None, checkpoint: Optional[str] = None, threads: int = 1) -> Dict:
    smiles = read_smiles_file(smiles_path)
    annotations_path = annotations_path or run.input_path("annotations")
    annotations = read_annotations(annotations_path) if annotations_path else {}
    cloud = read_point_cloud(reference_path) if reference_path else reference_cloud(run)
    model = _optional_model(checkpoint or run.input_path("aligner_checkpoint"))

    scorer = ScoringFunction(run.scoring, model, cloud)
    state = DiversityFilterState.create(run.scoring.bucket_capacity)
    records = scorer.score_batch(smiles, [annotations.get(s) for s in smiles], state, threads)
    out.save_csv("scores.csv", [r.to_row() for r in records])
    valid = [r for r in records if r.valid]
    return {
        "n": len(records),
        "n_valid": len(valid),
        "components": scorer.active_components,
        "mean_score": float(np.mean([r.score for r in records])) if records else None,
    }


def _load_corpus(run: RunConfig) -> List[str]:
    path = run.input_path("corpus") or DEFAULT_CORPUS
    corpus = read_smiles_file(path)
    if not corpus:
        raise InvalidInputError(f"Corpus '{path}' is empty")
    logger.info(f"📚 Corpus: {len(corpus)} SMILES from {path}")
    return corpus


def cmd_rl(run: RunConfig, out: DataManager, threads: int = 1) -> Dict:
    corpus = _load_corpus(run)
    prior_path = run.input_path("prior_checkpoint")
    if prior_path:
        prior = SequenceModel.load(prior_path)
    else:
        prior, history = pretrain_prior(corpus, run.prior)
        prior.save(out.path("prior.json"))
        out.save_csv("prior_perplexity.csv", [{"epoch": i, "perplexity": p} for i, p in enumerate(history)])

    model = _optional_model(run.input_path("aligner_checkpoint"))
    scorer = ScoringFunction(run.scoring, model, reference_cloud(run))
    logger.info(f"🎯 Scoring components: {', '.join(scorer.active_components) or 'none'}")

    def checkpoint(epoch: int, agent: SequenceModel) -> None:
        agent.save(out.path(f"agent_epoch_{epoch}.json"))

    agent, curve = rl_run(run.rl, prior, scorer, threads, checkpoint)
    agent.save(out.path("agent.json"))
    out.save_csv("learning_curve.csv", curve, columns=_curve_columns())

    samples = sample_smiles(agent, run.rl.n_samples, run.rl.temperature, substream(run.seed, "sample"),
                            run.rl.max_length)
    out.save_smiles("samples.smi", samples)
    summary = eval_generation(samples, corpus)
    out.save_json("generation_summary.json", summary)
    return summary


def _curve_columns() -> List[str]:
    empty = StepDiagnostics(0, 0.0, 0.0, 0.0, 0.0, 0.0, {}, {})
    return list(empty.to_row())


def cmd_eval(run: RunConfig, out: DataManager, samples_path: str, reference_path: Optional[str] = None,
             cd_path: Optional[str] = None, cd_column: str = "shape_raw") -> Dict:
    samples = read_smiles_file(samples_path)
    reference = read_smiles_file(reference_path) if reference_path else []
    summary = eval_generation(samples, reference)
    summary.update({"mean_cd": None, "mean_sn": None})

    if cd_path:
        rows = read_csv_rows(cd_path, ("smiles", cd_column))
        reference_fps = []
        for smiles in reference:
            try:
                reference_fps.append(fingerprint(parse_smiles(smiles)))
            except SmilesError:
                continue
        cds, sims = [], []
        for row in rows:
            if row[cd_column] in ("", None):
                continue
            try:
                cd = float(row[cd_column])
            except ValueError as e:
                raise InvalidInputError(f"Malformed value in '{cd_path}': {e}") from e
            try:
                sims.append(max_similarity(fingerprint(parse_smiles(row["smiles"])), reference_fps))
            except SmilesError:
                continue
            cds.append(cd)
        if cds:
            novelty = shape_novelty(cds, sims)
            summary["mean_cd"] = float(np.mean(cds))
            summary["mean_sn"] = novelty.mean
    out.save_json("metrics.json", summary)
    return summary
