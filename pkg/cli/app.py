import argparse
import json
import sys
from typing import List, Optional

from cli import commands
from cli.run_config import RunConfig
from models.data_manager import DataManager
from models.errors import ShapeLinkerError
from utils.debug_utils import log_debug_info, resolve_thread_count
from utils.logger import get_logger, set_debug_mode

logger = get_logger(__name__)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON")
    common.add_argument("--seed", type=int, help="run seed (overrides the config)")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--threads", type=int, help="scoring threads (fallback: SHAPELINKER_THREADS)")
    common.add_argument("--debug", "-d", action="store_true", help="verbose logging")

    parser = argparse.ArgumentParser(prog="shapelinker",
                                     description="Shape-aware linker design: surfaces, alignment, scoring and RL.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("surface", parents=[common], help="sample a surface point cloud from an atoms file")
    p.add_argument("atoms", help=".xyz or .sdf file")

    p = sub.add_parser("train-aligner", parents=[common], help="train the attention aligner")
    p.add_argument("--manifest", help="JSON list of query/reference XYZ pairs (default: synthetic data)")
    p.add_argument("--baseline", action="store_true", help="also report the RANSAC baseline on held-out pairs")

    p = sub.add_parser("align", parents=[common], help="align a query cloud onto a reference cloud")
    p.add_argument("query")
    p.add_argument("reference")
    p.add_argument("--checkpoint", help="aligner checkpoint JSON")
    p.add_argument("--ransac", action="store_true", help="run the RANSAC baseline")
    p.add_argument("--iters", type=int, default=1000, help="RANSAC iterations (default: 1000)")

    p = sub.add_parser("score", parents=[common], help="score linker SMILES")
    p.add_argument("smiles", help="SMILES list file")
    p.add_argument("--annotations", help="linker annotation JSON keyed by SMILES")
    p.add_argument("--reference", help="reference surface cloud (.xyz)")
    p.add_argument("--checkpoint", help="aligner checkpoint JSON")

    sub.add_parser("rl", parents=[common], help="pretrain a prior and run policy optimisation")

    p = sub.add_parser("eval", parents=[common], help="generation metrics and shape novelty")
    p.add_argument("samples", help="generated SMILES file")
    p.add_argument("--reference-smiles", help="training/reference SMILES file")
    p.add_argument("--cd", help="CSV with a smiles column and Chamfer distances")
    p.add_argument("--cd-column", default="shape_raw", help="Chamfer column name (default: shape_raw)")
    return parser


def _dispatch(args: argparse.Namespace, run: RunConfig, out: DataManager, threads: int):
    if args.command == "surface":
        return commands.cmd_surface(run, out, args.atoms)
    if args.command == "train-aligner":
        return commands.cmd_train_aligner(run, out, args.manifest, args.baseline)
    if args.command == "align":
        return commands.cmd_align(run, out, args.query, args.reference, args.checkpoint, args.ransac, args.iters)
    if args.command == "score":
        return commands.cmd_score(run, out, args.smiles, args.annotations, args.reference, args.checkpoint,
                                  threads)
    if args.command == "rl":
        return commands.cmd_rl(run, out, threads)
    return commands.cmd_eval(run, out, args.samples, args.reference_smiles, args.cd, args.cd_column)


def main(argv: Optional[List[str]] = None) -> int:
    """Run one command; returns the process exit code (0, 2 input error, 3 numeric failure)."""
    args = build_parser().parse_args(argv)
    if args.debug:
        set_debug_mode(True)
    log_debug_info()

    try:
        run = RunConfig.load(args.config)
        if args.seed is not None:
            run.with_seed(args.seed)
        out = DataManager(args.out)
        out.save_json("resolved_config.json", run.to_dict())
        threads = resolve_thread_count(args.threads)
        summary = _dispatch(args, run, out, threads)
    except ShapeLinkerError as e:
        logger.error(str(e))
        return e.exit_code
    except KeyboardInterrupt:
        logger.warning("Interrupted")
        return 130

    print(json.dumps(summary, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
