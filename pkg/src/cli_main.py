# -*- coding: utf-8 -*-
"""
TokenGate CLI Main Module
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from src.core.checkpoint import load_checkpoint, load_encoder_weights, save_checkpoint
from src.core.diagnostics import RunManifest, manifest_path
from src.core.evaluation import evaluate_dataset
from src.core.exceptions import (
    ConfigError, ContractViolation, EvaluationError, FormatError, TokenGateError,
    InputError, NumericalError,
)
from src.core.pipeline import Mode
from src.core.synth_data import generate_dataset
from src.core.trainer import Trainer
from src.tools.ablation import run_ablation
from src.tools.gradcheck_suite import run_suite
from src.utils.config import TEXTURES, ConfigManager
from src.utils.dataset_io import read_dataset, write_dataset
from src.utils.image_io import write_pgm
from src.version import APP_NAME, VERSION

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_NUMERICAL = 4

# first match wins
EXIT_CODES = (
    (ConfigError, EXIT_USAGE),
    (InputError, EXIT_INPUT),
    (FormatError, EXIT_INPUT),
    (NumericalError, EXIT_NUMERICAL),
    (EvaluationError, EXIT_NUMERICAL),
    (ContractViolation, EXIT_NUMERICAL),
)

MODE_CHOICES = ["baseline", "guided", "guided-lora", Mode.BASELINE.value, Mode.GUIDED.value]


def setup_logging(verbose: bool):
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[logging.StreamHandler()]
    )


def exit_code_for(error: TokenGateError) -> int:
    for cls, code in EXIT_CODES:
        if isinstance(error, cls):
            return code
    return EXIT_NUMERICAL


def resolve_config(args) -> ConfigManager:
    """Defaults, then ``--config FILE``; callers apply explicit flags on top."""
    config = ConfigManager()
    if getattr(args, 'config', None):
        path = Path(args.config)
        if not path.is_file():
            raise InputError(f"cannot read config file {path}")
        config.load_config(path)
        logger.info(f"Loaded configuration from {path}")
    return config


def write_manifest(args, config: Optional[ConfigManager], seeds: Sequence[int],
                   inputs: Dict[str, Any], outputs: Dict[str, Any], anchor: Path) -> Path:
    manifest = RunManifest(
        command=args.command,
        argv=list(args.argv),
        config=config.to_dict() if config is not None else {},
        seeds=[int(s) for s in seeds],
        inputs={k: str(v) for k, v in inputs.items() if v is not None},
        outputs={k: str(v) for k, v in outputs.items() if v is not None},
    )
    path = manifest.write(manifest_path(anchor))
    logger.debug(f"Manifest written to {path}")
    return path


def with_suffix_name(path: Path, suffix: str) -> Path:
    return path.with_name(path.name + suffix)


# ============================================================================
# COMMAND HANDLERS
# ============================================================================

def run_gen_data_command(args) -> int:
    """Generate a synthetic GDS1 dataset."""
    config = resolve_config(args)
    config.override(
        'synth',
        n_samples=args.n, size=args.size, contrast=args.contrast, seed=args.seed,
        noise_sigma=args.noise_sigma, blob_complexity=args.blob_complexity,
        area_frac=list(args.area_frac) if args.area_frac else None, texture=args.texture,
    )
    samples = generate_dataset(config.synth)
    out = write_dataset(samples, args.out)
    write_manifest(args, config, [config.synth.seed], {}, {"data": out}, out)

    print(f"Generated {len(samples)} samples of {config.synth.size}x{config.synth.size} "
          f"({config.synth.texture} texture) -> {out}")
    return EXIT_OK


def run_train_command(args) -> int:
    """Train one mode for one seed and save the best-on-validation checkpoint."""
    config = resolve_config(args)
    config.override('train', epochs=args.epochs, batch=args.batch, lr_main=args.lr_main,
                    lr_lora=args.lr_lora, weight_decay=args.weight_decay,
                    show_progress=True if args.progress else None,
                    train_guide=False if args.freeze_guide else None)
    config.override('loss', lambda_guide=args.lambda_guide, hinge_enabled=True if args.hinge else None)
    mode = Mode.parse(args.mode)
    seed = args.seed if args.seed is not None else config.train.seeds[0]

    train_set = read_dataset(args.data)
    val_set = read_dataset(args.val)
    encoder_weights = load_encoder_weights(args.encoder_weights) if args.encoder_weights else None

    out = Path(args.out)
    history_path = Path(args.history) if args.history else with_suffix_name(out, '.history.jsonl')
    trainer = Trainer(config, mode, seed, history_path=history_path, encoder_weights=encoder_weights)
    result = trainer.train(train_set, val_set)
    save_checkpoint(result.checkpoint, out)
    write_manifest(args, config, [seed],
                   {"data": args.data, "val": args.val, "encoder_weights": args.encoder_weights},
                   {"checkpoint": out, "history": history_path}, out)

    print("\n" + "=" * 60)
    print(f"{mode.value} seed {seed}: best val DSC {result.checkpoint.val_dsc:.4f} "
          f"at epoch {result.checkpoint.epoch}")
    print(f"Checkpoint: {out}")
    print(f"History:    {history_path}")
    print("=" * 60)
    return EXIT_OK


def run_eval_command(args) -> int:
    """Evaluate a checkpoint and write a MetricsReport JSON."""
    ckpt = load_checkpoint(args.ckpt)
    dataset = read_dataset(args.data)
    report = evaluate_dataset(ckpt, dataset, tta_flips=args.tta)
    out = report.write(args.out)
    write_manifest(args, ckpt.config_manager(), [ckpt.seed],
                   {"checkpoint": args.ckpt, "data": args.data}, {"report": out}, out)

    print(report.summary())
    if report.has_guide:
        print(f"Guide AUC {report.to_dict()['guide_auc_mean']}")
    return EXIT_OK


def run_guide_dump_command(args) -> int:
    """Write the guide mask of every sample as an 8-bit PGM."""
    ckpt = load_checkpoint(args.ckpt)
    if not ckpt.mode.guided:
        raise InputError(f"checkpoint {args.ckpt} is {ckpt.mode.value} and produces no guide")
    dataset = read_dataset(args.data)
    model = ckpt.build_model()
    model.check_resolution(*dataset[0].size)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for sample in dataset:
        _, guide = model.predict_proba(sample.image)
        write_pgm(guide, out_dir / f"guide_{sample.sample_id:04d}.pgm")
        if args.with_inputs:
            write_pgm(sample.image[0], out_dir / f"image_{sample.sample_id:04d}.pgm")
            write_pgm(sample.mask, out_dir / f"mask_{sample.sample_id:04d}.pgm")
    write_manifest(args, ckpt.config_manager(), [ckpt.seed],
                   {"checkpoint": args.ckpt, "data": args.data}, {"dir": out_dir}, out_dir)

    print(f"Wrote {len(dataset)} guide masks to {out_dir}")
    return EXIT_OK


def run_gradcheck_command(args) -> int:
    """Run the gradient check suite and print its table."""
    report = run_suite(full=args.full, seed=args.seed)
    print(report.table())
    print()
    print(report.summary())
    return EXIT_OK if report.is_healthy else EXIT_NUMERICAL


def run_ablation_command(args) -> int:
    """Train and compare modes over a seed set."""
    config = resolve_config(args)
    config.override('train', epochs=args.epochs, seeds=args.seeds)
    config.override('loss', lambda_guide=args.lambda_guide)
    train_set = read_dataset(args.data)
    val_set = read_dataset(args.val)
    shifted_set = read_dataset(args.shifted) if args.shifted else None

    summary = run_ablation(config, train_set, val_set, config.train.seeds,
                           include_lora=args.lora, shifted_set=shifted_set, tta_flips=args.tta)
    out = summary.write(args.out)
    write_manifest(args, config, config.train.seeds,
                   {"data": args.data, "val": args.val, "shifted": args.shifted}, {"summary": out}, out)

    print("\n" + "=" * 60)
    print(summary.summary())
    print("=" * 60)
    return EXIT_OK


def run_rerun_command(args) -> int:
    """Re-execute the command recorded in a manifest."""
    manifest = RunManifest.read(args.manifest)
    if not manifest.argv or manifest.argv[0] == 'rerun':
        raise InputError(f"manifest {args.manifest} does not record a rerunnable command")
    logger.info(f"Re-running '{manifest.command}' from {args.manifest}")
    return run_command(manifest.argv)


COMMANDS = {
    'gen-data': run_gen_data_command,
    'train': run_train_command,
    'eval': run_eval_command,
    'guide-dump': run_guide_dump_command,
    'gradcheck': run_gradcheck_command,
    'ablation': run_ablation_command,
    'rerun': run_rerun_command,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='tokengate', description=f"{APP_NAME} V{VERSION} CLI")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--verbose", "-v", action="store_true", help="Enable verbose logging")
    with_config = argparse.ArgumentParser(add_help=False)
    with_config.add_argument("--config", help="Path to JSON configuration file (flags override it)")

    subparsers = parser.add_subparsers(dest='command', help='Available commands')

    # GEN-DATA command
    gen_parser = subparsers.add_parser('gen-data', parents=[common, with_config],
                                       help='Generate a synthetic GDS1 dataset')
    gen_parser.add_argument("--out", required=True, help="Output GDS1 file")
    gen_parser.add_argument("--n", type=int, help="Number of samples (synth.n_samples)")
    gen_parser.add_argument("--size", type=int, help="Image edge length (synth.size)")
    gen_parser.add_argument("--contrast", type=float, help="Target/background gap in [0,1] (synth.contrast)")
    gen_parser.add_argument("--seed", type=int, help="Dataset seed (synth.seed)")
    gen_parser.add_argument("--noise-sigma", type=float, help="Gaussian noise std (synth.noise_sigma)")
    gen_parser.add_argument("--blob-complexity", type=int, help="Harmonic perturbation count")
    gen_parser.add_argument("--area-frac", type=float, nargs=2, metavar=("LOW", "HIGH"),
                            help="Target area fraction range")
    gen_parser.add_argument("--texture", choices=list(TEXTURES), help="Background texture profile")

    # TRAIN command
    train_parser = subparsers.add_parser('train', parents=[common, with_config],
                                         help='Train a model and save the best checkpoint')
    train_parser.add_argument("--data", required=True, help="Training GDS1 file")
    train_parser.add_argument("--val", required=True, help="Validation GDS1 file")
    train_parser.add_argument("--mode", choices=MODE_CHOICES, default="guided", help="Model mode (default: guided)")
    train_parser.add_argument("--epochs", type=int, help="Epoch count (train.epochs)")
    train_parser.add_argument("--lambda", dest="lambda_guide", type=float, help="Guide loss weight (loss.lambda_guide)")
    train_parser.add_argument("--seed", type=int, help="Run seed (default: first of train.seeds)")
    train_parser.add_argument("--batch", type=int, help="Mini-batch size (train.batch)")
    train_parser.add_argument("--lr-main", type=float, help="Learning rate of TokenBook/UNet/gates")
    train_parser.add_argument("--lr-lora", type=float, help="Learning rate of LoRA adapters")
    train_parser.add_argument("--weight-decay", type=float, help="AdamW decoupled weight decay")
    train_parser.add_argument("--hinge", action="store_true", help="Enable the boundary hinge term")
    train_parser.add_argument("--freeze-guide", action="store_true",
                              help="Keep TokenBook and gates out of the optimizer")
    train_parser.add_argument("--encoder-weights", help="GCK1 file whose encoder group replaces the seeded encoder")
    train_parser.add_argument("--history", help="JSON-lines history path (default: <out>.history.jsonl)")
    train_parser.add_argument("--progress", action="store_true", help="Show a progress bar per epoch")
    train_parser.add_argument("--out", required=True, help="Output GCK1 checkpoint")

    # EVAL command
    eval_parser = subparsers.add_parser('eval', parents=[common], help='Evaluate a checkpoint on a dataset')
    eval_parser.add_argument("--ckpt", required=True, help="GCK1 checkpoint")
    eval_parser.add_argument("--data", required=True, help="GDS1 dataset")
    eval_parser.add_argument("--tta", action="store_true", help="Average probabilities over the four flips")
    eval_parser.add_argument("--out", required=True, help="Output MetricsReport JSON")

    # GUIDE-DUMP command
    dump_parser = subparsers.add_parser('guide-dump', parents=[common], help='Write guide masks as PGM images')
    dump_parser.add_argument("--ckpt", required=True, help="Guided GCK1 checkpoint")
    dump_parser.add_argument("--data", required=True, help="GDS1 dataset")
    dump_parser.add_argument("--out", required=True, help="Output directory")
    dump_parser.add_argument("--with-inputs", action="store_true", help="Also write image and mask PGMs")

    # GRADCHECK command
    grad_parser = subparsers.add_parser('gradcheck', parents=[common], help='Run the gradient check suite')
    grad_parser.add_argument("--full", action="store_true", help="Include the full 16x16 pipeline check")
    grad_parser.add_argument("--seed", type=int, default=0, help="Seed of the random check inputs")

    # ABLATION command
    abl_parser = subparsers.add_parser('ablation', parents=[common, with_config],
                                       help='Compare baseline, guided and LoRA modes over seeds')
    abl_parser.add_argument("--data", required=True, help="Training GDS1 file")
    abl_parser.add_argument("--val", required=True, help="Validation GDS1 file")
    abl_parser.add_argument("--shifted", help="Texture-shifted GDS1 evaluation file")
    abl_parser.add_argument("--seeds", type=int, nargs="+", help="Seed set (train.seeds)")
    abl_parser.add_argument("--epochs", type=int, help="Epoch count (train.epochs)")
    abl_parser.add_argument("--lambda", dest="lambda_guide", type=float, help="Guide loss weight")
    abl_parser.add_argument("--lora", action="store_true", help="Also train guided-lora")
    abl_parser.add_argument("--tta", action="store_true", help="Flip test-time averaging in evaluation")
    abl_parser.add_argument("--out", required=True, help="Output summary JSON")

    # RERUN command
    rerun_parser = subparsers.add_parser('rerun', parents=[common], help='Re-execute a recorded command')
    rerun_parser.add_argument("--manifest", required=True, help="Manifest JSON written by a previous command")

    return parser


def run_command(argv: Sequence[str]) -> int:
    """Parse ``argv``, run one command and return its exit code."""
    argv = list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE

    setup_logging(args.verbose)
    args.argv = argv
    try:
        return COMMANDS[args.command](args)
    except TokenGateError as e:
        code = exit_code_for(e)
        logger.error(f"{args.command} failed: {e}")
        print(f"Error: {e}", file=sys.stderr)
        return code


def main(argv: Optional[List[str]] = None) -> int:
    return run_command(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
