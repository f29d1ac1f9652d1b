"""
Command-line interface for the MMHCO-HAR pipeline.

Subcommands: train, eval, ingest, synth, verify, bench, count.
Every subcommand loads the layered configuration first; CLI flags are merged last.
"""

import argparse
import logging
import sys

from pathlib import Path
from typing import Any, Callable, Optional

from app.config.config_models import Settings
from app.config.loader import ConfigLoader
from app.config.logger.logger import setup_logger
from app.services import profiler, trainer, verification
from app.services.events.dataset import read_class_names
from app.services.events.ingest import ingest_dataset
from app.services.events.synth import synth_generate
from app.utils.exceptions import MMHCOError
from app.utils.file_utils import ensure_directory_exists


setup_logger()
logger = logging.getLogger('app.cli.mmhco_cli')

PROJECT_ROOT = Path(__file__).resolve().parents[2]
FUSION_CHOICES = ('route', 'mcf', 'mdf', 'msf', 'random', 'add')


def _common_arguments() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=str, default=None, help='Override config file (YAML or key=value)')
    common.add_argument('--data', type=str, default=None, help='Dataset root')
    common.add_argument('--out', type=str, default=None, help='Output directory')
    common.add_argument('--seed', type=int, default=None, help='Random seed')
    common.add_argument('--frames', type=int, default=None, help='Frames per modality (T)')
    common.add_argument('--resolution', type=int, default=None, help='Square input resolution')
    common.add_argument('--fusion', choices=FUSION_CHOICES, default=None, help='Fusion strategy or policy routing')
    common.add_argument('--loss', choices=('ce', 'literal'), default=None, help='Classification loss')
    common.add_argument('--precision', choices=('f32', 'f64'), default=None, help='Floating point precision')
    modality = common.add_mutually_exclusive_group()
    modality.add_argument('--rgb-only', action='store_true', help='Zero the event stream')
    modality.add_argument('--event-only', action='store_true', help='Zero the RGB stream')
    return common


def create_argument_parser() -> argparse.ArgumentParser:
    """Create and configure the argument parser for the mmhco CLI."""
    parser = argparse.ArgumentParser(description='Heat-conduction action recognition over RGB and event frames')
    common = _common_arguments()
    commands = parser.add_subparsers(dest='command', required=True)

    commands.add_parser('train', parents=[common], help='Train a model and keep the best validation checkpoint')

    evaluate = commands.add_parser('eval', parents=[common], help='Evaluate a checkpoint on one split')
    evaluate.add_argument('--checkpoint', type=str, required=True, help='Checkpoint file (.mmhc)')
    evaluate.add_argument('--split', choices=('train', 'val', 'test'), default='test')
    evaluate.add_argument('--force', action='store_true', help='Load despite an architecture hash mismatch')

    commands.add_parser('ingest', parents=[common], help='Stack raw events of a dataset into .npy frames')
    commands.add_parser('synth', parents=[common], help='Generate the synthetic moving-bar dataset')

    verify = commands.add_parser('verify', parents=[common], help='Run the numerical verification suites')
    verify.add_argument('--suite', choices=verification.SUITES + ('all',), default='all')
    verify.add_argument('--dct-scale', type=float, default=1.0, help='Scale applied to the DCT basis (1.0 = orthonormal)')

    commands.add_parser('bench', parents=[common], help='Time the HCO layer against dense attention')
    commands.add_parser('count', parents=[common], help='Print the analytic FLOPs and parameter report')
    return parser


def run_overrides(args: argparse.Namespace) -> dict[str, Any]:
    """Map CLI flags onto dotted `run.*` config keys; unset flags are left out."""
    flags = {
        'run.seed': args.seed,
        'run.frames': args.frames,
        'run.resolution': args.resolution,
        'run.fusion': args.fusion,
        'run.loss': args.loss,
        'run.precision': args.precision,
        'run.data_root': args.data,
        'run.out_dir': args.out,
    }
    overrides = {key: value for key, value in flags.items() if value is not None}
    if args.rgb_only:
        overrides['run.modality'] = 'rgb'
    elif args.event_only:
        overrides['run.modality'] = 'event'
    return overrides


def load_settings(args: argparse.Namespace) -> Settings:
    return ConfigLoader(
        project_root=str(PROJECT_ROOT), config_path=args.config, overrides=run_overrides(args)
    ).get_settings()


def validate_arguments(args: argparse.Namespace) -> bool:
    """
    Validate command-line arguments.

    Returns:
        bool: True if all arguments are valid, False otherwise
    """
    if args.config and not Path(args.config).is_file():
        logger.error(f"Error: Config file '{args.config}' does not exist")
        return False
    if args.command in ('eval', 'ingest') and args.data and not Path(args.data).exists():
        logger.error(f"Error: Data path '{args.data}' does not exist")
        return False
    if args.command == 'eval' and not Path(args.checkpoint).is_file():
        logger.error(f"Error: Checkpoint '{args.checkpoint}' does not exist")
        return False
    if args.command == 'ingest' and not args.out:
        logger.error('Error: ingest needs --out')
        return False
    if args.command == 'verify' and args.dct_scale <= 0:
        logger.error('Error: --dct-scale must be positive')
        return False
    if args.frames is not None and args.frames < 1:
        logger.error('Error: --frames must be at least 1')
        return False
    if args.resolution is not None and (args.resolution < 4 or args.resolution % 4):
        logger.error('Error: --resolution must be a positive multiple of 4')
        return False
    return True


def run_train(_args: argparse.Namespace, settings: Settings) -> bool:
    result = trainer.train(settings.run)
    logger.info(f'Best checkpoint: {result.best_checkpoint} (epoch {result.best_epoch}, val top-1 {result.best_val_top1:.4f})')
    return True


def run_eval(args: argparse.Namespace, settings: Settings) -> bool:
    overrides: dict[str, Any] = {}
    if args.rgb_only or args.event_only:
        overrides['modality'] = settings.run.modality
    result = trainer.evaluate(
        Path(args.checkpoint),
        data_root=Path(args.data) if args.data else None,
        split=args.split,
        out_dir=Path(args.out) if args.out else None,
        overrides=overrides,
        force=args.force,
    )
    print(result.per_class().to_string(index=False))
    print(f'top1={result.top1:.4f} top5={result.top5:.4f} routes={result.route_counts}')
    return True


def run_ingest(args: argparse.Namespace, settings: Settings) -> bool:
    summary = ingest_dataset(Path(settings.run.data_root), Path(args.out), size=args.resolution)
    return summary.written > 0


def run_synth(args: argparse.Namespace, settings: Settings) -> bool:
    synth = settings.synth
    updates: dict[str, Any] = {}
    if args.frames is not None:
        updates['frames'] = args.frames
    if args.resolution is not None:
        updates['height'] = updates['width'] = args.resolution
    synth = synth.model_copy(update=updates)
    root = Path(args.out or args.data or settings.run.data_root)
    summary = synth_generate(synth, root, seed=settings.run.seed)
    logger.info(f'Wrote {summary.total} samples to {summary.root}: {summary.counts}')
    return True


def run_verify(args: argparse.Namespace, settings: Settings) -> bool:
    report = verification.verify(args.suite, seed=settings.run.seed, dct_scale=args.dct_scale)
    print(report.to_table())
    if args.out:
        path = ensure_directory_exists(args.out) / 'verification.csv'
        report.to_frame().to_csv(path, index=False)
        logger.info(f'Verification report written to {path}')
    for failure in report.failures:
        logger.error(f'{failure.suite}.{failure.name}: {failure.value:.3e} exceeds {failure.threshold:.1e}')
    return report.passed


def run_bench(args: argparse.Namespace, settings: Settings) -> bool:
    report = profiler.scaling_bench(settings.bench, seed=settings.run.seed)
    print(report.to_table())
    if args.out:
        profiler.write_bench_report(report, Path(args.out))
    return True


def _class_count(settings: Settings) -> int:
    if settings.run.num_classes is not None:
        return settings.run.num_classes
    root = Path(settings.run.data_root)
    if (root / 'classes.txt').is_file():
        return len(read_class_names(root))
    return len(settings.synth.classes)


def run_count(args: argparse.Namespace, settings: Settings) -> bool:
    run = settings.run
    report = profiler.count_costs(
        trainer.backbone_config(run),
        _class_count(settings),
        frames=run.frames,
        fusion_mode=run.fusion,
        msf_per_channel=run.msf_per_channel,
    )
    print(report.to_table())
    if args.out:
        profiler.write_cost_report(report, Path(args.out))
    return True


COMMANDS: dict[str, Callable[[argparse.Namespace, Settings], bool]] = {
    'train': run_train,
    'eval': run_eval,
    'ingest': run_ingest,
    'synth': run_synth,
    'verify': run_verify,
    'bench': run_bench,
    'count': run_count,
}


def main(argv: Optional[list[str]] = None) -> int:
    """
    Main CLI entry point.

    Returns:
        int: Exit code (0 for success, 1 for failure)
    """
    parser = create_argument_parser()
    args = parser.parse_args(argv)

    if not validate_arguments(args):
        return 1

    try:
        settings = load_settings(args)
        ok = COMMANDS[args.command](args, settings)
    except MMHCOError as e:
        logger.error(f'{args.command} failed: {e.detail}')
        return 1
    except (ValueError, FileNotFoundError) as e:
        logger.error(f'{args.command} failed: {e}')
        return 1

    if ok:
        logger.info(f'{args.command} completed successfully!')
        return 0
    logger.error(f'{args.command} failed!')
    return 1


if __name__ == '__main__':
    sys.exit(main())
