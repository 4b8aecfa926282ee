"""
Command-line interface.

Every subcommand takes --config plus targeted overrides and runs one pipeline phase
(or, for `pipeline`, every incomplete phase) against the configured output directory.

Exit codes: 0 success, 1 configuration validation error, 2 phase failure.
"""
import argparse
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from core.common_paths import DEFAULT_PIPELINE_CONFIG_PATH
from core.configuration.config_parser import ConfigParser
from core.configuration.pipeline_config import PipelineConfig, load_pipeline_config
from core.exceptions import ConfigValidationError, EnhancementError, PhaseError
from core.logger import Log
from core.pipeline import PipelineRunner
from core.pipeline_run import PipelineRun

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_PHASE_FAILURE = 2
LOG_FILE = Path("logs") / "pipeline.log"

# Subcommand -> pipeline phase
COMMAND_PHASES: Dict[str, str] = {
    'phantom-generate': 'data',
    'split': 'split',
    'seg-train': 'segmentation',
    'cyclegan-train': 'cyclegan',
    'trex-train': 'trex',
    'infer': 'inference',
    'ensemble-fit': 'ensemble',
    'evaluate': 'evaluation',
    'hallucinate': 'hallucination',
    'figures': 'figures',
}
PIPELINE_COMMAND = 'pipeline'

HELP: Dict[str, str] = {
    'phantom-generate': "Generate the paired phantom dataset",
    'split': "Split subjects into train and validation sets",
    'seg-train': "Train and freeze the segmentation prior",
    'cyclegan-train': "Train the segmentation-conditioned CycleGAN",
    'trex-train': "Train T-REX (adversarial phase, then supervised fine-tuning)",
    'infer': "Enhance validation subjects with both models",
    'ensemble-fit': "Fit the ensemble weight and write combined outputs",
    'evaluate': "Write metric tables and the HTML report",
    'hallucinate': "Detect signal voids and score hallucination",
    'figures': "Emit per-subject enhancement montages",
    PIPELINE_COMMAND: "Run every incomplete phase in order",
}


def _common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--config', type=Path, default=DEFAULT_PIPELINE_CONFIG_PATH,
                        help="Pipeline YAML configuration (default: %(default)s)")
    parser.add_argument('--set', dest='overrides', action='append', default=[], metavar='SECTION.KEY=VALUE',
                        help="Override one configuration value; repeatable")
    parser.add_argument('--out-dir', type=Path, help="Override out_dir")
    parser.add_argument('--seed', type=int, help="Override the global seed")
    parser.add_argument('--ini', type=Path, help="Framework defaults file replacing config/config.ini")


# Targeted overrides: (flag, type, config key)
TARGETED: Dict[str, List[tuple]] = {
    'phantom-generate': [('--n-phantoms', int, 'data.n_phantoms'), ('--size', int, 'data.phantom.size')],
    'split': [('--n-val', int, 'split.n_val')],
    'seg-train': [('--epochs-augmented', int, 'segmentation.schedule.epochs_augmented'),
                  ('--epochs-plain', int, 'segmentation.schedule.epochs_plain')],
    'cyclegan-train': [('--epochs', int, 'cyclegan.schedule.epochs'),
                       ('--conditioning', str, 'cyclegan.forward.conditioning_mode')],
    'trex-train': [('--epochs-adversarial', int, 'trex.schedule.epochs_adversarial'),
                   ('--epochs-finetune', int, 'trex.schedule.epochs_finetune')],
    'infer': [('--slab-depth', int, 'slab.slab_depth'), ('--stride', int, 'slab.stride'),
              ('--max-workers', int, 'slab.max_workers')],
    'ensemble-fit': [('--grid-step', float, 'ensemble.grid_step'), ('--objective', str, 'ensemble.objective')],
    'evaluate': [('--aggregation', str, 'metrics.aggregation')],
    'hallucinate': [('--flag-threshold', float, 'hallucination.flag_threshold'),
                    ('--void-threshold', float, 'hallucination.void_threshold')],
    'figures': [('--max-subjects', int, 'figures.max_subjects')],
    PIPELINE_COMMAND: [],
}


def _dest(flag: str) -> str:
    return flag.lstrip('-').replace('-', '_')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='ulf-enhance',
                                     description="Segmentation-conditioned ULF to HF MRI enhancement pipeline")
    subparsers = parser.add_subparsers(dest='command', required=True, metavar='COMMAND')
    for command in (*COMMAND_PHASES, PIPELINE_COMMAND):
        sub = subparsers.add_parser(command, help=HELP[command], description=HELP[command])
        _common_arguments(sub)
        for flag, kind, key in TARGETED[command]:
            sub.add_argument(flag, type=kind, help=f"Shortcut for --set {key}=...")
    return parser


def collect_overrides(args: argparse.Namespace) -> List[str]:
    """--set values followed by the subcommand's targeted overrides (which take precedence)."""
    overrides = list(args.overrides)
    for flag, _, key in TARGETED[args.command]:
        value = getattr(args, _dest(flag), None)
        if value is not None:
            overrides.append(f"{key}={value}")
    return overrides


def _report_validation(error: ConfigValidationError) -> None:
    Log.error(error.message)
    for detail in error.details.get('errors', []):
        Log.error(f"  {detail}")


def execute(config: PipelineConfig, command: str, run: Optional[PipelineRun] = None) -> Path:
    """Run one subcommand against a validated configuration."""
    runner = PipelineRunner(config, run)
    if command == PIPELINE_COMMAND:
        return runner.run()
    runner.run_phase(COMMAND_PHASES[command])
    return config.out_dir


def main(argv: Optional[Sequence[str]] = None,
         runner: Callable[[PipelineConfig, str, Optional[PipelineRun]], Path] = execute) -> int:
    """
    CLI entry point.

    @param argv: Arguments (default: sys.argv[1:])
    @param runner: Executes the validated command
    @return: Exit code
    """
    args = build_parser().parse_args(argv)
    if args.ini is not None:
        ConfigParser.set_config_path(args.ini)

    try:
        config = load_pipeline_config(args.config, collect_overrides(args), args.out_dir, args.seed)
        config.check_paths()
    except ConfigValidationError as e:
        _report_validation(e)
        return EXIT_VALIDATION

    Log.switch_log_file(Path(config.out_dir) / LOG_FILE)
    run = PipelineRun(config.out_dir, args.command, config.seed, config=str(args.config),
                      overrides=collect_overrides(args))
    Log.separator()
    Log.step(f"{args.command} (run {run.run_id}, seed {config.seed}, out_dir {config.out_dir})")
    try:
        runner(config, args.command, run)
    except ConfigValidationError as e:
        _report_validation(e)
        run.fail(e)
        return EXIT_VALIDATION
    except PhaseError as e:
        run.fail(e.cause, e.phase)
        return EXIT_PHASE_FAILURE
    except EnhancementError as e:
        run.fail(e)
        return EXIT_PHASE_FAILURE
    run.complete()
    Log.console(f"Artifacts in {config.out_dir}, log in {Log.log_file()}")
    return EXIT_OK
