"""Common path configuration module."""
from pathlib import Path

# Root paths
ROOT_DIR = Path(__file__).parent.parent
CONFIG_DIR = ROOT_DIR / 'config'
LOG_DIR = ROOT_DIR / 'logs'
TEMPLATES_DIR = ROOT_DIR / 'reports' / 'templates'
DEFAULT_CONFIG_PATH = CONFIG_DIR / 'config.ini'
DEFAULT_PIPELINE_CONFIG_PATH = CONFIG_DIR / 'pipeline.yaml'

# Per-phase artifact directories under a run's output directory
PHASE_DIRS = {
    'data': 'data',
    'split': 'split',
    'segmentation': 'segmentation',
    'cyclegan': 'cyclegan',
    'trex': 'trex',
    'inference': 'inference',
    'ensemble': 'ensemble',
    'evaluation': 'evaluation',
    'hallucination': 'hallucination',
    'figures': 'figures',
}


def phase_dir(out_dir: Path, phase: str) -> Path:
    """
    Resolve (and create) the artifact directory of a phase.

    @param out_dir: Run output directory
    @param phase: Phase name, one of PHASE_DIRS
    @return: Existing directory path
    """
    path = Path(out_dir) / PHASE_DIRS[phase]
    path.mkdir(parents=True, exist_ok=True)
    return path
