"""Module for managing pipeline run lifecycle and provenance."""
import json
import os
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Union

from core.logger import Log
from helpers.data_time_helper import calculate_duration

RUN_FILE = "run.json"


class PipelineRunStatus(Enum):
    """Status of a pipeline run."""
    STARTED = "started"
    COMPLETED = "completed"
    FAILED = "failed"


class PipelineRun:
    """One invocation of a CLI subcommand or of the whole pipeline, persisted as <out_dir>/run.json."""

    def __init__(self, out_dir: Union[str, Path], command: str, seed: Optional[int] = None,
                 run_id: Optional[str] = None, **kwargs):
        """
        Initialize pipeline run.

        @param out_dir: Run output directory
        @param command: Subcommand name
        @param seed: Global seed of the run
        @param run_id: Optional predefined run id
        @param kwargs: Additional properties to store (config path, overrides, ...)
        """
        self.out_dir = Path(out_dir)
        self.command = command
        self.seed = seed
        self.start_time = datetime.now()
        self.run_id = run_id or self._generate_run_id()
        self.status = PipelineRunStatus.STARTED
        self.end_time: Optional[datetime] = None
        self.duration: Optional[float] = None
        self.error: Optional[str] = None
        self.phase: Optional[str] = None
        self.extra = kwargs

        self.git_branch = self._get_git_branch()
        self.git_commit = self._get_git_commit()
        self.build_id = self._get_build_id()

    def _generate_run_id(self) -> str:
        """Generate unique run identifier."""
        return f"{self.command}_{self.start_time.strftime('%Y%m%d_%H%M%S_%f')}"

    @staticmethod
    def _get_build_id() -> Optional[str]:
        """Get CI build ID if available."""
        for var in ['BUILD_NUMBER', 'CI_BUILD_ID', 'BUILD_ID']:
            if var in os.environ:
                return os.environ[var]
        return None

    @staticmethod
    def _get_git_branch() -> Optional[str]:
        """Get current git branch."""
        try:
            import git
            repo = git.Repo(search_parent_directories=True)
            return repo.active_branch.name
        except Exception:
            return None

    @staticmethod
    def _get_git_commit() -> Optional[str]:
        """Get current git commit sha."""
        try:
            import git
            repo = git.Repo(search_parent_directories=True)
            return repo.head.commit.hexsha
        except Exception:
            return None

    @property
    def path(self) -> Path:
        return self.out_dir / RUN_FILE

    def _finish(self, status: PipelineRunStatus) -> None:
        self.end_time = datetime.now()
        self.duration = calculate_duration(self.start_time, self.end_time)
        self.status = status
        self.save()

    def complete(self) -> None:
        """Mark run as completed."""
        self._finish(PipelineRunStatus.COMPLETED)
        Log.info(f"Run {self.run_id} completed in {self.duration:.2f}s")

    def fail(self, error: BaseException, phase: Optional[str] = None) -> None:
        """Mark run as failed, keeping the error text and the failing phase."""
        self.error = f"{type(error).__name__}: {error}"
        self.phase = phase
        self._finish(PipelineRunStatus.FAILED)
        Log.error(f"Run {self.run_id} failed{f' in phase {phase}' if phase else ''}: {self.error}")

    def get_metadata(self) -> Dict[str, Any]:
        """Get run metadata."""
        return {
            'run_id': self.run_id,
            'command': self.command,
            'status': self.status.value,
            'seed': self.seed,
            'start_time': self.start_time.isoformat() if self.start_time else None,
            'end_time': self.end_time.isoformat() if self.end_time else None,
            'duration': self.duration,
            'git_branch': self.git_branch,
            'git_commit': self.git_commit,
            'build_id': self.build_id,
            'error': self.error,
            'phase': self.phase,
            **self.extra,
        }

    def save(self) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.get_metadata(), indent=2, default=str))
        return self.path
