"""
Pipeline orchestration.

Phases run in a fixed order, each writing under <out_dir>/<phase>/:

    data -> split -> segmentation -> cyclegan -> trex -> inference -> ensemble
         -> evaluation -> hallucination -> figures

Completed phases are recorded in <out_dir>/pipeline_state.json together with the
hash of the frozen segmentation prior; run() resumes at the first incomplete phase.
A FileLock on <out_dir>/.pipeline.lock serialises invocations on one output directory.
"""
import json
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from filelock import FileLock
from pydantic import BaseModel, Field

from core.checkpoints import BEST_CHECKPOINT
from core.common_paths import phase_dir
from core.configuration.pipeline_config import PipelineConfig
from core.exceptions import EmptyDatasetError, FrozenWeightsError, MissingPairedDataError
from core.logger import Log
from core.pipeline_run import PipelineRun
from data.phantom import generate_phantom
from data.volume import DatasetSplit, Enhancement, Subject
from data.volume_io import (
    SPLIT_FILE, list_subjects, load_dataset, load_enhancement, load_split, save_enhancement, save_split,
    save_subject, split_dataset
)
from evaluation.ensemble import COMBINED_SOURCE, EnsembleWeight, combine_enhancements, fit_weight, fitting_pairs
from evaluation.hallucination import (
    HallucinationReport, brain_mask_from_labels, brain_mask_from_probabilities, hallucination_report
)
from evaluation.metrics import MetricReport
from helpers.decorators import phase
from helpers.torch_helper import assert_frozen, configure_runtime, to_batch
from reports.figures import emit_figures
from reports.report_generator import ReportData, ReportGenerator
from training.cyclegan_trainer import load_cyclegan, train_cyclegan
from training.inference import infer_cyclegan, infer_trex, segmentation_probs
from training.segmentation_trainer import load_segmentation, train_segmentation
from training.trex_trainer import load_trex, train_trex
from training.validation import baseline_report, require_pairs, validation_report

PHASE_ORDER = ("data", "split", "segmentation", "cyclegan", "trex", "inference", "ensemble",
               "evaluation", "hallucination", "figures")
# Phases that train on or score against HF volumes
PAIRED_PHASES = ("cyclegan", "trex", "ensemble", "evaluation")
MODEL_SOURCES = ("cyclegan", "trex")
STATE_FILE = "pipeline_state.json"
LOCK_FILE = ".pipeline.lock"
WEIGHT_FILE = "weight.json"
HALLUCINATION_SUMMARY = "summary.json"


class PipelineState(BaseModel):
    """Completed phases and the frozen-prior hash of one output directory."""
    completed: List[str] = Field(default_factory=list)
    seg_hash: Optional[str] = None

    @classmethod
    def load(cls, path: Path) -> 'PipelineState':
        if not path.is_file():
            return cls()
        return cls.model_validate_json(path.read_text())

    def save(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.model_dump_json(indent=2))

    def mark(self, name: str) -> None:
        """Record a completed phase; phases after it become stale and are dropped."""
        position = PHASE_ORDER.index(name)
        self.completed = [p for p in self.completed if PHASE_ORDER.index(p) < position] + [name]

    def is_done(self, name: str) -> bool:
        return name in self.completed


class PipelineRunner:
    """Runs pipeline phases against one configuration and output directory."""

    def __init__(self, config: PipelineConfig, run: Optional[PipelineRun] = None):
        self.config = config
        self.run_record = run
        self.out_dir = Path(config.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.state_path = self.out_dir / STATE_FILE
        self.state = PipelineState.load(self.state_path)
        self.device = configure_runtime(config.device, config.deterministic)
        self._subjects: Optional[Dict[str, Subject]] = None
        self._seg: Optional[Tuple[torch.nn.Module, str]] = None
        self._enhancements: Dict[str, List[Enhancement]] = {}
        self._hallucination: List[HallucinationReport] = []
        self._figures: List[Path] = []
        self.reports: List[MetricReport] = []

    # Artifacts ---------------------------------------------------------------

    def phase_path(self, name: str) -> Path:
        return phase_dir(self.out_dir, name)

    def subjects(self) -> Dict[str, Subject]:
        if self._subjects is None:
            root = self.config.dataset_root
            subjects = load_dataset(root, normalization=self.config.data.normalization)
            if not subjects:
                raise EmptyDatasetError(f"dataset at {root}")
            self._subjects = {s.subject_id: s for s in subjects}
        return self._subjects

    def split(self) -> DatasetSplit:
        return load_split(self.phase_path("split") / SPLIT_FILE)

    def datasets(self) -> Tuple[List[Subject], List[Subject]]:
        """(train, val) subjects of the stored split."""
        split, subjects = self.split(), self.subjects()
        return [subjects[i] for i in split.train], [subjects[i] for i in split.val]

    def segmentation(self) -> Tuple[torch.nn.Module, str]:
        """
        Frozen segmentation prior from its best checkpoint.

        @raises FrozenWeightsError: the stored weights differ from the hash recorded at training time
        """
        if self._seg is None:
            model, weights = load_segmentation(self.phase_path("segmentation") / BEST_CHECKPOINT, self.device)
            if self.state.seg_hash is not None and weights != self.state.seg_hash:
                raise FrozenWeightsError("Segmentation checkpoint changed since training",
                                         self.state.seg_hash, weights)
            self._seg = (model, weights)
        return self._seg

    def _slab_schedule(self, schedule):
        if schedule.slab_depth is None:
            return schedule.model_copy(update={'slab_depth': self.config.slab.slab_depth})
        return schedule

    def _enhancement_root(self, source: str) -> Path:
        return self.phase_path("ensemble" if source == COMBINED_SOURCE else "inference")

    def enhancements(self, source: str) -> List[Enhancement]:
        """Enhanced validation subjects of one model, read back from the inference artifacts."""
        if source not in self._enhancements:
            root = self._enhancement_root(source)
            self._enhancements[source] = [load_enhancement(root, source, i) for i in self.split().val]
        return self._enhancements[source]

    def ensemble_weight(self) -> EnsembleWeight:
        return EnsembleWeight.load(self.phase_path("ensemble") / WEIGHT_FILE)

    def _save_state(self, name: str) -> None:
        self.state.mark(name)
        self.state.save(self.state_path)

    # Phases ------------------------------------------------------------------

    @phase(name="data", content="Prepare dataset")
    def prepare_data(self) -> List[str]:
        data = self.config.data
        root = self.config.dataset_root
        if data.generate_phantoms:
            root.mkdir(parents=True, exist_ok=True)
            for index in range(data.n_phantoms):
                subject = generate_phantom(data.phantom, self.config.phantom_seed(index), f"phantom_{index:03d}")
                save_subject(subject, root)
            Log.info(f"{data.n_phantoms} phantoms written to {root}")
        ids = list_subjects(root)
        if not ids:
            raise EmptyDatasetError(f"dataset at {root}")
        self._subjects = None
        return ids

    @phase(name="split", content="Split train and validation subjects")
    def make_split(self) -> DatasetSplit:
        split = split_dataset(list_subjects(self.config.dataset_root), self.config.split.n_val,
                              self.config.split.seed)
        save_split(split, self.phase_path("split") / SPLIT_FILE)
        Log.info(f"Split: train {list(split.train)}, val {list(split.val)}")
        return split

    @phase(name="preflight", content="Check paired data before training")
    def preflight(self) -> None:
        """@raises MissingPairedDataError: a phase needing HF volumes is pending and some subject has none"""
        pending = [p for p in PAIRED_PHASES if not self.state.is_done(p)]
        if not pending:
            return
        train, val = self.datasets()
        try:
            require_pairs(train, val)
        except MissingPairedDataError:
            Log.error(f"Phases {pending} need paired HF volumes")
            raise

    @phase(name="segmentation", content="Train and freeze the segmentation prior")
    def train_segmentation(self):
        section = self.config.segmentation
        train, val = self.datasets()
        result = train_segmentation(train, val, section.model, section.schedule, section.augmentation,
                                    out_dir=self.phase_path("segmentation"), device=self.device, resume=True)
        self._seg = (result.model, result.weights_hash)
        self.state.seg_hash = result.weights_hash
        return result

    @phase(name="cyclegan", content="Train the segmentation-conditioned CycleGAN")
    def train_cyclegan(self):
        section = self.config.cyclegan
        train, val = self.datasets()
        seg_model, seg_hash = self.segmentation()
        return train_cyclegan(train, val, seg_model, section.forward, section.backward, section.weights,
                              self._slab_schedule(section.schedule), section.discriminator,
                              out_dir=self.phase_path("cyclegan"), seg_hash=seg_hash, resume=True,
                              aggregation=self.config.metrics.aggregation)

    @phase(name="trex", content="Train T-REX")
    def train_trex(self):
        section = self.config.trex
        train, val = self.datasets()
        seg_model, seg_hash = self.segmentation()
        return train_trex(train, val, seg_model, section.model, section.content,
                          self._slab_schedule(section.schedule), section.discriminator, section.lambda_adv,
                          out_dir=self.phase_path("trex"), seg_hash=seg_hash, resume=True,
                          aggregation=self.config.metrics.aggregation)

    @phase(name="inference", content="Enhance validation subjects")
    def run_inference(self) -> Dict[str, List[Enhancement]]:
        slab = self.config.slab
        seg_model, seg_hash = self.segmentation()
        generator = load_cyclegan(self.phase_path("cyclegan") / BEST_CHECKPOINT, self.device).g_ulf_to_hf
        network = load_trex(self.phase_path("trex") / BEST_CHECKPOINT, self.device)
        _, val = self.datasets()
        root = self.phase_path("inference")

        outputs: Dict[str, List[Enhancement]] = {source: [] for source in MODEL_SOURCES}
        for subject in val:
            outputs["cyclegan"].append(infer_cyclegan(generator, seg_model, subject, slab.slab_depth, slab.stride,
                                                      slab.per_slab_conditioning, slab.max_workers))
            outputs["trex"].append(infer_trex(network, seg_model, subject, slab.slab_depth, slab.stride,
                                              slab.trex_whole_volume))
            for source in MODEL_SOURCES:
                save_enhancement(outputs[source][-1], root)
            Log.info(f"Enhanced {subject.subject_id}")
        assert_frozen(seg_model, seg_hash)
        self._enhancements.update(outputs)
        return outputs

    @phase(name="ensemble", content="Fit the ensemble weight")
    def fit_ensemble(self) -> EnsembleWeight:
        section = self.config.ensemble
        _, val = self.datasets()
        cyclegan, trex = self.enhancements("cyclegan"), self.enhancements("trex")
        weight = fit_weight(fitting_pairs(cyclegan, trex, val), section.objective, section.grid_step,
                            section.per_contrast, fitted_on="validation")
        root = self.phase_path("ensemble")
        weight.save(root / WEIGHT_FILE)
        combined = [combine_enhancements(a, b, weight) for a, b in zip(cyclegan, trex)]
        for enhancement in combined:
            save_enhancement(enhancement, root)
        self._enhancements[COMBINED_SOURCE] = combined
        return weight

    @phase(name="evaluation", content="Score the raw ULF baseline and every model")
    def evaluate(self) -> List[MetricReport]:
        aggregation = self.config.metrics.aggregation
        _, val = self.datasets()
        reports = [baseline_report(val, aggregation)]
        for source in (*MODEL_SOURCES, COMBINED_SOURCE):
            by_id = {e.subject_id: e for e in self.enhancements(source)}
            reports.append(validation_report(lambda s, table=by_id: table[s.subject_id], val, source, aggregation))
        directory = self.phase_path("evaluation")
        for report in reports:
            report.save(directory)
            Log.info(f"{report.source:>9}: weighted masked {report.weighted_masked}, "
                     f"unmasked {report.weighted_unmasked}")
        self.reports = reports
        self.render_report()
        return reports

    @phase(name="hallucination", content="Measure hallucination in signal voids")
    def report_hallucination(self) -> List[HallucinationReport]:
        section = self.config.hallucination
        _, val = self.datasets()
        directory = self.phase_path("hallucination")
        brains = self._brain_masks(val)
        results = []
        for source in section.sources:
            by_id = {e.subject_id: e for e in self.enhancements(source)}
            for subject in val:
                if subject.subject_id not in brains:
                    continue
                results.append(hallucination_report(by_id[subject.subject_id], subject,
                                                    brain_mask=brains[subject.subject_id],
                                                    flag_threshold=section.flag_threshold,
                                                    void_threshold=section.void_threshold, out_dir=directory))
        (directory / HALLUCINATION_SUMMARY).write_text(
            json.dumps([r.model_dump(mode='json') for r in results], indent=2))
        flagged = [f"{r.subject_id}/{r.source}" for r in results if r.flagged]
        Log.info(f"Hallucination: {len(flagged)} of {len(results)} reports flagged {flagged or ''}")
        self._hallucination = results
        return results

    @phase(name="figures", content="Emit enhancement montages")
    def make_figures(self) -> List[Path]:
        _, val = self.datasets()
        if self.config.figures.max_subjects is not None:
            val = val[:self.config.figures.max_subjects]
        seg_model, _ = self.segmentation()
        probs = {s.subject_id: self._probabilities(seg_model, s) for s in val}
        outputs = {source: self.enhancements(source) for source in (*MODEL_SOURCES, COMBINED_SOURCE)}
        self._figures = emit_figures(val, outputs, self.phase_path("figures"), probs)
        self.render_report()
        return self._figures

    def _probabilities(self, seg_model: torch.nn.Module, subject: Subject) -> np.ndarray:
        return segmentation_probs(seg_model, to_batch(subject.stack("ulf"), self.device))[0].cpu().numpy()

    def _brain_masks(self, subjects: Sequence[Subject]) -> Dict[str, np.ndarray]:
        """
        Brain region per subject: labelmap brain classes, else the frozen prior's prediction.

        Subjects whose predicted brain is empty are left out.
        """
        masks = {}
        for subject in subjects:
            if subject.labelmap is not None:
                masks[subject.subject_id] = brain_mask_from_labels(subject.labelmap)
                continue
            seg_model, _ = self.segmentation()
            predicted = brain_mask_from_probabilities(self._probabilities(seg_model, subject))
            if not predicted.any():
                Log.warning(f"{subject.subject_id}: predicted brain mask is empty, hallucination report skipped")
                continue
            Log.info(f"{subject.subject_id} has no labelmap, brain mask predicted by the segmentation prior")
            masks[subject.subject_id] = predicted
        return masks

    # Orchestration -----------------------------------------------------------

    def render_report(self) -> Path:
        """(Re)render <out_dir>/evaluation/report.html from the artifacts produced so far."""
        directory = self.phase_path("evaluation")
        if not self.reports:
            self.reports = [MetricReport.from_json((directory / f"metrics_{source}.json").read_text())
                            for source in ("ulf", *MODEL_SOURCES, COMBINED_SOURCE)]
        ensemble = None
        if (self.phase_path("ensemble") / WEIGHT_FILE).is_file():
            ensemble = self.ensemble_weight().model_dump(mode='json')
        hallucination = [r.model_dump(mode='json') for r in self._hallucination]
        summary = self.phase_path("hallucination") / HALLUCINATION_SUMMARY
        if not hallucination and summary.is_file():
            hallucination = json.loads(summary.read_text())
        figures = [Path(p).relative_to(self.out_dir).as_posix() for p in self._figures]
        data = ReportData(reports=self.reports,
                          run=self.run_record.get_metadata() if self.run_record else {'seed': self.config.seed},
                          ensemble=ensemble, hallucination=hallucination,
                          figures=["../" + f for f in figures])
        return ReportGenerator().generate_report(data, directory)

    def phases(self) -> Dict[str, Callable]:
        return {
            "data": self.prepare_data,
            "split": self.make_split,
            "segmentation": self.train_segmentation,
            "cyclegan": self.train_cyclegan,
            "trex": self.train_trex,
            "inference": self.run_inference,
            "ensemble": self.fit_ensemble,
            "evaluation": self.evaluate,
            "hallucination": self.report_hallucination,
            "figures": self.make_figures,
        }

    def run_phase(self, name: str):
        """
        Run one phase unconditionally (training phases resume from their last checkpoint)
        and record it as completed.
        """
        with FileLock(str(self.out_dir / LOCK_FILE)):
            self.config.save()
            if name in PAIRED_PHASES:
                self.preflight()
            result = self.phases()[name]()
            self._save_state(name)
            return result

    def run(self, phases: Optional[Sequence[str]] = None) -> Path:
        """
        Run every incomplete phase in order.

        @param phases: Restrict to these phases (default: all)
        @return: Output directory
        @raises PhaseError: a phase failed; artifacts of earlier phases are kept
        """
        self.config.check_paths()
        selected = [p for p in PHASE_ORDER if phases is None or p in phases]
        with FileLock(str(self.out_dir / LOCK_FILE)):
            self.config.save()
            Log.info(f"Pipeline in {self.out_dir}: already completed {self.state.completed or 'nothing'}")
            checked = False
            for name in selected:
                if self.state.is_done(name):
                    Log.info(f"Phase {name} already completed, skipped")
                    continue
                if not checked and name in ("segmentation", *PAIRED_PHASES):
                    self.preflight()
                    checked = True
                self.phases()[name]()
                self._save_state(name)
        return self.out_dir


def run_pipeline(config: PipelineConfig, run: Optional[PipelineRun] = None) -> Path:
    """
    Execute all phases (resuming completed ones) and return the artifact directory.

    @raises ConfigValidationError: referenced paths are missing
    @raises PhaseError: a phase failed
    """
    return PipelineRunner(config, run).run()
