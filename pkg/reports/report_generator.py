"""Report generation module."""
import math
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from jinja2 import Environment, FileSystemLoader, select_autoescape
from markupsafe import Markup

from core.common_paths import TEMPLATES_DIR
from core.logger import Log
from evaluation.metrics import METRIC_NAMES, MetricReport, save_metric_table
from helpers.data_time_helper import format_duration, format_timestamp

REPORT_FILE = "report.html"
TABLE_STEM = "metric_table"
# Larger is better for SSIM, PSNR and the weighted scores; smaller for MAE and NMSE
HIGHER_IS_BETTER = {'ssim': True, 'psnr_db': True, 'mae': False, 'nmse': False, 'weighted': True}
COLUMN_HEADERS: Dict[str, str] = {
    'ssim': 'SSIM',
    'psnr_db': 'PSNR (dB)',
    'mae': 'MAE',
    'nmse': 'NMSE',
    'weighted': 'Weighted score',
}


@dataclass
class ReportData:
    """Container for report data."""
    reports: List[MetricReport]
    run: Dict[str, Any] = field(default_factory=dict)
    ensemble: Optional[Dict[str, Any]] = None
    hallucination: List[Dict[str, Any]] = field(default_factory=list)
    figures: List[str] = field(default_factory=list)


class ReportGenerator:
    """Renders the results table (unmasked | masked, one column per model) as HTML, CSV and JSON."""

    def __init__(self, template_dir: Path = TEMPLATES_DIR):
        """
        Initialize report generator.

        @param template_dir: Directory holding metric_report.html
        """
        if not Path(template_dir).is_dir():
            raise ValueError(f"Template directory does not exist: {template_dir}")
        self.jinja_env = Environment(
            loader=FileSystemLoader(str(template_dir)),
            autoescape=select_autoescape(['html', 'xml'])
        )
        self.jinja_env.filters['format_duration'] = format_duration
        self.jinja_env.filters['format_timestamp'] = format_timestamp
        self.jinja_env.filters['metric'] = self._format_metric
        self.jinja_env.globals['column_header'] = COLUMN_HEADERS.get

    @staticmethod
    def _format_metric(value: Optional[float], digits: int = 3) -> str:
        if value is None:
            return "n/a"
        if isinstance(value, str):
            return value
        if math.isinf(value):
            return "inf"
        return f"{value:.{digits}f}"

    @staticmethod
    def _value(report: MetricReport, metric: str, region: str) -> Optional[float]:
        return getattr(report, f"{metric}_{region}")

    def _rows(self, reports: Sequence[MetricReport]) -> List[Dict[str, Any]]:
        """One row per (metric, region); the best model of each row is highlighted."""
        rows = []
        for region in ("unmasked", "masked"):
            for metric in (*METRIC_NAMES, 'weighted'):
                values = [self._value(r, metric, region) for r in reports]
                known = [v for v in values if v is not None]
                best = None
                if known:
                    best = max(known) if HIGHER_IS_BETTER[metric] else min(known)
                cells = []
                for value in values:
                    text = self._format_metric(value)
                    cells.append(Markup(f"<strong>{text}</strong>") if value is not None and value == best else text)
                rows.append({'region': region, 'metric': metric, 'cells': cells})
        return rows

    def generate_report(self, data: ReportData, output_dir: Path) -> Path:
        """
        Write metric_table.csv/json and report.html into output_dir.

        @param data: Metric reports (one per model, raw ULF baseline first when present) and run details
        @param output_dir: Output directory for the report
        @return: Path to the HTML report
        """
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        Log.info(f"Rendering metric report for {[r.source for r in data.reports]} to {output_dir}")

        save_metric_table(data.reports, output_dir, TABLE_STEM)
        template = self.jinja_env.get_template('metric_report.html')
        content = template.render(
            sources=[r.source for r in data.reports],
            rows=self._rows(data.reports),
            subjects=sorted({s for r in data.reports for s in r.subject_ids}),
            aggregation=data.reports[0].aggregation if data.reports else None,
            run=data.run,
            ensemble=data.ensemble,
            hallucination=data.hallucination,
            figures=data.figures,
            current_time=datetime.now(),
        )
        output_file = output_dir / REPORT_FILE
        output_file.write_text(content)
        Log.info(f"Generated report: {output_file}")
        return output_file
