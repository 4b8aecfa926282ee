"""Reports module: metric tables, HTML run reports and slice montages."""

__all__ = ['ReportGenerator', 'ReportData', 'emit_figures']

from .report_generator import ReportData, ReportGenerator
from .figures import emit_figures
