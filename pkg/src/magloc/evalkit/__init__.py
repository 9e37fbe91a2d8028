"""MAE, scenario evaluation, sigma sweeps, threshold angles and reports."""

from magloc.evalkit.evaluate import EvalReport, SweepResult, evaluate, series_name, sweep
from magloc.evalkit.metrics import error_summary, mae
from magloc.evalkit.report import emit_report, read_sweep_csv, sweep_svg, write_sweep_csv, write_threshold_csv
from magloc.evalkit.threshold import ThresholdResult, find_threshold

__all__ = [
    "EvalReport",
    "SweepResult",
    "ThresholdResult",
    "emit_report",
    "error_summary",
    "evaluate",
    "find_threshold",
    "mae",
    "read_sweep_csv",
    "series_name",
    "sweep",
    "sweep_svg",
    "write_sweep_csv",
    "write_threshold_csv",
]
