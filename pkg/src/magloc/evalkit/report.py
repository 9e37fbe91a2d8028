"""CSV tables and static SVG line charts for sweep results."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

from magloc.evalkit.evaluate import SweepResult
from magloc.evalkit.threshold import ThresholdResult
from magloc.errors import ContractError

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
THRESHOLD_COLUMNS = ("building", "threshold_deg", "mae3d_m", "mae2d_m")


def fmt(v) -> str:
    """6 significant digits; empty cell for missing values."""
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return ""
    return f"{v:.6g}"


def sweep_stem(result: SweepResult) -> str:
    modes = "-".join(result.modes) or "none"
    return f"{result.building}_{result.kind}_{modes}"


def write_sweep_csv(result: SweepResult, path) -> None:
    names = list(result.series)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["sigma_deg", *names])
        for i, s in enumerate(result.sigmas):
            w.writerow([fmt(s), *(fmt(result.series[n][i]) for n in names)])


def read_sweep_csv(path) -> tuple[list[float], dict[str, list[float]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    names = rows[0][1:]
    sigmas = [float(r[0]) for r in rows[1:]]
    series = {n: [float(r[j + 1]) if r[j + 1] else float("nan") for r in rows[1:]] for j, n in enumerate(names)}
    return sigmas, series


def write_threshold_csv(results: Sequence[ThresholdResult], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(THRESHOLD_COLUMNS)
        for r in results:
            w.writerow([r.building, fmt(r.threshold_deg), fmt(r.mae3d), fmt(r.mae2d)])


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=raw)
    first = math.ceil(lo / step) * step
    out, v = [], first
    while v <= hi + 1e-9 * step:
        out.append(round(v, 10))
        v += step
    return out


def sweep_svg(result: SweepResult, title: str | None = None, width: int = 640, height: int = 400) -> str:
    """Line chart: one polyline and one legend entry per series."""
    left, right, top, bottom = 64, 150, 36, 52
    pw, ph = width - left - right, height - top - bottom
    xs = result.sigmas
    finite = [v for vs in result.series.values() for v in vs if math.isfinite(v)]
    x_lo, x_hi = min(xs), max(xs)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    y_hi = max(finite) * 1.08 if finite and max(finite) > 0 else 1.0

    def px(x):
        return left + (x - x_lo) / (x_hi - x_lo) * pw

    def py(y):
        return top + ph - y / y_hi * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{left + pw / 2:.1f}" y="22" text-anchor="middle" font-family="sans-serif" font-size="14">'
        f"{escape(title or f'{result.building} {result.kind}')}</text>",
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for t in _ticks(x_lo, x_hi):
        parts.append(f'<line x1="{px(t):.1f}" y1="{top + ph}" x2="{px(t):.1f}" y2="{top + ph + 5}" stroke="black"/>')
        parts.append(f'<text x="{px(t):.1f}" y="{top + ph + 18}" text-anchor="middle" font-family="sans-serif" font-size="11">{t:g}</text>')
    for t in _ticks(0.0, y_hi):
        parts.append(f'<line x1="{left - 5}" y1="{py(t):.1f}" x2="{left}" y2="{py(t):.1f}" stroke="black"/>')
        parts.append(f'<text x="{left - 8}" y="{py(t) + 4:.1f}" text-anchor="end" font-family="sans-serif" font-size="11">{t:g}</text>')
    parts.append(f'<text x="{left + pw / 2:.1f}" y="{height - 12}" text-anchor="middle" font-family="sans-serif" font-size="12">sigma (deg)</text>')
    parts.append(
        f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {top + ph / 2:.1f})">MAE (m)</text>'
    )
    for k, (name, values) in enumerate(result.series.items()):
        color = PALETTE[k % len(PALETTE)]
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, values) if math.isfinite(y))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"><title>{escape(name)}</title></polyline>')
        ly = top + 14 + 20 * k
        lx = left + pw + 16
        parts.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 24}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text class="legend" x="{lx + 30}" y="{ly + 4}" font-family="sans-serif" font-size="12">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_report(sweeps: Sequence[SweepResult], out_dir, thresholds: Sequence[ThresholdResult] = ()) -> list[Path]:
    """Write one CSV and one SVG per sweep plus a threshold table."""
    if not sweeps and not thresholds:
        raise ContractError("nothing to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for result in sweeps:
        stem = sweep_stem(result)
        csv_path, svg_path = out / f"{stem}.csv", out / f"{stem}.svg"
        write_sweep_csv(result, csv_path)
        svg_path.write_text(sweep_svg(result), encoding="utf-8")
        written += [csv_path, svg_path]
    if thresholds:
        tpath = out / "thresholds.csv"
        write_threshold_csv(thresholds, tpath)
        written.append(tpath)
    return written
