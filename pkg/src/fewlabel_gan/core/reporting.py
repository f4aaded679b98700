"""Report tables, bar charts and preview grids built from metric logs."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from matplotlib.figure import Figure
from PIL import Image

from fewlabel_gan.constants import METRICS_FILE
from fewlabel_gan.core.data_pipeline import to_images
from fewlabel_gan.models.config import Method
from fewlabel_gan.models.manifest import ReportTarget
from fewlabel_gan.models.metrics import MetricRecord, MetricsReport
from fewlabel_gan.utils.logger import setup_logger
from fewlabel_gan.utils.validators import ConfigurationError

logger = setup_logger(__name__)

BASELINE_RUN = "BIGGAN"
REPORT_FILE = "report.txt"
PROVENANCE_FILE = "provenance.json"
BAR_CHART_FILE = "median_fid.png"
CURVES_FILE = "curves.png"

# Fixed PNG metadata so re-rendering identical logs gives identical bytes
_PNG_METADATA = {"Software": None}


# ---------------------------------------------------------------------------
# Preview grids


def save_image_grid(
    images: torch.Tensor, path: Union[str, Path], rows: int = 8, padding: int = 2
) -> Path:
    """Tile [N, C, H, W] images in [-1, 1] into a rows x ceil(N / rows) PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pixels = np.clip((to_images(images) + 1.0) * 127.5, 0, 255).round().astype(np.uint8)
    n, h, w, c = pixels.shape
    cols = -(-n // rows)
    grid = np.zeros((rows * (h + padding) + padding, cols * (w + padding) + padding, c), np.uint8)
    for i in range(n):
        r, q = divmod(i, cols)
        top, left = padding + r * (h + padding), padding + q * (w + padding)
        grid[top : top + h, left : left + w] = pixels[i]
    Image.fromarray(grid.squeeze(-1) if c == 1 else grid).save(path)
    return path


# ---------------------------------------------------------------------------
# Loading logs


def load_records(log_dir: Union[str, Path]) -> List[MetricRecord]:
    """
    All metric records below `log_dir`.

    Raises:
        ConfigurationError: If the directory is missing or holds no metric records.
    """
    log_dir = Path(log_dir)
    if not log_dir.is_dir():
        raise ConfigurationError(f"Log directory not found: {log_dir}")
    records: List[MetricRecord] = []
    for path in sorted(log_dir.rglob(METRICS_FILE)):
        for line in path.read_text().splitlines():
            if line.strip():
                records.append(MetricRecord.model_validate_json(line))
    if not records:
        raise ConfigurationError(f"No metric records under {log_dir}")
    return records


def _method_order(report: MetricsReport) -> Tuple[int, float, str]:
    try:
        index = list(Method).index(Method(report.method))
    except ValueError:
        index = len(Method)
    return index, report.k_percent, report.run_name


def group_reports(records: Sequence[MetricRecord]) -> List[MetricsReport]:
    """One report per run name, in method order."""
    by_run: Dict[str, List[MetricRecord]] = defaultdict(list)
    for record in records:
        by_run[record.run_name].append(record)
    return sorted(
        (MetricsReport.from_records(group) for group in by_run.values()), key=_method_order
    )


def load_reports(log_dir: Union[str, Path]) -> List[MetricsReport]:
    return group_reports(load_records(log_dir))


# ---------------------------------------------------------------------------
# Tables


@dataclass
class ReportTable:
    """A text grid; provenance maps "row / column" to the records behind the cell."""

    title: str
    columns: List[str]
    rows: List[Tuple[str, List[str]]] = field(default_factory=list)
    provenance: Dict[str, dict] = field(default_factory=dict)

    def render(self) -> str:
        header = ["method"] + self.columns
        body = [[label] + cells for label, cells in self.rows]
        widths = [max(len(line[i]) for line in [header] + body) for i in range(len(header))]

        def fmt(line: List[str]) -> str:
            return "  ".join(cell.ljust(width) for cell, width in zip(line, widths)).rstrip()

        rule = "-" * len(fmt(header))
        return "\n".join([self.title, rule, fmt(header), rule] + [fmt(b) for b in body])


def row_label(report: MetricsReport) -> str:
    """Run name without its k% suffix, so k% can be a column."""
    return report.run_name.replace(f"-k{report.k_percent:g}", "")


def column_label(k_percent: float) -> str:
    return f"{k_percent:g}%"


def provenance(report: MetricsReport) -> dict:
    return {
        "run_name": report.run_name,
        "method": report.method,
        "k_percent": report.k_percent,
        "label_mode": report.label_mode,
        "embedder_id": report.embedder_id,
        "seeds": [s.seed for s in report.seeds],
        "steps": [s.step for s in report.seeds],
        "collapsed_seeds": report.collapsed_seeds,
    }


def format_median(report: MetricsReport, metric: str) -> str:
    value = report.median_fid if metric == "fid" else report.median_is
    return f"{value:.1f}"


def format_mean_std(report: MetricsReport, metric: str) -> str:
    """`mean±std` with population std; a single seed shows the mean alone."""
    if metric == "fid":
        mean, std = report.mean_fid, report.std_fid
    else:
        mean, std = report.mean_is, report.std_is
    if len(report.seeds) < 2:
        return f"{mean:.1f}"
    return f"{mean:.1f}±{std:.2f}"


def _grid(
    reports: Sequence[MetricsReport],
    title: str,
    cell,
    label=row_label,
) -> ReportTable:
    columns = sorted({r.k_percent for r in reports})
    table = ReportTable(title=title, columns=[column_label(k) for k in columns])
    rows: Dict[str, Dict[float, MetricsReport]] = {}
    for report in reports:
        rows.setdefault(label(report), {})[report.k_percent] = report
    for name, by_k in rows.items():
        cells = []
        for k in columns:
            report = by_k.get(k)
            cells.append("-" if report is None else cell(report))
            if report is not None:
                table.provenance[f"{name} / {column_label(k)}"] = provenance(report)
        table.rows.append((name, cells))
    return table


def median_grid(reports: Sequence[MetricsReport], metric: str = "fid") -> ReportTable:
    """Median over seeds, methods as rows and k% as columns."""
    return _grid(reports, f"Median {metric.upper()}", lambda r: format_median(r, metric))


def mean_std_grid(reports: Sequence[MetricsReport], metric: str = "fid") -> ReportTable:
    """Mean ± population std over seeds."""
    return _grid(reports, f"Mean±std {metric.upper()}", lambda r: format_mean_std(r, metric))


def soft_vs_hard_grid(
    reports: Sequence[MetricsReport], metric: str = "fid"
) -> Optional[ReportTable]:
    """Hard and soft runs of the same method side by side; None unless both modes exist."""
    modes = {r.label_mode for r in reports if r.label_mode}
    if not {"HARD", "SOFT"} <= modes:
        return None
    paired = [r for r in reports if r.label_mode and not Method(r.method).is_cotrain]
    if not paired:
        return None

    def label(report: MetricsReport) -> str:
        return f"{report.method} {report.label_mode.lower()}"  # type: ignore[union-attr]

    return _grid(
        paired,
        f"Hard vs soft labels, median {metric.upper()}",
        lambda r: format_median(r, metric),
        label=label,
    )


# ---------------------------------------------------------------------------
# Charts


def baseline_median(
    reports: Sequence[MetricsReport], baseline: str = BASELINE_RUN
) -> Optional[float]:
    for report in reports:
        if report.run_name == baseline:
            return report.median_fid
    return None


def bar_chart(
    reports: Sequence[MetricsReport], path: Union[str, Path], baseline: str = BASELINE_RUN
) -> Path:
    """Horizontal bars of median FID, with a vertical line at the baseline's median."""
    path = Path(path)
    names = [r.run_name for r in reports]
    values = [r.median_fid for r in reports]
    fig = Figure(figsize=(7, 0.45 * len(names) + 1.2))
    ax = fig.subplots()
    positions = np.arange(len(names))
    ax.barh(positions, values, color="#4c72b0")
    ax.set_yticks(positions, labels=names)
    ax.invert_yaxis()
    ax.set_xlabel("Median FID")
    reference = baseline_median(reports, baseline)
    if reference is not None:
        ax.axvline(reference, color="#c44e52", linestyle="--", label=baseline)
        ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_METADATA)
    return path


def curves_chart(reports: Sequence[MetricsReport], path: Union[str, Path]) -> Path:
    """Mean FID and IS over seeds against the generator step, one line per run."""
    path = Path(path)
    fig = Figure(figsize=(11, 4))
    ax_fid, ax_is = fig.subplots(1, 2)
    for report in reports:
        by_step: Dict[int, List[MetricRecord]] = defaultdict(list)
        for record in report.history:
            if not record.collapsed:
                by_step[record.step].append(record)
        steps = sorted(by_step)
        fids = [np.mean([r.fid_mean for r in by_step[s]]) for s in steps]
        scores = [np.mean([r.is_mean for r in by_step[s]]) for s in steps]
        ax_fid.plot(steps, fids, label=report.run_name)
        ax_is.plot(steps, scores, label=report.run_name)
    ax_fid.set_xlabel("Generator step")
    ax_fid.set_ylabel("FID (mean over seeds)")
    ax_is.set_xlabel("Generator step")
    ax_is.set_ylabel("IS (mean over seeds)")
    ax_is.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_METADATA)
    return path


# ---------------------------------------------------------------------------
# Full report


@dataclass
class ReportOutput:
    text: Path
    provenance: Path
    tables: List[ReportTable]
    bar_chart: Optional[Path] = None
    curves: Optional[Path] = None


def build_tables(
    reports: Sequence[MetricsReport], targets: Optional[Sequence[ReportTarget]] = None
) -> List[ReportTable]:
    wanted = set(ReportTarget) if targets is None else set(targets)
    tables = []
    if ReportTarget.MEDIAN in wanted:
        tables += [median_grid(reports, "fid"), median_grid(reports, "is")]
    if ReportTarget.MEAN_STD in wanted:
        tables += [mean_std_grid(reports, "fid"), mean_std_grid(reports, "is")]
    if ReportTarget.SOFT_VS_HARD in wanted:
        soft_hard = soft_vs_hard_grid(reports)
        if soft_hard is not None:
            tables.append(soft_hard)
    return tables


def write_report(
    log_dir: Union[str, Path],
    out_dir: Union[str, Path],
    targets: Optional[Sequence[ReportTarget]] = None,
) -> ReportOutput:
    """
    Tables, charts and cell provenance from the metric logs under `log_dir`.

    Only the logs are read, so identical logs give identical files.

    Raises:
        ConfigurationError: If there are no metric logs.
    """
    reports = load_reports(log_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tables = build_tables(reports, targets)
    wanted = set(ReportTarget) if targets is None else set(targets)

    text_path = out_dir / REPORT_FILE
    text_path.write_text("\n\n".join(t.render() for t in tables) + "\n")
    cells = {t.title: t.provenance for t in tables}
    by_run = {r.run_name: provenance(r) for r in reports}
    output = ReportOutput(text=text_path, provenance=out_dir / PROVENANCE_FILE, tables=tables)
    if ReportTarget.BAR_CHART in wanted:
        output.bar_chart = bar_chart(reports, out_dir / BAR_CHART_FILE)
        cells[BAR_CHART_FILE] = by_run
    if ReportTarget.CURVES in wanted:
        output.curves = curves_chart(reports, out_dir / CURVES_FILE)
        cells[CURVES_FILE] = by_run
    output.provenance.write_text(json.dumps(cells, indent=2, sort_keys=True) + "\n")
    logger.info(f"Wrote report for {len(reports)} runs to {out_dir}")
    return output
