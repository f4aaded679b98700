"""Tests for report tables, charts and preview grids."""

import json

import numpy as np
import pytest
import torch
from PIL import Image

from fewlabel_gan.constants import METRICS_FILE
from fewlabel_gan.core.reporting import (
    BAR_CHART_FILE,
    CURVES_FILE,
    PROVENANCE_FILE,
    REPORT_FILE,
    baseline_median,
    load_reports,
    median_grid,
    mean_std_grid,
    save_image_grid,
    soft_vs_hard_grid,
    write_report,
)
from fewlabel_gan.core.trainer import write_metric_records
from fewlabel_gan.models.manifest import ReportTarget
from fewlabel_gan.models.metrics import MetricRecord
from fewlabel_gan.utils.validators import ConfigurationError


def _record(run_name, method, seed, fid_value, step=10, k=100.0, mode=None, **extra):
    return MetricRecord(
        step=step,
        seed=seed,
        method=method,
        run_name=run_name,
        k_percent=k,
        label_mode=mode,
        fid_mean=fid_value,
        is_mean=fid_value / 2,
        embedder_id="random-projection-test",
        n_fake=16,
        n_sets=1,
        **extra,
    )


def _write_run(log_dir, records):
    by_seed = {}
    for record in records:
        by_seed.setdefault((record.run_name, record.seed), []).append(record)
    for (run_name, seed), group in by_seed.items():
        write_metric_records(log_dir / run_name / f"seed-{seed}" / METRICS_FILE, group)


@pytest.fixture
def log_dir(tmp_path):
    """BIGGAN at FIDs 1, 2, 3 plus hard and soft S2GAN at 10% with a step history."""
    root = tmp_path / "runs"
    records = [_record("BIGGAN", "BIGGAN", seed, float(seed)) for seed in (1, 2, 3)]
    records += [
        _record("S2GAN-k10", "S2GAN", 1, 40.0, step=0, k=10.0, mode="HARD"),
        _record("S2GAN-k10", "S2GAN", 1, 8.0, k=10.0, mode="HARD"),
        _record("S2GAN-k10-soft", "S2GAN", 1, 9.0, k=10.0, mode="SOFT"),
    ]
    _write_run(root, records)
    return root


def test_median_and_mean_std_cells(log_dir):
    """FIDs 1, 2, 3 give a median of 2.0 and 2.0±0.82 with population std."""
    reports = load_reports(log_dir)
    median = dict(median_grid(reports).rows)
    spread = dict(mean_std_grid(reports).rows)
    assert median["BIGGAN"] == ["-", "2.0"]
    assert spread["BIGGAN"] == ["-", "2.0±0.82"]
    assert median["S2GAN"] == ["8.0", "-"]
    assert spread["S2GAN"] == ["8.0", "-"]


def test_reports_follow_method_order(log_dir):
    names = [r.run_name for r in load_reports(log_dir)]
    assert names[0] == "BIGGAN"
    assert set(names[1:]) == {"S2GAN-k10", "S2GAN-k10-soft"}


def test_cells_carry_provenance(log_dir):
    table = median_grid(load_reports(log_dir))
    cell = table.provenance["BIGGAN / 100%"]
    assert cell["seeds"] == [1, 2, 3]
    assert cell["steps"] == [10, 10, 10]
    assert cell["embedder_id"] == "random-projection-test"


def test_soft_vs_hard_grid(log_dir):
    reports = load_reports(log_dir)
    table = soft_vs_hard_grid(reports)
    assert table is not None
    assert dict(table.rows) == {"S2GAN hard": ["8.0"], "S2GAN soft": ["9.0"]}
    assert soft_vs_hard_grid([r for r in reports if r.label_mode != "SOFT"]) is None


def test_baseline_median(log_dir):
    reports = load_reports(log_dir)
    assert baseline_median(reports) == 2.0
    assert baseline_median(reports, "missing") is None


def test_write_report_outputs(log_dir, tmp_path):
    output = write_report(log_dir, tmp_path / "report")
    text = output.text.read_text()
    assert "Median FID" in text
    assert "2.0±0.82" in text
    for name in (REPORT_FILE, PROVENANCE_FILE, BAR_CHART_FILE, CURVES_FILE):
        assert (tmp_path / "report" / name).is_file()
    cells = json.loads(output.provenance.read_text())
    assert cells["Median FID"]["BIGGAN / 100%"]["seeds"] == [1, 2, 3]
    assert set(cells[BAR_CHART_FILE]) == {"BIGGAN", "S2GAN-k10", "S2GAN-k10-soft"}


def test_write_report_is_bit_identical(log_dir, tmp_path):
    """The same logs rendered twice give byte-identical files."""
    first = write_report(log_dir, tmp_path / "a")
    second = write_report(log_dir, tmp_path / "b")
    for a, b in [
        (first.text, second.text),
        (first.provenance, second.provenance),
        (first.bar_chart, second.bar_chart),
        (first.curves, second.curves),
    ]:
        assert a.read_bytes() == b.read_bytes()


def test_write_report_honors_targets(log_dir, tmp_path):
    output = write_report(log_dir, tmp_path / "report", targets=[ReportTarget.MEDIAN])
    assert [t.title for t in output.tables] == ["Median FID", "Median IS"]
    assert output.bar_chart is None
    assert not (tmp_path / "report" / BAR_CHART_FILE).exists()


def test_collapsed_seed_is_reported(tmp_path):
    root = tmp_path / "runs"
    _write_run(
        root,
        [
            _record("BIGGAN", "BIGGAN", 1, 5.0),
            _record("BIGGAN", "BIGGAN", 2, 7.0),
            _record("BIGGAN", "BIGGAN", 2, 7.0, collapsed=True),
        ],
    )
    cell = median_grid(load_reports(root)).provenance["BIGGAN / 100%"]
    assert cell["collapsed_seeds"] == [2]


def test_empty_log_dir_is_an_error(tmp_path):
    with pytest.raises(ConfigurationError):
        write_report(tmp_path, tmp_path / "report")
    with pytest.raises(ConfigurationError):
        load_reports(tmp_path / "missing")


def test_save_image_grid(tmp_path):
    """Pixel values map [-1, 1] to [0, 255] and tiles are laid out row-major."""
    images = torch.full((6, 3, 4, 4), -1.0)
    images[5] = 1.0
    path = save_image_grid(images, tmp_path / "grid.png", rows=2, padding=1)
    pixels = np.asarray(Image.open(path))
    assert pixels.shape == (2 * 5 + 1, 3 * 5 + 1, 3)
    # image 5 sits in the second row, third column
    assert (pixels[6:10, 11:15] == 255).all()
    assert (pixels[1:5, 1:5] == 0).all()
