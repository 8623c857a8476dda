"""Report files: design JSON and CSV tables with deterministic bytes.

CSV files use ',' as delimiter, '.' as decimal separator and LF line endings.
Floats are written with the shortest representation that round-trips.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable

from .errors import ValidationError
from .optimizer import ComparisonRow, OptimResult
from .scenario import save_design
from .sensitivity import SensitivityReport
from .simulation import MSERow


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: Path, header: Iterable[str], rows: Iterable[Iterable]) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(header))
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc
    return path


def write_sensitivity_csv(report: SensitivityReport, path) -> Path:
    """One row per grid point (the uniform grid plus the support points)."""
    return _write_csv(Path(path), ("x", "d_pi"), zip(report.grid, report.d_values))


def write_comparison_csv(rows: Iterable[ComparisonRow], path) -> Path:
    return _write_csv(Path(path), ("design", "phi", "efficiency", "error"), ((r.name, r.phi, r.efficiency, r.error) for r in rows))


def write_mse_csv(rows: Iterable[MSERow], path) -> Path:
    return _write_csv(
        Path(path),
        ("design", "method", "truth_id", "reps", "mse", "n_invalid"),
        ((r.design, r.method, r.truth_id, r.reps, r.mse, r.n_invalid) for r in rows),
    )


def write_design_json(design, path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        save_design(design, path)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc
    return path


def write_reports(result, out_dir) -> list:
    """Write the files belonging to ``result`` into ``out_dir``.

    * :class:`OptimResult`: ``design.json`` and ``sensitivity.csv``
    * :class:`SensitivityReport`: ``sensitivity.csv``
    * list of :class:`ComparisonRow`: ``comparison.csv``
    * list of :class:`MSERow`: ``mse.csv``
    """
    out = Path(out_dir)
    if isinstance(result, OptimResult):
        return [write_design_json(result.design, out / "design.json"), write_sensitivity_csv(result.sensitivity, out / "sensitivity.csv")]
    if isinstance(result, SensitivityReport):
        return [write_sensitivity_csv(result, out / "sensitivity.csv")]
    if isinstance(result, (list, tuple)) and result:
        if all(isinstance(r, ComparisonRow) for r in result):
            return [write_comparison_csv(result, out / "comparison.csv")]
        if all(isinstance(r, MSERow) for r in result):
            return [write_mse_csv(result, out / "mse.csv")]
    raise ValidationError(f"nothing to report for {type(result).__name__}")
