"""
Benchmark report output: full JSON report and a CSV of metric rows.
"""
import logging
from pathlib import Path
from typing import Optional, Tuple, Union

import pandas as pd

from app.models import MetricRow, RunReport

logger = logging.getLogger('dgpselect')

CSV_FLOAT_FORMAT = "%.12g"


def csv_path_for(json_path: Union[str, Path]) -> Path:
    return Path(json_path).with_suffix(".csv")


def rows_frame(report: RunReport) -> pd.DataFrame:
    """Metric rows as a DataFrame with the CSV column order (no timings)."""
    columns = list(MetricRow.CSV_COLUMNS)
    records = [row.model_dump(mode="json", include=set(columns)) for row in report.rows]
    frame = pd.DataFrame.from_records(records, columns=columns)
    # Baseline rows carry no K; keep the column integral
    frame["k"] = frame["k"].astype("Int64")
    return frame


def write_report(report: RunReport, json_path: Union[str, Path],
                 csv_path: Optional[Union[str, Path]] = None) -> Tuple[Path, Path]:
    """
    Write the JSON report and the metric-row CSV next to it.

    Returns:
        Tuple of (json path, csv path)
    """
    json_path = Path(json_path)
    csv_path = Path(csv_path) if csv_path is not None else csv_path_for(json_path)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    csv_path.parent.mkdir(parents=True, exist_ok=True)

    json_path.write_text(report.model_dump_json(indent=2), encoding="utf-8")
    rows_frame(report).to_csv(csv_path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    logger.info("Report written: %s (%d rows, status=%s), %s", json_path, len(report.rows),
                report.status, csv_path)
    return json_path, csv_path


def read_report(path: Union[str, Path]) -> RunReport:
    return RunReport.model_validate_json(Path(path).read_text(encoding="utf-8"))
