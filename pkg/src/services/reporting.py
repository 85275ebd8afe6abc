"""
Writers for scenario reports, FL comparison tables and network traces
"""

import logging
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Union

import pandas as pd

from ..models.schemas import ScenarioReport
from .netsim import SimEvent, export_trace_csv

logger = logging.getLogger(__name__)

COMPARE_COLUMNS = ["round", "setting", "accuracy", "f1", "recall", "precision"]
TIMESERIES_COLUMNS = ["tick", "poisoned_active", "active_intel_total", "ledger_length"]
MITIGATION_COLUMNS = [
    "org",
    "vulnerability_id",
    "detected_at",
    "mitigated_at",
    "time_to_mitigation",
    "detected_locally",
]
FLOAT_FORMAT = "%.6f"


def _csv(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, lineterminator="\n", float_format=FLOAT_FORMAT)


def report_json(report: ScenarioReport) -> str:
    return report.model_dump_json(indent=2) + "\n"


def timeseries_frame(report: ScenarioReport) -> pd.DataFrame:
    return pd.DataFrame(
        [point.model_dump() for point in report.poisoned_series], columns=TIMESERIES_COLUMNS
    )


def mitigation_frame(report: ScenarioReport) -> pd.DataFrame:
    frame = pd.DataFrame(
        [m.model_dump() for m in report.mitigations], columns=MITIGATION_COLUMNS
    )
    # keep unmitigated rows as empty cells rather than floats
    frame["mitigated_at"] = frame["mitigated_at"].astype("Int64")
    return frame


def compare_frame(rows: Sequence[Mapping[str, object]]) -> pd.DataFrame:
    return pd.DataFrame(list(rows), columns=COMPARE_COLUMNS)


def compare_csv(rows: Sequence[Mapping[str, object]]) -> str:
    """fl compare output: round,setting,accuracy,f1,recall,precision"""
    return _csv(compare_frame(rows))


def write_scenario(
    report: ScenarioReport, trace: Sequence[SimEvent], out_dir: Union[str, Path]
) -> Dict[str, Path]:
    """Write report.json, timeseries.csv, mitigations.csv, trace.csv and public_feed.txt"""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "report": out / "report.json",
        "timeseries": out / "timeseries.csv",
        "mitigations": out / "mitigations.csv",
        "trace": out / "trace.csv",
        "public_feed": out / "public_feed.txt",
    }
    paths["report"].write_text(report_json(report), encoding="utf-8")
    paths["timeseries"].write_text(_csv(timeseries_frame(report)), encoding="utf-8")
    paths["mitigations"].write_text(_csv(mitigation_frame(report)), encoding="utf-8")
    export_trace_csv(trace, paths["trace"])
    feed = "".join(line + "\n" for line in report.public_feed)
    paths["public_feed"].write_bytes(feed.encode("utf-8"))
    logger.info(f"💾 Scenario outputs written to {out}")
    return paths


def summarize(report: ScenarioReport) -> List[str]:
    """Short human-readable digest of a report, one fact per line"""
    lines = [
        f"scenario {report.scenario} seed={report.seed} duration={report.duration}",
        f"events {report.events_processed}",
        f"ledger {report.ledger_length} entries chain_ok={report.ledger_chain_ok}",
        f"segmentation {'ok' if report.segmentation_ok else 'VIOLATED'}",
        f"final poisoned {report.final_poisoned_count}",
    ]
    mean_ttm = report.mean_time_to_mitigation()
    if mean_ttm is not None:
        lines.append(f"mean time-to-mitigation (non-detecting) {mean_ttm:.1f}")
    for check in report.exposure_checks:
        lines.append(f"exposure {check.item} org{check.org} verified={check.verified}")
    for row in report.fl_rounds:
        lines.append(f"fl round {row.round} {row.setting} accuracy={row.accuracy:.4f}")
    return lines
