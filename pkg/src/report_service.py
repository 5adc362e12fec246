"""
Report writer: JSON documents, CSV series and the plain-text run summary.
"""

import csv
import json
import logging
import math
import os
from pathlib import Path
from typing import Any, Dict, List, Sequence, Union

from jinja2 import Environment, FileSystemLoader

from src.schemas import RunReport

logger = logging.getLogger(__name__)

TEMPLATE_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "templates")


def format_cell(value: Any) -> str:
    """CSV rendering: floats with 17 significant digits, booleans lowercase"""
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return format(value, ".17g")
    return str(value)


class ReportService:
    """Writes run artifacts under an output directory."""

    def __init__(self, template_dir: str = TEMPLATE_DIR):
        self.env = Environment(
            loader=FileSystemLoader(template_dir),
            keep_trailing_newline=True,
            trim_blocks=True,
            lstrip_blocks=True,
        )
        logger.debug(f"Report templates loaded from {template_dir}")

    def write_json(self, path: Union[str, Path], payload: Any) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n")
        return path

    def write_csv(self, path: Union[str, Path], header: Sequence[str], rows: Sequence[Sequence[Any]]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([format_cell(value) for value in row])
        logger.debug(f"Wrote {len(rows)} row(s) to {path}")
        return path

    def write_report(self, report: RunReport, out_dir: Union[str, Path]) -> Path:
        return self.write_json(Path(out_dir) / "report.json", report.model_dump(mode="json"))

    def write_timings(self, timings: Dict[str, float], out_dir: Union[str, Path]) -> Path:
        return self.write_json(Path(out_dir) / "timings.json", {name: round(value, 6) for name, value in timings.items()})

    def render_summary(self, report: RunReport) -> str:
        template = self.env.get_template("run_summary.txt")
        sections: List[Dict[str, Any]] = [
            {"name": name, "passed": section.passed, "error": section.error}
            for name, section in sorted(report.sections.items())
        ]
        return template.render(
            name=report.name,
            kind=report.kind,
            version=report.version,
            config_hash=report.config_hash,
            passed=report.passed,
            sections=sections,
            series=sorted(report.series),
        )

    def write_summary(self, report: RunReport, out_dir: Union[str, Path]) -> Path:
        path = Path(out_dir) / "summary.txt"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.render_summary(report), encoding="utf-8")
        return path


# Global report service instance
_report_service = None


def get_report_service() -> ReportService:
    """
    Get or create the global report service instance.

    Returns:
        ReportService: The report service instance
    """
    global _report_service
    if _report_service is None:
        _report_service = ReportService()
    return _report_service
