"""
JSON and CSV output for experiment runs
"""
import json
import logging
import math
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from .config import REPORT_VERSION
from .eigen import Spectrum

logger = logging.getLogger(__name__)

EIGENVALUE_COLUMNS = ["index", "eigenvalue", "residual", "cluster_id"]


def _jsonable(value: Any) -> Any:
    """numpy scalars and arrays to plain Python; non-finite floats to strings"""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.generic):
        return _jsonable(value.item())
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    return value


class ReportGenerator:
    """Writes run reports, eigenvalue tables and plot data"""

    def __init__(self, generator_name: str = "spectral-ordering"):
        self.generator_name = generator_name

    def generate_json_report(self, results: Dict[str, Any], output_path: Optional[Union[str, Path]] = None) -> str:
        """
        Structured JSON report

        Args:
            results: Run payload (already converted with to_dict)
            output_path: Optional output file path

        Returns:
            JSON report string
        """
        report = {
            "metadata": {
                "generated_at": datetime.now().isoformat(),
                "report_version": REPORT_VERSION,
                "generator": self.generator_name,
            },
            **_jsonable(results),
        }
        json_report = json.dumps(report, indent=2, ensure_ascii=False)

        if output_path:
            path = Path(output_path)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json_report, encoding="utf-8")
            logger.info(f"📄 JSON report written to {path}")
        return json_report

    @staticmethod
    def eigenvalue_table(spectrum: Spectrum) -> pd.DataFrame:
        return pd.DataFrame({
            "index": np.arange(1, spectrum.count + 1),
            "eigenvalue": spectrum.eigenvalues,
            "residual": spectrum.residuals,
            "cluster_id": spectrum.cluster_ids,
        }, columns=EIGENVALUE_COLUMNS)

    def write_eigenvalue_csv(self, spectra: Dict[str, Spectrum],
                             output_path: Union[str, Path]) -> List[Path]:
        """One table per boundary condition; several conditions get a `_<bc>` suffix"""
        path = Path(output_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        written = []
        for bc, spectrum in spectra.items():
            target = path if len(spectra) == 1 else path.with_name(f"{path.stem}_{bc}{path.suffix or '.csv'}")
            self.eigenvalue_table(spectrum).to_csv(target, index=False, float_format="%.15g")
            written.append(target)
            logger.info(f"📄 {bc} eigenvalues written to {target}")
        return written

    def write_plot_data(self, rows: List[Dict[str, Any]], output_path: Union[str, Path]) -> Optional[Path]:
        """Long-format table with one row per (series, refinement level)"""
        if not rows:
            logger.warning("⚠️  No plot data to write")
            return None
        path = Path(output_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame = pd.DataFrame(rows)
        leading = [c for c in ("series", "level", "mesh_size_h") if c in frame.columns]
        frame = frame[leading + [c for c in frame.columns if c not in leading]]
        frame.to_csv(path, index=False, float_format="%.15g")
        logger.info(f"📈 Plot data written to {path}")
        return path

    @staticmethod
    def summary_line(results: Dict[str, Any]) -> str:
        verdicts = results.get("verdicts", [])
        status = "✅" if results.get("success") else "❌"
        return f"{status} {results.get('experiment', '?')}: {', '.join(verdicts) if verdicts else 'no verdicts'}"
