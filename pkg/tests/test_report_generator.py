"""
Tests for JSON reports, eigenvalue tables and plot data
"""
import json

import numpy as np
import pandas as pd
import pytest

from src.spectral_ordering.config import REPORT_VERSION
from src.spectral_ordering.eigen import solve_lowest
from src.spectral_ordering.fem import operator_pairs
from src.spectral_ordering.fields import laplacian_coefficients
from src.spectral_ordering.geometry import make_interval
from src.spectral_ordering.report_generator import EIGENVALUE_COLUMNS, ReportGenerator


@pytest.fixture
def generator():
    return ReportGenerator()


@pytest.fixture
def interval_spectra():
    neumann, dirichlet = operator_pairs(make_interval(0.0, 1.0, 8), laplacian_coefficients())
    return {"dirichlet": solve_lowest(dirichlet, 3), "neumann": solve_lowest(neumann, 3)}


class TestJsonReport:
    """Structured run reports"""

    def test_metadata_and_conversion(self, generator, tmp_path):
        path = tmp_path / "nested" / "report.json"
        text = generator.generate_json_report(
            {"value": np.float64(1.5), "bound": float("inf"), "vector": np.arange(3), "flags": (True, False)},
            path,
        )
        payload = json.loads(path.read_text())
        assert payload == json.loads(text)
        assert payload["metadata"]["report_version"] == REPORT_VERSION
        assert payload["metadata"]["generator"] == "spectral-ordering"
        assert payload["value"] == 1.5
        assert payload["bound"] == "inf"
        assert payload["vector"] == [0, 1, 2]
        assert payload["flags"] == [True, False]

    def test_without_output_path(self, generator):
        payload = json.loads(generator.generate_json_report({"nan": float("nan")}))
        assert payload["nan"] == "nan"


class TestEigenvalueTables:
    """CSV tables per boundary condition"""

    def test_table_columns(self, interval_spectra):
        table = ReportGenerator.eigenvalue_table(interval_spectra["dirichlet"])
        assert list(table.columns) == EIGENVALUE_COLUMNS
        assert table["index"].tolist() == [1, 2, 3]

    def test_suffix_per_condition(self, generator, interval_spectra, tmp_path):
        written = generator.write_eigenvalue_csv(interval_spectra, tmp_path / "eigs.csv")
        assert [p.name for p in written] == ["eigs_dirichlet.csv", "eigs_neumann.csv"]
        frame = pd.read_csv(written[0])
        np.testing.assert_allclose(frame["eigenvalue"], interval_spectra["dirichlet"].eigenvalues, rtol=1e-14)

    def test_single_condition_keeps_path(self, generator, interval_spectra, tmp_path):
        written = generator.write_eigenvalue_csv({"neumann": interval_spectra["neumann"]}, tmp_path / "mu.csv")
        assert written == [tmp_path / "mu.csv"]


class TestPlotData:
    """Long-format plot tables"""

    def test_empty_rows(self, generator, tmp_path):
        assert generator.write_plot_data([], tmp_path / "plot.csv") is None
        assert not (tmp_path / "plot.csv").exists()

    def test_leading_columns(self, generator, tmp_path):
        rows = [{"margin": 0.5, "level": 0, "series": "k=1,r=1", "mesh_size_h": 0.25},
                {"margin": 0.25, "level": 1, "series": "k=1,r=1", "mesh_size_h": 0.125}]
        path = generator.write_plot_data(rows, tmp_path / "plot.csv")
        frame = pd.read_csv(path)
        assert list(frame.columns) == ["series", "level", "mesh_size_h", "margin"]
        assert frame["margin"].tolist() == [0.5, 0.25]


class TestSummaryLine:

    def test_success(self):
        line = ReportGenerator.summary_line({"experiment": "square", "success": True, "verdicts": ["holds"]})
        assert line == "✅ square: holds"

    def test_failure_without_verdicts(self):
        assert ReportGenerator.summary_line({}) == "❌ ?: no verdicts"
