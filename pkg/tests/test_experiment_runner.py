"""
Tests for the experiment runner
"""
import json
from pathlib import Path

import numpy as np
import pytest

from src.spectral_ordering.conditions import check_constant_eigenpair, sample_points
from src.spectral_ordering.experiment_config import load_experiment_config, parse_experiment_config
from src.spectral_ordering.experiment_runner import ExperimentRunner, run_experiment
from src.spectral_ordering.spectrum_cache import SpectrumCache

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def interval_config(tmp_path, body: str) -> str:
    return f"""\
name = runner_test
{body}

[domain]
kind = interval
bounds = 0, 1
n_elements = 16
levels = 3

[output]
json = {tmp_path / 'out' / 'report.json'}
csv = {tmp_path / 'out' / 'eigs.csv'}
plot_data = {tmp_path / 'out' / 'plot.csv'}
"""


class TestVerifyRun:
    """End-to-end verify runs on the unit interval"""

    @pytest.fixture
    def result(self, tmp_path):
        experiment = parse_experiment_config(interval_config(tmp_path, "task = verify\npairs = (1, 1)"))
        return run_experiment(experiment, show_progress=False)

    def test_stages_and_verdict(self, result):
        assert [stage.name for stage in result.stages] == [
            "mesh_generation", "inequality", "eigensolve", "report_writing",
        ]
        assert result.verdicts == ["holds-within-tolerance"]
        assert result.success
        assert result.exit_code == 0

    def test_outputs(self, result, tmp_path):
        out = tmp_path / "out"
        payload = json.loads((out / "report.json").read_text())
        assert payload["experiment"] == "runner_test"
        assert payload["exit_code"] == 0
        assert payload["stages"][1]["inequality"]["verdict"] == "holds-within-tolerance"
        assert (out / "eigs_dirichlet.csv").exists()
        assert (out / "eigs_neumann.csv").exists()
        assert len((out / "plot.csv").read_text().splitlines()) == 4
        assert result.timing["experiment_name"] == "runner_test"


class TestOtherTasks:
    """Solve, check, 1D comparison and failing stages"""

    def test_solve_single_condition(self, tmp_path):
        text = interval_config(tmp_path, "task = solve\nbc = dirichlet\ncount = 3")
        result = run_experiment(parse_experiment_config(text), show_progress=False)
        assert result.success
        assert list(result.spectra) == ["dirichlet"]
        assert result.spectra["dirichlet"].count == 3
        assert (tmp_path / "out" / "eigs.csv").exists()
        solve_stage = next(stage for stage in result.stages if stage.name == "eigensolve")
        assert len(solve_stage.payload["levels"]) == 3
        assert solve_stage.payload["trivial_inequality_holds"] is None

    def test_unsupported_hypothesis_fails_run(self, tmp_path):
        text = interval_config(tmp_path, "task = check\ntheorem = low_dim_gradient")
        result = run_experiment(parse_experiment_config(text), show_progress=False)
        assert result.verdicts == ["unsupported hypothesis"]
        assert not result.success
        assert result.exit_code == 1
        assert result.failed_stages == []

    def test_failing_stage_is_recorded(self, tmp_path):
        text = interval_config(tmp_path, "task = ibp\nibp_function = sine_product")
        result = run_experiment(parse_experiment_config(text), show_progress=False)
        assert result.failed_stages == ["ibp_identity"]
        stage = result.stages[1]
        assert stage.error.startswith("FieldError")
        assert result.exit_code == 1
        assert stage.to_dict()["success"] is False

    def test_singular_density_on_a_domain_touching_the_origin(self, tmp_path):
        text = interval_config(tmp_path, "task = solve\n[coefficients]\nrho = power{alpha=-2}")
        result = run_experiment(parse_experiment_config(text), show_progress=False)
        assert result.failed_stages == ["mesh_generation"]
        assert result.stages[0].error.startswith("FieldError")
        assert result.spectra == {}
        assert result.exit_code == 1

    def test_expected_reversal(self, tmp_path):
        text = interval_config(
            tmp_path,
            "task = polya_1d\ngrid_n = 2000\nexpected_verdict = reversed\n"
            "[coefficients]\nrho = polynomial{c0=1, c1=1, c2=-1}",
        )
        result = run_experiment(parse_experiment_config(text), show_progress=False)
        assert result.verdicts == ["reversed"]
        assert result.success

    def test_unexpected_verdict(self, tmp_path):
        text = interval_config(tmp_path, "task = polya_1d\ngrid_n = 2000\nexpected_verdict = reversed")
        result = run_experiment(parse_experiment_config(text), show_progress=False)
        assert result.verdicts == ["holds-within-tolerance"]
        assert not result.success


class TestRunnerCache:
    """Shared spectrum cache across runs"""

    def test_second_run_hits_cache(self, tmp_path):
        experiment = parse_experiment_config(interval_config(tmp_path, "task = verify\npairs = (1, 1)"))
        cache = SpectrumCache(max_size=64)
        with ExperimentRunner(cache=cache, show_progress=False) as runner:
            runner.run(experiment)
            misses = cache.stats()["misses"]
            runner.run(experiment)
        assert cache.stats()["misses"] == misses
        assert cache.stats()["hits"] > 0


class TestBundledCertificate:
    """The shipped harmonic-gradient certificate run"""

    @pytest.mark.slow
    def test_square_harmonic_gradient(self, tmp_path):
        experiment = load_experiment_config(CONFIG_DIR / "square_harmonic_gradient.cfg")
        experiment = experiment.model_copy(update={
            "output_json": str(tmp_path / "report.json"),
            "output_csv": str(tmp_path / "eigs.csv"),
        })
        result = run_experiment(experiment, show_progress=False)
        names = [stage.name for stage in result.stages]
        assert "certificate" in names
        assert "inequality" in names
        assert result.verdicts == ["holds", "holds"]
        assert result.exit_code == 0
        payload = json.loads((tmp_path / "report.json").read_text())
        certification = next(stage for stage in payload["stages"] if stage["name"] == "certificate")
        assert certification["certification"]["certificates"][-1]["passed"]
        inequality = next(stage for stage in payload["stages"] if stage["name"] == "inequality")
        assert inequality["inequality"]["margin"] > inequality["inequality"]["combined_error"]


def run_bundled(name: str, tmp_path):
    experiment = load_experiment_config(CONFIG_DIR / f"{name}.cfg")
    experiment = experiment.model_copy(update={
        "output_json": str(tmp_path / "report.json"),
        "output_csv": None,
        "output_plot_data": None,
    })
    return experiment, run_experiment(experiment, show_progress=False)


def inequality_payloads(result):
    return [stage.payload["inequality"] for stage in result.stages if "inequality" in stage.payload]


@pytest.mark.slow
class TestAcceptanceRuns:
    """Bundled theorem configs reproduce their verdicts"""

    def test_convex_density(self, tmp_path):
        _, result = run_bundled("square_convex_density", tmp_path)
        assert result.exit_code == 0
        reports = inequality_payloads(result)
        assert [(report["k"], report["r"]) for report in reports] == [(1, 1), (1, 2)]
        for report in reports:
            assert report["verdict"] in ("holds", "holds-within-tolerance")
            assert all(h["passed"] for h in report["hypotheses"])
            lam = report["lambda_k"]
            assert lam["error_estimate"] < 1e-3 * lam["value"]
            assert report["mu_k_plus_r"]["error_estimate"] < 1e-3 * lam["value"]

    def test_low_dimensional_gradient(self, tmp_path):
        _, result = run_bundled("square_low_dim_gradient", tmp_path)
        assert result.exit_code == 0
        reports = inequality_payloads(result)
        assert [report["k"] for report in reports] == [1, 2, 3]
        assert all(report["verdict"] in ("holds", "holds-within-tolerance") for report in reports)

    def test_constant_eigenpair(self, tmp_path):
        experiment, result = run_bundled("square_constant_eigenpair", tmp_path)
        assert result.exit_code == 0
        assert all(report["verdict"] in ("holds", "holds-within-tolerance")
                   for report in inequality_payloads(result))

        mesh = experiment.domain.build_mesh()
        _, pairs = check_constant_eigenpair(experiment.coefficients.build(mesh).A, sample_points(mesh))
        eigenvalue, vector = pairs[0]
        assert eigenvalue == pytest.approx(1.0, abs=1e-10)
        np.testing.assert_allclose(np.abs(vector), [1.0, 0.0], atol=1e-10)

    def test_nehari_bandle_chain(self, tmp_path):
        _, result = run_bundled("nehari_bandle_exp_density", tmp_path)
        assert result.exit_code == 0
        (report,) = inequality_payloads(result)
        assert len(report["chain"]) == 3
        assert all(link["verdict"] in ("holds", "holds-within-tolerance") for link in report["chain"])
