"""
Experiment runner

Runs one experiment config end to end: mesh, hypothesis checks, spectra,
inequality verdicts or certificates, then the JSON/CSV reports. Every
stage is timed; a failing stage is logged and recorded in the report and
makes the exit code nonzero without stopping the stages after it.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

import numpy as np
from tqdm import tqdm

from .checkpoint_monitor import CheckpointMonitor, TimedCheckpoint, get_checkpoint_monitor
from .conditions import check_constant_eigenpair, sample_points
from .config import SpectralConfig, config as default_settings
from .eigen import Spectrum, solve_lowest
from .errors import SpectralOrderingError
from .experiment_config import ExperimentConfig, load_experiment_config, parse_family
from .fem import BoundaryCondition, OperatorPair, operator_pairs
from .fields import CoefficientSet, HarmonicPhase, construct_harmonic_phase
from .geometry import Mesh
from .report_generator import ReportGenerator
from .spectrum_cache import SpectrumCache
from .verify import (
    HypothesisContext,
    Verdict,
    certify_ordering,
    ibp_convergence,
    nehari_bandle_check,
    polya_comparison_1d,
    run_hypotheses,
    verify_inequality,
)

logger = logging.getLogger(__name__)

# largest finest-level residual accepted for the integration-by-parts identity
IBP_RESIDUAL_TOLERANCE = 1e-3


@dataclass
class StageResult:
    """Outcome of one pipeline stage"""
    name: str
    success: bool
    payload: Dict[str, Any] = field(default_factory=dict)
    error: Optional[str] = None
    duration: float = 0.0

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "success": self.success,
            "duration": self.duration,
            "error": self.error,
            **self.payload,
        }


@dataclass
class ExperimentResult:
    """Everything one run produced"""
    experiment: str
    task: str
    stages: List[StageResult]
    verdicts: List[str]
    success: bool
    spectra: Dict[str, Spectrum] = field(default_factory=dict)
    plot_rows: List[Dict[str, Any]] = field(default_factory=list)
    timing: Dict[str, Any] = field(default_factory=dict)
    cache_stats: Dict[str, Any] = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return 0 if self.success else 1

    @property
    def failed_stages(self) -> List[str]:
        return [stage.name for stage in self.stages if not stage.success]

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "task": self.task,
            "success": self.success,
            "exit_code": self.exit_code,
            "verdicts": self.verdicts,
            "failed_stages": self.failed_stages,
            "stages": [stage.to_dict() for stage in self.stages],
            "spectra": {bc: spectrum.to_dict() for bc, spectrum in self.spectra.items()},
            "timing": self.timing,
            "cache": self.cache_stats,
        }


class ExperimentRunner:
    """Runs experiment configs with a shared spectrum cache and thread pool"""

    def __init__(self, settings: Optional[SpectralConfig] = None,
                 cache: Optional[SpectrumCache] = None,
                 monitor: Optional[CheckpointMonitor] = None,
                 show_progress: Optional[bool] = None):
        self.settings = settings or default_settings
        self.cache = cache or SpectrumCache(self.settings.spectrum_cache_size)
        self.monitor = monitor or get_checkpoint_monitor()
        self.show_progress = self.settings.show_progress if show_progress is None else show_progress
        self.thread_pool = ThreadPoolExecutor(max_workers=self.settings.max_workers)
        self.reports = ReportGenerator()

    def close(self) -> None:
        self.thread_pool.shutdown(wait=True)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()
        return False

    # ------------------------------------------------------------------
    # Plumbing
    # ------------------------------------------------------------------

    def solve(self, pair: OperatorPair, count: int) -> Spectrum:
        """solve_lowest behind the spectrum cache"""
        key = SpectrumCache.make_key(pair.mesh.mesh_id, pair.coeffs.coeff_id, pair.bc_tag.value,
                                     count, pair.quadrature_order)
        return self.cache.get_or_compute(key, lambda: solve_lowest(pair, count))

    def _stage(self, stages: List[StageResult], name: str,
               body: Callable[[], Dict[str, Any]]) -> Optional[Dict[str, Any]]:
        with TimedCheckpoint(name, monitor=self.monitor) as checkpoint:
            try:
                payload = body()
                error = None
            except (SpectralOrderingError, OSError) as exc:
                payload, error = None, f"{type(exc).__name__}: {exc}"
                logger.error(f"❌ Stage {name} failed: {error}")
        duration = checkpoint.timing.duration if checkpoint.timing else 0.0
        stages.append(StageResult(name, error is None, payload or {}, error, duration))
        return payload

    def _progress(self, items, description: str):
        return tqdm(items, desc=description, disable=not self.show_progress, leave=False)

    @staticmethod
    def _meshes(experiment: ExperimentConfig) -> List[Mesh]:
        # the identity needs phi = 0 on every boundary node, which refined disk chords break
        if experiment.task == "ibp" and experiment.domain.kind == "disk":
            return experiment.domain.remeshed()
        return experiment.domain.nested_meshes()

    def _harmonic_phase(self, experiment: ExperimentConfig, coeffs: CoefficientSet,
                        mesh: Mesh) -> HarmonicPhase:
        _, params = parse_family(experiment.phase)
        if "bx" in params or "by" in params:
            basepoint = [float(params.get("bx", 0.0)), float(params.get("by", 0.0))]
        elif experiment.basepoint is not None:
            basepoint = experiment.basepoint
        else:
            basepoint = mesh.nodes[0]
        return construct_harmonic_phase(coeffs.rho, basepoint, mesh)

    @staticmethod
    def _xi_field(coeffs: CoefficientSet, mesh: Mesh):
        """Constant unit field from the first constant eigenvector of A"""
        if coeffs.A is None:
            return None
        _, pairs = check_constant_eigenpair(coeffs.A, sample_points(mesh))
        if not pairs:
            return None
        vector = np.asarray(pairs[0][1], dtype=float)
        return lambda points: np.tile(vector, (np.atleast_2d(points).shape[0], 1))

    def _finest_spectra(self, mesh: Mesh, coeffs: CoefficientSet, experiment: ExperimentConfig,
                        count: int) -> Dict[str, Spectrum]:
        neumann, dirichlet = operator_pairs(mesh, coeffs, experiment.quadrature_order)
        pairs = {BoundaryCondition.DIRICHLET: dirichlet, BoundaryCondition.NEUMANN: neumann}
        wanted = [BoundaryCondition(bc) for bc in experiment.bc]
        futures = {bc: self.thread_pool.submit(self.solve, pairs[bc], min(count, pairs[bc].n_dofs))
                   for bc in wanted}
        return {bc.value: futures[bc].result() for bc in wanted}

    # ------------------------------------------------------------------
    # Run
    # ------------------------------------------------------------------

    def run(self, experiment: ExperimentConfig) -> ExperimentResult:
        """Run every stage of one experiment, then write its outputs"""
        logger.info(f"🚀 Experiment {experiment.name}: {experiment.task} ({experiment.theorem})")
        stages: List[StageResult] = []
        verdicts: List[str] = []
        plot_rows: List[Dict[str, Any]] = []
        spectra: Dict[str, Spectrum] = {}
        state: Dict[str, Any] = {}

        def build_inputs():
            if experiment.task == "polya_1d":
                state["coeffs"] = experiment.coefficients.build(experiment.domain.build_mesh())
                return {"coefficients": state["coeffs"].describe()}
            state["meshes"] = self._meshes(experiment)
            state["coeffs"] = experiment.coefficients.build(state["meshes"][0])
            return {
                "coefficients": state["coeffs"].describe(),
                "meshes": [mesh.summary() for mesh in state["meshes"]],
            }

        if self._stage(stages, "mesh_generation", build_inputs) is None:
            return self._finish(experiment, stages, verdicts, spectra, plot_rows)

        coeffs: CoefficientSet = state["coeffs"]
        meshes: List[Mesh] = state.get("meshes", [])
        context = HypothesisContext(
            invariant_basis=experiment.invariant_basis,
            directions=experiment.directions,
            basepoint=experiment.basepoint,
            sample_count=experiment.sample_count,
        )
        phase = experiment.build_phase()
        if experiment.wants_harmonic_phase:
            def harmonic():
                state["phase"] = self._harmonic_phase(experiment, coeffs, meshes[0])
                return {
                    "closure_residual": state["phase"].closure_residual,
                    "log_harmonic_residual": state["phase"].log_harmonic_residual,
                }
            self._stage(stages, "harmonic_phase", harmonic)
            phase = state.get("phase")
        if phase is not None:
            context.phase = phase.field if isinstance(phase, HarmonicPhase) else phase
        if meshes and "div_curl" in experiment.theorem:
            context.xi = self._xi_field(coeffs, meshes[0])

        task = experiment.task
        if task == "solve":
            self._run_solve(experiment, coeffs, meshes, stages, spectra, verdicts)
        elif task == "check":
            self._run_check(experiment, coeffs, meshes, context, stages, verdicts)
        elif task == "verify":
            self._run_verify(experiment, coeffs, meshes, context, stages, verdicts, plot_rows)
        elif task == "certify":
            self._run_certify(experiment, coeffs, meshes, context, phase, stages, verdicts)
            if experiment.verify_margin:
                self._run_verify(experiment, coeffs, meshes, context, stages, verdicts, plot_rows)
        elif task == "ibp":
            self._run_ibp(experiment, meshes, stages, verdicts, plot_rows)
        elif task == "disk_comparison":
            self._run_disk_comparison(experiment, coeffs, meshes, stages, verdicts, plot_rows)
        elif task == "polya_1d":
            self._run_polya(experiment, coeffs, stages, verdicts)

        if task in ("verify", "certify", "disk_comparison") and meshes:
            count = max(k + r for k, r in experiment.pairs) + 2
            def finest():
                spectra.update(self._finest_spectra(meshes[-1], coeffs, experiment, count))
                return {"finest": {bc: s.to_dict() for bc, s in spectra.items()}}
            self._stage(stages, "eigensolve", finest)
        return self._finish(experiment, stages, verdicts, spectra, plot_rows)

    def _run_solve(self, experiment, coeffs, meshes, stages, spectra, verdicts):
        def body():
            levels = []
            for level, mesh in enumerate(self._progress(meshes, "solve")):
                solved = self._finest_spectra(mesh, coeffs, experiment, experiment.count)
                levels.append({"level": level, "mesh": mesh.summary(),
                               **{bc: s.to_dict() for bc, s in solved.items()}})
                spectra.clear()
                spectra.update(solved)
            trivial = None
            if {"dirichlet", "neumann"} <= set(spectra):
                lam, mu = spectra["dirichlet"].eigenvalues, spectra["neumann"].eigenvalues
                n = min(len(lam), len(mu))
                trivial = bool(np.all(mu[:n] <= lam[:n] + 1e-10 * np.maximum(1.0, np.abs(lam[:n]))))
                if not trivial:
                    verdicts.append(Verdict.VIOLATED.value)
            return {"levels": levels, "trivial_inequality_holds": trivial}
        self._stage(stages, "eigensolve", body)

    def _run_check(self, experiment, coeffs, meshes, context, stages, verdicts):
        def body():
            coarse = meshes[0]
            neumann, dirichlet = operator_pairs(coarse, coeffs, experiment.quadrature_order)
            lambda1 = float(self.solve(dirichlet, 1).eigenvalues[0])
            k, r = experiment.pairs[0]
            reports = run_hypotheses(experiment.theorem, coarse, coeffs, lambda1, k, r, context)
            if not all(report.passed for report in reports):
                verdicts.append(Verdict.UNSUPPORTED.value)
            return {"lambda1": lambda1, "conditions": [report.to_dict() for report in reports]}
        self._stage(stages, "hypothesis_checks", body)

    def _run_verify(self, experiment, coeffs, meshes, context, stages, verdicts, plot_rows):
        for k, r in self._progress(experiment.pairs, "verify"):
            def body(k=k, r=r):
                report = verify_inequality(
                    meshes[0], coeffs, k, r, experiment.theorem, context=context,
                    quadrature_order=experiment.quadrature_order, solver=self.solve,
                    executor=self.thread_pool, meshes=meshes,
                )
                verdicts.append(report.verdict.value)
                for entry in report.refinement_history:
                    mu = entry["mu_k_plus_r"]
                    plot_rows.append({
                        "series": f"k={k},r={r}",
                        "level": entry["level"],
                        "mesh_size_h": entry["mesh_size_h"],
                        "lambda_k": entry["lambda_k"],
                        "mu_k_plus_r": mu,
                        "margin": None if mu is None else entry["lambda_k"] - mu,
                    })
                return {"inequality": report.to_dict()}
            self._stage(stages, "inequality", body)

    def _run_certify(self, experiment, coeffs, meshes, context, phase, stages, verdicts):
        for k, _ in self._progress(experiment.pairs, "certify"):
            def body(k=k):
                report = certify_ordering(
                    meshes[0], coeffs, k, experiment.trial_kind, experiment.theorem,
                    phase=phase, directions=experiment.directions,
                    rotations=experiment.rotations, context=context,
                    quadrature_order=experiment.quadrature_order, solver=self.solve,
                    executor=self.thread_pool, meshes=meshes,
                )
                hypotheses_ok = all(h.passed for h in report.hypotheses)
                if not hypotheses_ok:
                    verdicts.append(Verdict.UNSUPPORTED.value)
                else:
                    verdicts.append(Verdict.HOLDS.value if report.passed else Verdict.VIOLATED.value)
                return {"certification": report.to_dict()}
            self._stage(stages, "certificate", body)

    def _run_ibp(self, experiment, meshes, stages, verdicts, plot_rows):
        def body():
            direction = np.asarray(experiment.ibp_direction, dtype=float)
            direction = direction / np.linalg.norm(direction)
            phi = experiment.build_ibp_function()
            convergence = ibp_convergence(meshes, phi, direction)
            finest = convergence.reports[-1]
            verdicts.append(Verdict.HOLDS.value if finest.residual <= IBP_RESIDUAL_TOLERANCE
                            else Verdict.VIOLATED.value)
            for level, report in enumerate(convergence.reports):
                plot_rows.append({
                    "series": "ibp_residual",
                    "level": level,
                    "mesh_size_h": report.mesh_size_h,
                    "lhs": report.lhs,
                    "rhs": report.rhs,
                    "residual": report.residual,
                })
            return {"ibp": convergence.to_dict()}
        self._stage(stages, "ibp_identity", body)

    def _run_disk_comparison(self, experiment, coeffs, meshes, stages, verdicts, plot_rows):
        def body():
            report = nehari_bandle_check(
                meshes[0], coeffs.rho, quadrature_order=experiment.quadrature_order,
                solver=self.solve, executor=self.thread_pool, meshes=meshes,
            )
            verdicts.append(report.verdict.value)
            for entry in report.refinement_history:
                plot_rows.append({
                    "series": "disk_comparison",
                    "level": entry["level"],
                    "mesh_size_h": entry["mesh_size_h"],
                    "lambda_1": entry["lambda_1"],
                    "mu_2": entry["mu_2"],
                    "margin": entry["lambda_1"] - entry["mu_2"],
                })
            return {"inequality": report.to_dict()}
        self._stage(stages, "disk_comparison", body)

    def _run_polya(self, experiment, coeffs, stages, verdicts):
        def body():
            a, b = experiment.domain.bounds
            report = polya_comparison_1d(coeffs, a, b, experiment.grid_n)
            verdicts.append(report.verdict.value)
            return {"inequality": report.to_dict()}
        self._stage(stages, "polya_1d", body)

    def _success(self, experiment: ExperimentConfig, stages: List[StageResult], verdicts: List[str]) -> bool:
        if any(not stage.success for stage in stages):
            return False
        for verdict in verdicts:
            if experiment.expected_verdict is not None:
                if verdict != experiment.expected_verdict:
                    return False
            elif not Verdict(verdict).confirmed:
                return False
        return True

    def _finish(self, experiment, stages, verdicts, spectra, plot_rows) -> ExperimentResult:
        result = ExperimentResult(
            experiment=experiment.name,
            task=experiment.task,
            stages=stages,
            verdicts=verdicts,
            success=self._success(experiment, stages, verdicts),
            spectra=spectra,
            plot_rows=plot_rows,
            cache_stats=self.cache.stats(),
        )

        def write_outputs():
            written = []
            if experiment.output_csv and spectra:
                written += [str(p) for p in self.reports.write_eigenvalue_csv(spectra, experiment.output_csv)]
            if experiment.output_plot_data:
                path = self.reports.write_plot_data(plot_rows, experiment.output_plot_data)
                if path is not None:
                    written.append(str(path))
            return {"files": written}

        self._stage(stages, "report_writing", write_outputs)
        result.success = self._success(experiment, stages, verdicts)
        timing = self.monitor.close_experiment(experiment.name, result.success)
        result.timing = timing.to_dict()
        if experiment.output_json:
            try:
                self.reports.generate_json_report(result.to_dict(), experiment.output_json)
            except OSError as exc:
                logger.error(f"❌ Cannot write {experiment.output_json}: {exc}")
                result.success = False
        logger.info(self.reports.summary_line(result.to_dict()))
        return result


def run_experiment(experiment, settings: Optional[SpectralConfig] = None,
                   show_progress: Optional[bool] = None) -> ExperimentResult:
    """Run a config path or a parsed ExperimentConfig with a fresh runner"""
    if not isinstance(experiment, ExperimentConfig):
        experiment = load_experiment_config(experiment)
    with ExperimentRunner(settings, show_progress=show_progress) as runner:
        return runner.run(experiment)
