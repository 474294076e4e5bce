"""
Stage timing for experiment runs

Every pipeline stage (meshing, hypothesis checks, solves, verification,
certificates, report writing) runs inside a TimedCheckpoint; the monitor
aggregates durations per stage and per experiment for the run report.
"""
import json
import logging
import statistics
import threading
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime
from typing import Any, Dict, List, Optional

logger = logging.getLogger(__name__)

# Stage names grouped the way the run report presents them
STAGE_CATEGORIES: Dict[str, List[str]] = {
    "meshing": ["mesh_generation", "mesh_refinement"],
    "hypotheses": ["hypothesis_checks", "harmonic_phase"],
    "spectra": ["assembly", "eigensolve", "extrapolation"],
    "verification": ["inequality", "certificate", "ibp_identity", "disk_comparison", "polya_1d"],
    "output": ["report_writing"],
}


@dataclass
class CheckpointTiming:
    """Timing of one stage"""
    name: str
    start_time: float
    end_time: float = 0.0
    duration: float = 0.0
    success: bool = False
    error_message: Optional[str] = None
    metadata: Dict[str, Any] = field(default_factory=dict)


@dataclass
class ExperimentTimingReport:
    """All stage timings of one experiment"""
    experiment_name: str
    checkpoints: List[CheckpointTiming]
    success: bool
    timestamp: datetime

    @property
    def total_duration(self) -> float:
        return sum(cp.duration for cp in self.checkpoints)

    def get_checkpoint_duration(self, name: str) -> Optional[float]:
        durations = [cp.duration for cp in self.checkpoints if cp.name == name]
        return sum(durations) if durations else None

    def to_dict(self) -> dict:
        return {
            "experiment_name": self.experiment_name,
            "total_duration": self.total_duration,
            "success": self.success,
            "timestamp": self.timestamp.isoformat(),
            "checkpoints": [asdict(cp) for cp in self.checkpoints],
        }


class CheckpointMonitor:
    """Collects stage timings; safe to use from worker threads"""

    def __init__(self):
        self.reports: List[ExperimentTimingReport] = []
        self.completed: List[CheckpointTiming] = []
        self._open: Dict[str, CheckpointTiming] = {}
        self._lock = threading.Lock()
        self._counter = 0
        self.session_start = time.time()

    def start_checkpoint(self, name: str, metadata: Optional[Dict[str, Any]] = None) -> str:
        with self._lock:
            self._counter += 1
            checkpoint_id = f"{name}_{self._counter}"
            self._open[checkpoint_id] = CheckpointTiming(
                name=name, start_time=time.time(), metadata=dict(metadata or {})
            )
        logger.debug(f"🔵 Started stage: {name}")
        return checkpoint_id

    def end_checkpoint(self, checkpoint_id: str, success: bool = True,
                       error_message: Optional[str] = None) -> Optional[CheckpointTiming]:
        with self._lock:
            checkpoint = self._open.pop(checkpoint_id, None)
            if checkpoint is None:
                logger.warning(f"⚠️  Checkpoint {checkpoint_id} not found")
                return None
            checkpoint.end_time = time.time()
            checkpoint.duration = checkpoint.end_time - checkpoint.start_time
            checkpoint.success = success
            checkpoint.error_message = error_message
            self.completed.append(checkpoint)

        status = "✅" if success else "❌"
        logger.debug(f"{status} Completed stage: {checkpoint.name} in {checkpoint.duration:.3f}s")
        return checkpoint

    def close_experiment(self, experiment_name: str, success: bool) -> ExperimentTimingReport:
        """Move the stages completed since the last call into one experiment report"""
        with self._lock:
            checkpoints, self.completed = self.completed, []
            report = ExperimentTimingReport(
                experiment_name=experiment_name,
                checkpoints=checkpoints,
                success=success,
                timestamp=datetime.now(),
            )
            self.reports.append(report)
        logger.info(f"📊 {experiment_name}: {report.total_duration:.2f}s over {len(checkpoints)} stage(s)")
        return report

    def get_checkpoint_stats(self, name: str) -> Dict[str, float]:
        durations = []
        successes = 0
        for report in self.reports:
            for cp in report.checkpoints:
                if cp.name == name:
                    durations.append(cp.duration)
                    successes += cp.success
        if not durations:
            return {"count": 0, "average": 0.0, "min": 0.0, "max": 0.0, "median": 0.0, "success_rate": 0.0}
        return {
            "count": len(durations),
            "average": statistics.mean(durations),
            "min": min(durations),
            "max": max(durations),
            "median": statistics.median(durations),
            "success_rate": successes / len(durations),
        }

    def generate_summary(self) -> Dict[str, Any]:
        """Per-category totals, per-stage statistics and the slowest stages"""
        stage_names = sorted({cp.name for report in self.reports for cp in report.checkpoints})
        stages = {name: self.get_checkpoint_stats(name) for name in stage_names}

        categories = {}
        for category, names in STAGE_CATEGORIES.items():
            total = sum(stages[n]["average"] * stages[n]["count"] for n in names if n in stages)
            count = sum(stages[n]["count"] for n in names if n in stages)
            if count:
                categories[category] = {"total_time": total, "count": count}
        grand_total = sum(c["total_time"] for c in categories.values())
        for values in categories.values():
            values["percentage_of_total"] = 100.0 * values["total_time"] / grand_total if grand_total > 0 else 0.0

        bottlenecks = sorted(
            ({"stage": name, **stats} for name, stats in stages.items()),
            key=lambda item: item["average"],
            reverse=True,
        )
        return {
            "generated_at": datetime.now().isoformat(),
            "session_duration": time.time() - self.session_start,
            "experiments": [report.to_dict() for report in self.reports],
            "categories": categories,
            "stages": stages,
            "bottlenecks": bottlenecks[:5],
        }

    def save_summary(self, filename: str) -> str:
        with open(filename, "w") as f:
            json.dump(self.generate_summary(), f, indent=2, default=str)
        logger.info(f"📄 Timing summary saved to {filename}")
        return filename

    def reset(self) -> None:
        with self._lock:
            self.reports.clear()
            self.completed.clear()
            self._open.clear()
            self.session_start = time.time()


# Global checkpoint monitor instance
global_checkpoint_monitor = CheckpointMonitor()


def get_checkpoint_monitor() -> CheckpointMonitor:
    return global_checkpoint_monitor


class TimedCheckpoint:
    """Context manager timing one stage; exceptions mark the stage failed and propagate"""

    def __init__(self, name: str, metadata: Optional[Dict[str, Any]] = None,
                 monitor: Optional[CheckpointMonitor] = None):
        self.name = name
        self.metadata = metadata
        self.monitor = monitor or get_checkpoint_monitor()
        self.checkpoint_id: Optional[str] = None
        self.timing: Optional[CheckpointTiming] = None

    def __enter__(self):
        self.checkpoint_id = self.monitor.start_checkpoint(self.name, self.metadata)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.timing = self.monitor.end_checkpoint(
            self.checkpoint_id, exc_type is None, str(exc_val) if exc_val else None
        )
        return False
