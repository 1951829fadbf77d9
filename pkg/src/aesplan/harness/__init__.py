"""Scenario configs, end-to-end runs and reports."""

from aesplan.harness.report import CycleMetrics, compute_metrics, reference_identities, report
from aesplan.harness.runner import RunResult, observed_tasks, run_scenario, flag_conformance
from aesplan.harness.scenario import ScenarioConfig, load_bundled, load_scenario, parse_scenario

__all__ = [
    "CycleMetrics", "RunResult", "ScenarioConfig", "compute_metrics", "load_bundled", "load_scenario",
    "observed_tasks", "reference_identities", "parse_scenario", "report", "run_scenario", "flag_conformance",
]
