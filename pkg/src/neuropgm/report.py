"""Per-fit diagnostics and the JSON report schema (version 1).

Every fitter returns a FitReport; the CLI serializes them so any
reported number can be traced back to a seed and objective trace.
"""

import json
import os
from dataclasses import dataclass, field

from .errors import DataFormatError

__all__ = ["FitReport", "write_report", "read_report", "render_report"]

SCHEMA_VERSION = 1


@dataclass
class FitReport:
    """Diagnostics of one model fit.

    The trace holds the objective at initialization plus one value per
    iteration, so ``len(trace) == iterations + 1`` always.
    """

    model: str
    trace: list
    converged: bool
    wall_time: float
    seed: int = 0
    metrics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.trace = [float(v) for v in self.trace]
        if len(self.trace) < 1:
            raise ValueError("trace must contain the initial objective")
        if self.wall_time < 0:
            raise ValueError("wall time must be >= 0")
        self.metrics = {str(k): float(v) for k, v in self.metrics.items()}

    @property
    def iterations(self):
        return len(self.trace) - 1

    def to_dict(self):
        return {
            "v": SCHEMA_VERSION,
            "model": self.model,
            "seed": int(self.seed),
            "iterations": self.iterations,
            "converged": bool(self.converged),
            "wall_time_s": float(self.wall_time),
            "objective_trace": list(self.trace),
            "metrics": dict(self.metrics),
        }

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict) or data.get("v") != SCHEMA_VERSION:
            raise DataFormatError(
                f"report schema version must be {SCHEMA_VERSION}")
        required = {"model", "seed", "iterations", "converged",
                    "wall_time_s", "objective_trace", "metrics"}
        missing = required - set(data)
        if missing:
            raise DataFormatError(f"report missing keys {sorted(missing)}")
        report = cls(model=str(data["model"]),
                     trace=list(data["objective_trace"]),
                     converged=bool(data["converged"]),
                     wall_time=float(data["wall_time_s"]),
                     seed=int(data["seed"]),
                     metrics=dict(data["metrics"]))
        if report.iterations != int(data["iterations"]):
            raise DataFormatError("iterations does not match trace length")
        return report


def write_report(path, report):
    with open(os.fspath(path), "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_report(path):
    with open(os.fspath(path), "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: invalid JSON: {exc}") from None
    return FitReport.from_dict(data)


def render_report(report, fmt="text"):
    """Render a report as text, json, or csv."""
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        lines = ["key,value",
                 f"model,{report.model}",
                 f"seed,{report.seed}",
                 f"iterations,{report.iterations}",
                 f"converged,{report.converged}",
                 f"wall_time_s,{report.wall_time:.6f}"]
        for key in sorted(report.metrics):
            lines.append(f"metric.{key},{report.metrics[key]:.17g}")
        return "\n".join(lines) + "\n"
    if fmt == "text":
        lines = [f"model       : {report.model}",
                 f"seed        : {report.seed}",
                 f"iterations  : {report.iterations}",
                 f"converged   : {report.converged}",
                 f"wall time   : {report.wall_time:.3f} s",
                 f"objective   : {report.trace[0]:.6g} -> "
                 f"{report.trace[-1]:.6g}"]
        if report.metrics:
            lines.append("metrics:")
            for key in sorted(report.metrics):
                lines.append(f"  {key:28s} {report.metrics[key]:.6g}")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")
