"""Offline trajectory metrics and benchmark-table aggregation.

Three per-sample metrics: worst-step orientation error (averaged over
samples), arrival accuracy within a radius over a step budget, and plain
L2 waypoint error. Aggregation reports each scenario separately plus two
summary rows with different semantics: `mean` averages the per-scenario
values with equal weight, `all` pools every sample regardless of scenario.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptySetError, UndefinedDirectionError, ValidationError

SCENARIOS = ("turn", "crossing", "detour", "proximity", "crowd", "other")
DEGENERATE_STEP_M = 1e-6


@dataclass
class EvalSample:
    pred_waypoints: np.ndarray  # (T, 2) ego meters
    gt_waypoints: np.ndarray  # (T, 2)
    subgoal: np.ndarray  # (2,)
    scenario_tag: str = "other"

    def __post_init__(self):
        self.pred_waypoints = np.asarray(self.pred_waypoints, dtype=np.float64)
        self.gt_waypoints = np.asarray(self.gt_waypoints, dtype=np.float64)
        self.subgoal = np.asarray(self.subgoal, dtype=np.float64)
        if self.pred_waypoints.shape != self.gt_waypoints.shape:
            raise ValidationError("pred_waypoints", "prediction and ground truth horizons differ")
        if len(self.pred_waypoints) < 1:
            raise ValidationError("pred_waypoints", "horizon must be >= 1")


def _steps(waypoints):
    return np.diff(np.vstack([[0.0, 0.0], waypoints]), axis=0)


def step_orientation_errors(pred, gt, eps=DEGENERATE_STEP_M):
    """Per-step absolute heading error in degrees, in [0, 180].

    Steps are consecutive waypoint differences with the origin prepended.
    Ground-truth steps shorter than `eps` have no heading and are dropped.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    ps, gs = _steps(pred), _steps(gt)
    valid = np.linalg.norm(gs, axis=1) >= eps
    if not valid.any():
        raise UndefinedDirectionError("all ground-truth steps are degenerate")
    ps, gs = ps[valid], gs[valid]
    ang = np.arctan2(ps[:, 0] * gs[:, 1] - ps[:, 1] * gs[:, 0],
                     ps[:, 0] * gs[:, 0] + ps[:, 1] * gs[:, 1])
    return np.degrees(np.abs(ang))


def maoe_from_step_errors(per_sample_errors):
    """Mean over samples of the worst per-step orientation error."""
    if not len(per_sample_errors):
        raise EmptySetError("no samples")
    return float(np.mean([np.max(e) for e in per_sample_errors]))


def maoe(samples):
    if not samples:
        raise EmptySetError("no samples")
    return maoe_from_step_errors(
        [step_orientation_errors(s.pred_waypoints, s.gt_waypoints) for s in samples]
    )


def arrival_accuracy(samples, r=1.0, k=None):
    """Fraction of samples whose prediction comes within `r` of the sub-goal
    within the first `k` steps (default: the whole horizon)."""
    if not samples:
        raise EmptySetError("no samples")
    if r <= 0:
        raise ValidationError("r", "radius must be positive")
    hits = 0
    for s in samples:
        budget = len(s.pred_waypoints) if k is None else min(k, len(s.pred_waypoints))
        d = np.linalg.norm(s.pred_waypoints[:budget] - s.subgoal, axis=1)
        hits += bool(d.min() <= r)
    return hits / len(samples)


def l2_error(samples):
    """Mean Euclidean waypoint error over all samples and steps."""
    if not samples:
        raise EmptySetError("no samples")
    return float(
        np.mean(
            [np.linalg.norm(s.pred_waypoints - s.gt_waypoints, axis=1).mean() for s in samples]
        )
    )


@dataclass
class MetricsReport:
    per_scenario: dict  # tag -> {"maoe_deg", "arrival_pct", "l2_m", "n"}
    mean_row: dict
    all_row: dict
    missing_scenarios: list = field(default_factory=list)

    def to_dict(self):
        return {
            "per_scenario": self.per_scenario,
            "mean_row": self.mean_row,
            "all_row": self.all_row,
            "missing_scenarios": self.missing_scenarios,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_tsv(self):
        cols = ["row", "maoe_deg", "arrival_pct", "l2_m", "n"]
        lines = ["\t".join(cols)]

        def fmt(row_name, row):
            return "\t".join(
                [row_name]
                + [f"{row[c]:.6f}" if c != "n" else str(row[c]) for c in cols[1:]]
            )

        lines.append(fmt("mean", self.mean_row))
        for tag in SCENARIOS:
            if tag in self.per_scenario:
                lines.append(fmt(tag, self.per_scenario[tag]))
        lines.append(fmt("all", self.all_row))
        if self.missing_scenarios:
            lines.append("# empty scenarios omitted from mean: " + ",".join(self.missing_scenarios))
        return "\n".join(lines) + "\n"


def _metric_row(samples, r, k):
    return {
        "maoe_deg": maoe(samples),
        "arrival_pct": 100.0 * arrival_accuracy(samples, r=r, k=k),
        "l2_m": l2_error(samples),
        "n": len(samples),
    }


def aggregate(samples, r=1.0, k=None):
    """Scenario table: per-scenario metrics, scenario-mean row, pooled row.

    Empty scenarios are omitted and flagged; the mean row then averages only
    the scenarios that are present.
    """
    if not samples:
        raise EmptySetError("no samples")
    for s in samples:
        if s.scenario_tag not in SCENARIOS:
            raise ValidationError("scenario_tag", f"unknown tag {s.scenario_tag!r}")
    per_scenario = {}
    for tag in SCENARIOS:
        subset = [s for s in samples if s.scenario_tag == tag]
        if subset:
            per_scenario[tag] = _metric_row(subset, r, k)
    missing = [t for t in SCENARIOS if t not in per_scenario]
    mean_row = {
        key: float(np.mean([row[key] for row in per_scenario.values()]))
        for key in ("maoe_deg", "arrival_pct", "l2_m")
    }
    mean_row["n"] = sum(row["n"] for row in per_scenario.values())
    all_row = _metric_row(samples, r, k)
    return MetricsReport(
        per_scenario=per_scenario,
        mean_row=mean_row,
        all_row=all_row,
        missing_scenarios=missing,
    )


def write_report(report, tsv_path, json_path=None):
    with open(tsv_path, "w", encoding="utf-8") as f:
        f.write(report.to_tsv())
    if json_path is not None:
        with open(json_path, "w", encoding="utf-8") as f:
            f.write(report.to_json())
