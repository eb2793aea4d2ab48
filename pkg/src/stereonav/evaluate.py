"""Offline evaluation: run a policy over episode windows, build the table."""

from __future__ import annotations

from .episodes import prepare_samples
from .metrics import EvalSample, aggregate
from .policy import straight_waypoints


def predictions_to_eval_samples(model, samples):
    """Predict every windowed sample and pair it with its ground truth."""
    out = []
    for s in samples:
        pred = model.predict(s.window)
        out.append(
            EvalSample(
                pred_waypoints=pred.waypoints,
                gt_waypoints=s.gt_waypoints,
                subgoal=s.window.subgoal,
                scenario_tag=s.scenario_tag,
            )
        )
    return out


def evaluate_model(model, extractor, episodes, r=1.0, k=None, max_windows=None):
    """MetricsReport for a model over a list of episodes."""
    cfg = model.config
    samples = []
    for ep in episodes:
        samples.extend(prepare_samples(extractor, ep, cfg.context_n, cfg.horizon))
        if max_windows is not None and len(samples) >= max_windows:
            samples = samples[:max_windows]
            break
    eval_samples = predictions_to_eval_samples(model, samples)
    return aggregate(eval_samples, r=r, k=k), eval_samples


def straight_baseline_samples(samples, step_m=1.0):
    """The constant-straight-heading baseline over the same windows."""
    return [
        EvalSample(
            pred_waypoints=straight_waypoints(len(s.gt_waypoints), step_m=step_m),
            gt_waypoints=s.gt_waypoints,
            subgoal=s.window.subgoal,
            scenario_tag=s.scenario_tag,
        )
        for s in samples
    ]
