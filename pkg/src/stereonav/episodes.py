"""Demonstration episodes: scripted-expert generation, windowing, filtering.

An episode is a 1 Hz sequence of poses walked by a scripted expert along a
scenario-shaped route (turn, crossing, detour, proximity, crowd, other),
with frames referencing the synthetic provider's pose seeds so perception
stays consistent with motion. Episodes are windowed into training samples
and persisted in a versioned binary container.

Clip filtering mirrors an external vision-language gate: a pluggable text
client answers a fixed yes/no prompt per clip and only "yes" clips are
kept, with every verdict recorded for audit.
"""

from __future__ import annotations

import logging
import math
import zlib
from dataclasses import dataclass

import numpy as np

from . import io as sw_io
from .errors import GenerationError, StereonavError, ValidationError
from .perception import FrameObservation, track_features
from .policy import ObservationWindow, TrainingSample
from .sim import expert_path
from .world import point_polygon_clearance, segment_polygon_clearance, world_to_ego

log = logging.getLogger(__name__)

SCENARIOS = ("turn", "crossing", "detour", "proximity", "crowd", "other")

FILTER_PROMPT = (
    "Is this a first-person video of a person actively walking on foot "
    "(not standing still)? Answer strictly with 'yes' or 'no'."
)


@dataclass
class EpisodeRecord:
    episode_id: str
    frames: list  # list of FrameObservation
    positions: np.ndarray  # (L, 2) world meters at 1 Hz
    headings: np.ndarray  # (L,) radians
    times_s: np.ndarray  # (L,) strictly increasing, 1 s spacing
    scenario_tag: str = "other"
    source: str = "synthetic"

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.headings = np.asarray(self.headings, dtype=np.float64)
        self.times_s = np.asarray(self.times_s, dtype=np.float64)
        n = len(self.positions)
        if not (len(self.frames) == n == len(self.headings) == len(self.times_s)):
            raise ValidationError("frames", "frames/positions/headings/times counts differ")
        if n >= 2 and not np.allclose(np.diff(self.times_s), 1.0):
            raise ValidationError("times_s", "timestamps must increase at 1 s spacing")
        if self.scenario_tag not in SCENARIOS:
            raise ValidationError("scenario_tag", f"unknown tag {self.scenario_tag!r}")

    def __len__(self):
        return len(self.positions)


# -- scenario route templates ---------------------------------------------------


def _clear(world, a, b, margin=0.4):
    return all(segment_polygon_clearance(a, b, o) >= margin for o in world.obstacles)


def _inside(world, p, margin=2.0):
    xmin, ymin, xmax, ymax = world.bounds
    return xmin + margin <= p[0] <= xmax - margin and ymin + margin <= p[1] <= ymax - margin


def _polyline_ok(world, pts, margin=0.4):
    return all(_inside(world, p) for p in pts) and all(
        _clear(world, a, b, margin) for a, b in zip(pts[:-1], pts[1:])
    )


def _unit(theta):
    return np.array([math.cos(theta), math.sin(theta)])


def _template_route(rng, world, scenario, total_len):
    """One candidate route polyline of length `total_len` for a scenario."""
    xmin, ymin, xmax, ymax = world.bounds
    center = np.array([(xmin + xmax) / 2, (ymin + ymax) / 2])
    start = rng.uniform([xmin + 4, ymin + 4], [xmax - 4, ymax - 4])
    theta = rng.uniform(-math.pi, math.pi)
    if scenario == "turn":
        corner = rng.uniform(math.radians(75), math.radians(110)) * rng.choice([-1, 1])
        leg1 = 0.5 * total_len
        mid = start + leg1 * _unit(theta)
        end = mid + (total_len - leg1) * _unit(theta + corner)
        return np.array([start, mid, end])
    if scenario == "crossing":
        half = total_len / 2
        offset = rng.uniform(-4, 4, size=2)
        return np.array([center + offset - half * _unit(theta), center + offset + half * _unit(theta)])
    if scenario == "detour":
        swing = rng.uniform(math.radians(50), math.radians(70)) * rng.choice([-1, 1])
        a = start + 0.3 * total_len * _unit(theta)
        b = a + 0.35 * total_len * _unit(theta + swing)
        c = b + 0.35 * total_len * _unit(theta)
        return np.array([start, a, b, c])
    if scenario == "other":
        pts = [start]
        t = theta
        remaining = total_len
        while remaining > 1e-9:
            seg = min(rng.uniform(3.0, 6.0), remaining)
            pts.append(pts[-1] + seg * _unit(t))
            t += rng.uniform(-math.radians(20), math.radians(20))
            remaining -= seg
        return np.array(pts)
    # proximity and crowd walk straight; proximity additionally requires an
    # obstacle near the midpoint (checked by the caller)
    end = start + total_len * _unit(theta)
    return np.array([start, end])


def _proximity_ok(world, route):
    if not world.obstacles:
        return True
    mid = 0.5 * (route[0] + route[-1])
    return any(point_polygon_clearance(mid, o) <= 3.0 for o in world.obstacles)


def generate_synthetic_episode(seed, world, length_s, scenario=None, min_length_s=10,
                               stereo=False, focal_px=100.0, baseline_m=0.12,
                               episode_id=None, heading_noise_deg=0.0, stop_tail_s=0):
    """Deterministic expert episode for one scenario template.

    `heading_noise_deg` adds per-step camera-heading jitter (positions stay
    on the path, frames render from the jittered heading). Windows anchored
    at jittered poses then show off-axis sub-goals, which teaches the policy
    to steer back toward the path instead of only extrapolating it.

    `stop_tail_s` shortens the route so the expert reaches its end with that
    many seconds to spare and stands there; the resulting windows carry
    decelerating waypoints and true arrived labels.

    Raises GenerationError when the template cannot be placed in the world
    after a bounded number of attempts.
    """
    if length_s < min_length_s:
        raise ValidationError("length_s", f"must be >= {min_length_s}")
    rng = np.random.default_rng(seed)
    scenario = scenario or SCENARIOS[int(rng.integers(0, len(SCENARIOS)))]
    if scenario not in SCENARIOS:
        raise ValidationError("scenario", f"unknown tag {scenario!r}")
    speed = float(rng.uniform(0.7, 1.1))
    walk_len = speed * (length_s - 1)
    if stop_tail_s > 0:
        total_len = max(2.0 * speed, walk_len - speed * stop_tail_s)
    else:
        total_len = walk_len + 3.0 * speed  # route outlasts the walk
    route = None
    for _ in range(200):
        cand = _template_route(rng, world, scenario, total_len)
        if not _polyline_ok(world, cand):
            continue
        if scenario == "proximity" and not _proximity_ok(world, cand):
            continue
        route = cand
        break
    if route is None:
        raise GenerationError(f"could not place a {scenario!r} route in this world")
    positions, headings = expert_path(route, speed=speed, n_steps=length_s)
    if heading_noise_deg > 0:
        headings = headings + rng.normal(0.0, math.radians(heading_noise_deg), size=len(headings))
    frames = [
        FrameObservation(
            frame_id=i,
            left=(float(p[0]), float(p[1]), float(h)),
            right=(float(p[0]), float(p[1]), float(h)) if stereo else None,
            focal_px=focal_px,
            baseline_m=baseline_m if stereo else 0.0,
        )
        for i, (p, h) in enumerate(zip(positions, headings))
    ]
    return EpisodeRecord(
        episode_id=episode_id or f"ep-{seed:08d}",
        frames=frames,
        positions=positions,
        headings=headings,
        times_s=np.arange(length_s, dtype=np.float64),
        scenario_tag=scenario,
        source="synthetic",
    )


def generate_dataset(seed, n_episodes, length_s, world, scenario_cycle=SCENARIOS,
                     heading_noise_deg=0.0, stop_fraction=0.0):
    """A balanced batch of episodes cycling through the scenario templates.

    `stop_fraction` of the episodes end early with the expert standing at
    the route end (see generate_synthetic_episode).
    """
    rng = np.random.default_rng(seed)
    episodes = []
    for i in range(n_episodes):
        scenario = scenario_cycle[i % len(scenario_cycle)]
        stop_tail = 0
        if stop_fraction > 0 and rng.random() < stop_fraction:
            stop_tail = int(rng.integers(2, 6))
        for attempt in range(20):
            sub_seed = int(rng.integers(0, 2 ** 31))
            try:
                episodes.append(
                    generate_synthetic_episode(
                        sub_seed, world, length_s, scenario=scenario,
                        episode_id=f"ep-{seed}-{i:04d}",
                        heading_noise_deg=heading_noise_deg,
                        stop_tail_s=stop_tail,
                    )
                )
                break
            except GenerationError:
                continue
        else:
            raise GenerationError(f"failed to generate a {scenario!r} episode")
    return episodes


def generate_training_mix(seed, n_episodes, length_s, world,
                          noise_range_deg=(10.0, 30.0), stop_fraction=0.25):
    """Episode mix tuned for closed-loop control.

    Per-episode camera-heading jitter covers a range of correction strengths
    and a fraction of episodes end with the expert standing at the route end,
    so the policy learns both to steer back toward the path and to decelerate
    onto a persistent sub-goal.
    """
    rng = np.random.default_rng(seed)
    episodes = []
    i = 0
    while len(episodes) < n_episodes:
        scenario = SCENARIOS[i % len(SCENARIOS)]
        i += 1
        noise = float(rng.uniform(*noise_range_deg))
        tail = int(rng.integers(3, 7)) if rng.random() < stop_fraction else 0
        try:
            episodes.append(
                generate_synthetic_episode(
                    int(rng.integers(0, 2 ** 31)), world, length_s, scenario=scenario,
                    heading_noise_deg=noise, stop_tail_s=tail,
                    episode_id=f"mix-{seed}-{i:04d}",
                )
            )
        except GenerationError:
            continue
        if i > 50 * n_episodes:
            raise GenerationError("episode mix generation stalled")
    return episodes


# -- windowing ----------------------------------------------------------------------


def window_episode(episode, n, horizon, subgoal_seed=None, arrival_radius_m=1.0):
    """Slide an n-frame context over the episode, stride 1.

    Sample t uses context frames/positions t-n+1..t expressed in the ego
    frame of pose t, ground-truth waypoints t+1..t+horizon, and a sub-goal
    drawn uniformly [horizon, 3*horizon] steps ahead on the path, clipped to
    the episode end. Episodes shorter than n + horizon yield no samples.
    """
    L = len(episode)
    if L < n + horizon:
        return []
    if subgoal_seed is None:
        subgoal_seed = zlib.crc32(episode.episode_id.encode("utf-8"))
    rng = np.random.default_rng(subgoal_seed)
    samples = []
    for t in range(n - 1, L - horizon):
        origin = episode.positions[t]
        heading = episode.headings[t]
        ctx = world_to_ego(episode.positions[t - n + 1 : t + 1], origin, heading)
        gt = world_to_ego(episode.positions[t + 1 : t + 1 + horizon], origin, heading)
        offset = int(rng.integers(horizon, 3 * horizon + 1))
        subgoal_world = episode.positions[min(t + offset, L - 1)]
        subgoal = world_to_ego(subgoal_world, origin, heading)
        arrived = bool(np.linalg.norm(subgoal_world - origin) <= arrival_radius_m)
        window = ObservationWindow(
            positions=ctx,
            subgoal=subgoal,
            frames=list(episode.frames[t - n + 1 : t + 1]),
        )
        samples.append(
            TrainingSample(
                window=window,
                gt_waypoints=gt,
                gt_arrived=arrived,
                scenario_tag=episode.scenario_tag,
            )
        )
    return samples


def prepare_samples(extractor, episode, n, horizon, **kwargs):
    """window_episode plus feature extraction, computing each frame once."""
    samples = window_episode(episode, n, horizon, **kwargs)
    if not samples:
        return samples
    cache = [extractor.frame_features(f) for f in episode.frames]
    for t, s in enumerate(samples, start=n - 1):
        s.window.features = cache[t - n + 1 : t + 1]
        s.window.tracks = track_features(
            extractor.provider, s.window.frames, extractor.grid_h, extractor.grid_w, extractor.m_trk
        )
    return samples


# -- clip filtering -------------------------------------------------------------------


@dataclass
class ClipMeta:
    clip_id: str
    duration_s: float
    description: str = ""
    keep: bool = None

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ValidationError("duration_s", "must be positive")


@dataclass
class FilterVerdict:
    clip_id: str
    answer: str  # yes | no | undecided | malformed
    raw_response: str


class FilterClientError(StereonavError):
    """Transport failure talking to the filter client; retriable."""


def normalize_answer(text):
    """Strict yes/no extraction: case and trailing punctuation insensitive."""
    cleaned = text.strip().lower().strip(".!?,;:'\"")
    return cleaned if cleaned in ("yes", "no") else None


def filter_clips(clips, client, prompt=FILTER_PROMPT):
    """Keep clips the client answers "yes" for; record every verdict.

    Timeouts and transport failures mark the clip undecided (excluded,
    retriable); malformed answers exclude the clip with a warning.
    """
    kept, verdicts = [], []
    for clip in clips:
        request = f"{prompt}\n\nClip: {clip.description}"
        try:
            response = client.complete(request)
        except (FilterClientError, TimeoutError, ConnectionError, OSError) as e:
            log.warning("filter client failed on %s: %s (retriable)", clip.clip_id, e)
            verdicts.append(FilterVerdict(clip.clip_id, "undecided", f"error: {e}"))
            continue
        answer = normalize_answer(response)
        if answer is None:
            log.warning("malformed filter answer for %s: %r", clip.clip_id, response)
            verdicts.append(FilterVerdict(clip.clip_id, "malformed", response))
            continue
        verdicts.append(FilterVerdict(clip.clip_id, answer, response))
        if answer == "yes":
            kept.append(clip)
    return kept, verdicts


class StubCompletionClient:
    """Deterministic in-process stand-in for the external filter endpoint."""

    def __init__(self, answer_fn):
        self.answer_fn = answer_fn
        self.calls = 0

    def complete(self, prompt):
        self.calls += 1
        return self.answer_fn(prompt)


class HttpCompletionClient:
    """Text-completion client over the same HTTP transport as the server."""

    def __init__(self, url, timeout_s=10.0):
        self.url = url
        self.timeout_s = timeout_s

    def complete(self, prompt):
        import httpx

        try:
            resp = httpx.post(self.url, json={"prompt": prompt}, timeout=self.timeout_s)
            resp.raise_for_status()
            return resp.json()["text"]
        except httpx.HTTPError as e:
            raise FilterClientError(str(e)) from e


# -- persistence ------------------------------------------------------------------------


def _frame_to_dict(f):
    return {
        "frame_id": f.frame_id,
        "left": list(f.left) if isinstance(f.left, tuple) else f.left,
        "right": list(f.right) if isinstance(f.right, tuple) else f.right,
        "focal_px": f.focal_px,
        "baseline_m": f.baseline_m,
    }


def _frame_from_dict(d):
    left = tuple(d["left"]) if isinstance(d["left"], list) else d["left"]
    right = tuple(d["right"]) if isinstance(d["right"], list) else d["right"]
    return FrameObservation(
        frame_id=d["frame_id"], left=left, right=right,
        focal_px=d["focal_px"], baseline_m=d["baseline_m"],
    )


def episode_to_record(ep):
    return {
        "episode_id": ep.episode_id,
        "frames": [_frame_to_dict(f) for f in ep.frames],
        "positions": ep.positions.tolist(),
        "headings": ep.headings.tolist(),
        "times_s": ep.times_s.tolist(),
        "scenario_tag": ep.scenario_tag,
        "source": ep.source,
    }


def episode_from_record(rec):
    return EpisodeRecord(
        episode_id=rec["episode_id"],
        frames=[_frame_from_dict(d) for d in rec["frames"]],
        positions=np.asarray(rec["positions"], dtype=np.float64),
        headings=np.asarray(rec["headings"], dtype=np.float64),
        times_s=np.asarray(rec["times_s"], dtype=np.float64),
        scenario_tag=rec["scenario_tag"],
        source=rec["source"],
    )


def save_dataset(path, episodes):
    sw_io.save_dataset_records(path, [episode_to_record(e) for e in episodes])


def load_dataset(path):
    return [episode_from_record(r) for r in sw_io.load_dataset_records(path)]


def episodes_equal(a, b):
    return (
        a.episode_id == b.episode_id
        and a.scenario_tag == b.scenario_tag
        and a.source == b.source
        and np.array_equal(a.positions, b.positions)
        and np.array_equal(a.headings, b.headings)
        and np.array_equal(a.times_s, b.times_s)
        and len(a.frames) == len(b.frames)
        and all(
            fa.frame_id == fb.frame_id
            and fa.left == fb.left
            and fa.right == fb.right
            and fa.focal_px == fb.focal_px
            and fa.baseline_m == fb.baseline_m
            for fa, fb in zip(a.frames, b.frames)
        )
    )
