"""Closed-loop evaluation: kinematic stepping, sub-goal chaining, rollouts.

The robot is a point with first-order kinematics: each second it turns
toward its commanded waypoint at a capped rate and translates at a capped
speed, scaled by how well it is aligned (a robot facing away pivots in
place). Collisions are swept-segment tests against obstacle polygons and
moving agents; a collision ends the rollout as a failure.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import GenerationError
from .perception import FrameObservation, SyntheticSceneProvider, track_features
from .policy import ObservationWindow, PolicyOutput
from .world import (
    Agent,
    RobotState,
    WaypointGraph,
    World,
    astar_plan,
    ego_to_world,
    moving_points_min_distance,
    point_polygon_clearance,
    segment_polygon_clearance,
    world_to_ego,
    wrap_angle,
)

SPEED_CAP_MPS = 1.2
TURN_CAP_RADPS = math.pi / 2


def simulator_step(world, state, next_waypoint, dt=1.0,
                   speed_cap=SPEED_CAP_MPS, turn_cap=TURN_CAP_RADPS):
    """Advance the robot one step toward `next_waypoint`.

    Returns (new_state, collided). Collision is swept along this step's
    segment against every obstacle polygon and every moving agent; it is a
    result, not an error.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    p = state.position
    to_wp = np.asarray(next_waypoint, dtype=np.float64) - p
    dist = float(np.linalg.norm(to_wp))
    if dist < 1e-12:
        new_state = RobotState(position=p.copy(), heading=state.heading, time_s=state.time_s + dt)
        return new_state, False
    bearing = math.atan2(to_wp[1], to_wp[0])
    delta = float(wrap_angle(bearing - state.heading))
    turn = float(np.clip(delta, -turn_cap * dt, turn_cap * dt))
    heading = float(wrap_angle(state.heading + turn))
    remaining = float(wrap_angle(bearing - heading))
    align = max(math.cos(remaining), 0.0)
    step_len = min(speed_cap * dt, dist) * align
    new_p = p + step_len * np.array([math.cos(heading), math.sin(heading)])
    xmin, ymin, xmax, ymax = world.bounds
    new_p[0] = float(np.clip(new_p[0], xmin, xmax))
    new_p[1] = float(np.clip(new_p[1], ymin, ymax))

    collided = world.segment_hits_obstacle(p, new_p)
    if not collided:
        for agent in world.agents:
            a0 = agent.position(state.time_s)
            a1 = agent.position(state.time_s + dt)
            if moving_points_min_distance(p, new_p, a0, a1) <= agent.radius:
                collided = True
                break
    new_state = RobotState(position=new_p, heading=heading, time_s=state.time_s + dt)
    return new_state, collided


class SubgoalController:
    """Waypoint-to-waypoint chaining: advance on radius or model arrival.

    The index never regresses and the final waypoint is retained once
    reached.
    """

    def __init__(self, waypoints, r=1.0, tau=0.5):
        if len(waypoints) == 0:
            raise ValueError("waypoint list must be nonempty")
        if r <= 0 or not (0.0 < tau < 1.0):
            raise ValueError("need r > 0 and tau in (0, 1)")
        self.waypoints = np.asarray(waypoints, dtype=np.float64)
        self.r = r
        self.tau = tau
        self.index = 0

    @property
    def current(self):
        return self.waypoints[self.index]

    @property
    def at_final(self):
        return self.index == len(self.waypoints) - 1

    def update(self, position, arrival_prob=0.0):
        """Advance past reached sub-goals; returns the new index."""
        while not self.at_final and np.linalg.norm(self.current - position) <= self.r:
            self.index += 1
        if not self.at_final and arrival_prob >= self.tau:
            self.index += 1
        return self.index


@dataclass
class RolloutResult:
    trajectory: np.ndarray  # (steps+1, 2) world positions
    success: bool
    collided: bool
    timed_out: bool
    steps: int
    subgoal_indices: list = field(default_factory=list)


def _window_from_history(history, positions, state, subgoal_world, extractor, context_n):
    frames = list(history)[-context_n:]
    feats = [f for _, f in frames]
    while len(feats) < context_n:  # warm-up: repeat the earliest observation
        feats.insert(0, feats[0])
    raw = [f for f, _ in frames]
    while len(raw) < context_n:
        raw.insert(0, raw[0])
    tracks = track_features(extractor.provider, raw, extractor.grid_h, extractor.grid_w, extractor.m_trk)
    past = list(positions)[-context_n:]
    while len(past) < context_n:
        past.insert(0, past[0])
    ego_positions = world_to_ego(np.asarray(past), state.position, state.heading)
    ego_subgoal = world_to_ego(np.asarray(subgoal_world), state.position, state.heading)
    return ObservationWindow(
        positions=ego_positions, subgoal=ego_subgoal, features=feats, tracks=tracks
    )


def rollout(policy, world, route_waypoints, extractor, max_steps=80,
            r=1.0, tau=0.5, success_radius=1.0, context_n=5):
    """Closed-loop run: observe, predict, execute the first waypoint, repeat.

    `route_waypoints` are world-frame positions (typically A* node
    positions). Succeeds when the robot is within `success_radius` of the
    final waypoint without any collision; exceeding `max_steps` is a timeout
    failure, not an exception.
    """
    route = np.asarray(route_waypoints, dtype=np.float64)
    start = route[0]
    first_target = route[1] if len(route) > 1 else route[0]
    heading = math.atan2(first_target[1] - start[1], first_target[0] - start[0])
    state = RobotState(position=start.copy(), heading=heading, time_s=0.0)
    controller = SubgoalController(route, r=r, tau=tau)
    controller.update(state.position)

    history = deque(maxlen=context_n)
    positions = deque(maxlen=context_n)
    trajectory = [state.position.copy()]
    subgoal_indices = []

    for step in range(max_steps):
        frame = FrameObservation(
            frame_id=step,
            left=(float(state.position[0]), float(state.position[1]), float(state.heading)),
            focal_px=100.0,
        )
        history.append((frame, extractor.frame_features(frame)))
        positions.append(state.position.copy())
        window = _window_from_history(
            history, positions, state, controller.current, extractor, context_n
        )
        out = policy.predict(window)
        wp_world = ego_to_world(out.waypoints_array()[0], state.position, state.heading)
        state, collided = simulator_step(world, state, wp_world)
        trajectory.append(state.position.copy())
        if collided:
            return RolloutResult(
                trajectory=np.asarray(trajectory), success=False, collided=True,
                timed_out=False, steps=step + 1, subgoal_indices=subgoal_indices,
            )
        controller.update(state.position, out.arrival_value())
        subgoal_indices.append(controller.index)
        if controller.at_final and np.linalg.norm(route[-1] - state.position) <= success_radius:
            return RolloutResult(
                trajectory=np.asarray(trajectory), success=True, collided=False,
                timed_out=False, steps=step + 1, subgoal_indices=subgoal_indices,
            )
    return RolloutResult(
        trajectory=np.asarray(trajectory), success=False, collided=False,
        timed_out=True, steps=max_steps, subgoal_indices=subgoal_indices,
    )


# -- reference policies ---------------------------------------------------------


class OracleExpertPolicy:
    """Emits ground-truth waypoints along the straight line to the sub-goal."""

    def __init__(self, speed=1.0, horizon=5, arrival_radius=1.0):
        self.speed = speed
        self.horizon = horizon
        self.arrival_radius = arrival_radius

    def predict(self, window):
        sub = np.asarray(window.subgoal, dtype=np.float64)
        dist = float(np.linalg.norm(sub))
        direction = sub / dist if dist > 1e-9 else np.zeros(2)
        ks = np.arange(1, self.horizon + 1)
        reach = np.minimum(ks * self.speed, dist)
        waypoints = direction[None, :] * reach[:, None]
        prob = 1.0 if dist <= self.arrival_radius else 0.0
        return PolicyOutput(waypoints=waypoints, arrival_prob=prob)


class ZeroPolicy:
    """Negative control: never moves, never claims arrival."""

    def __init__(self, horizon=5):
        self.horizon = horizon

    def predict(self, window):
        return PolicyOutput(waypoints=np.zeros((self.horizon, 2)), arrival_prob=0.0)


# -- expert path following a route ------------------------------------------------


def expert_path(route_waypoints, speed=1.0, dt=1.0, n_steps=None):
    """Constant-speed walk along a route polyline, sampled every `dt` seconds.

    Returns (positions, headings); heading follows the local path direction
    and holds its last value if the walk reaches the end early.
    """
    route = np.asarray(route_waypoints, dtype=np.float64)
    if len(route) < 2:
        raise GenerationError("route needs at least two waypoints")
    seg = np.diff(route, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    if np.any(seg_len < 1e-9):
        raise GenerationError("route contains a zero-length segment")
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    if n_steps is None:
        n_steps = int(math.floor(total / (speed * dt))) + 1
    positions, headings = [], []
    for i in range(n_steps):
        s = min(i * speed * dt, total)
        j = min(int(np.searchsorted(cum, s, side="right")) - 1, len(seg) - 1)
        frac = (s - cum[j]) / seg_len[j]
        positions.append(route[j] + frac * seg[j])
        headings.append(math.atan2(seg[j][1], seg[j][0]))
    return np.asarray(positions), np.asarray(headings)


# -- fixture worlds ----------------------------------------------------------------


def _random_convex_obstacle(rng, center, size):
    angles = np.sort(rng.uniform(0, 2 * math.pi, size=rng.integers(3, 7)))
    radii = rng.uniform(0.5 * size, size, size=len(angles))
    return center + np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)


def random_world(seed, n_obstacles=4, side=40.0, n_agents=0, obstacle_size=2.5):
    """A bounded square world with convex obstacles away from the border."""
    rng = np.random.default_rng(seed)
    obstacles = []
    for _ in range(n_obstacles):
        center = rng.uniform(8.0, side - 8.0, size=2)
        obstacles.append(_random_convex_obstacle(rng, center, obstacle_size))
    agents = []
    for _ in range(n_agents):
        a = rng.uniform(4.0, side - 4.0, size=2)
        b = rng.uniform(4.0, side - 4.0, size=2)
        agents.append(Agent(path=np.stack([a, b]), speed=rng.uniform(0.4, 1.0)))
    return World(bounds=(0.0, 0.0, side, side), obstacles=obstacles, agents=agents, seed=int(seed))


def build_visibility_graph(world, rng, n_nodes=40, max_edge_len=12.0, clearance=2.0):
    """Sample free-space nodes and connect pairs whose segment clears obstacles."""
    xmin, ymin, xmax, ymax = world.bounds
    nodes = []
    attempts = 0
    while len(nodes) < n_nodes and attempts < 50 * n_nodes:
        attempts += 1
        p = rng.uniform([xmin + 2, ymin + 2], [xmax - 2, ymax - 2])
        if all(point_polygon_clearance(p, o) >= clearance for o in world.obstacles):
            nodes.append(p)
    graph = WaypointGraph(np.asarray(nodes))
    for i in range(len(nodes)):
        for j in range(i + 1, len(nodes)):
            if np.linalg.norm(nodes[i] - nodes[j]) > max_edge_len:
                continue
            if all(
                segment_polygon_clearance(nodes[i], nodes[j], o) >= clearance
                for o in world.obstacles
            ):
                graph.add_edge(i, j)
    return graph


def random_route(graph, rng, min_nodes=3, max_tries=100):
    """A random A* route over the graph with at least `min_nodes` nodes."""
    n = len(graph)
    for _ in range(max_tries):
        start, goal = rng.integers(0, n, size=2)
        if start == goal:
            continue
        try:
            path = astar_plan(graph, int(start), int(goal))
        except Exception:
            continue
        if len(path) >= min_nodes:
            return path
    raise GenerationError("could not sample a route on this graph")


def fixture_setup(seed, n_obstacles=3, n_agents=0):
    """World + graph + extractor bundle used across tests and demos."""
    world = random_world(seed, n_obstacles=n_obstacles, n_agents=n_agents)
    rng = np.random.default_rng(seed + 1)
    graph = build_visibility_graph(world, rng)
    provider = SyntheticSceneProvider(world)
    return world, graph, provider
