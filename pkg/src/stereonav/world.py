"""2D world geometry: obstacles, waypoint graphs, A* planning, SE(2) frames.

Distances are meters, angles radians. Worlds are axis-aligned rectangles
containing convex polygonal obstacles and constant-velocity point agents.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NoPathError


def wrap_angle(a):
    """Wrap an angle (or array of angles) to (-pi, pi]."""
    return np.arctan2(np.sin(a), np.cos(a))


def world_to_ego(points, origin, heading):
    """Express world-frame points in the frame at `origin` facing `heading`."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64)) - np.asarray(origin, dtype=np.float64)
    c, s = math.cos(-heading), math.sin(-heading)
    rot = np.array([[c, -s], [s, c]])
    out = pts @ rot.T
    return out if np.asarray(points).ndim == 2 else out[0]


def ego_to_world(points, origin, heading):
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    c, s = math.cos(heading), math.sin(heading)
    rot = np.array([[c, -s], [s, c]])
    out = pts @ rot.T + np.asarray(origin, dtype=np.float64)
    return out if np.asarray(points).ndim == 2 else out[0]


# -- polygons and segments -------------------------------------------------


def point_in_convex_polygon(p, verts):
    """Strict interior test for a convex CCW polygon."""
    p = np.asarray(p)
    v = np.asarray(verts)
    nxt = np.roll(v, -1, axis=0)
    edge = nxt - v
    rel = p - v
    cross = edge[:, 0] * rel[:, 1] - edge[:, 1] * rel[:, 0]
    return bool(np.all(cross > 0) or np.all(cross < 0))


def _orient(a, b, c):
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def segments_intersect(p1, p2, q1, q2):
    d1 = _orient(q1, q2, p1)
    d2 = _orient(q1, q2, p2)
    d3 = _orient(p1, p2, q1)
    d4 = _orient(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)):
        return True

    def on_seg(a, b, c):
        return (
            min(a[0], b[0]) - 1e-12 <= c[0] <= max(a[0], b[0]) + 1e-12
            and min(a[1], b[1]) - 1e-12 <= c[1] <= max(a[1], b[1]) + 1e-12
        )

    if d1 == 0 and on_seg(q1, q2, p1):
        return True
    if d2 == 0 and on_seg(q1, q2, p2):
        return True
    if d3 == 0 and on_seg(p1, p2, q1):
        return True
    if d4 == 0 and on_seg(p1, p2, q2):
        return True
    return False


def segment_intersects_polygon(p1, p2, verts):
    """True if segment p1-p2 touches the polygon boundary or interior."""
    v = np.asarray(verts)
    for i in range(len(v)):
        if segments_intersect(p1, p2, v[i], v[(i + 1) % len(v)]):
            return True
    return point_in_convex_polygon(p1, v) or point_in_convex_polygon(p2, v)


def point_segment_distance(p, a, b):
    p, a, b = (np.asarray(x, dtype=np.float64) for x in (p, a, b))
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return float(np.linalg.norm(p - a))
    t = float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    return float(np.linalg.norm(p - (a + t * ab)))


def point_polygon_clearance(p, verts):
    """Distance from a point to the polygon boundary (0 if inside)."""
    v = np.asarray(verts)
    if point_in_convex_polygon(p, v):
        return 0.0
    return min(
        point_segment_distance(p, v[i], v[(i + 1) % len(v)]) for i in range(len(v))
    )


def segment_polygon_clearance(p1, p2, verts, samples=16):
    """Minimum distance from segment p1-p2 to the polygon (0 if intersecting)."""
    if segment_intersects_polygon(p1, p2, verts):
        return 0.0
    v = np.asarray(verts)
    best = math.inf
    ts = np.linspace(0.0, 1.0, samples)
    pts = np.outer(1 - ts, np.asarray(p1)) + np.outer(ts, np.asarray(p2))
    for i in range(len(v)):
        a, b = v[i], v[(i + 1) % len(v)]
        for p in pts:
            best = min(best, point_segment_distance(p, a, b))
    return best


def moving_points_min_distance(r0, r1, a0, a1):
    """Min distance between two points moving linearly over the same unit time."""
    d0 = np.asarray(r0, dtype=np.float64) - np.asarray(a0, dtype=np.float64)
    dv = (np.asarray(r1) - np.asarray(r0)) - (np.asarray(a1) - np.asarray(a0))
    vv = float(dv @ dv)
    t = 0.0 if vv == 0.0 else float(np.clip(-(d0 @ dv) / vv, 0.0, 1.0))
    return float(np.linalg.norm(d0 + t * dv))


def ray_segment_distance(origin, direction, a, b):
    """Distance along a ray to segment a-b, or inf if the ray misses it."""
    ox, oy = origin
    dx, dy = direction
    ax, ay = a
    bx, by = b
    ex, ey = bx - ax, by - ay
    denom = dx * ey - dy * ex
    if abs(denom) < 1e-15:
        return math.inf
    t = ((ax - ox) * ey - (ay - oy) * ex) / denom
    u = ((ax - ox) * dy - (ay - oy) * dx) / denom
    if t >= 0.0 and 0.0 <= u <= 1.0:
        return t
    return math.inf


# -- world model -------------------------------------------------------------


@dataclass
class Agent:
    """A constant-speed pedestrian following a polyline, clamping at the end."""

    path: np.ndarray  # (k, 2)
    speed: float
    radius: float = 0.3

    def __post_init__(self):
        self.path = np.asarray(self.path, dtype=np.float64)
        if self.speed < 0:
            raise ConfigurationError("agent speed must be >= 0")
        seg = np.diff(self.path, axis=0)
        self._cum = np.concatenate([[0.0], np.cumsum(np.linalg.norm(seg, axis=1))])

    def position(self, t):
        s = min(self.speed * t, self._cum[-1])
        i = int(np.searchsorted(self._cum, s, side="right")) - 1
        i = min(i, len(self.path) - 2) if len(self.path) > 1 else 0
        if len(self.path) == 1:
            return self.path[0].copy()
        seg_len = self._cum[i + 1] - self._cum[i]
        frac = 0.0 if seg_len == 0 else (s - self._cum[i]) / seg_len
        return self.path[i] + frac * (self.path[i + 1] - self.path[i])


@dataclass
class World:
    """Static rectangle with convex obstacles and moving agents."""

    bounds: tuple  # (xmin, ymin, xmax, ymax)
    obstacles: list = field(default_factory=list)  # list of (k, 2) vertex arrays
    agents: list = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        self.obstacles = [np.asarray(o, dtype=np.float64) for o in self.obstacles]
        xmin, ymin, xmax, ymax = self.bounds
        for o in self.obstacles:
            if o[:, 0].min() < xmin or o[:, 0].max() > xmax or o[:, 1].min() < ymin or o[:, 1].max() > ymax:
                raise ConfigurationError("obstacle vertices outside world bounds")

    def contains(self, p):
        xmin, ymin, xmax, ymax = self.bounds
        return xmin <= p[0] <= xmax and ymin <= p[1] <= ymax

    def segment_hits_obstacle(self, p1, p2):
        return any(segment_intersects_polygon(p1, p2, o) for o in self.obstacles)

    def raycast(self, origin, angle, max_range=50.0):
        """Distance to the nearest obstacle edge or boundary along a ray."""
        d = (math.cos(angle), math.sin(angle))
        best = max_range
        xmin, ymin, xmax, ymax = self.bounds
        walls = [
            ((xmin, ymin), (xmax, ymin)),
            ((xmax, ymin), (xmax, ymax)),
            ((xmax, ymax), (xmin, ymax)),
            ((xmin, ymax), (xmin, ymin)),
        ]
        for a, b in walls:
            best = min(best, ray_segment_distance(origin, d, a, b))
        for o in self.obstacles:
            for i in range(len(o)):
                best = min(best, ray_segment_distance(origin, d, o[i], o[(i + 1) % len(o)]))
        return best

    def to_json(self):
        return json.dumps(
            {
                "bounds": list(self.bounds),
                "obstacles": [o.tolist() for o in self.obstacles],
                "agents": [
                    {"path": a.path.tolist(), "speed": a.speed, "radius": a.radius}
                    for a in self.agents
                ],
                "seed": self.seed,
            },
            indent=2,
        )

    @staticmethod
    def from_json(text):
        raw = json.loads(text)
        return World(
            bounds=tuple(raw["bounds"]),
            obstacles=[np.asarray(o) for o in raw["obstacles"]],
            agents=[Agent(np.asarray(a["path"]), a["speed"], a.get("radius", 0.3)) for a in raw["agents"]],
            seed=raw.get("seed", 0),
        )


@dataclass
class RobotState:
    position: np.ndarray
    heading: float
    time_s: float = 0.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)


# -- waypoint graph and A* ----------------------------------------------------


class WaypointGraph:
    """Simple undirected graph over 2D nodes with Euclidean edge weights."""

    def __init__(self, nodes):
        self.nodes = np.asarray(nodes, dtype=np.float64)
        self.adj = {i: {} for i in range(len(self.nodes))}

    def add_edge(self, i, j):
        if i == j or j in self.adj[i]:
            return
        w = float(np.linalg.norm(self.nodes[i] - self.nodes[j]))
        self.adj[i][j] = w
        self.adj[j][i] = w

    def edge_weight(self, i, j):
        return self.adj[i][j]

    def __len__(self):
        return len(self.nodes)


def astar_plan(graph, start, goal):
    """Minimum-cost node path using the (admissible) Euclidean heuristic.

    Ties are broken toward the smallest node id, which makes the returned
    path deterministic. Raises NoPathError when goal is unreachable.
    """
    if start not in graph.adj or goal not in graph.adj:
        raise KeyError("start/goal not in graph")
    if start == goal:
        return [start]

    def h(i):
        return float(np.linalg.norm(graph.nodes[i] - graph.nodes[goal]))

    g_cost = {start: 0.0}
    came = {}
    open_heap = [(h(start), start)]
    closed = set()
    while open_heap:
        f, node = heapq.heappop(open_heap)
        if node in closed:
            continue
        if node == goal:
            path = [node]
            while node in came:
                node = came[node]
                path.append(node)
            return path[::-1]
        closed.add(node)
        for nbr, w in graph.adj[node].items():
            cand = g_cost[node] + w
            if cand < g_cost.get(nbr, math.inf):
                g_cost[nbr] = cand
                came[nbr] = node
                heapq.heappush(open_heap, (cand + h(nbr), nbr))
    raise NoPathError(start, goal, reachable=len(closed))


def path_cost(graph, path):
    return sum(graph.edge_weight(a, b) for a, b in zip(path, path[1:]))
