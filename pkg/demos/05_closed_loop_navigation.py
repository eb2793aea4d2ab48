"""Closed-loop navigation: plan a route with A*, chain sub-goals, roll out.

The oracle expert (which emits ground-truth waypoints toward the current
sub-goal) shows the harness at its ceiling; the zero policy shows the
floor. A freshly trained policy lands near the oracle; see demo 04 to
produce one, or run with the untrained model to watch it wander.
"""

import numpy as np

from stereonav.perception import FeatureExtractor
from stereonav.sim import (
    OracleExpertPolicy,
    ZeroPolicy,
    fixture_setup,
    random_route,
    rollout,
)
from stereonav.world import path_cost

world, graph, provider = fixture_setup(seed=7, n_obstacles=3)
extractor = FeatureExtractor(provider, 4, 4, 12, m_trk=9)
rng = np.random.default_rng(1)

print(f"world bounds {world.bounds}, {len(world.obstacles)} obstacles, "
      f"{len(graph)} graph nodes")

route = random_route(graph, rng)
cost = path_cost(graph, route)
print(f"A* route through nodes {route}, cost {cost:.1f} m")

print("\n== oracle expert ==")
waypoints = np.array([graph.nodes[i] for i in route])
res = rollout(OracleExpertPolicy(), world, waypoints, extractor, max_steps=120, context_n=5)
print(f"success={res.success} collided={res.collided} steps={res.steps}")
print(f"sub-goal index trace: {res.subgoal_indices}")

print("\n== zero policy (negative control) ==")
res0 = rollout(ZeroPolicy(), world, waypoints, extractor, max_steps=20, context_n=5)
print(f"success={res0.success} timed_out={res0.timed_out} "
      f"(never moves, so it times out)")

print("\n== batch of oracle rollouts ==")
n_ok = 0
for i in range(10):
    r = random_route(graph, rng)
    wps = np.array([graph.nodes[j] for j in r])
    out = rollout(OracleExpertPolicy(), world, wps, extractor, max_steps=150, context_n=5)
    n_ok += out.success
print(f"oracle success: {n_ok}/10")
