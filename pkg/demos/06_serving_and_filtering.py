"""The two external text interfaces: waypoint serving and clip filtering.

The waypoint service is exercised in-process here (the `stereonav serve`
command runs the same app over uvicorn). The clip filter shows the strict
yes/no gate with its audit trail, including how timeouts and malformed
answers are excluded.
"""

import numpy as np
from fastapi.testclient import TestClient

from stereonav.episodes import (
    ClipMeta,
    FilterClientError,
    StubCompletionClient,
    filter_clips,
)
from stereonav.perception import FrameFeatures
from stereonav.policy import PolicyModel, compact_config
from stereonav.server import InferenceService, create_app, encode_feature_window

print("== waypoint service ==")
cfg = compact_config()
model = PolicyModel(cfg, seed=0)
model.save("/tmp/stereonav_serve_demo.swck")
service = InferenceService.from_checkpoint("/tmp/stereonav_serve_demo.swck")
client = TestClient(create_app(service))

health = client.get("/health").json()
print(f"health: {health['status']}, checkpoint {health['checkpoint_id']}, "
      f"config hash {health['config_hash']}")

rng = np.random.default_rng(0)
feats = [
    FrameFeatures(
        appearance=rng.standard_normal((cfg.grid_h, cfg.grid_w, cfg.appearance_dim)),
        depth=rng.uniform(1.0, 10.0, size=(cfg.grid_h, cfg.grid_w)),
    )
    for _ in range(cfg.context_n)
]
positions = np.zeros((cfg.context_n, 2))
positions[:, 0] = np.arange(cfg.context_n) - (cfg.context_n - 1)
body = {
    "protocol_version": 1,
    "positions": positions.tolist(),
    "subgoal": [6.0, 1.0],
    "mode": "monocular",
    "frames": {"kind": "features", **encode_feature_window(feats)},
}
resp = client.post("/predict", json=body).json()
print(f"waypoints: {np.array(resp['waypoints']).round(2).tolist()}")
print(f"arrival probability {resp['arrival_prob']:.3f}, latency {resp['latency_ms']:.1f} ms")

bad = dict(body, positions=body["positions"][:-1])
err = client.post("/predict", json=bad)
print(f"wrong position count -> {err.status_code}: {err.json()['detail']}")

print("\n== clip filtering ==")
clips = [
    ClipMeta("walk-01", 42.0, "steady forward walking through a market"),
    ClipMeta("idle-02", 30.0, "camera wearer standing at a crossing"),
    ClipMeta("walk-03", 55.0, "uphill walk, light crowd"),
    ClipMeta("shop-04", 61.0, "browsing shelves inside a store"),
]
truth = {c.description: a for c, a in zip(clips, ["yes", "no", "YES.", "No."])}


def answer(prompt):
    description = prompt.split("Clip: ", 1)[1]
    return truth[description]


kept, verdicts = filter_clips(clips, StubCompletionClient(answer))
print(f"kept: {[c.clip_id for c in kept]}")
for v in verdicts:
    print(f"  {v.clip_id}: answer={v.answer!r} raw={v.raw_response!r}")

flaky = StubCompletionClient(lambda p: (_ for _ in ()).throw(FilterClientError("timeout")))
_, bad_verdicts = filter_clips([ClipMeta("lost-05", 20.0, "no response")], flaky)
print(f"timeout verdict: {bad_verdicts[0].answer!r} ({bad_verdicts[0].raw_response})")
