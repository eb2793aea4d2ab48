import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from stereonav.perception import FeatureExtractor, SyntheticSceneProvider
from stereonav.policy import PolicyModel, tiny_config
from stereonav.server import InferenceService, create_app, encode_feature_window
from stereonav.sim import random_world


@pytest.fixture(scope="module")
def served(tmp_path_factory):
    cfg = tiny_config()
    model = PolicyModel(cfg, seed=0)
    path = tmp_path_factory.mktemp("ck") / "model.swck"
    model.save(path)
    world = random_world(seed=9, n_obstacles=2)
    extractor = FeatureExtractor(
        SyntheticSceneProvider(world),
        grid_h=cfg.grid_h, grid_w=cfg.grid_w, appearance_dim=cfg.appearance_dim,
        m_trk=cfg.m_trk,
    )
    service = InferenceService.from_checkpoint(path, extractor=extractor)
    return TestClient(create_app(service)), service, path, cfg


def feature_request(cfg, seed=0):
    rng = np.random.default_rng(seed)
    from stereonav.perception import FrameFeatures

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
        "subgoal": [4.0, 1.0],
        "mode": "monocular",
        "frames": {"kind": "features", **encode_feature_window(feats)},
    }
    return body


class TestPredict:
    def test_valid_request_contract(self, served):
        client, _, _, cfg = served
        resp = client.post("/predict", json=feature_request(cfg))
        assert resp.status_code == 200
        data = resp.json()
        assert len(data["waypoints"]) == cfg.horizon
        assert all(len(w) == 2 for w in data["waypoints"])
        assert 0.0 <= data["arrival_prob"] <= 1.0
        assert data["latency_ms"] >= 0.0

    def test_wrong_position_count_names_field(self, served):
        client, _, _, cfg = served
        body = feature_request(cfg)
        body["positions"] = body["positions"][:-1]
        resp = client.post("/predict", json=body)
        assert resp.status_code == 422
        assert resp.json()["detail"]["field"] == "positions"

    def test_deterministic_bodies_minus_latency(self, served):
        client, _, _, cfg = served
        body = feature_request(cfg, seed=3)
        responses = [client.post("/predict", json=body).json() for _ in range(3)]
        for r in responses:
            r.pop("latency_ms")
        canon = [json.dumps(r, sort_keys=True) for r in responses]
        assert canon[0] == canon[1] == canon[2]

    def test_seeds_mode(self, served):
        client, _, _, cfg = served
        body = feature_request(cfg)
        body["frames"] = {
            "kind": "seeds",
            "seeds": [[5.0 + 0.5 * i, 5.0, 0.0] for i in range(cfg.context_n)],
        }
        resp = client.post("/predict", json=body)
        assert resp.status_code == 200

    def test_stereo_seeds_mode(self, served):
        client, _, _, cfg = served
        body = feature_request(cfg)
        body["mode"] = "stereo"
        body["frames"] = {
            "kind": "seeds",
            "seeds": [[5.0 + 0.5 * i, 5.0, 0.0] for i in range(cfg.context_n)],
        }
        resp = client.post("/predict", json=body)
        assert resp.status_code == 200

    def test_corrupt_payload_is_4xx(self, served):
        client, _, _, cfg = served
        body = feature_request(cfg)
        body["frames"]["appearance_b64"] = "AAAA"
        resp = client.post("/predict", json=body)
        assert resp.status_code == 422
        assert resp.json()["detail"]["field"] == "frames"

    def test_schema_violation_rejected_by_model(self, served):
        client, _, _, cfg = served
        body = feature_request(cfg)
        body["frames"]["kind"] = "banana"
        resp = client.post("/predict", json=body)
        assert resp.status_code == 422

    def test_nonpositive_depth_rejected(self, served):
        client, _, _, cfg = served
        from stereonav import io as sw_io
        import base64

        body = feature_request(cfg)
        bad_depth = np.zeros((cfg.context_n, cfg.grid_h, cfg.grid_w, 1))
        blob = sw_io.encode_features(list(bad_depth))
        body["frames"]["depth_b64"] = base64.b64encode(blob).decode("ascii")
        resp = client.post("/predict", json=body)
        assert resp.status_code == 422


class TestHealth:
    def test_ready_reports_checkpoint(self, served):
        client, service, path, _ = served
        data = client.get("/health").json()
        assert data["status"] == "ready"
        assert data["checkpoint_id"] == path.name
        assert data["uptime_s"] >= 0.0

    def test_not_ready_without_checkpoint(self):
        client = TestClient(create_app(InferenceService(model=None)))
        data = client.get("/health").json()
        assert data["status"] == "not ready"
        assert data["checkpoint_id"] is None
        resp = client.post("/predict", json={"positions": [], "subgoal": [0, 0],
                                             "frames": {"kind": "features"}})
        assert resp.status_code == 503

    def test_config_hash_changes_iff_checkpoint_changes(self, tmp_path):
        cfg = tiny_config()
        m1 = PolicyModel(cfg, seed=1)
        p1 = tmp_path / "a.swck"
        m1.save(p1)
        s1 = InferenceService.from_checkpoint(p1)
        s1b = InferenceService.from_checkpoint(p1)
        assert s1.config_hash == s1b.config_hash
        m2 = PolicyModel(cfg, seed=2)
        p2 = tmp_path / "b.swck"
        m2.save(p2)
        s2 = InferenceService.from_checkpoint(p2)
        assert s2.config_hash != s1.config_hash


def test_latency_p50_under_one_second(served):
    client, _, _, cfg = served
    body = feature_request(cfg, seed=7)
    latencies = []
    for _ in range(9):
        data = client.post("/predict", json=body).json()
        latencies.append(data["latency_ms"])
    assert float(np.median(latencies)) < 1000.0
