import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stereonav.episodes import (
    FILTER_PROMPT,
    ClipMeta,
    EpisodeRecord,
    FilterClientError,
    StubCompletionClient,
    episodes_equal,
    filter_clips,
    generate_dataset,
    generate_synthetic_episode,
    load_dataset,
    normalize_answer,
    prepare_samples,
    save_dataset,
    window_episode,
)
from stereonav.errors import FormatError, ValidationError
from stereonav.perception import FeatureExtractor, FrameObservation, SyntheticSceneProvider
from stereonav.sim import random_world


@pytest.fixture(scope="module")
def world():
    return random_world(seed=3, n_obstacles=3)


def straight_episode(length=14, speed=1.0):
    xs = np.arange(length, dtype=np.float64) * speed
    positions = np.stack([xs + 2.0, np.full(length, 5.0)], axis=1)
    frames = [
        FrameObservation(frame_id=i, left=(float(p[0]), float(p[1]), 0.0), focal_px=100.0)
        for i, p in enumerate(positions)
    ]
    return EpisodeRecord(
        episode_id="straight-1",
        frames=frames,
        positions=positions,
        headings=np.zeros(length),
        times_s=np.arange(length, dtype=np.float64),
        scenario_tag="other",
    )


class TestGeneration:
    def test_same_seed_identical(self, world):
        a = generate_synthetic_episode(7, world, 16, scenario="turn")
        b = generate_synthetic_episode(7, world, 16, scenario="turn")
        assert episodes_equal(a, b)

    def test_crossing_template_headings_constant(self, world):
        ep = generate_synthetic_episode(1, world, 14, scenario="crossing")
        assert np.allclose(ep.headings, ep.headings[0])

    def test_turn_template_exceeds_60_degrees(self, world):
        for seed in range(5):
            ep = generate_synthetic_episode(seed, world, 16, scenario="turn")
            deltas = np.abs(np.degrees(np.diff(ep.headings)))
            assert deltas.max() > 60.0

    def test_frames_match_positions(self, world):
        ep = generate_synthetic_episode(2, world, 12, scenario="other")
        for f, p, h in zip(ep.frames, ep.positions, ep.headings):
            assert f.left == (p[0], p[1], h)

    def test_too_short_rejected(self, world):
        with pytest.raises(ValidationError):
            generate_synthetic_episode(0, world, 5)

    def test_balanced_dataset_tags(self, world):
        eps = generate_dataset(0, 12, 14, world)
        tags = [e.scenario_tag for e in eps]
        assert tags.count("turn") == 2 and tags.count("crowd") == 2

    def test_expert_speed_under_cap(self, world):
        ep = generate_synthetic_episode(4, world, 14, scenario="detour")
        steps = np.linalg.norm(np.diff(ep.positions, axis=0), axis=1)
        assert np.all(steps <= 1.2 + 1e-9)


class TestWindowing:
    def test_sample_count_formula(self):
        ep = straight_episode(length=12)
        samples = window_episode(ep, n=5, horizon=5)
        assert len(samples) == 12 - 5 - 5 + 1

    def test_boundary_one_sample(self):
        ep = straight_episode(length=10)
        assert len(window_episode(ep, n=5, horizon=5)) == 1

    def test_too_short_gives_empty(self):
        ep = straight_episode(length=9)
        assert window_episode(ep, n=5, horizon=5) == []

    def test_last_context_position_is_origin(self):
        ep = straight_episode(length=14)
        for s in window_episode(ep, n=5, horizon=5):
            np.testing.assert_allclose(s.window.positions[-1], [0.0, 0.0], atol=1e-12)

    def test_gt_waypoints_ahead_in_ego_frame(self):
        ep = straight_episode(length=14, speed=0.9)
        for s in window_episode(ep, n=5, horizon=5):
            np.testing.assert_allclose(s.window.positions[:, 1], 0.0, atol=1e-12)
            np.testing.assert_allclose(np.diff(s.gt_waypoints[:, 0]), 0.9, atol=1e-9)

    def test_deterministic_subgoals(self):
        ep = straight_episode(length=16)
        a = window_episode(ep, n=5, horizon=5)
        b = window_episode(ep, n=5, horizon=5)
        for sa, sb in zip(a, b):
            np.testing.assert_array_equal(sa.window.subgoal, sb.window.subgoal)

    def test_windows_never_cross_episodes(self):
        ep_a = straight_episode(length=12)
        samples = window_episode(ep_a, n=5, horizon=5)
        frame_ids = {f.frame_id for s in samples for f in s.window.frames}
        assert frame_ids <= set(range(12))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=10, max_value=60))
    def test_count_property(self, length):
        ep = straight_episode(length=length)
        assert len(window_episode(ep, n=5, horizon=5)) == max(0, length - 5 - 5 + 1)

    def test_prepare_attaches_features(self, world):
        ep = generate_synthetic_episode(5, world, 12, scenario="other")
        extractor = FeatureExtractor(
            SyntheticSceneProvider(world), grid_h=4, grid_w=4, appearance_dim=6, m_trk=4
        )
        samples = prepare_samples(extractor, ep, n=5, horizon=5)
        assert all(s.window.features is not None and len(s.window.features) == 5 for s in samples)
        assert all(s.window.tracks.n_frames == 5 for s in samples)


class TestFilter:
    def test_normalization(self):
        assert normalize_answer("No.") == "no"
        assert normalize_answer("  YES!") == "yes"
        assert normalize_answer("maybe") is None
        assert normalize_answer("") is None

    def test_oracle_stub_perfect_precision_recall(self):
        rng = np.random.default_rng(0)
        labels = {}
        clips = []
        for i in range(60):
            cid = f"clip-{i:03d}"
            labels[cid] = bool(rng.random() < 0.7)
            clips.append(ClipMeta(clip_id=cid, duration_s=30.0, description=cid))
        client = StubCompletionClient(
            lambda prompt: "yes" if labels[prompt.split("Clip: ")[1]] else "no"
        )
        kept, verdicts = filter_clips(clips, client)
        kept_ids = {c.clip_id for c in kept}
        true_ids = {cid for cid, keep in labels.items() if keep}
        assert kept_ids == true_ids  # precision and recall both 1.0
        assert len(verdicts) == 60

    def test_748_fixture_keeps_544(self):
        clips = [
            ClipMeta(clip_id=f"c{i}", duration_s=10.0, description=f"c{i}") for i in range(748)
        ]
        client = StubCompletionClient(
            lambda prompt: "yes" if int(prompt.split("Clip: c")[1]) < 544 else "no"
        )
        kept, verdicts = filter_clips(clips, client)
        assert len(kept) == 544
        assert sum(v.answer == "no" for v in verdicts) == 204

    def test_timeout_marks_undecided(self):
        clips = [ClipMeta(clip_id="a", duration_s=5.0), ClipMeta(clip_id="b", duration_s=5.0)]

        def flaky(prompt):
            if "a" in prompt or True:
                pass
            raise FilterClientError("connect timeout")

        kept, verdicts = filter_clips(clips, StubCompletionClient(flaky))
        assert kept == []
        assert all(v.answer == "undecided" for v in verdicts)
        assert "timeout" in verdicts[0].raw_response

    def test_malformed_excluded_with_warning(self, caplog):
        clips = [ClipMeta(clip_id="m", duration_s=5.0)]
        with caplog.at_level("WARNING"):
            kept, verdicts = filter_clips(clips, StubCompletionClient(lambda p: "banana"))
        assert kept == []
        assert verdicts[0].answer == "malformed"
        assert "malformed" in caplog.text

    def test_idempotent_with_deterministic_client(self):
        clips = [ClipMeta(clip_id=f"c{i}", duration_s=3.0, description=f"c{i}") for i in range(9)]
        client = StubCompletionClient(lambda p: "yes" if len(p) % 2 else "no")
        kept1, _ = filter_clips(clips, client)
        kept2, _ = filter_clips(clips, client)
        assert [c.clip_id for c in kept1] == [c.clip_id for c in kept2]

    def test_prompt_is_the_fixed_contract(self):
        seen = []
        client = StubCompletionClient(lambda p: seen.append(p) or "no")
        filter_clips([ClipMeta(clip_id="x", duration_s=1.0, description="walking")], client)
        assert seen[0].startswith(FILTER_PROMPT)

    def test_bad_duration_rejected(self):
        with pytest.raises(ValidationError):
            ClipMeta(clip_id="x", duration_s=0.0)


class TestPersistence:
    def test_round_trip_deep_equal_and_bitwise(self, tmp_path, world):
        eps = generate_dataset(1, 4, 12, world)
        path = tmp_path / "data.swep"
        save_dataset(path, eps)
        blob1 = path.read_bytes()
        loaded = load_dataset(path)
        assert len(loaded) == 4
        assert all(episodes_equal(a, b) for a, b in zip(eps, loaded))
        save_dataset(tmp_path / "data2.swep", loaded)
        assert (tmp_path / "data2.swep").read_bytes() == blob1

    def test_empty_dataset_round_trips(self, tmp_path):
        path = tmp_path / "empty.swep"
        save_dataset(path, [])
        assert load_dataset(path) == []

    def test_flipped_magic_rejected(self, tmp_path, world):
        eps = generate_dataset(2, 1, 12, world)
        path = tmp_path / "data.swep"
        save_dataset(path, eps)
        blob = bytearray(path.read_bytes())
        blob[0] ^= 0xFF
        bad = tmp_path / "bad.swep"
        bad.write_bytes(bytes(blob))
        with pytest.raises(FormatError) as e:
            load_dataset(bad)
        assert e.value.offset == 0

    def test_truncation_reports_offset(self, tmp_path, world):
        eps = generate_dataset(3, 1, 12, world)
        path = tmp_path / "data.swep"
        save_dataset(path, eps)
        blob = path.read_bytes()[:-10]
        bad = tmp_path / "trunc.swep"
        bad.write_bytes(blob)
        with pytest.raises(FormatError):
            load_dataset(bad)
