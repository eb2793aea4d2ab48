import numpy as np
import pytest

from stereonav.errors import ShapeError
from stereonav.perception import PatchTokenGrid, TrackSet
from stereonav.tensor import Tensor, check_gradients
from stereonav.track_attention import TrackGuidedAttention, TrackLayer


def make_grid(rng, h=2, w=2, a=6, z=2):
    return PatchTokenGrid(
        grid_h=h, grid_w=w, appearance_dim=a, depth_dim=z,
        tokens=Tensor(rng.standard_normal((h * w, a + z)), requires_grad=True),
    )


def make_tracks(rng, m=2, n=2, h=2, w=2):
    pts = rng.uniform(0, [w - 1e-6, h - 1e-6], size=(m, n, 2))
    return TrackSet(points=pts, visible=np.ones((m, n), dtype=bool))


class TestEmbedTracks:
    def test_same_position_same_token(self):
        layer = TrackLayer(8, 2, np.random.default_rng(0))
        pts = np.array([[1.3, 0.7], [1.3, 0.7]])
        out = layer.embed_tracks(pts).data
        np.testing.assert_allclose(out[0], out[1], atol=1e-12)

    def test_origin_is_projected_base(self):
        layer = TrackLayer(8, 2, np.random.default_rng(1))
        out = layer.embed_tracks(np.zeros((1, 2))).data
        expected = layer.track_proj(layer.track_base.reshape(1, 8)).data
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_gradients_through_projection(self):
        rng = np.random.default_rng(2)
        layer = TrackLayer(8, 2, rng)
        pts = rng.uniform(0, 2, size=(3, 2))
        report = check_gradients(
            lambda W, b, e: layer.embed_tracks(pts),
            [layer.track_proj.W, layer.track_proj.b, layer.track_base],
            op_name="embed_tracks",
        )
        assert report.max_rel_error < 1e-3


class TestTrackSample:
    def test_single_image_token(self):
        rng = np.random.default_rng(3)
        layer = TrackLayer(8, 2, rng)
        tokens = Tensor(rng.standard_normal((1, 8)))
        coords = np.zeros((1, 2))
        q = layer.embed_tracks(rng.uniform(0, 1, (4, 2)))
        out = layer.track_sample(q, tokens, coords).data
        # with one key every track row is the same projected value
        for row in out[1:]:
            np.testing.assert_allclose(row, out[0], atol=1e-9)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(4)
        layer = TrackLayer(8, 2, rng)
        grid = make_grid(rng)
        coords = grid.patch_coords()
        pts = rng.uniform(0, 2, size=(5, 2))
        out = layer.track_sample(layer.embed_tracks(pts), grid.tokens, coords).data
        perm = np.array([3, 0, 4, 1, 2])
        out_p = layer.track_sample(layer.embed_tracks(pts[perm]), grid.tokens, coords).data
        np.testing.assert_allclose(out_p, out[perm], atol=1e-12)

    def test_attention_rows_sum_to_one(self):
        rng = np.random.default_rng(5)
        layer = TrackLayer(8, 2, rng)
        grid = make_grid(rng)
        q = layer.embed_tracks(rng.uniform(0, 2, (3, 2)))
        from stereonav import tensor as T

        keys = T.rope2d(grid.tokens, grid.patch_coords())
        _, w = layer.sample_attn(q, keys, keys, return_weights=True)
        np.testing.assert_allclose(w.data.sum(axis=-1), np.ones((2, 3)), atol=1e-9)

    def test_empty_track_set(self):
        rng = np.random.default_rng(6)
        layer = TrackLayer(8, 2, rng)
        grid = make_grid(rng)
        q = layer.embed_tracks(np.zeros((0, 2)))
        out = layer.track_sample(q, grid.tokens, grid.patch_coords())
        assert out.shape == (0, 8)


class TestTemporalPropagate:
    def test_single_frame_finite(self):
        rng = np.random.default_rng(7)
        layer = TrackLayer(8, 2, rng)
        seq = Tensor(rng.standard_normal((3, 1, 8)))
        out = layer.temporal_propagate(seq, np.ones((3, 1), dtype=bool))
        assert out.shape == (3, 1, 8)
        assert np.all(np.isfinite(out.data))

    def test_tracks_do_not_exchange_information(self):
        rng = np.random.default_rng(8)
        layer = TrackLayer(8, 2, rng)
        base = rng.standard_normal((3, 4, 8))
        vis = np.ones((3, 4), dtype=bool)
        out0 = layer.temporal_propagate(Tensor(base), vis).data
        bumped = base.copy()
        bumped[1] += 1.0
        out1 = layer.temporal_propagate(Tensor(bumped), vis).data
        np.testing.assert_allclose(out1[0], out0[0], atol=1e-12)
        np.testing.assert_allclose(out1[2], out0[2], atol=1e-12)
        assert not np.allclose(out1[1], out0[1])

    def test_ragged_visibility_rejected(self):
        rng = np.random.default_rng(9)
        layer = TrackLayer(8, 2, rng)
        with pytest.raises(ShapeError):
            layer.temporal_propagate(Tensor(rng.standard_normal((3, 4, 8))), np.ones((3, 2), dtype=bool))

    def test_occluded_keys_are_ignored(self):
        rng = np.random.default_rng(10)
        layer = TrackLayer(8, 2, rng)
        base = rng.standard_normal((1, 3, 8))
        vis = np.array([[True, True, False]])
        out_masked = layer.temporal_propagate(Tensor(base), vis).data
        # changing the occluded frame's feature must not affect other frames
        bumped = base.copy()
        bumped[0, 2] += 5.0
        out_bumped = layer.temporal_propagate(Tensor(bumped), vis).data
        np.testing.assert_allclose(out_bumped[0, :2], out_masked[0, :2], atol=1e-12)

    def test_gradients(self):
        rng = np.random.default_rng(11)
        layer = TrackLayer(8, 2, rng)
        seq = Tensor(rng.standard_normal((2, 3, 8)), requires_grad=True)
        vis = np.ones((2, 3), dtype=bool)
        params = [seq] + layer.temporal.parameters()
        report = check_gradients(
            lambda *a: layer.temporal_propagate(seq, vis), params, op_name="temporal"
        )
        assert report.max_rel_error < 1e-3


class TestFeatureUpdate:
    def test_zero_init_identity(self):
        rng = np.random.default_rng(12)
        layer = TrackLayer(8, 2, rng)
        grid = make_grid(rng)
        prop = Tensor(rng.standard_normal((4, 8)))
        out = layer.feature_update(grid.tokens, prop, grid.patch_coords())
        np.testing.assert_array_equal(out.data, grid.tokens.data)

    def test_update_changes_tokens_after_perturbing_out_proj(self):
        rng = np.random.default_rng(13)
        layer = TrackLayer(8, 2, rng)
        layer.update_attn.w_o.W.data += rng.standard_normal((8, 8)) * 0.1
        grid = make_grid(rng)
        prop = Tensor(rng.standard_normal((4, 8)))
        out = layer.feature_update(grid.tokens, prop, grid.patch_coords())
        assert not np.allclose(out.data, grid.tokens.data)


class TestFullModule:
    def test_identity_at_init(self):
        rng = np.random.default_rng(14)
        module = TrackGuidedAttention(8, 2, 2, rng)
        grid_rng = np.random.default_rng(15)
        grids = [make_grid(grid_rng) for _ in range(3)]
        tracks = make_tracks(grid_rng, m=4, n=3)
        out = module(grids, tracks)
        for g_in, g_out in zip(grids, out):
            np.testing.assert_array_equal(g_out.tokens.data, g_in.tokens.data)

    def test_track_permutation_invariance_of_tokens(self):
        rng = np.random.default_rng(16)
        module = TrackGuidedAttention(8, 2, 1, rng)
        # make the residual active
        module.layers[0].update_attn.w_o.W.data += rng.standard_normal((8, 8)) * 0.1
        grid_rng = np.random.default_rng(17)
        grids = [make_grid(grid_rng) for _ in range(2)]
        tracks = make_tracks(grid_rng, m=5, n=2)
        out = module(grids, tracks)
        perm = np.array([4, 2, 0, 1, 3])
        tracks_p = TrackSet(points=tracks.points[perm], visible=tracks.visible[perm])
        out_p = module(grids, tracks_p)
        for a, b in zip(out, out_p):
            np.testing.assert_allclose(a.tokens.data, b.tokens.data, atol=1e-9)

    def test_shape_preserved(self):
        rng = np.random.default_rng(18)
        module = TrackGuidedAttention(8, 2, 2, rng)
        grids = [make_grid(rng) for _ in range(2)]
        tracks = make_tracks(rng, m=3, n=2)
        out = module(grids, tracks)
        assert all(o.tokens.shape == g.tokens.shape for o, g in zip(out, grids))

    def test_empty_track_set_is_identity(self):
        rng = np.random.default_rng(19)
        module = TrackGuidedAttention(8, 2, 1, rng)
        grids = [make_grid(rng) for _ in range(2)]
        tracks = TrackSet(points=np.zeros((0, 2, 2)), visible=np.zeros((0, 2), dtype=bool))
        out = module(grids, tracks)
        for g_in, g_out in zip(grids, out):
            np.testing.assert_array_equal(g_out.tokens.data, g_in.tokens.data)

    def test_end_to_end_gradients(self):
        rng = np.random.default_rng(20)
        module = TrackGuidedAttention(8, 2, 1, rng)
        # activate the residual so its gradient path is exercised
        module.layers[0].update_attn.w_o.W.data += rng.standard_normal((8, 8)) * 0.05
        grid_rng = np.random.default_rng(21)
        grids = [make_grid(grid_rng) for _ in range(2)]
        tracks = make_tracks(grid_rng, m=2, n=2)

        def run(*params):
            out = module(grids, tracks)
            s = out[0].tokens.sum()
            for g in out[1:]:
                s = s + g.tokens.sum()
            return s

        inputs = [g.tokens for g in grids] + module.parameters()
        report = check_gradients(run, inputs, op_name="track_module")
        assert report.max_rel_error < 1e-3
