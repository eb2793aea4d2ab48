"""Tracking-guided attention: inject point-track motion into image tokens.

Each layer runs three stages per frame window:

1. track-aware sampling: every track point becomes a rotary-encoded query
   that cross-attends into that frame's (rotary-encoded) image tokens,
   pooling local visual evidence into one feature per track;
2. temporal propagation: each track's feature sequence is smoothed by a
   small pre-norm transformer along time, with occluded points suppressed
   through a large negative logit bias on their keys;
3. feature update: per-patch coordinate embeddings query the propagated
   track features, and the result is added to the image tokens through a
   residual whose output projection starts at zero, so an untrained layer
   is an exact identity.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .nn import Linear, Module, MultiHeadAttention, TransformerBlock, uniform_init
from .perception import PatchTokenGrid
from .tensor import Tensor, concat

OCCLUSION_BIAS = -1e9


class TrackLayer(Module):
    def __init__(self, dim, heads, rng):
        self.track_base = uniform_init(rng, (dim,), dim)
        self.track_proj = Linear(dim, dim, rng)
        self.sample_attn = MultiHeadAttention(dim, heads, rng)
        self.temporal = TransformerBlock(dim, heads, rng)
        self.coord_base = uniform_init(rng, (dim,), dim)
        self.update_attn = MultiHeadAttention(dim, heads, rng, zero_init_out=True)

    def embed_tracks(self, points):
        """Track tokens for one frame: project the rotary-encoded base vector."""
        dim = self.track_base.shape[0]
        rotated = T.rope2d(self.track_base.reshape(1, dim), np.asarray(points))
        return self.track_proj(rotated)  # (m_trk, dim)

    def track_sample(self, track_tokens, image_tokens, patch_coords):
        """Pool local visual evidence from image tokens into track features."""
        keys = T.rope2d(image_tokens, patch_coords)
        return self.sample_attn(track_tokens, keys, keys)

    def temporal_propagate(self, track_seq, visible):
        """Self-attention along time, independently per track.

        `track_seq` is (m_trk, n_frames, dim); `visible` marks which points
        may serve as attention keys.
        """
        m, n, _ = track_seq.shape
        if visible.shape != (m, n):
            raise ShapeError(f"visibility {visible.shape} does not match tracks ({m}, {n})")
        bias = np.where(visible, 0.0, OCCLUSION_BIAS)[:, None, None, :]  # (m, 1, 1, n)
        return self.temporal(track_seq, key_bias=Tensor(bias))

    def feature_update(self, image_tokens, propagated, patch_coords):
        """Residual motion-aware correction of the image tokens."""
        if propagated.shape[0] == 0:
            return image_tokens
        dim = self.coord_base.shape[0]
        queries = T.rope2d(self.coord_base.reshape(1, dim), np.asarray(patch_coords))
        delta = self.update_attn(queries, propagated, propagated)
        return image_tokens + delta

    def __call__(self, token_list, patch_coords, tracks):
        n_frames = len(token_list)
        if tracks.n_frames != n_frames:
            raise ShapeError(
                f"track set spans {tracks.n_frames} frames, window has {n_frames}"
            )
        m = tracks.n_tracks
        if m == 0:
            return list(token_list)
        sampled = []
        for i, tokens in enumerate(token_list):
            q = self.embed_tracks(tracks.points[:, i])
            sampled.append(self.track_sample(q, tokens, patch_coords).reshape(m, 1, -1))
        seq = concat(sampled, axis=1)  # (m, n_frames, dim)
        propagated = self.temporal_propagate(seq, tracks.visible)
        out = []
        for i, tokens in enumerate(token_list):
            out.append(self.feature_update(tokens, propagated[:, i], patch_coords))
        return out


class TrackGuidedAttention(Module):
    """A short stack of tracking-guided layers applied before global attention."""

    def __init__(self, dim, heads, n_layers, rng):
        self.layers = [TrackLayer(dim, heads, rng) for _ in range(n_layers)]

    def __call__(self, grids, tracks):
        """Update a window of PatchTokenGrids in place of their token tensors."""
        if not grids:
            return []
        coords = grids[0].patch_coords()
        token_list = [g.tokens for g in grids]
        for layer in self.layers:
            token_list = layer(token_list, coords, tracks)
        return [
            PatchTokenGrid(
                grid_h=g.grid_h,
                grid_w=g.grid_w,
                appearance_dim=g.appearance_dim,
                depth_dim=g.depth_dim,
                tokens=t,
            )
            for g, t in zip(grids, token_list)
        ]
