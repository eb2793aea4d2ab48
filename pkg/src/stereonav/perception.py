"""Per-frame observations to fused appearance+depth patch tokens.

The pretrained appearance, depth, disparity, and point-tracking backbones
are frozen upstream of the policy, so here they are abstracted behind
provider objects with one hard contract: identical inputs produce
bitwise-identical outputs. Two families ship with the library, a
world-backed synthetic provider that renders deterministic features from
simulator geometry, and a file-backed provider that replays precomputed
feature tensors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import io as sw_io
from .errors import ConfigurationError, DegenerateDisparityError, ShapeError
from .nn import Linear, Module
from .tensor import Tensor, concat


def patch_grid_size(resolution, patch):
    """Patch-grid side length for a square input, e.g. 350 with patch 14 -> 25."""
    return resolution // patch


@dataclass
class FrameObservation:
    """One frame of input. `left`/`right` are opaque provider inputs.

    For the synthetic provider they are (x, y, heading) pose tuples; for the
    file provider they are frame indices. Stereo frames carry both views and
    a positive baseline.
    """

    frame_id: int
    left: object
    right: object = None
    focal_px: float = 100.0
    baseline_m: float = 0.0

    def __post_init__(self):
        if self.focal_px <= 0:
            raise ConfigurationError("focal_px must be positive")
        if self.right is not None and self.baseline_m <= 0:
            raise ConfigurationError("stereo frames need baseline_m > 0")

    @property
    def is_stereo(self):
        return self.right is not None


@dataclass
class DepthMap:
    """Positive, finite per-patch depths in meters."""

    values: np.ndarray  # (grid_h, grid_w)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(self.values)) or np.any(self.values <= 0):
            raise ValueError("depth map must be positive and finite")


@dataclass
class PatchTokenGrid:
    """Fused per-patch tokens for one frame, flattened row-major."""

    grid_h: int
    grid_w: int
    appearance_dim: int
    depth_dim: int
    tokens: Tensor  # (grid_h * grid_w, appearance_dim + depth_dim)

    def __post_init__(self):
        expect = (self.grid_h * self.grid_w, self.appearance_dim + self.depth_dim)
        if tuple(self.tokens.shape) != expect:
            raise ShapeError(f"token grid shape {self.tokens.shape}, expected {expect}")

    @property
    def token_dim(self):
        return self.appearance_dim + self.depth_dim

    def patch_coords(self):
        """(x, y) = (column, row) index of each token, matching token order."""
        ys, xs = np.mgrid[0 : self.grid_h, 0 : self.grid_w]
        return np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)


@dataclass
class TrackSet:
    """Point tracks across a frame window, in patch-coordinate units."""

    points: np.ndarray  # (m_trk, n_frames, 2) as (x, y)
    visible: np.ndarray  # (m_trk, n_frames) bool

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.visible = np.asarray(self.visible, dtype=bool)
        if self.points.shape[:2] != self.visible.shape:
            raise ShapeError("track points and visibility shapes disagree")

    @property
    def n_tracks(self):
        return self.points.shape[0]

    @property
    def n_frames(self):
        return self.points.shape[1]


@dataclass
class FrameFeatures:
    """Raw provider outputs for one frame, before any trainable encoding."""

    appearance: np.ndarray  # (grid_h, grid_w, appearance_dim)
    depth: np.ndarray  # (grid_h, grid_w)


# -- stereo geometry -----------------------------------------------------------


def disparity_to_depth(disparity, focal_px, baseline_m, d_min=1e-3):
    """Depth = focal * baseline / disparity, elementwise.

    Any disparity at or below `d_min` raises DegenerateDisparityError naming
    the offending patch index.
    """
    if focal_px <= 0 or baseline_m <= 0:
        raise ConfigurationError("focal_px and baseline_m must be positive")
    d = np.asarray(disparity, dtype=np.float64)
    bad = np.argwhere(d <= d_min)
    if len(bad):
        j, k = (int(v) for v in bad[0])
        raise DegenerateDisparityError((j, k), float(d[j, k]), d_min)
    return DepthMap(focal_px * baseline_m / d)


def depth_to_disparity(depth, focal_px, baseline_m):
    return focal_px * baseline_m / depth.values


# -- providers -------------------------------------------------------------------


def track_query_grid(grid_h, grid_w, m_trk):
    """Fixed lattice of track query points in patch coordinates."""
    side = max(1, int(round(math.sqrt(m_trk))))
    xs = (np.arange(side) + 0.5) * grid_w / side
    ys = (np.arange(side) + 0.5) * grid_h / side
    gx, gy = np.meshgrid(xs, ys)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    if len(pts) < m_trk:  # fill the remainder along the middle row
        extra = np.linspace(0.5, grid_w - 0.5, m_trk - len(pts))
        mid = np.full_like(extra, grid_h / 2.0)
        pts = np.concatenate([pts, np.stack([extra, mid], axis=1)])
    return pts[:m_trk]


def _clip_tracks(points, grid_h, grid_w):
    inside = (
        (points[..., 0] >= 0)
        & (points[..., 0] <= grid_w - 1e-9)
        & (points[..., 1] >= 0)
        & (points[..., 1] <= grid_h - 1e-9)
    )
    clipped = points.copy()
    clipped[..., 0] = np.clip(clipped[..., 0], 0, grid_w - 1e-9)
    clipped[..., 1] = np.clip(clipped[..., 1], 0, grid_h - 1e-9)
    return TrackSet(points=clipped, visible=inside)


class SyntheticSceneProvider:
    """Deterministic scene features rendered from world geometry.

    Appearance channels are smooth sinusoids of ray bearing, normalized ray
    depth, and patch row, with phases drawn once from the world seed. Depth
    per patch column is the raycast distance from the camera pose across a
    fixed horizontal field of view; the stereo path exposes the exact
    disparity f*B/Z of the same geometry so the two depth routes agree.
    """

    def __init__(self, world, fov_deg=90.0, z_min=0.3, z_max=30.0):
        self.world = world
        self.fov = math.radians(fov_deg)
        self.z_min = z_min
        self.z_max = z_max
        rng = np.random.default_rng(world.seed)
        # fixed per-world channel phases and frequencies
        self._phase = rng.uniform(0, 2 * math.pi, size=256)
        self._freq = rng.uniform(0.5, 3.0, size=(3, 256))

    def _pose(self, frame_input):
        x, y, heading = frame_input
        return np.array([x, y], dtype=np.float64), float(heading)

    def _column_depths(self, frame, grid_w):
        origin, heading = self._pose(frame.left)
        ks = np.arange(grid_w)
        angles = heading + self.fov * ((ks + 0.5) / grid_w - 0.5)
        return np.array(
            [np.clip(self.world.raycast(origin, a, self.z_max), self.z_min, self.z_max) for a in angles]
        )

    def appearance(self, frame, grid_h, grid_w, dim):
        if dim > 256:
            raise ConfigurationError("synthetic appearance supports dim <= 256")
        col = self._column_depths(frame, grid_w)
        origin, heading = self._pose(frame.left)
        ks = np.arange(grid_w)
        bearing = self.fov * ((ks + 0.5) / grid_w - 0.5) + heading
        z_norm = np.log(col / self.z_min) / np.log(self.z_max / self.z_min)
        rows = (np.arange(grid_h) + 0.5) / grid_h
        # feats[j, k, c] = sin(f0*bearing_k + f1*z_k + f2*row_j + phase)
        arg = (
            self._freq[0, :dim] * bearing[None, :, None]
            + self._freq[1, :dim] * (3.0 * z_norm[None, :, None])
            + self._freq[2, :dim] * (2.0 * rows[:, None, None])
            + self._phase[:dim]
        )
        return np.sin(arg)

    def monocular_depth(self, frame, grid_h, grid_w):
        col = self._column_depths(frame, grid_w)
        return DepthMap(np.tile(col, (grid_h, 1)))

    def disparity(self, frame, grid_h, grid_w):
        if not frame.is_stereo:
            raise ConfigurationError("disparity requested for a frame without a right view")
        depth = self.monocular_depth(frame, grid_h, grid_w)
        return depth_to_disparity(depth, frame.focal_px, frame.baseline_m)

    def flow(self, frame_a, frame_b, points, grid_h, grid_w):
        """Known optical flow between two poses, in patch units.

        Yaw shifts points horizontally by the heading change mapped through
        the field of view; forward motion expands points radially from the
        image center in proportion to distance covered over scene depth.
        """
        pa, ha = self._pose(frame_a.left)
        pb, hb = self._pose(frame_b.left)
        d_heading = math.atan2(math.sin(hb - ha), math.cos(hb - ha))
        forward = float((pb - pa) @ np.array([math.cos(ha), math.sin(ha)]))
        col = self._column_depths(frame_a, grid_w)
        center = np.array([grid_w / 2.0, grid_h / 2.0])
        ks = np.clip(points[:, 0].astype(int), 0, grid_w - 1)
        depth_at = col[ks]
        shift_x = -d_heading / self.fov * grid_w
        radial = (points - center) * (forward / depth_at)[:, None]
        out = points + radial
        out[:, 0] += shift_x
        return out

    def tracks(self, frames, grid_h, grid_w, m_trk):
        pts = track_query_grid(grid_h, grid_w, m_trk)
        n = len(frames)
        points = np.zeros((m_trk, n, 2))
        points[:, 0] = pts
        for i in range(1, n):
            points[:, i] = self.flow(frames[i - 1], frames[i], points[:, i - 1], grid_h, grid_w)
        return _clip_tracks(points, grid_h, grid_w)


class ConstantFlowTrackProvider:
    """Track provider advecting a fixed query grid by a constant flow per frame."""

    def __init__(self, flow=(0.0, 0.0)):
        self.flow = np.asarray(flow, dtype=np.float64)

    def tracks(self, frames, grid_h, grid_w, m_trk):
        base = track_query_grid(grid_h, grid_w, m_trk)
        n = len(frames)
        points = base[:, None, :] + self.flow[None, None, :] * np.arange(n)[None, :, None]
        return _clip_tracks(points, grid_h, grid_w)


class FileFeatureProvider:
    """Replays appearance and depth grids from feature containers.

    Frame inputs are integer indices into the loaded arrays. Depth files
    store one channel per patch (dim == 1).
    """

    def __init__(self, appearance_path=None, depth_path=None,
                 appearance_frames=None, depth_frames=None):
        self._appearance = (
            sw_io.load_features(appearance_path) if appearance_path else appearance_frames
        )
        depth = sw_io.load_features(depth_path) if depth_path else depth_frames
        self._depth = None if depth is None else np.asarray(depth)

    def appearance(self, frame, grid_h, grid_w, dim):
        arr = self._appearance[int(frame.left)]
        if arr.shape != (grid_h, grid_w, dim):
            raise ShapeError(
                f"stored appearance grid {arr.shape} != requested {(grid_h, grid_w, dim)}"
            )
        return np.array(arr)

    def monocular_depth(self, frame, grid_h, grid_w):
        arr = self._depth[int(frame.left)]
        return DepthMap(arr.reshape(grid_h, grid_w))

    def disparity(self, frame, grid_h, grid_w):
        depth = self.monocular_depth(frame, grid_h, grid_w)
        return depth_to_disparity(depth, frame.focal_px, frame.baseline_m)

    def tracks(self, frames, grid_h, grid_w, m_trk):
        # static fallback: file replays carry no flow information
        return ConstantFlowTrackProvider().tracks(frames, grid_h, grid_w, m_trk)


# -- spec-level operations --------------------------------------------------------


def appearance_features(provider, frame, grid_h, grid_w, dim):
    """Per-patch appearance vectors; deterministic for identical inputs."""
    out = np.asarray(provider.appearance(frame, grid_h, grid_w, dim), dtype=np.float64)
    if out.shape != (grid_h, grid_w, dim):
        raise ShapeError(f"provider returned {out.shape}, expected {(grid_h, grid_w, dim)}")
    return out


def depth_source(mode, provider, frame, grid_h, grid_w, d_min=1e-3):
    """Patch depth via the monocular provider or the stereo disparity route."""
    if mode == "monocular":
        return provider.monocular_depth(frame, grid_h, grid_w)
    if mode == "stereo":
        if not frame.is_stereo:
            raise ConfigurationError("stereo mode requires a right view and baseline")
        disp = provider.disparity(frame, grid_h, grid_w)
        return disparity_to_depth(disp, frame.focal_px, frame.baseline_m, d_min)
    raise ConfigurationError(f"unknown depth mode {mode!r}")


def track_features(provider, frames, grid_h, grid_w, m_trk):
    if not frames:
        raise ConfigurationError("track_features needs at least one frame")
    if m_trk < 1:
        raise ConfigurationError("m_trk must be >= 1")
    return provider.tracks(frames, grid_h, grid_w, m_trk)


class DepthEncoder(Module):
    """Trainable per-patch embedding of [log Z, 1/Z]."""

    def __init__(self, depth_dim, rng):
        self.proj = Linear(2, depth_dim, rng)

    def __call__(self, depth):
        z = depth.values.reshape(-1, 1)
        feats = Tensor(np.concatenate([np.log(z), 1.0 / z], axis=1))
        return self.proj(feats)  # (grid_h*grid_w, depth_dim)


def assemble_tokens(x_grid, z_embed, grid_h, grid_w, use_depth=True):
    """Concatenate appearance and depth embeddings into one token per patch.

    With the depth ablation off, the depth block is zeroed (same dim), so
    every attention shape is identical across ablations.
    """
    x = np.asarray(x_grid, dtype=np.float64)
    if x.shape[0] != grid_h or x.shape[1] != grid_w:
        raise ShapeError(f"appearance grid {x.shape[:2]} != ({grid_h}, {grid_w})")
    app = Tensor(x.reshape(grid_h * grid_w, -1))
    depth_dim = z_embed.shape[-1]
    if z_embed.shape[0] != grid_h * grid_w:
        raise ShapeError(
            f"depth embedding rows {z_embed.shape[0]} != {grid_h * grid_w} patches"
        )
    if not use_depth:
        z_embed = Tensor(np.zeros((grid_h * grid_w, depth_dim)))
    tokens = concat([app, z_embed], axis=1)
    return PatchTokenGrid(
        grid_h=grid_h,
        grid_w=grid_w,
        appearance_dim=x.shape[2],
        depth_dim=depth_dim,
        tokens=tokens,
    )


class FeatureExtractor:
    """Binds a provider and grid settings; turns frames into raw feature maps."""

    def __init__(self, provider, grid_h, grid_w, appearance_dim,
                 mode="monocular", d_min=1e-3, m_trk=64):
        self.provider = provider
        self.grid_h = grid_h
        self.grid_w = grid_w
        self.appearance_dim = appearance_dim
        self.mode = mode
        self.d_min = d_min
        self.m_trk = m_trk

    def frame_features(self, frame):
        app = appearance_features(self.provider, frame, self.grid_h, self.grid_w, self.appearance_dim)
        depth = depth_source(self.mode, self.provider, frame, self.grid_h, self.grid_w, self.d_min)
        return FrameFeatures(appearance=app, depth=depth.values)

    def window_features(self, frames):
        feats = [self.frame_features(f) for f in frames]
        tracks = track_features(self.provider, frames, self.grid_h, self.grid_w, self.m_trk)
        return feats, tracks
