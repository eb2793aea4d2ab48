"""The end-to-end waypoint policy: tokens in, waypoints and arrival out.

The forward pass runs perception tokens (optionally corrected by
tracking-guided attention) together with trajectory tokens through a
global self-attention stack, lets a target token absorb the result in a
second short stack, and decodes that token into an arrival probability
and a fixed-horizon sequence of ego-frame waypoints.

Training minimizes  L_wp + lambda_arrvd * L_arrvd + lambda_dir * L_dir,
with mean-squared waypoint error, binary cross-entropy on arrival, and a
mean absolute step-heading difference.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import io as sw_io
from . import tensor as T
from .errors import (
    ConfigurationError,
    EvaluationError,
    FormatError,
    ShapeError,
    UndefinedDirectionError,
    ValidationError,
)
from .nn import MLP, AdamW, Linear, Module, TransformerBlock, uniform_init
from .perception import DepthEncoder, DepthMap, assemble_tokens
from .tensor import Tensor, concat
from .track_attention import TrackGuidedAttention

DEGENERATE_STEP_M = 1e-6
PROB_CLAMP = 1e-7


@dataclass
class ModelConfig:
    """Architecture and loss settings; desk-scale defaults, full-scale preset below."""

    grid_h: int = 8
    grid_w: int = 8
    appearance_dim: int = 32
    depth_dim: int = 8
    context_n: int = 5
    horizon: int = 5
    n_track_layers: int = 2
    n_global_layers: int = 2
    n_target_layers: int = 1
    heads: int = 4
    m_trk: int = 64
    use_patch_tokens: bool = True
    use_depth: bool = True
    use_tracking: bool = True
    lambda_arrvd: float = 1.0
    lambda_dir: float = 10.0
    arrival_radius_m: float = 1.0
    mode: str = "monocular"

    def __post_init__(self):
        d = self.token_dim
        if d % self.heads != 0:
            raise ConfigurationError(f"token dim {d} not divisible by {self.heads} heads")
        if d % 4 != 0:
            raise ConfigurationError(f"token dim {d} must be divisible by 4 for 2D rotary encoding")
        if (d // self.heads) % 2 != 0:
            raise ConfigurationError(f"per-head dim {d // self.heads} must be even")
        if self.lambda_arrvd < 0 or self.lambda_dir < 0:
            raise ConfigurationError("loss weights must be >= 0")
        if self.context_n < 1 or self.horizon < 1:
            raise ConfigurationError("context_n and horizon must be >= 1")
        if self.mode not in ("monocular", "stereo"):
            raise ConfigurationError(f"unknown mode {self.mode!r}")

    @property
    def token_dim(self):
        return self.appearance_dim + self.depth_dim

    def to_dict(self):
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(d):
        return ModelConfig(**d)


def full_scale_config(**overrides):
    """The full-scale preset: 25x25 grid, 768+64 dims, 2/12/4 layers."""
    base = dict(
        grid_h=25,
        grid_w=25,
        appearance_dim=768,
        depth_dim=64,
        context_n=5,
        horizon=5,
        n_track_layers=2,
        n_global_layers=12,
        n_target_layers=4,
        heads=8,
        m_trk=64,
    )
    base.update(overrides)
    return ModelConfig(**base)


def tiny_config(**overrides):
    """Smallest legal model, for gradient checks: 2x2 grid, dim 8."""
    base = dict(
        grid_h=2,
        grid_w=2,
        appearance_dim=6,
        depth_dim=2,
        context_n=2,
        horizon=2,
        n_track_layers=1,
        n_global_layers=1,
        n_target_layers=1,
        heads=2,
        m_trk=2,
    )
    base.update(overrides)
    return ModelConfig(**base)


def compact_config(**overrides):
    """Small training-friendly preset: converges in minutes on one CPU core."""
    base = dict(
        grid_h=4,
        grid_w=4,
        appearance_dim=12,
        depth_dim=4,
        context_n=5,
        horizon=5,
        n_track_layers=1,
        n_global_layers=1,
        n_target_layers=1,
        heads=2,
        m_trk=9,
    )
    base.update(overrides)
    return ModelConfig(**base)


@dataclass
class ObservationWindow:
    """Input to one prediction: context frames, ego positions, and a sub-goal.

    Either raw `frames` (with an extractor supplied at predict time) or
    precomputed `features` must be present. Positions are ego-frame with the
    current pose at the origin heading +x.
    """

    positions: np.ndarray  # (context_n, 2)
    subgoal: np.ndarray  # (2,)
    frames: list = None
    features: list = None  # list of FrameFeatures
    tracks: object = None  # TrackSet

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.subgoal = np.asarray(self.subgoal, dtype=np.float64)


@dataclass
class PolicyOutput:
    waypoints: object  # (horizon, 2) array or Tensor
    arrival_prob: object  # scalar float or Tensor

    def waypoints_array(self):
        return self.waypoints.data if isinstance(self.waypoints, Tensor) else np.asarray(self.waypoints)

    def arrival_value(self):
        return float(self.arrival_prob.data) if isinstance(self.arrival_prob, Tensor) else float(self.arrival_prob)


@dataclass
class TrainingSample:
    window: ObservationWindow
    gt_waypoints: np.ndarray  # (horizon, 2) ego frame
    gt_arrived: bool
    scenario_tag: str = "other"

    def __post_init__(self):
        self.gt_waypoints = np.asarray(self.gt_waypoints, dtype=np.float64)


class PolicyModel(Module):
    def __init__(self, config, seed=0):
        rng = np.random.default_rng(seed)
        self.config = config
        d = config.token_dim
        self.depth_encoder = DepthEncoder(config.depth_dim, rng)
        self.track_module = TrackGuidedAttention(d, config.heads, config.n_track_layers, rng)
        self.traj_mlp = MLP(2, d, d, rng)
        self.target_mlp = MLP(2, d, d, rng)
        self.frame_embed = uniform_init(rng, (config.context_n, d), d)
        self.global_blocks = [TransformerBlock(d, config.heads, rng) for _ in range(config.n_global_layers)]
        self.target_blocks = [TransformerBlock(d, config.heads, rng) for _ in range(config.n_target_layers)]
        self.head_trunk = Linear(d, d, rng)
        self.arrival_head = Linear(d, 1, rng)
        # arrival is rare: start the head near prob 0.1 so early checkpoints
        # do not spuriously advance sub-goals
        self.arrival_head.b.data = np.array([-2.2])
        self.action_head = Linear(d, 2 * config.horizon, rng)
        # gentle forward prior keeps early step headings well-defined
        ramp = np.zeros(2 * config.horizon)
        ramp[0::2] = 0.5 * (np.arange(config.horizon) + 1)
        self.action_head.b.data = ramp

    # -- encoding stages -------------------------------------------------------

    def tokenize(self, features):
        """FrameFeatures -> PatchTokenGrid, applying the trainable depth encoder."""
        cfg = self.config
        z = self.depth_encoder(DepthMap(features.depth))
        return assemble_tokens(
            features.appearance, z, cfg.grid_h, cfg.grid_w, use_depth=cfg.use_depth
        )

    def encode_trajectory(self, positions):
        """Per-position MLP to trajectory tokens, one per context frame."""
        positions = np.asarray(positions, dtype=np.float64)
        if positions.shape != (self.config.context_n, 2):
            raise ShapeError(
                f"positions shape {positions.shape}, expected ({self.config.context_n}, 2)"
            )
        return self.traj_mlp(Tensor(positions))

    def encode_target(self, subgoal):
        subgoal = np.asarray(subgoal, dtype=np.float64)
        if subgoal.shape != (2,):
            raise ShapeError(f"subgoal shape {subgoal.shape}, expected (2,)")
        return self.target_mlp(Tensor(subgoal.reshape(1, 2)))

    def global_attention(self, frame_token_list, traj_tokens):
        """Joint self-attention over all frame tokens plus trajectory tokens.

        Returns the processed sequence and the per-token rotary coordinates.
        With patch tokens disabled each frame grid is mean-pooled to a single
        token first.
        """
        cfg = self.config
        n = len(frame_token_list)
        blocks, pos_rows = [], []
        for i, grid in enumerate(frame_token_list):
            tokens = grid.tokens
            if cfg.use_patch_tokens:
                pos_rows.append(grid.patch_coords())
            else:
                tokens = tokens.mean(axis=0, keepdims=True)
                pos_rows.append(np.zeros((1, 2)))
            blocks.append(tokens + self.frame_embed[i].reshape(1, -1))
        traj = traj_tokens + self.frame_embed
        blocks.append(traj)
        pos_rows.append(np.zeros((n, 2)))
        seq = concat(blocks, axis=0)
        pos = np.concatenate(pos_rows, axis=0)
        for block in self.global_blocks:
            seq = block(seq, pos=pos)
        return seq, pos

    def target_attention(self, h_global, target_token, pos=None):
        """Append the target token, attend, and return its updated row."""
        seq = concat([h_global, target_token], axis=0)
        full_pos = None
        if pos is not None:
            full_pos = np.concatenate([pos, np.zeros((1, 2))], axis=0)
        for block in self.target_blocks:
            seq = block(seq, pos=full_pos)
        return seq[-1]

    def _heads(self, g_tilde):
        trunk = T.gelu(self.head_trunk(g_tilde.reshape(1, -1)))
        prob = T.sigmoid(self.arrival_head(trunk).reshape(()))
        waypoints = self.action_head(trunk).reshape(self.config.horizon, 2)
        return waypoints, prob

    def forward(self, features, tracks, positions, subgoal):
        """Differentiable forward pass from raw features to PolicyOutput."""
        cfg = self.config
        grids = [self.tokenize(f) for f in features]
        if cfg.use_tracking and tracks is not None and tracks.n_tracks > 0:
            grids = self.track_module(grids, tracks)
        traj_tokens = self.encode_trajectory(positions)
        h_global, pos = self.global_attention(grids, traj_tokens)
        g = self.encode_target(subgoal)
        g_tilde = self.target_attention(h_global, g, pos)
        waypoints, prob = self._heads(g_tilde)
        return PolicyOutput(waypoints=waypoints, arrival_prob=prob)

    # -- public inference -------------------------------------------------------

    def _validate_window(self, window, needs_frames):
        cfg = self.config
        if window.positions.shape != (cfg.context_n, 2):
            raise ValidationError("positions", f"expected ({cfg.context_n}, 2), got {window.positions.shape}")
        if not np.all(np.isfinite(window.positions)):
            raise ValidationError("positions", "non-finite value")
        if window.subgoal.shape != (2,):
            raise ValidationError("subgoal", f"expected (2,), got {window.subgoal.shape}")
        if not np.all(np.isfinite(window.subgoal)):
            raise ValidationError("subgoal", "non-finite value")
        if window.features is not None:
            if len(window.features) != cfg.context_n:
                raise ValidationError("features", f"expected {cfg.context_n} frames, got {len(window.features)}")
        elif window.frames is not None:
            if len(window.frames) != cfg.context_n:
                raise ValidationError("frames", f"expected {cfg.context_n} frames, got {len(window.frames)}")
            if needs_frames:
                raise ValidationError("frames", "raw frames given but no feature extractor bound")
        else:
            raise ValidationError("frames", "window carries neither frames nor features")
        if window.tracks is not None and window.tracks.n_frames != cfg.context_n:
            raise ValidationError("tracks", f"track set spans {window.tracks.n_frames} frames")

    def predict(self, window, extractor=None):
        """Validated, non-differentiable prediction for one window."""
        self._validate_window(window, needs_frames=extractor is None)
        features, tracks = window.features, window.tracks
        if features is None:
            features, ext_tracks = extractor.window_features(window.frames)
            tracks = tracks if tracks is not None else ext_tracks
        with T.no_grad():
            out = self.forward(features, tracks, window.positions, window.subgoal)
        wp = out.waypoints.data.copy()
        prob = float(out.arrival_prob.data)
        if not np.all(np.isfinite(wp)) or not np.isfinite(prob):
            raise EvaluationError("non-finite prediction")
        return PolicyOutput(waypoints=wp, arrival_prob=prob)

    # -- persistence --------------------------------------------------------------

    def save(self, path):
        named = [(name, p.data) for name, p in self.named_parameters()]
        sw_io.save_checkpoint(path, self.config.to_dict(), named)

    @staticmethod
    def load(path):
        config_dict, named = sw_io.load_checkpoint(path)
        model = PolicyModel(ModelConfig.from_dict(config_dict), seed=0)
        current = dict(model.named_parameters())
        if set(current) != {n for n, _ in named}:
            raise FormatError("checkpoint parameter names do not match the architecture")
        for name, arr in named:
            if current[name].data.shape != arr.shape:
                raise FormatError(f"parameter {name} has shape {arr.shape}, expected {current[name].data.shape}")
            current[name].data = arr.astype(np.float64)
        return model


# -- losses ----------------------------------------------------------------------


def _step_vectors(waypoints):
    """Consecutive step vectors with the origin prepended, differentiably."""
    first = waypoints[0:1]
    rest = waypoints[1:] - waypoints[:-1]
    return concat([first, rest], axis=0)


def direction_loss(pred_waypoints, gt_waypoints, eps=DEGENERATE_STEP_M):
    """Mean absolute wrapped angle between predicted and true step headings.

    Steps whose ground-truth length is below `eps` have no defined heading
    and are skipped; if every step is degenerate the loss is undefined.
    """
    pred = pred_waypoints if isinstance(pred_waypoints, Tensor) else Tensor(np.asarray(pred_waypoints, dtype=np.float64))
    gt = np.asarray(gt_waypoints, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    gt_steps = np.diff(np.vstack([[0.0, 0.0], gt]), axis=0)
    valid = np.linalg.norm(gt_steps, axis=1) >= eps
    if not valid.any():
        raise UndefinedDirectionError("all ground-truth steps are degenerate")
    steps = _step_vectors(pred)[valid]
    px, py = steps[:, 0], steps[:, 1]
    gx, gy = gt_steps[valid, 0], gt_steps[valid, 1]
    # wrapped angle between each step pair via atan2(cross, dot)
    cross = px * gy - py * gx
    dot = px * gx + py * gy
    ang = T.absolute(T.atan2(cross, dot))
    return ang.sum() / float(valid.sum())


def binary_cross_entropy(prob, label):
    """BCE on a probability, clamped away from 0 and 1."""
    p = prob if isinstance(prob, Tensor) else Tensor(float(prob))
    p = T.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = 1.0 if label else 0.0
    return -(T.log(p) * y + T.log(1.0 - p) * (1.0 - y))


def composite_loss(pred, sample, config):
    """Total training loss L_wp + lambda_arrvd * L_arrvd + lambda_dir * L_dir.

    Windows where the expert stands still for the whole horizon have no
    defined step headings; the direction term is dropped for those (the
    other two terms still supervise stopping and arrival).
    """
    wp = pred.waypoints if isinstance(pred.waypoints, Tensor) else Tensor(np.asarray(pred.waypoints, dtype=np.float64))
    gt = sample.gt_waypoints
    if tuple(wp.shape) != gt.shape:
        raise ShapeError(f"waypoints {wp.shape} vs ground truth {gt.shape}")
    total = ((wp - Tensor(gt)) ** 2).mean()
    total = total + config.lambda_arrvd * binary_cross_entropy(pred.arrival_prob, sample.gt_arrived)
    try:
        total = total + config.lambda_dir * direction_loss(wp, gt)
    except UndefinedDirectionError:
        pass
    return total


def sample_loss(model, sample):
    out = model.forward(
        sample.window.features, sample.window.tracks, sample.window.positions, sample.window.subgoal
    )
    return composite_loss(out, sample, model.config)


def train_step(model, batch, optimizer):
    """One optimizer step on the mean composite loss; returns the pre-step loss."""
    if not batch:
        raise ValueError("batch must be nonempty")
    optimizer.zero_grad()
    total = sample_loss(model, batch[0])
    for s in batch[1:]:
        total = total + sample_loss(model, s)
    total = total * (1.0 / len(batch))
    value = total.item()
    if not np.isfinite(value):
        raise EvaluationError(f"non-finite loss {value}; aborting before the update")
    total.backward()
    optimizer.step()
    return value


def fit(model, samples, steps, batch_size, lr, seed=0, weight_decay=0.01,
        cosine_decay=True, min_lr_frac=0.05, log_every=0):
    """Small training loop: shuffled minibatches, AdamW with cosine decay."""
    rng = np.random.default_rng(seed)
    opt = AdamW(model.parameters(), lr=lr, weight_decay=weight_decay)
    batch_size = min(batch_size, len(samples))
    history = []
    order = []
    for step in range(steps):
        if cosine_decay:
            frac = 0.5 * (1.0 + np.cos(np.pi * step / max(1, steps)))
            opt.lr = lr * (min_lr_frac + (1.0 - min_lr_frac) * frac)
        if len(order) < batch_size:
            order = list(rng.permutation(len(samples)))
        idx = [order.pop() for _ in range(batch_size)]
        loss = train_step(model, [samples[i] for i in idx], opt)
        history.append(loss)
        if log_every and (step + 1) % log_every == 0:
            recent = float(np.mean(history[-log_every:]))
            print(f"step {step + 1}/{steps}  loss {recent:.4f}")
    return history


def straight_waypoints(horizon, step_m=1.0):
    """Constant straight-ahead prediction, the no-skill heading baseline."""
    ks = np.arange(1, horizon + 1, dtype=np.float64)
    return np.stack([ks * step_m, np.zeros(horizon)], axis=1)
