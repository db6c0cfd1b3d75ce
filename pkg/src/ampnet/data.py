"""Datasets: the moving-pixel world, the line-tracer simulator, file I/O.

Both experiments produce synchronized (frame, action) time series.  The
moving-pixel world is fully enumerated and deterministic; the line tracer
is a differential-drive robot following a rounded-rectangle circuit with a
proportional steering controller, rendered as a top-down grayscale window
ahead of the robot.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigMismatchError, FormatError, InvalidArgumentError


@dataclass
class Sequence:
    """Frames ``(T, C, H, W)`` in [0,1] plus actions ``(T, A)``, same T."""

    frames: np.ndarray
    actions: np.ndarray

    def __post_init__(self):
        self.frames = np.ascontiguousarray(self.frames, dtype=np.float32)
        self.actions = np.ascontiguousarray(self.actions, dtype=np.float32)
        if self.frames.ndim != 4 or self.actions.ndim != 2:
            raise InvalidArgumentError(
                f"sequence wants frames (T,C,H,W) and actions (T,A), got {self.frames.shape} and {self.actions.shape}")
        if len(self.frames) != len(self.actions):
            raise InvalidArgumentError(
                f"frames and actions disagree on T: {len(self.frames)} vs {len(self.actions)}")
        if len(self.frames) < 1:
            raise InvalidArgumentError("sequence must contain at least one step")
        if not np.isfinite(self.frames).all() or not np.isfinite(self.actions).all():
            raise InvalidArgumentError("sequence contains non-finite values")

    def __len__(self):
        return len(self.frames)


@dataclass
class Dataset:
    height: int
    width: int
    channels: int
    action_dim: int
    sequences: list = field(default_factory=list)

    def __post_init__(self):
        for i, seq in enumerate(self.sequences):
            shape = seq.frames.shape[1:]
            if shape != (self.channels, self.height, self.width):
                raise InvalidArgumentError(f"sequence {i} frames {shape} do not match dataset dims")
            if seq.actions.shape[1] != self.action_dim:
                raise InvalidArgumentError(f"sequence {i} action dim {seq.actions.shape[1]} != {self.action_dim}")

    def __len__(self):
        return len(self.sequences)


def check_dims(net_config, dataset):
    got = (dataset.channels, dataset.height, dataset.width, dataset.action_dim)
    want = (net_config.channels, net_config.height, net_config.width, net_config.action_dim)
    if got != want:
        raise ConfigMismatchError(f"dataset dims {got} do not match network config {want} (C,H,W,A)")


# ---------------------------------------------------------------------------
# minimalistic moving-pixel world

DIRECTIONS = {"right": (0, 1), "down": (1, 0)}
DIRECTION_ACTIONS = {"right": (1.0, 0.0), "down": (0.0, 1.0)}


def gen_minworld(height=8, width=12, steps=12, directions=("right", "down")):
    """Every (direction, start cell) sequence of a single bright pixel.

    The pixel moves one cell per step with toroidal wrap-around; the action
    vector is constant per sequence ([1,0] rightward, [0,1] downward).
    No randomness: the dataset is a pure function of its arguments.
    """
    if height < 2 or width < 2:
        raise InvalidArgumentError("minworld needs height and width >= 2")
    if steps < 1:
        raise InvalidArgumentError("minworld needs steps >= 1")
    sequences = []
    for direction in directions:
        if direction not in DIRECTIONS:
            raise InvalidArgumentError(f"unknown direction {direction!r}, expected one of {sorted(DIRECTIONS)}")
        dr, dc = DIRECTIONS[direction]
        action = DIRECTION_ACTIONS[direction]
        for r0 in range(height):
            for c0 in range(width):
                frames = np.zeros((steps, 1, height, width), dtype=np.float32)
                for t in range(steps):
                    frames[t, 0, (r0 + t * dr) % height, (c0 + t * dc) % width] = 1.0
                actions = np.tile(np.asarray(action, dtype=np.float32), (steps, 1))
                sequences.append(Sequence(frames=frames, actions=actions))
    return Dataset(height=height, width=width, channels=1, action_dim=2, sequences=sequences)


# ---------------------------------------------------------------------------
# line-tracer robot simulator

@dataclass(frozen=True)
class TrackSpec:
    """Closed rounded-rectangle circuit centered at the origin (meters).

    The default extents keep roughly half of a lap on the corner arcs, so
    the camera stream mixes translating and rotating line patterns.
    """

    half_length: float = 0.45
    half_width: float = 0.3
    corner_radius: float = 0.2
    line_width: float = 0.02

    def __post_init__(self):
        if self.half_length <= 0 or self.half_width <= 0:
            raise InvalidArgumentError("track extents must be positive (zero-length track)")
        if not 0 < self.corner_radius <= min(self.half_length, self.half_width):
            raise InvalidArgumentError("corner_radius must lie in (0, min(half_length, half_width)]")
        if self.line_width <= 0:
            raise InvalidArgumentError("line_width must be positive")


@dataclass(frozen=True)
class TracerConfig:
    """Robot geometry, camera window, and controller gains."""

    wheel_radius: float = 0.03   # m
    axle_width: float = 0.1      # m
    dt: float = 0.02             # s, fixed sampling interval
    frame_height: int = 8
    frame_width: int = 12
    pixel_size: float = 0.01     # m per pixel
    window_offset: float = 0.02  # m from axle to the near edge of the window
    base_wheel_speed: float = 50.0 / 3.0  # rad/s, ~0.5 m/s forward
    steer_gain: float = 400.0    # rad/s of turn per meter of lateral offset
    lookahead: float = 0.08      # m ahead of the axle for the offset probe


@dataclass
class TracerState:
    """Planar pose plus current wheel speeds; heading wrapped to (-pi, pi]."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0
    omega_left: float = 0.0
    omega_right: float = 0.0


def wrap_angle(theta):
    wrapped = math.remainder(theta, 2.0 * math.pi)
    return math.pi if wrapped == -math.pi else wrapped


def track_distance(track, x, y):
    """Signed distance to the circuit centerline (negative inside)."""
    bx = track.half_length - track.corner_radius
    by = track.half_width - track.corner_radius
    qx = np.abs(x) - bx
    qy = np.abs(y) - by
    outside = np.hypot(np.maximum(qx, 0.0), np.maximum(qy, 0.0))
    inside = np.minimum(np.maximum(qx, qy), 0.0)
    return outside + inside - track.corner_radius


def step_pose(state, cfg):
    """Euler-integrate one timestep of differential-drive kinematics."""
    v = cfg.wheel_radius * (state.omega_left + state.omega_right) / 2.0
    omega = cfg.wheel_radius * (state.omega_right - state.omega_left) / cfg.axle_width
    return TracerState(
        x=state.x + v * math.cos(state.theta) * cfg.dt,
        y=state.y + v * math.sin(state.theta) * cfg.dt,
        theta=wrap_angle(state.theta + omega * cfg.dt),
        omega_left=state.omega_left,
        omega_right=state.omega_right,
    )


def render_frame(track, state, cfg, supersample=4):
    """Grayscale ground window ahead of the robot.

    Row 0 is farthest ahead; columns run left to right across the heading.
    Pixel intensity is the fraction of its supersamples lying within the
    line's half-width of the centerline.
    """
    h, w, px = cfg.frame_height, cfg.frame_width, cfg.pixel_size
    s = supersample
    sub = (np.arange(s) + 0.5) / s
    ahead = cfg.window_offset + (np.arange(h)[::-1][:, None] + sub[None, :]) * px
    lateral = (np.arange(w)[:, None] - w / 2.0 + sub[None, :]) * px
    fx, fy = math.cos(state.theta), math.sin(state.theta)
    nx, ny = -fy, fx  # left normal
    a = ahead.reshape(h, 1, s, 1)
    l = lateral.reshape(1, w, 1, s)
    wx = state.x + a * fx + l * nx
    wy = state.y + a * fy + l * ny
    covered = np.abs(track_distance(track, wx, wy)) <= track.line_width / 2.0
    frame = covered.mean(axis=(2, 3))
    return frame.astype(np.float32)[None, :, :]


def steer(track, state, cfg, noise=0.0, rng=None):
    """Proportional controller on the lookahead point's signed offset.

    Traveling counterclockwise the interior lies to the left, so a
    positive (outside) offset commands a left turn.  Optional seeded
    gaussian noise perturbs each wheel speed.
    """
    lx = state.x + cfg.lookahead * math.cos(state.theta)
    ly = state.y + cfg.lookahead * math.sin(state.theta)
    offset = float(track_distance(track, lx, ly))
    turn = cfg.steer_gain * offset
    half = turn * cfg.axle_width / (2.0 * cfg.wheel_radius)
    wl = cfg.base_wheel_speed - half
    wr = cfg.base_wheel_speed + half
    if noise > 0.0:
        wl += noise * rng.standard_normal()
        wr += noise * rng.standard_normal()
    return wl, wr


def sim_linetracer(track=None, steps=5000, seed=0, cfg=None, noise=0.0, seq_len=20):
    """Simulate a line-following run and chop it into training sequences.

    Wheel speeds are recorded as the action pair, jointly min-max
    normalized to [0,1] over the whole run.  The trailing partial chunk
    (shorter than ``seq_len``) is dropped.
    """
    track = track or TrackSpec()
    cfg = cfg or TracerConfig()
    if steps < 1:
        raise InvalidArgumentError("sim_linetracer needs steps >= 1")
    if seq_len < 1:
        raise InvalidArgumentError("sim_linetracer needs seq_len >= 1")
    rng = np.random.default_rng(seed)
    # start on the bottom straight, heading +x (counterclockwise travel)
    state = TracerState(x=0.0, y=-track.half_width, theta=0.0)
    frames = np.zeros((steps, 1, cfg.frame_height, cfg.frame_width), dtype=np.float32)
    wheels = np.zeros((steps, 2), dtype=np.float64)
    for t in range(steps):
        frames[t] = render_frame(track, state, cfg)
        wl, wr = steer(track, state, cfg, noise, rng)
        wheels[t] = (wl, wr)
        state.omega_left, state.omega_right = wl, wr
        state = step_pose(state, cfg)
    lo, hi = wheels.min(), wheels.max()
    if hi - lo < 1e-12:
        actions = np.full_like(wheels, 0.5)
    else:
        actions = (wheels - lo) / (hi - lo)
    actions = actions.astype(np.float32)
    sequences = []
    for start in range(0, steps - seq_len + 1, seq_len):
        sequences.append(Sequence(frames=frames[start:start + seq_len],
                                  actions=actions[start:start + seq_len]))
    if not sequences:
        sequences = [Sequence(frames=frames, actions=actions)]
    return Dataset(height=cfg.frame_height, width=cfg.frame_width, channels=1,
                   action_dim=2, sequences=sequences)


# ---------------------------------------------------------------------------
# dataset file format

MAGIC = b"AFAP"
VERSION = 1


def write_dataset(path, dataset):
    """Write the bit-exact binary format (magic AFAP, little-endian)."""
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    out += struct.pack("<IIII", dataset.height, dataset.width, dataset.channels, dataset.action_dim)
    out += struct.pack("<I", len(dataset.sequences))
    for seq in dataset.sequences:
        out += struct.pack("<I", len(seq))
        out += np.ascontiguousarray(seq.frames, dtype="<f4").tobytes()
        out += np.ascontiguousarray(seq.actions, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(bytes(out))


def read_dataset(path):
    """Read and validate a dataset file; raises FormatError on any defect."""
    with open(path, "rb") as f:
        data = f.read()
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"truncated file while reading {what}", offset=pos)
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise FormatError(f"bad magic, expected {MAGIC!r}", offset=0)
    version = struct.unpack("<I", take(4, "version"))[0]
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    h, w, c, a = struct.unpack("<IIII", take(16, "dimensions"))
    if min(h, w, c, a) < 1:
        raise FormatError(f"invalid dimensions {(h, w, c, a)}", offset=8)
    count = struct.unpack("<I", take(4, "sequence count"))[0]
    sequences = []
    for i in range(count):
        t_at = pos
        t = struct.unpack("<I", take(4, f"length of sequence {i}"))[0]
        if t < 1:
            raise FormatError(f"sequence {i} has zero length", offset=t_at)
        frames = np.frombuffer(take(4 * t * c * h * w, f"frames of sequence {i}"), dtype="<f4")
        actions = np.frombuffer(take(4 * t * a, f"actions of sequence {i}"), dtype="<f4")
        try:
            sequences.append(Sequence(frames=frames.reshape(t, c, h, w).astype(np.float32),
                                      actions=actions.reshape(t, a).astype(np.float32)))
        except InvalidArgumentError as exc:
            raise FormatError(f"sequence {i} invalid: {exc}", offset=t_at) from exc
    if pos != len(data):
        raise FormatError("trailing bytes after last sequence", offset=pos)
    return Dataset(height=h, width=w, channels=c, action_dim=a, sequences=sequences)
