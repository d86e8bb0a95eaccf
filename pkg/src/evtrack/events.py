"""Event streams, frame stacking, region cropping, and synthetic test sequences.

An event camera emits asynchronous brightness-change events (x, y, t, polarity).
For tracking we stack them into fixed-duration 3-channel frames:

    channel 0: per-pixel count of positive events, normalized by the window max
    channel 1: per-pixel count of negative events, normalized by the window max
    channel 2: latest-event time at each pixel, normalized to [0, 1) in the window

Pixels that saw no events are 0 in all channels.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from typing import NamedTuple, Sequence

import numpy as np


class EventPoint(NamedTuple):
    """One asynchronous brightness-change event."""

    x: int
    y: int
    t: int  # microseconds
    p: int  # +1 (ON) or -1 (OFF)


@dataclass(frozen=True)
class EventStream:
    """Time-ordered event arrays plus the sensor geometry they live on.

    Immutable after construction; timestamps must be non-decreasing and all
    coordinates must lie on the sensor.
    """

    xs: np.ndarray
    ys: np.ndarray
    ts: np.ndarray
    ps: np.ndarray
    sensor_width: int
    sensor_height: int

    def __post_init__(self):
        for name in ("xs", "ys", "ts", "ps"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            object.__setattr__(self, name, arr)
        n = self.xs.size
        if not (self.ys.size == self.ts.size == self.ps.size == n):
            raise ValueError("event arrays must have equal length")
        if self.sensor_width <= 0 or self.sensor_height <= 0:
            raise ValueError("sensor dimensions must be positive")
        if n:
            if np.any(np.diff(self.ts) < 0):
                raise ValueError("timestamps must be non-decreasing")
            if self.xs.min() < 0 or self.xs.max() >= self.sensor_width:
                raise ValueError("event x out of sensor bounds")
            if self.ys.min() < 0 or self.ys.max() >= self.sensor_height:
                raise ValueError("event y out of sensor bounds")
            if not np.all(np.isin(self.ps, (-1, 1))):
                raise ValueError("polarity must be +1 or -1")

    def __len__(self) -> int:
        return int(self.xs.size)

    def __getitem__(self, i: int) -> EventPoint:
        return EventPoint(int(self.xs[i]), int(self.ys[i]), int(self.ts[i]), int(self.ps[i]))

    @classmethod
    def from_points(cls, points: Sequence[EventPoint], sensor_width: int, sensor_height: int) -> "EventStream":
        if points:
            xs, ys, ts, ps = (np.array(v, dtype=np.int64) for v in zip(*points))
        else:
            xs = ys = ts = ps = np.empty(0, dtype=np.int64)
        return cls(xs, ys, ts, ps, sensor_width, sensor_height)


@dataclass(frozen=True)
class EventFrame:
    """One stacked 3 x H x W frame covering [window_start, window_end) microseconds."""

    data: np.ndarray
    window_start: int
    window_end: int

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[0] != 3:
            raise ValueError("frame data must be 3 x H x W")

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in center form (cx, cy, w, h), pixel units."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError("degenerate box")

    @classmethod
    def from_topleft(cls, x: float, y: float, w: float, h: float) -> "BBox":
        return cls(x + w / 2.0, y + h / 2.0, w, h)

    def to_topleft(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2.0, self.cy - self.h / 2.0, self.w, self.h)

    def corners(self) -> tuple[float, float, float, float]:
        """(x1, y1, x2, y2)."""
        return (self.cx - self.w / 2.0, self.cy - self.h / 2.0,
                self.cx + self.w / 2.0, self.cy + self.h / 2.0)

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class RegionPatch:
    """A square crop resized to a fixed side, with the geometry to map back.

    A patch coordinate u (in [0, out_size), continuous, x or y alike) maps to
    the frame coordinate  crop_origin + u / resize_factor.
    """

    data: np.ndarray
    resize_factor: float
    crop_center: tuple[float, float]

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[0] != 3 or self.data.shape[1] != self.data.shape[2]:
            raise ValueError("patch data must be 3 x S x S")
        if self.resize_factor <= 0:
            raise ValueError("resize_factor must be positive")

    @property
    def out_size(self) -> int:
        return self.data.shape[-1]

    @property
    def crop_side(self) -> float:
        return self.out_size / self.resize_factor

    @property
    def crop_origin(self) -> tuple[float, float]:
        half = self.crop_side / 2.0
        return (self.crop_center[0] - half, self.crop_center[1] - half)

    def patch_to_frame(self, px: float, py: float) -> tuple[float, float]:
        ox, oy = self.crop_origin
        return (ox + px / self.resize_factor, oy + py / self.resize_factor)

    def frame_to_patch(self, fx: float, fy: float) -> tuple[float, float]:
        ox, oy = self.crop_origin
        return ((fx - ox) * self.resize_factor, (fy - oy) * self.resize_factor)


def stack_events(stream: EventStream, window_us: int) -> list[EventFrame]:
    """Stack a stream into consecutive fixed-duration 3-channel frames.

    Windows tile [first_t, last_t]; an empty stream yields an empty list.
    """
    if window_us <= 0:
        raise ValueError("window_us must be positive")
    if len(stream) == 0:
        return []
    h, w = stream.sensor_height, stream.sensor_width
    first = int(stream.ts[0])
    last = int(stream.ts[-1])
    n_frames = (last - first) // window_us + 1
    idx = (stream.ts - first) // window_us

    frames = []
    # Events are time sorted, so each window is a contiguous slice.
    bounds = np.searchsorted(idx, np.arange(n_frames + 1))
    for k in range(n_frames):
        lo, hi = bounds[k], bounds[k + 1]
        start = first + k * window_us
        data = np.zeros((3, h, w), dtype=np.float32)
        if hi > lo:
            xs = stream.xs[lo:hi]
            ys = stream.ys[lo:hi]
            ts = stream.ts[lo:hi]
            ps = stream.ps[lo:hi]
            pos = ps > 0
            counts = np.zeros((2, h, w), dtype=np.float64)
            np.add.at(counts[0], (ys[pos], xs[pos]), 1.0)
            np.add.at(counts[1], (ys[~pos], xs[~pos]), 1.0)
            for c in range(2):
                m = counts[c].max()
                if m > 0:
                    data[c] = counts[c] / m
            # Latest-event surface: timestamps are sorted, so a running max
            # of the normalized in-window time keeps the last event per pixel.
            tnorm = (ts - start).astype(np.float64) / window_us
            np.maximum.at(data[2], (ys, xs), tnorm.astype(np.float32))
        frames.append(EventFrame(data=data, window_start=start, window_end=start + window_us))
    return frames


def _bilinear_sample(img: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Sample (3, H, W) at continuous positions; outside the image reads 0.

    gx/gy are edge-based coordinates (pixel (i, j) spans [j, j+1) x [i, i+1)).
    """
    _, h, w = img.shape
    cx = gx - 0.5  # index space: pixel centers at integers
    cy = gy - 0.5
    x0 = np.floor(cx).astype(np.int64)
    y0 = np.floor(cy).astype(np.int64)
    fx = (cx - x0).astype(img.dtype)
    fy = (cy - y0).astype(img.dtype)

    grid_shape = np.broadcast_shapes(gx.shape, gy.shape)
    out = np.zeros((img.shape[0],) + grid_shape, dtype=img.dtype)
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            xi = x0 + dx
            yi = y0 + dy
            valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            xs = np.clip(xi, 0, w - 1)
            ys = np.clip(yi, 0, h - 1)
            out += (wy * wx * valid) * img[:, ys, xs]
    return out


def crop_region(frame: EventFrame, box: BBox, context_factor: float, out_size: int) -> RegionPatch:
    """Crop a context-scaled square around a box and resize it bilinearly.

    The crop side is context_factor * sqrt(w * h); out-of-frame area is
    zero-padded. resize_factor = out_size / crop_side is recorded so patch
    coordinates can be mapped back to frame coordinates.
    """
    if context_factor < 1:
        raise ValueError("context_factor must be >= 1")
    if not (box.w * box.h > 0):
        raise ValueError("degenerate box")
    side = context_factor * math.sqrt(box.w * box.h)
    rf = out_size / side
    x0 = box.cx - side / 2.0
    y0 = box.cy - side / 2.0
    grid = (np.arange(out_size, dtype=np.float64) + 0.5) / rf
    gx = x0 + grid[None, :]
    gy = y0 + grid[:, None]
    data = _bilinear_sample(frame.data.astype(np.float32), gx, gy)
    return RegionPatch(data=data, resize_factor=rf, crop_center=(box.cx, box.cy))


# ---------------------------------------------------------------------------
# Synthetic sequences
# ---------------------------------------------------------------------------

@dataclass
class SynthConfig:
    """Deterministic moving-rectangle event generator.

    Events fire on the target boundary (rounded to the containing pixel, so
    within 1 px) plus uniform noise; one ground-truth box per stacking window.
    """

    sensor_width: int = 240
    sensor_height: int = 180
    target_width: float = 32.0
    target_height: float = 24.0
    trajectory: str = "linear"  # "linear" or "circular"
    velocity: tuple[float, float] = (2.0, 1.0)  # px per window (linear)
    orbit_radius: float = 40.0  # px (circular)
    orbit_step: float = 0.1  # radians per window (circular)
    events_per_window: int = 600
    noise_per_window: int = 60
    duration_us: int = 500_000
    window_us: int = 10_000
    start_center: tuple[float, float] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.trajectory not in ("linear", "circular"):
            raise ValueError("trajectory must be 'linear' or 'circular'")

    def to_json(self) -> str:
        d = asdict(self)
        d["velocity"] = list(d["velocity"])
        if d["start_center"] is not None:
            d["start_center"] = list(d["start_center"])
        return json.dumps(d, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SynthConfig":
        d = json.loads(text)
        if "velocity" in d:
            d["velocity"] = tuple(d["velocity"])
        if d.get("start_center") is not None:
            d["start_center"] = tuple(d["start_center"])
        return cls(**d)


def _target_centers(cfg: SynthConfig, n_windows: int) -> np.ndarray:
    if cfg.start_center is not None:
        cx, cy = cfg.start_center
    else:
        cx, cy = cfg.sensor_width / 2.0, cfg.sensor_height / 2.0
    centers = np.empty((n_windows, 2), dtype=np.float64)
    if cfg.trajectory == "linear":
        vx, vy = cfg.velocity
        for k in range(n_windows):
            centers[k] = (cx, cy)
            cx, cy = cx + vx, cy + vy  # cumulative so consecutive steps are exact
    else:
        for k in range(n_windows):
            ang = k * cfg.orbit_step
            centers[k] = (cx + cfg.orbit_radius * math.cos(ang),
                          cy + cfg.orbit_radius * math.sin(ang))
    return centers


def _perimeter_points(rng: np.random.Generator, center: np.ndarray,
                      w: float, h: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """n points sampled uniformly along the rectangle boundary (edge coords)."""
    x1 = center[0] - w / 2.0
    y1 = center[1] - h / 2.0
    per = 2.0 * (w + h)
    s = rng.uniform(0.0, per, size=n)
    fx = np.empty(n)
    fy = np.empty(n)
    top = s < w
    right = (s >= w) & (s < w + h)
    bottom = (s >= w + h) & (s < 2 * w + h)
    left = s >= 2 * w + h
    fx[top], fy[top] = x1 + s[top], y1
    fx[right], fy[right] = x1 + w, y1 + (s[right] - w)
    fx[bottom], fy[bottom] = x1 + w - (s[bottom] - w - h), y1 + h
    fx[left], fy[left] = x1, y1 + h - (s[left] - 2 * w - h)
    return fx, fy


def synth_stream(cfg: SynthConfig) -> tuple[EventStream, list[BBox]]:
    """Generate a synthetic stream and one ground-truth box per window.

    Deterministic for a fixed seed (bit-exact across runs).
    """
    if cfg.duration_us <= 0:
        raise ValueError("duration must be positive")
    n_windows = cfg.duration_us // cfg.window_us
    if n_windows == 0:
        raise ValueError("duration shorter than one stacking window")
    rng = np.random.default_rng(cfg.seed)
    centers = _target_centers(cfg, n_windows)

    xs_all, ys_all, ts_all, ps_all = [], [], [], []
    for k in range(n_windows):
        t0 = k * cfg.window_us
        fx, fy = _perimeter_points(rng, centers[k], cfg.target_width, cfg.target_height,
                                   cfg.events_per_window)
        xs = np.clip(np.floor(fx).astype(np.int64), 0, cfg.sensor_width - 1)
        ys = np.clip(np.floor(fy).astype(np.int64), 0, cfg.sensor_height - 1)
        ts = rng.integers(t0, t0 + cfg.window_us, size=cfg.events_per_window)
        ps = rng.choice(np.array([-1, 1], dtype=np.int64), size=cfg.events_per_window)
        xs_all.append(xs); ys_all.append(ys); ts_all.append(ts); ps_all.append(ps)
        if cfg.noise_per_window > 0:
            xs_all.append(rng.integers(0, cfg.sensor_width, size=cfg.noise_per_window))
            ys_all.append(rng.integers(0, cfg.sensor_height, size=cfg.noise_per_window))
            ts_all.append(rng.integers(t0, t0 + cfg.window_us, size=cfg.noise_per_window))
            ps_all.append(rng.choice(np.array([-1, 1], dtype=np.int64), size=cfg.noise_per_window))

    xs = np.concatenate(xs_all)
    ys = np.concatenate(ys_all)
    ts = np.concatenate(ts_all)
    ps = np.concatenate(ps_all)
    order = np.argsort(ts, kind="stable")
    stream = EventStream(xs[order], ys[order], ts[order], ps[order],
                         cfg.sensor_width, cfg.sensor_height)
    boxes = [BBox(c[0], c[1], cfg.target_width, cfg.target_height) for c in centers]
    return stream, boxes


# ---------------------------------------------------------------------------
# File formats: event CSV (`t,x,y,p` with header) and box files
# (`x,y,w,h` top-left, one line per frame). UTF-8, LF.
# ---------------------------------------------------------------------------

def save_events_csv(stream: EventStream, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("t,x,y,p\n")
        for i in range(len(stream)):
            f.write(f"{stream.ts[i]},{stream.xs[i]},{stream.ys[i]},{stream.ps[i]}\n")


def load_events_csv(path, sensor_width: int | None = None,
                    sensor_height: int | None = None) -> EventStream:
    """Load an event CSV; sensor size is inferred from the data unless given."""
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        if header.replace(" ", "") != "t,x,y,p":
            raise ValueError(f"bad event file header: {header!r}")
        rows = np.loadtxt(f, delimiter=",", dtype=np.int64, ndmin=2)
    if rows.size == 0:
        rows = np.empty((0, 4), dtype=np.int64)
    ts, xs, ys, ps = rows[:, 0], rows[:, 1], rows[:, 2], rows[:, 3]
    if sensor_width is None:
        sensor_width = int(xs.max()) + 1 if xs.size else 1
    if sensor_height is None:
        sensor_height = int(ys.max()) + 1 if ys.size else 1
    return EventStream(xs, ys, ts, ps, sensor_width, sensor_height)


def save_boxes_csv(boxes: Sequence[BBox], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for b in boxes:
            x, y, w, h = b.to_topleft()
            f.write(f"{x:.4f},{y:.4f},{w:.4f},{h:.4f}\n")


def load_boxes_csv(path) -> list[BBox]:
    boxes = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            x, y, w, h = (float(v) for v in line.split(","))
            boxes.append(BBox.from_topleft(x, y, w, h))
    return boxes
