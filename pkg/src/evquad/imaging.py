"""Sensor-side data model: grayscale frames, event streams, temporal binning
and synthetic scene/event generation for desk-scale experiments.

Events are carried as ``(n, 4)`` int64 arrays with columns ``x, y, t, p``
(timestamps in microseconds, polarity +-1), always sorted by ``(t, y, x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Event array column indices.
EX, EY, ET, EP = 0, 1, 2, 3

DEFAULT_FRAME_RATE = 30
DEFAULT_FRAME_INTERVAL_US = 1_000_000 // DEFAULT_FRAME_RATE
DEFAULT_CONTRAST_THRESHOLD = 0.15


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Frame:
    """8-bit grayscale raster with a square, power-of-two side."""

    pixels: np.ndarray
    index: int = 0

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.uint8)
        if px.ndim != 2 or px.shape[0] != px.shape[1]:
            raise ValueError(f"frame must be square, got shape {px.shape}")
        if not _is_pow2(px.shape[0]):
            raise ValueError(f"frame side {px.shape[0]} is not a power of two")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def side(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other):
        return (
            isinstance(other, Frame)
            and self.index == other.index
            and np.array_equal(self.pixels, other.pixels)
        )


def empty_events() -> np.ndarray:
    return np.empty((0, 4), dtype=np.int64)


def as_event_array(events) -> np.ndarray:
    """Coerce to an (n, 4) int64 event array and validate polarity."""
    ev = np.asarray(events, dtype=np.int64)
    if ev.size == 0:
        return empty_events()
    if ev.ndim != 2 or ev.shape[1] != 4:
        raise ValueError(f"events must have shape (n, 4), got {ev.shape}")
    pol = ev[:, EP]
    if not np.all((pol == 1) | (pol == -1)):
        raise ValueError("event polarity must be +1 or -1")
    return ev


def sort_events(events: np.ndarray) -> np.ndarray:
    """Canonical (t, y, x) ordering used for binning and codec scans."""
    ev = as_event_array(events)
    if len(ev) == 0:
        return ev
    order = np.lexsort((ev[:, EX], ev[:, EY], ev[:, ET]))
    return ev[order]


@dataclass(frozen=True)
class EventVolume:
    """Events of one inter-frame interval quantized into n_bins temporal bins."""

    bins: tuple  # tuple of (n_i, 4) int64 arrays
    t_start: int
    t_end: int
    width: int
    height: int

    @property
    def n_bins(self) -> int:
        return len(self.bins)

    @property
    def n_events(self) -> int:
        return sum(len(b) for b in self.bins)

    def flatten(self) -> np.ndarray:
        """Concatenate bins back into a single event array (order preserved)."""
        if self.n_events == 0:
            return empty_events()
        return np.concatenate([b for b in self.bins if len(b)], axis=0)


def bin_events(events, t_start: int, t_end: int, n_bins: int,
               width: int, height: int) -> EventVolume:
    """Partition events of [t_start, t_end) into n_bins temporal bins.

    Bin index is floor(n_bins * (t - t_start) / (t_end - t_start)), computed
    in exact integer arithmetic. Events outside the interval are rejected.
    """
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    if t_end <= t_start:
        raise ValueError("t_end must be > t_start")
    ev = sort_events(events)
    if len(ev):
        t = ev[:, ET]
        bad = (t < t_start) | (t >= t_end)
        if bad.any():
            t_bad = int(t[bad][0])
            raise ValueError(
                f"event at t={t_bad}us lies outside interval [{t_start}, {t_end})"
            )
        idx = (n_bins * (t - t_start)) // (t_end - t_start)
        bins = tuple(ev[idx == b] for b in range(n_bins))
    else:
        bins = tuple(empty_events() for _ in range(n_bins))
    return EventVolume(bins=bins, t_start=t_start, t_end=t_end,
                       width=width, height=height)


def aggregate_counts(volume: EventVolume) -> np.ndarray:
    """Per-pixel event counts over all bins, polarity ignored."""
    counts = np.zeros((volume.height, volume.width), dtype=np.int64)
    for b in volume.bins:
        if len(b):
            np.add.at(counts, (b[:, EY], b[:, EX]), 1)
    return counts


def count_map(events: np.ndarray, width: int, height: int) -> np.ndarray:
    """Per-pixel tally of an event array, polarity ignored."""
    counts = np.zeros((height, width), dtype=np.int64)
    ev = as_event_array(events)
    if len(ev):
        np.add.at(counts, (ev[:, EY], ev[:, EX]), 1)
    return counts


def log_intensity(pixels: np.ndarray) -> np.ndarray:
    """Bounded log surrogate log(1 + I/255); avoids the log(0) singularity."""
    return np.log1p(np.asarray(pixels, dtype=np.float64) / 255.0)


def synthesize_events(frame_prev: Frame, frame_cur: Frame,
                      contrast_threshold: float = DEFAULT_CONTRAST_THRESHOLD,
                      t_start: int = 0,
                      t_end: int = DEFAULT_FRAME_INTERVAL_US) -> np.ndarray:
    """Per-pixel threshold-crossing event generator between two frames.

    Each pixel emits k = floor(|dlog| / threshold) events with the sign of the
    change, timestamps spread uniformly over [t_start, t_end).
    """
    if contrast_threshold <= 0:
        raise ValueError("contrast_threshold must be > 0")
    if frame_prev.side != frame_cur.side:
        raise ValueError(
            f"frame size mismatch: {frame_prev.side} vs {frame_cur.side}"
        )
    dlog = log_intensity(frame_cur.pixels) - log_intensity(frame_prev.pixels)
    k = np.floor(np.abs(dlog) / contrast_threshold).astype(np.int64)
    ys, xs = np.nonzero(k)
    if len(ys) == 0:
        return empty_events()
    span = t_end - t_start
    rows = []
    for y, x in zip(ys.tolist(), xs.tolist()):
        n = int(k[y, x])
        p = 1 if dlog[y, x] > 0 else -1
        for j in range(n):
            t = t_start + (span * (j + 1)) // (n + 1)
            rows.append((x, y, t, p))
    return sort_events(np.array(rows, dtype=np.int64))


# ---------------------------------------------------------------------------
# Synthetic scenes


@dataclass(frozen=True)
class Shape:
    """A moving square; texture is anchored to the shape so interiors emit
    events under motion when textured. A bounce_period makes the path a
    triangle wave (velocity sign flips every period frames), so fast motion
    can be sustained indefinitely inside the frame."""

    x0: float
    y0: float
    size: int
    vx: float = 0.0
    vy: float = 0.0
    level: int = 200
    texture: int | None = None  # second gray level of a 2px checkerboard fill
    label: str = "object"
    bounce_period: float | None = None

    def position(self, tau: float) -> tuple[float, float]:
        if self.bounce_period is None:
            return self.x0 + self.vx * tau, self.y0 + self.vy * tau
        p = self.bounce_period
        phase = math.fmod(tau, 2.0 * p)
        tri = phase if phase <= p else 2.0 * p - phase
        return self.x0 + self.vx * tri, self.y0 + self.vy * tri


@dataclass(frozen=True)
class GTBox:
    """Axis-aligned ground-truth box with object identity."""

    object_id: int
    x: int
    y: int
    w: int
    h: int
    label: str = "object"


@dataclass
class SceneConfig:
    side: int = 64
    n_frames: int = 20
    shapes: list = field(default_factory=list)
    background: int = 0
    seed: int = 0
    oversample: int = 4  # micro-frames per interval for event synthesis
    contrast_threshold: float = DEFAULT_CONTRAST_THRESHOLD
    frame_interval_us: int = DEFAULT_FRAME_INTERVAL_US
    allow_exit: bool = False  # permit shapes to leave the frame (GT only while visible)


@dataclass
class SyntheticSequence:
    frames: list          # list[Frame]
    boxes: list           # list[list[GTBox]] per frame
    events: list          # list[np.ndarray] events of (t-1, t] per frame; [0] empty
    config: SceneConfig


def _render(cfg: SceneConfig, tau: float) -> np.ndarray:
    img = np.full((cfg.side, cfg.side), cfg.background, dtype=np.uint8)
    for sh in cfg.shapes:
        fx, fy = sh.position(tau)
        x, y = int(round(fx)), int(round(fy))
        x0, x1 = max(x, 0), min(x + sh.size, cfg.side)
        y0, y1 = max(y, 0), min(y + sh.size, cfg.side)
        if x0 >= x1 or y0 >= y1:
            continue
        if sh.texture is None:
            img[y0:y1, x0:x1] = sh.level
        else:
            yy, xx = np.mgrid[y0:y1, x0:x1]
            checker = (((xx - x) // 2) + ((yy - y) // 2)) % 2
            img[y0:y1, x0:x1] = np.where(checker == 0, sh.level, sh.texture)
    return img


def _gt_boxes(cfg: SceneConfig, frame_idx: int) -> list:
    out = []
    for oid, sh in enumerate(cfg.shapes):
        fx, fy = sh.position(float(frame_idx))
        x, y = int(round(fx)), int(round(fy))
        x0, x1 = max(x, 0), min(x + sh.size, cfg.side)
        y0, y1 = max(y, 0), min(y + sh.size, cfg.side)
        if x0 >= x1 or y0 >= y1:
            continue  # off-screen, no ground truth
        out.append(GTBox(object_id=oid, x=x0, y=y0, w=x1 - x0, h=y1 - y0,
                         label=sh.label))
    return out


def generate_synthetic_sequence(cfg: SceneConfig) -> SyntheticSequence:
    """Deterministic frames, tight ground-truth boxes and synthesized events.

    Events for frame t cover (t-1, t] and are produced by running the
    threshold generator over `oversample` micro-frames per interval, so
    sub-frame motion is represented. Raises if a shape leaves the frame
    unless cfg.allow_exit is set.
    """
    if not cfg.allow_exit:
        for sh in cfg.shapes:
            for k in range(cfg.n_frames):
                fx, fy = sh.position(float(k))
                if fx < 0 or fy < 0 or fx + sh.size > cfg.side or fy + sh.size > cfg.side:
                    raise ValueError(
                        f"shape at ({fx:.1f},{fy:.1f}) size {sh.size} leaves the "
                        f"{cfg.side}px frame at frame {k}"
                    )
    frames = [Frame(_render(cfg, float(k)), index=k) for k in range(cfg.n_frames)]
    boxes = [_gt_boxes(cfg, k) for k in range(cfg.n_frames)]
    events = [empty_events()]
    os_n = max(1, cfg.oversample)
    for k in range(1, cfg.n_frames):
        t0 = (k - 1) * cfg.frame_interval_us
        chunks = []
        prev = _render(cfg, float(k - 1))
        for j in range(os_n):
            tau1 = (k - 1) + (j + 1) / os_n
            cur = _render(cfg, tau1)
            sub_t0 = t0 + (cfg.frame_interval_us * j) // os_n
            sub_t1 = t0 + (cfg.frame_interval_us * (j + 1)) // os_n
            if sub_t1 > sub_t0:
                chunks.append(synthesize_events(
                    Frame(prev), Frame(cur), cfg.contrast_threshold,
                    t_start=sub_t0, t_end=sub_t1))
            prev = cur
        ev = (sort_events(np.concatenate(chunks)) if any(len(c) for c in chunks)
              else empty_events())
        events.append(ev)
    return SyntheticSequence(frames=frames, boxes=boxes, events=events, config=cfg)


def moving_squares_scene(side: int = 64, n_frames: int = 20, n_shapes: int = 2,
                         speed: float = 2.0, size: int = 16, seed: int = 0,
                         textured: bool = False, oversample: int = 4) -> SceneConfig:
    """Well-separated movers, one per horizontal lane, bouncing between the
    frame edges so any frame count fits."""
    rng = np.random.default_rng(seed)
    shapes = []
    lane = side // max(1, n_shapes)
    for i in range(n_shapes):
        y0 = i * lane + max(0, (lane - size) // 2)
        x0 = 2 + int(rng.integers(0, 5))
        travel = side - size - x0 - 2
        period = max(1.0, travel / speed)
        level = 120 + 30 * (i % 4)
        shapes.append(Shape(x0=float(x0), y0=float(y0), size=size,
                            vx=speed, vy=0.0, level=level,
                            texture=40 if textured else None,
                            label="square", bounce_period=period))
    return SceneConfig(side=side, n_frames=n_frames, shapes=shapes, seed=seed,
                       oversample=oversample)


def fast_crossing_scene(side: int = 64, n_frames: int = 8,
                        size: int = 20, cross_frame: int = 3,
                        seed: int = 0) -> SceneConfig:
    """One steady mover plus a solid object that crosses the frame in less
    than one frame interval, on-screen at exactly one frame instant
    (cross_frame, where it sits at x = 30, fully visible).

    At 8 temporal bins the crosser's per-bin event footprint is the swept
    band of its leading and trailing edges; a blob dilation of ~5 merges the
    pair so the event tracker can associate it across substeps, while no
    intensity frame but cross_frame ever shows it.
    """
    duration = 0.95  # on-screen time, in frame intervals
    v = (side + size) / duration
    x_at_cross = 43.0  # late in the pass: the tracker has converged by then
    x0 = x_at_cross - v * cross_frame
    steady = Shape(x0=4.0, y0=4.0, size=14, vx=1.0, vy=0.0, level=160,
                   texture=60, label="square")
    crosser = Shape(x0=x0, y0=float(side - size - 4), size=size, vx=v, vy=0.0,
                    level=230, texture=None, label="square")
    return SceneConfig(side=side, n_frames=n_frames, shapes=[steady, crosser],
                       seed=seed, oversample=16, allow_exit=True)
