"""Host-side detection, dual Kalman tracking and the late-fusion model.

The intensity tracker runs at frame rate; the event tracker runs N-1
predict-update substeps across each decoded event volume plus one closing
predict. Fusion extracts per-box features, filters on a confidence score,
merges cross-source pairs under one of three strategies, and a temporal
filter gates the ROI set fed back to the chip.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .imaging import Frame


class Source(enum.Enum):
    INTENSITY = 0
    EVENT = 1


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float
    class_label: str = "object"
    score: float = 1.0
    source: Source = Source.INTENSITY
    track_id: int | None = None

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError("box must have positive width and height")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return self.x + self.w / 2.0, self.y + self.h / 2.0


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union; symmetric, in [0, 1]."""
    x0 = max(a.x, b.x)
    y0 = max(a.y, b.y)
    x1 = min(a.x + a.w, b.x + b.w)
    y1 = min(a.y + a.h, b.y + b.h)
    iw = max(0.0, x1 - x0)
    ih = max(0.0, y1 - y0)
    inter = iw * ih
    if inter <= 0:
        return 0.0
    return inter / (a.area + b.area - inter)


# ---------------------------------------------------------------------------
# Detectors


class OracleDetector:
    """Ground-truth playback detector with optional jitter and dropout.

    Deterministic for a fixed seed: frame index and seed feed the generator.
    """

    modality = "intensity"

    def __init__(self, gt_boxes_per_frame, jitter_px: int = 0,
                 dropout: float = 0.0, seed: int = 0):
        self.gt = gt_boxes_per_frame
        self.jitter = int(jitter_px)
        self.dropout = float(dropout)
        self.seed = int(seed)

    def detect(self, frame, frame_index: int) -> list[BoundingBox]:
        rng = np.random.default_rng((self.seed, frame_index))
        out = []
        for gt in self.gt[frame_index]:
            if self.dropout > 0 and rng.random() < self.dropout:
                continue
            dx = dy = 0
            if self.jitter:
                dx = int(rng.integers(-self.jitter, self.jitter + 1))
                dy = int(rng.integers(-self.jitter, self.jitter + 1))
            out.append(BoundingBox(x=gt.x + dx, y=gt.y + dy, w=gt.w, h=gt.h,
                                   class_label=gt.label, score=1.0,
                                   source=Source.INTENSITY))
        return out


class BlobDetector:
    """Connected-component detector for event frames.

    Dilates the occupancy before 8-connected labeling so motion-split edge
    strips merge, then boxes the original pixels of each component. Score is
    occupied-pixel density inside the tight box.
    """

    modality = "event"

    def __init__(self, min_area: int = 1, dilate: int = 2):
        self.min_area = int(min_area)
        self.dilate = int(dilate)
        self._structure = np.ones((3, 3), dtype=bool)

    def detect(self, event_frame: np.ndarray, frame_index: int = 0
               ) -> list[BoundingBox]:
        occ = np.asarray(event_frame) != 0
        if not occ.any():
            return []
        grown = ndimage.binary_dilation(occ, structure=self._structure,
                                        iterations=self.dilate) \
            if self.dilate else occ
        labels, n = ndimage.label(grown, structure=self._structure)
        out = []
        for comp in range(1, n + 1):
            mask = (labels == comp) & occ
            npix = int(mask.sum())
            if npix < self.min_area:
                continue
            ys, xs = np.nonzero(mask)
            x0, x1 = int(xs.min()), int(xs.max()) + 1
            y0, y1 = int(ys.min()), int(ys.max()) + 1
            area = (x1 - x0) * (y1 - y0)
            out.append(BoundingBox(x=float(x0), y=float(y0),
                                   w=float(x1 - x0), h=float(y1 - y0),
                                   class_label="object",
                                   score=min(1.0, npix / area),
                                   source=Source.EVENT))
        out.sort(key=lambda b: (b.y, b.x))
        return out


# ---------------------------------------------------------------------------
# SORT-style Kalman tracking

# State: [cx, cy, s, r, vcx, vcy, vs]; observation: [cx, cy, s, r].
_H = np.zeros((4, 7))
_H[0, 0] = _H[1, 1] = _H[2, 2] = _H[3, 3] = 1.0
_R = np.diag([1.0, 1.0, 10.0, 10.0])
_P0 = np.diag([10.0, 10.0, 10.0, 10.0, 1e4, 1e4, 1e4])
_Q = np.diag([1.0, 1.0, 1.0, 1.0, 0.01, 0.01, 1e-4])

SCORE_SATURATION_HITS = 3


def _box_to_z(b: BoundingBox) -> np.ndarray:
    cx, cy = b.center
    return np.array([cx, cy, b.area, b.w / b.h], dtype=np.float64)


def _z_to_box(z: np.ndarray, **kw) -> BoundingBox | None:
    cx, cy, s, r = float(z[0]), float(z[1]), float(z[2]), float(z[3])
    if s <= 0 or r <= 0:
        return None
    w = np.sqrt(s * r)
    h = s / w
    return BoundingBox(x=cx - w / 2, y=cy - h / 2, w=w, h=h, **kw)


def _f_matrix(dt: float) -> np.ndarray:
    f = np.eye(7)
    f[0, 4] = f[1, 5] = f[2, 6] = dt
    return f


class Track:
    """Single constant-velocity Kalman track with class identity."""

    def __init__(self, box: BoundingBox, track_id: int):
        self.id = track_id
        self.class_label = box.class_label  # immutable for the track's life
        self.x = np.zeros(7)
        self.x[:4] = _box_to_z(box)
        self.P = _P0.copy()
        self.hits = 1
        self.hit_streak = 1
        self.time_since_update = 0
        self.age = 0

    def predict(self, dt: float) -> None:
        f = _f_matrix(dt)
        # Keep the scale observable: freeze a shrink that would cross zero.
        if self.x[2] + self.x[6] * dt <= 0:
            self.x[6] = 0.0
        self.x = f @ self.x
        self.P = f @ self.P @ f.T + _Q
        self.age += 1

    def update(self, box: BoundingBox) -> None:
        z = _box_to_z(box)
        y = z - _H @ self.x
        s = _H @ self.P @ _H.T + _R
        k = self.P @ _H.T @ np.linalg.inv(s)
        self.x = self.x + k @ y
        self.P = (np.eye(7) - k @ _H) @ self.P
        self.hits += 1
        self.hit_streak += 1
        self.time_since_update = 0

    def mark_missed(self) -> None:
        self.time_since_update += 1
        self.hit_streak = 0

    @property
    def score(self) -> float:
        return min(1.0, self.hit_streak / SCORE_SATURATION_HITS)

    def box(self, source: Source) -> BoundingBox | None:
        return _z_to_box(self.x[:4], class_label=self.class_label,
                         score=self.score, source=source, track_id=self.id)


def _greedy_iou_match(preds: list[BoundingBox], dets: list[BoundingBox],
                      threshold: float) -> list[tuple[int, int]]:
    """One-to-one matching by descending IoU above a threshold."""
    pairs = []
    for i, p in enumerate(preds):
        for j, d in enumerate(dets):
            v = iou(p, d)
            if v >= threshold:
                pairs.append((v, i, j))
    pairs.sort(key=lambda t: (-t[0], t[1], t[2]))
    used_p: set[int] = set()
    used_d: set[int] = set()
    out = []
    for _v, i, j in pairs:
        if i in used_p or j in used_d:
            continue
        used_p.add(i)
        used_d.add(j)
        out.append((i, j))
    return out


class MultiObjectTracker:
    """SORT-style tracker: predict, greedy-IoU associate, update, age out."""

    def __init__(self, source: Source, iou_threshold: float = 0.3,
                 max_age: int = 3, min_hits: int = 1,
                 frame_side: int | None = None):
        self.source = source
        self.iou_threshold = iou_threshold
        self.max_age = max_age
        self.min_hits = min_hits
        self.frame_side = frame_side
        self.tracks: list[Track] = []
        self._next_id = 0

    def _spawn(self, det: BoundingBox) -> None:
        self.tracks.append(Track(det, self._next_id))
        self._next_id += 1

    def _output(self) -> list[BoundingBox]:
        out = []
        for tr in self.tracks:
            if tr.hits < self.min_hits:
                continue
            box = tr.box(self.source)
            if box is None:
                continue
            if self.frame_side is not None:
                cx, cy = box.center
                if not (0 <= cx < self.frame_side and 0 <= cy < self.frame_side):
                    continue  # the object left the field of view
            out.append(box)
        return out

    def step(self, detections: list[BoundingBox], dt: float = 1.0
             ) -> list[BoundingBox]:
        """Advance dt, associate, update matched, spawn unmatched detections,
        drop tracks unmatched for more than max_age steps."""
        if dt <= 0:
            raise ValueError("dt must be > 0")
        for tr in self.tracks:
            tr.predict(dt)
        preds = [tr.box(self.source) for tr in self.tracks]
        valid = [i for i, b in enumerate(preds) if b is not None]
        matches = _greedy_iou_match([preds[i] for i in valid], detections,
                                    self.iou_threshold)
        matched_tracks = set()
        matched_dets = set()
        for vi, j in matches:
            ti = valid[vi]
            self.tracks[ti].update(detections[j])
            matched_tracks.add(ti)
            matched_dets.add(j)
        for i, tr in enumerate(self.tracks):
            if i not in matched_tracks:
                tr.mark_missed()
        for j, det in enumerate(detections):
            if j not in matched_dets:
                self._spawn(det)
        self.tracks = [t for t in self.tracks
                       if t.time_since_update <= self.max_age]
        return self._output()

    def advance(self, dt: float) -> list[BoundingBox]:
        """Predict-only step (no observations); does not count as a miss."""
        for tr in self.tracks:
            tr.predict(dt)
        return self._output()


def event_tracker_substeps(tracker: MultiObjectTracker, event_frames,
                           detector, n_bins: int,
                           frame_index: int = 0) -> list[BoundingBox]:
    """Run the event tracker across one decoded volume.

    N-1 predict-update cycles at dt = 1/N using bins 0..N-2, then one closing
    predict over the final 1/N. The event pipeline runs at N times the frame
    rate. N == 1 degenerates to a single predict.
    """
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    dt = 1.0 / n_bins
    for i in range(1, n_bins):
        dets = detector.detect(event_frames[i - 1], frame_index)
        tracker.step(dets, dt=dt)
    return tracker.advance(dt)


# ---------------------------------------------------------------------------
# Fusion model


@dataclass(frozen=True)
class FusionFeatures:
    class_label: str
    source: Source
    size: float
    aspect_ratio: float      # h / w
    overlap_ratio: float     # max IoU vs same-source others
    crowdedness: int         # same-source other centers inside this box
    support_value: int       # 1 iff an other-source box overlaps at >= 0.7

    @property
    def vector(self):
        return (self.size, self.aspect_ratio, self.overlap_ratio,
                float(self.crowdedness), float(self.support_value))


SUPPORT_IOU_THRESHOLD = 0.7
FUSION_IOU_THRESHOLD = 0.5
CONFIDENCE_FILTER_THRESHOLD = 0.7
TEMPORAL_IOU_THRESHOLD = 0.5


def extract_fusion_features(box: BoundingBox, intensity_preds,
                            event_preds) -> FusionFeatures:
    same = intensity_preds if box.source is Source.INTENSITY else event_preds
    other = event_preds if box.source is Source.INTENSITY else intensity_preds
    others = [b for b in same if b is not box]
    overlap = max((iou(box, b) for b in others), default=0.0)
    crowd = 0
    for b in others:
        cx, cy = b.center
        if box.x <= cx < box.x + box.w and box.y <= cy < box.y + box.h:
            crowd += 1
    support = int(any(iou(box, b) >= SUPPORT_IOU_THRESHOLD for b in other))
    return FusionFeatures(class_label=box.class_label, source=box.source,
                          size=box.area, aspect_ratio=box.h / box.w,
                          overlap_ratio=overlap, crowdedness=crowd,
                          support_value=support)


def default_confidence_scorer(box: BoundingBox, feats: FusionFeatures) -> float:
    """Deterministic linear stand-in for a learned confidence model."""
    raw = (0.5
           + 0.4 * feats.support_value
           - 0.3 * feats.overlap_ratio
           + 0.2 * min(box.score, 1.0)
           - 0.1 * min(feats.crowdedness, 3) / 3.0)
    return min(1.0, max(0.0, raw))


def score_and_filter(boxes_with_features, scorer=default_confidence_scorer,
                     threshold: float = CONFIDENCE_FILTER_THRESHOLD):
    """Keep (box, features) pairs whose confidence score >= threshold."""
    kept = []
    for box, feats in boxes_with_features:
        score = scorer(box, feats)
        if not 0.0 <= score <= 1.0:
            raise ValueError(f"scorer returned {score}, outside [0, 1]")
        if score >= threshold:
            kept.append((box, feats))
    return kept


class FusionStrategy(enum.Enum):
    INTERSECTION = "intersection"
    UNION = "union"
    CONFIDENCE = "confidence"


def _intersect_box(a: BoundingBox, b: BoundingBox, proto: BoundingBox
                   ) -> BoundingBox:
    x0, y0 = max(a.x, b.x), max(a.y, b.y)
    x1, y1 = min(a.x + a.w, b.x + b.w), min(a.y + a.h, b.y + b.h)
    return replace(proto, x=x0, y=y0, w=x1 - x0, h=y1 - y0)


def _union_box(a: BoundingBox, b: BoundingBox, proto: BoundingBox
               ) -> BoundingBox:
    x0, y0 = min(a.x, b.x), min(a.y, b.y)
    x1, y1 = max(a.x + a.w, b.x + b.w), max(a.y + a.h, b.y + b.h)
    return replace(proto, x=x0, y=y0, w=x1 - x0, h=y1 - y0)


def fuse_boxes(filtered, intensity_preds, event_preds,
               strategy: FusionStrategy = FusionStrategy.CONFIDENCE,
               match_class: bool = False) -> list[BoundingBox]:
    """Merge each surviving box with its best partner among all predictions.

    A partner is the max-IoU prediction (both sources, self excluded); below
    IoU 0.5 the filtered box passes through unchanged. A mutually-partnered
    filtered pair emits a single fused box (identical under all three
    strategies up to identity, so duplicates are collapsed), keeping the
    intensity-side identity when available.
    """
    pool = list(intensity_preds) + list(event_preds)
    results = []  # (fused_box, pair_key)
    for box, _feats in filtered:
        candidates = [b for b in pool if b is not box]
        if match_class:
            candidates = [b for b in candidates
                          if b.class_label == box.class_label]
        best = None
        best_iou = 0.0
        for b in candidates:
            v = iou(box, b)
            if v > best_iou:
                best, best_iou = b, v
        if best is None or best_iou < FUSION_IOU_THRESHOLD:
            results.append((box, (id(box),)))
            continue
        if strategy is FusionStrategy.INTERSECTION:
            proto = box if box.source is Source.INTENSITY else best
            fused = _intersect_box(box, best, replace(
                proto, class_label=box.class_label))
        elif strategy is FusionStrategy.UNION:
            proto = box if box.source is Source.INTENSITY else best
            fused = _union_box(box, best, replace(
                proto, class_label=box.class_label))
        else:
            if best.score > box.score:
                fused = replace(best, class_label=box.class_label)
            elif box.score > best.score:
                fused = box
            else:  # tie: prefer the intensity-source box, deterministic
                fused = box if box.source is Source.INTENSITY else best
        key = tuple(sorted((id(box), id(best))))
        results.append((fused, key))
    seen = {}
    out = []
    for fused, key in results:
        if key in seen:
            continue
        seen[key] = True
        out.append(fused)
    return out


def temporal_filter(fused_now: list[BoundingBox],
                    fused_prev: list[BoundingBox] | None) -> list[BoundingBox]:
    """Keep boxes temporally supported by the previous fused set; the first
    frame (no history) passes everything."""
    if not fused_prev:
        return list(fused_now)
    return [b for b in fused_now
            if max((iou(b, p) for p in fused_prev), default=0.0)
            >= TEMPORAL_IOU_THRESHOLD]


# ---------------------------------------------------------------------------
# Enhancement interface (learned enhancer out of scope; identity default)


class IdentityEnhancer:
    """Pass-through stand-in for an event-guided frame enhancer. Receives the
    same inputs a learned model would: previous and current reconstructions
    plus the decoded event frames."""

    def enhance(self, prev_recon: Frame, recon: Frame,
                event_frames) -> Frame:
        return recon


def run_fusion(intensity_preds, event_preds,
               strategy: FusionStrategy = FusionStrategy.CONFIDENCE,
               scorer=default_confidence_scorer,
               filter_threshold: float = CONFIDENCE_FILTER_THRESHOLD,
               match_class: bool = False) -> list[BoundingBox]:
    """Feature extraction, confidence filtering and fusion in one call."""
    all_boxes = list(intensity_preds) + list(event_preds)
    feats = [(b, extract_fusion_features(b, intensity_preds, event_preds))
             for b in all_boxes]
    kept = score_and_filter(feats, scorer=scorer, threshold=filter_threshold)
    return fuse_boxes(kept, intensity_preds, event_preds, strategy=strategy,
                      match_class=match_class)
