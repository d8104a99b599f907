"""Tracking accuracy (MOTA) and channel-rate accounting.

Matching is greedy one-to-one by descending IoU at a threshold; on the
well-separated desk-scale scenes this coincides with the optimal assignment
(a property test checks that against brute force). Mismatches follow the
usual convention: a matched ground-truth object whose track differs from the
one it matched last time counts one mismatch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .tracking import BoundingBox, iou

MATCH_IOU_THRESHOLD = 0.5


@dataclass
class FrameCounters:
    misses: int = 0
    false_positives: int = 0
    mismatches: int = 0
    n_gt: int = 0
    matches: list = field(default_factory=list)  # (gt_id, track_key, iou)


def match_frame(gt_boxes, pred_boxes, iou_threshold: float = MATCH_IOU_THRESHOLD,
                last_match: dict | None = None) -> FrameCounters:
    """Score one frame.

    gt_boxes: iterable of (gt_id, BoundingBox-like with x, y, w, h).
    pred_boxes: iterable of BoundingBox with a track identity.
    last_match, if given, maps gt_id -> previous track key and is updated in
    place so mismatches can be counted across frames.
    """
    gts = list(gt_boxes)
    preds = list(pred_boxes)
    pairs = []
    for i, (gid, g) in enumerate(gts):
        gbox = g if isinstance(g, BoundingBox) else BoundingBox(
            x=g.x, y=g.y, w=g.w, h=g.h)
        for j, p in enumerate(preds):
            v = iou(gbox, p)
            if v >= iou_threshold:
                pairs.append((v, i, j))
    pairs.sort(key=lambda t: (-t[0], t[1], t[2]))
    used_g: set[int] = set()
    used_p: set[int] = set()
    counters = FrameCounters(n_gt=len(gts))
    for v, i, j in pairs:
        if i in used_g or j in used_p:
            continue
        used_g.add(i)
        used_p.add(j)
        gid = gts[i][0]
        p = preds[j]
        track_key = (p.source.value, p.track_id) if p.track_id is not None \
            else ("anon", j)
        if last_match is not None:
            prev = last_match.get(gid)
            if prev is not None and prev != track_key:
                counters.mismatches += 1
            last_match[gid] = track_key
        counters.matches.append((gid, track_key, v))
    counters.misses = len(gts) - len(used_g)
    counters.false_positives = len(preds) - len(used_p)
    return counters


class MotaAccumulator:
    """Feeds per-frame (gt, prediction) pairs and accumulates CLEAR counters."""

    def __init__(self, iou_threshold: float = MATCH_IOU_THRESHOLD):
        self.iou_threshold = iou_threshold
        self.frames: list[FrameCounters] = []
        self._last_match: dict = {}

    def add_frame(self, gt_boxes, pred_boxes) -> FrameCounters:
        c = match_frame(gt_boxes, pred_boxes, self.iou_threshold,
                        self._last_match)
        self.frames.append(c)
        return c

    @property
    def totals(self) -> dict:
        return dict(
            misses=sum(f.misses for f in self.frames),
            false_positives=sum(f.false_positives for f in self.frames),
            mismatches=sum(f.mismatches for f in self.frames),
            n_gt=sum(f.n_gt for f in self.frames),
        )

    def mota(self) -> float:
        return mota(self.frames)


def mota(frames) -> float:
    """1 - sum(m + fp + mme) / sum(g); can be negative."""
    total_gt = sum(f.n_gt for f in frames)
    if total_gt <= 0:
        raise ValueError("MOTA undefined: no ground truth objects")
    errors = sum(f.misses + f.false_positives + f.mismatches for f in frames)
    return 1.0 - errors / total_gt


# ---------------------------------------------------------------------------
# Rate accounting

UNCOMPRESSED_512_REFERENCE_BPS = 512 * 512 * 8 * 30  # 62.91 Mbps


@dataclass
class RateReport:
    per_frame: list            # dicts: frame, r_i, r_e, total
    mean_bits_per_frame: float
    bits_per_second: float
    intensity_fraction: float
    event_fraction: float


def rate_report(packets, frame_rate: float = 30.0) -> RateReport:
    """Aggregate packet rates; fractions are of the body bits per run."""
    rows = []
    for pkt in packets:
        rows.append(dict(frame=pkt.frame_index, r_i=pkt.r_i_bits,
                         r_e=pkt.r_e_bits, total=pkt.body_bits))
    total = sum(r["total"] for r in rows)
    ri = sum(r["r_i"] for r in rows)
    mean = total / len(rows) if rows else 0.0
    return RateReport(
        per_frame=rows,
        mean_bits_per_frame=mean,
        bits_per_second=mean * frame_rate,
        intensity_fraction=(ri / total) if total else 0.0,
        event_fraction=((total - ri) / total) if total else 0.0,
    )


def brute_force_best_matching(gt_boxes, pred_boxes,
                              iou_threshold: float = MATCH_IOU_THRESHOLD
                              ) -> int:
    """Maximum-cardinality matching by exhaustive search; oracle use only
    (frames with at most a handful of boxes)."""
    gts = [g if isinstance(g, BoundingBox) else BoundingBox(x=g.x, y=g.y,
                                                            w=g.w, h=g.h)
           for _gid, g in gt_boxes]
    preds = list(pred_boxes)
    n, m = len(gts), len(preds)
    if n * m == 0:
        return 0
    ok = [[iou(g, p) >= iou_threshold for p in preds] for g in gts]

    best = 0

    def rec(i: int, used: set, count: int):
        nonlocal best
        best = max(best, count)
        if i == n or count + (n - i) <= best:
            return
        rec(i + 1, used, count)
        for j in range(m):
            if j not in used and ok[i][j]:
                used.add(j)
                rec(i + 1, used, count + 1)
                used.remove(j)

    rec(0, set(), 0)
    return best
