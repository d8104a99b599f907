"""Joint intensity/event rate-distortion optimization for one frame.

Costs are separable per quadtree leaf: a leaf candidate is (mode, pdr index)
with g = d_i + d_e + lambda * (r_i + r_e). The bottom-up tree dynamic program
returns the exact global minimum over every segmentation and per-leaf
candidate choice; split-flag bits are charged at tree level (one bit per node
above min side). The lambda search bisects in log space against the bit
budget, warm-started from the previous frame.

Distortion is weighted L1. Per-pixel weights are max(w_i / A_i) over covering
priority regions, background_weight / frame_area elsewhere; the event term is
w_e * (dropped event count), unweighted spatially.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .event_codec import (PdrSchedule, empty_leaf_payload_bits,
                          leaf_payload_bits, leaf_occupancy_positions,
                          sample_candidates)
from .imaging import EX, EY, EventVolume, Frame, empty_events
from .quadtree import LeafConfig, Mode, QuadTreePlan, Rect, superpixel_value

SKIP_LEAF_BITS = 1        # mode bit
ACQUIRE_LEAF_BITS = 1 + 8  # mode bit + value

DEFAULT_ROI_WEIGHT = 1000.0
DEFAULT_BACKGROUND_WEIGHT = 1.0
DEFAULT_EVENT_WEIGHT = 500.0


@dataclass(frozen=True)
class RoiRegion:
    x: int
    y: int
    w: int
    h: int
    weight: float

    @property
    def area(self) -> int:
        return self.w * self.h


@dataclass(frozen=True)
class DistortionWeights:
    frame_side: int
    regions: tuple = ()
    background_weight: float = DEFAULT_BACKGROUND_WEIGHT
    event_weight: float = DEFAULT_EVENT_WEIGHT
    valid_side: int | None = None  # pixels at/beyond this row+col get zero weight

    @classmethod
    def uniform_unit(cls, frame_side: int, event_weight: float = 1.0
                     ) -> "DistortionWeights":
        """Per-pixel weight exactly 1.0; keeps costs integer-valued."""
        return cls(frame_side=frame_side, regions=(),
                   background_weight=float(frame_side * frame_side),
                   event_weight=event_weight)

    @classmethod
    def from_boxes(cls, frame_side: int, boxes,
                   roi_weight: float = DEFAULT_ROI_WEIGHT,
                   background_weight: float = DEFAULT_BACKGROUND_WEIGHT,
                   event_weight: float = DEFAULT_EVENT_WEIGHT,
                   valid_side: int | None = None) -> "DistortionWeights":
        """Build from (x, y, w, h)-style boxes, clamped to the frame."""
        regions = []
        for b in boxes:
            x, y, w, h = (int(round(v)) for v in (b.x, b.y, b.w, b.h))
            x0, y0 = max(0, x), max(0, y)
            x1, y1 = min(frame_side, x + w), min(frame_side, y + h)
            if x1 > x0 and y1 > y0:
                regions.append(RoiRegion(x0, y0, x1 - x0, y1 - y0, roi_weight))
        return cls(frame_side=frame_side, regions=tuple(regions),
                   background_weight=background_weight,
                   event_weight=event_weight, valid_side=valid_side)

    def weight_map(self) -> np.ndarray:
        side = self.frame_side
        wmap = np.full((side, side),
                       self.background_weight / (side * side), dtype=np.float64)
        for reg in self.regions:
            if reg.weight < 0:
                raise ValueError("region weights must be >= 0")
            per_px = reg.weight / reg.area
            block = wmap[reg.y:reg.y + reg.h, reg.x:reg.x + reg.w]
            np.maximum(block, per_px, out=block)
        if self.valid_side is not None and self.valid_side < side:
            wmap[self.valid_side:, :] = 0.0
            wmap[:, self.valid_side:] = 0.0
        return wmap


def intensity_leaf_distortion(frame: Frame, prev_recon: Frame, rect: Rect,
                              mode: Mode, weights: DistortionWeights,
                              wmap: np.ndarray | None = None) -> float:
    """Weighted L1 block distortion for one mode."""
    if wmap is None:
        wmap = weights.weight_map()
    sl = (slice(rect.y, rect.y + rect.side), slice(rect.x, rect.x + rect.side))
    f = frame.pixels[sl].astype(np.int64)
    wb = wmap[sl]
    if mode is Mode.SKIP:
        diff = np.abs(f - prev_recon.pixels[sl].astype(np.int64))
    else:
        diff = np.abs(f - superpixel_value(frame, rect))
    return float((wb * diff).sum())


def event_leaf_distortion(orig_counts: np.ndarray, sampled_counts: np.ndarray,
                          rect: Rect, event_weight: float) -> float:
    """w_e times the count of events removed inside the block."""
    sl = (slice(rect.y, rect.y + rect.side), slice(rect.x, rect.x + rect.side))
    o = orig_counts[sl]
    s = sampled_counts[sl]
    if (s > o).any():
        raise ValueError("sampled counts exceed originals; sampling only removes")
    return float(event_weight) * float((o - s).sum())


# ---------------------------------------------------------------------------
# Per-frame candidate tables


@dataclass
class LeafCostTables:
    """Lambda-independent (d, r) terms for every rect and candidate.

    Candidate axis is mode-major: index = mode * M + pdr, SKIP block first,
    so argmin with numpy's first-minimum rule realizes the tie-break order
    (Skip before Acquire, then smaller pdr index).
    """

    frame_side: int
    min_leaf_side: int
    schedule: PdrSchedule
    weights: DistortionWeights
    volume: EventVolume
    rects: list
    child_ids: list
    cand_di: np.ndarray    # (R, 2M)
    cand_de: np.ndarray    # (R, 2M)
    cand_ri: np.ndarray    # (R, 2M) mode+value bits
    cand_re: np.ndarray    # (R, 2M) byte-padded event payload bits
    acq_value: np.ndarray  # (R,)
    kept: list             # per rect: per-pdr kept event arrays, or None
    n_events: np.ndarray   # (R,)

    @property
    def n_candidates(self) -> int:
        return self.cand_di.shape[1]

    def candidate(self, idx: int) -> tuple[Mode, int]:
        m = self.schedule.n_candidates
        return (Mode.SKIP if idx < m else Mode.ACQUIRE), idx % m

    def leaf_g(self, lam: float) -> np.ndarray:
        return (self.cand_di + self.cand_de
                + lam * (self.cand_ri + self.cand_re))


def _all_rects(frame_side: int, min_side: int) -> tuple[list, list]:
    """Pre-order rects and per-rect child ids (None at min side)."""
    rects: list[Rect] = []
    child_ids: list = []

    def rec(rect: Rect) -> int:
        my_id = len(rects)
        rects.append(rect)
        child_ids.append(None)
        if rect.side > min_side:
            child_ids[my_id] = tuple(rec(ch) for ch in rect.children())
        return my_id

    rec(Rect(0, 0, frame_side))
    return rects, child_ids


def precompute_leaf_costs(frame: Frame, prev_recon: Frame, volume: EventVolume,
                          weights: DistortionWeights, schedule: PdrSchedule,
                          min_leaf_side: int = 1) -> LeafCostTables:
    side = frame.side
    if prev_recon.side != side or volume.width != side or volume.height != side:
        raise ValueError("frame, prev_recon and volume sizes must agree")
    rects, child_ids = _all_rects(side, min_leaf_side)
    n_rects = len(rects)
    m = schedule.n_candidates
    wmap = weights.weight_map()

    f = frame.pixels.astype(np.float64)
    prev = prev_recon.pixels.astype(np.float64)

    # Per-level block sums, vectorized: reshape the frame into its regular
    # tiling at each block side and reduce over the block axes.
    rect_index = {r: i for i, r in enumerate(rects)}
    skip_d = np.empty(n_rects)
    acq_d = np.empty(n_rects)
    acq_value = np.empty(n_rects, dtype=np.int64)
    skip_cell = wmap * np.abs(f - prev)
    s = side
    while s >= min_leaf_side:
        n = side // s
        ids = np.array([[rect_index[Rect(bx * s, by * s, s)]
                         for bx in range(n)] for by in range(n)])
        blocks = f.reshape(n, s, n, s)
        w_blocks = wmap.reshape(n, s, n, s)
        sums = blocks.sum(axis=(1, 3))
        values = np.minimum(255, np.floor(sums / (s * s) + 0.5)).astype(
            np.int64)
        acq = (w_blocks * np.abs(blocks - values[:, None, :, None])) \
            .sum(axis=(1, 3))
        skip = skip_cell.reshape(n, s, n, s).sum(axis=(1, 3))
        skip_d[ids] = skip
        acq_d[ids] = acq
        acq_value[ids] = values
        s //= 2

    # Events per rect via top-down spatial bucketing.
    events = volume.flatten()
    rect_events: list = [None] * n_rects
    rect_events[0] = events

    def split_events(rid: int):
        ev = rect_events[rid]
        kids = child_ids[rid]
        if kids is None:
            return
        if len(ev) == 0:
            for c in kids:
                rect_events[c] = ev
        else:
            half = rects[rid].side // 2
            right = ev[:, EX] >= rects[rid].x + half
            down = ev[:, EY] >= rects[rid].y + half
            rect_events[kids[0]] = ev[~right & ~down]
            rect_events[kids[1]] = ev[right & ~down]
            rect_events[kids[2]] = ev[~right & down]
            rect_events[kids[3]] = ev[right & down]
        for c in kids:
            split_events(c)

    split_events(0)

    idx_bits = schedule.index_bits
    n_bins = volume.n_bins
    de = np.zeros((n_rects, m))
    re_bits = np.zeros((n_rects, m), dtype=np.int64)
    kept_store: list = [None] * n_rects
    n_ev = np.zeros(n_rects, dtype=np.int64)
    empty_bits = empty_leaf_payload_bits(n_bins, idx_bits)
    for i, rect in enumerate(rects):
        ev = rect_events[i]
        n_ev[i] = len(ev)
        if len(ev) == 0:
            re_bits[i, :] = empty_bits
            continue
        kept_list = sample_candidates(ev, rect.side, schedule)
        kept_store[i] = kept_list
        for c, kept in enumerate(kept_list):
            de[i, c] = weights.event_weight * (len(ev) - len(kept))
            maps = leaf_occupancy_positions(kept, rect, n_bins,
                                        volume.t_start, volume.t_end)
            re_bits[i, c] = leaf_payload_bits(maps, idx_bits)

    cand_di = np.concatenate([np.repeat(skip_d[:, None], m, axis=1),
                              np.repeat(acq_d[:, None], m, axis=1)], axis=1)
    cand_de = np.concatenate([de, de], axis=1)
    cand_ri = np.concatenate(
        [np.full((n_rects, m), SKIP_LEAF_BITS, dtype=np.int64),
         np.full((n_rects, m), ACQUIRE_LEAF_BITS, dtype=np.int64)], axis=1)
    cand_re = np.concatenate([re_bits, re_bits], axis=1)
    return LeafCostTables(
        frame_side=side, min_leaf_side=min_leaf_side, schedule=schedule,
        weights=weights, volume=volume, rects=rects, child_ids=child_ids,
        cand_di=cand_di, cand_de=cand_de, cand_ri=cand_ri, cand_re=cand_re,
        acq_value=acq_value, kept=kept_store, n_events=n_ev)


def leaf_candidate_costs(frame: Frame, prev_recon: Frame, volume: EventVolume,
                         rect: Rect, lam: float, weights: DistortionWeights,
                         schedule: PdrSchedule) -> list[dict]:
    """Candidate rows (mode x pdr) for a single block; g per the Lagrangian."""
    wmap = weights.weight_map()
    rows = []
    sub = _events_in_rect(volume.flatten(), rect)
    kept_list = sample_candidates(sub, rect.side, schedule) if len(sub) \
        else [empty_events()] * schedule.n_candidates
    for mode in (Mode.SKIP, Mode.ACQUIRE):
        d_i = intensity_leaf_distortion(frame, prev_recon, rect, mode,
                                        weights, wmap)
        r_i = SKIP_LEAF_BITS if mode is Mode.SKIP else ACQUIRE_LEAF_BITS
        for c in range(schedule.n_candidates):
            kept = kept_list[c]
            d_e = weights.event_weight * (len(sub) - len(kept))
            maps = leaf_occupancy_positions(kept, rect, volume.n_bins,
                                        volume.t_start, volume.t_end)
            r_e = leaf_payload_bits(maps, schedule.index_bits)
            rows.append(dict(mode=mode, pdr_index=c, d_i=d_i, d_e=d_e,
                             r_i=r_i, r_e=r_e,
                             g=d_i + d_e + lam * (r_i + r_e)))
    return rows


def _events_in_rect(events: np.ndarray, rect: Rect) -> np.ndarray:
    if len(events) == 0:
        return empty_events()
    msk = ((events[:, EX] >= rect.x) & (events[:, EX] < rect.x + rect.side)
           & (events[:, EY] >= rect.y) & (events[:, EY] < rect.y + rect.side))
    return events[msk]


# ---------------------------------------------------------------------------
# Tree DP


@dataclass
class OptimizationResult:
    plan: QuadTreePlan
    lam: float
    d_i: float
    d_e: float
    r_i_raw: int        # segmentation + mode + value bits, unpadded
    r_e: int            # sum of byte-padded leaf payload bits
    j: float            # DP objective at lam
    kept_by_leaf: list  # kept events per leaf, aligned with plan.leaves
    boundary: bool = False
    intensity_only: bool = False

    @property
    def r_i_packet(self) -> int:
        """Byte-aligned segmentation substream length as stored in a packet."""
        return 8 * ((self.r_i_raw + 7) // 8)

    @property
    def rate_packet(self) -> int:
        return self.r_i_packet + self.r_e

    @property
    def distortion(self) -> float:
        return self.d_i + self.d_e


def optimize_tree(tables: LeafCostTables, lam: float,
                  intensity_only: bool = False) -> OptimizationResult:
    """Exact minimizer of the per-frame Lagrangian over segmentations, modes
    and pdr indices. Ties prefer not splitting, then Skip, then smaller pdr."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if intensity_only:
        g_cand = tables.cand_di + lam * tables.cand_ri
    else:
        g_cand = tables.leaf_g(lam)
    leaf_choice = np.argmin(g_cand, axis=1)
    leaf_g = g_cand[np.arange(len(g_cand)), leaf_choice]

    n = len(tables.rects)
    cost = np.empty(n)
    do_split = np.zeros(n, dtype=bool)
    for rid in range(n - 1, -1, -1):
        kids = tables.child_ids[rid]
        if kids is None:
            cost[rid] = leaf_g[rid]
        else:
            as_leaf = leaf_g[rid] + lam
            as_split = lam + sum(cost[c] for c in kids)
            if as_split < as_leaf:
                cost[rid] = as_split
                do_split[rid] = True
            else:
                cost[rid] = as_leaf

    leaves = []
    kept_by_leaf = []

    def build(rid: int):
        if do_split[rid]:
            for c in tables.child_ids[rid]:
                build(c)
            return
        rect = tables.rects[rid]
        mode, pdr = tables.candidate(int(leaf_choice[rid]))
        if intensity_only:
            pdr = 0
        value = int(tables.acq_value[rid]) if mode is Mode.ACQUIRE else None
        leaves.append((rect, LeafConfig(mode, value, pdr)))
        if tables.kept[rid] is None:
            kept_by_leaf.append(empty_events())
        else:
            kept_by_leaf.append(tables.kept[rid][pdr])

    build(0)
    plan = QuadTreePlan(tables.frame_side, tables.min_leaf_side, tuple(leaves))

    d_i = d_e = 0.0
    r_leaf_bits = 0
    r_e = 0
    rect_index = {r: i for i, r in enumerate(tables.rects)}
    for (rect, cfg), _kept in zip(plan.leaves, kept_by_leaf):
        rid = rect_index[rect]
        cand = (0 if cfg.mode is Mode.SKIP else 1) * tables.schedule.n_candidates \
            + cfg.pdr_index
        d_i += tables.cand_di[rid, cand]
        d_e += float(tables.cand_de[rid, cand])
        r_leaf_bits += int(tables.cand_ri[rid, cand])
        r_e += int(tables.cand_re[rid, cand])
    r_seg, r_mode, r_v = plan.rate_decomposition()
    r_i_raw = r_seg + r_leaf_bits
    assert r_leaf_bits == r_mode + r_v
    if intensity_only:
        d_e = 0.0
    return OptimizationResult(plan=plan, lam=lam, d_i=float(d_i), d_e=d_e,
                              r_i_raw=r_i_raw, r_e=r_e, j=float(cost[0]),
                              kept_by_leaf=kept_by_leaf,
                              intensity_only=intensity_only)


def optimize_frame(frame: Frame, prev_recon: Frame, volume: EventVolume,
                   lam: float, weights: DistortionWeights,
                   schedule: PdrSchedule, min_leaf_side: int = 1
                   ) -> OptimizationResult:
    """Convenience wrapper: precompute tables then run the DP once."""
    tables = precompute_leaf_costs(frame, prev_recon, volume, weights,
                                   schedule, min_leaf_side)
    return optimize_tree(tables, lam)


# ---------------------------------------------------------------------------
# Lambda search


@dataclass
class LambdaSearchConfig:
    r_max_bits: int
    tolerance: float = 0.05
    max_iterations: int = 20
    lambda_min: float = 1e-6
    lambda_max: float = 1e9
    warm_start: float | None = None

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be > 0")
        if self.lambda_min <= 0 or self.lambda_max <= self.lambda_min:
            raise ValueError("lambda bounds must be positive and ordered")


@dataclass
class LambdaSearchResult:
    lam: float
    result: OptimizationResult
    boundary: bool
    trace: list  # (lambda, rate_bits, distortion, j) per optimize call

    @property
    def n_evaluations(self) -> int:
        return len(self.trace)


def search_lambda(tables: LeafCostTables, config: LambdaSearchConfig,
                  intensity_only: bool = False,
                  rate_of=None) -> LambdaSearchResult:
    """Find the convex-hull solution with rate <= budget, as close under it
    as the tolerance asks, in at most max_iterations optimize calls.

    rate_of overrides which rate is compared to the budget (the prefixed
    sweep budgets the intensity substream alone).
    """
    if rate_of is None:
        rate_of = (lambda res: res.r_i_raw) if intensity_only \
            else (lambda res: res.rate_packet)
    trace = []

    def evaluate(lam: float) -> OptimizationResult:
        res = optimize_tree(tables, lam, intensity_only=intensity_only)
        trace.append((lam, rate_of(res), res.distortion, res.j))
        return res

    budget = config.r_max_bits
    lo = config.lambda_min
    best: OptimizationResult | None = None
    best_lam = None
    hi = None

    if config.warm_start is not None:
        lam0 = min(max(config.warm_start, config.lambda_min), config.lambda_max)
        res0 = evaluate(lam0)
        if rate_of(res0) <= budget:
            hi, best, best_lam = lam0, res0, lam0
        else:
            lo = max(lo, lam0)

    if hi is None:
        res_max = evaluate(config.lambda_max)
        if rate_of(res_max) >= budget:
            # Budget at or below the minimum achievable rate.
            res_max = replace(res_max, boundary=True)
            return LambdaSearchResult(lam=config.lambda_max, result=res_max,
                                      boundary=True, trace=trace)
        hi, best, best_lam = config.lambda_max, res_max, config.lambda_max

    target_low = (1.0 - config.tolerance) * budget
    while (len(trace) < config.max_iterations
           and rate_of(best) < target_low
           and hi / lo > 1.0 + 1e-9):
        mid = math.sqrt(lo * hi)
        res = evaluate(mid)
        if rate_of(res) <= budget:
            hi, best, best_lam = mid, res, mid
        else:
            lo = mid
    return LambdaSearchResult(lam=best_lam, result=best, boundary=False,
                              trace=trace)
