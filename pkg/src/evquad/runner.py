"""The closed-loop host-chip driver and the allocation sweep harness.

Logical ordering per frame, enforced by construction: the chip optimizes and
transmits, the host decodes (reconstruction is checked bit-identical against
the chip's mirror), both modality pipelines detect and track, fusion joins
them, and the temporally-filtered fused boxes become the chip's priority
regions for the next step. Everything is deterministic under the run seed.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace

import numpy as np

from .chip import (ChipConfig, ChipState, build_packet, decode_packet,
                   deserialize_packet, encode_step, serialize_packet)
from .event_codec import PdrSchedule, empty_leaf_payload_bits
from .imaging import (Frame, SyntheticSequence, bin_events,
                      empty_events, fast_crossing_scene,
                      generate_synthetic_sequence, moving_squares_scene,
                      sort_events)
from .metrics import MotaAccumulator, RateReport, rate_report
from .quadtree import LeafConfig, QuadTreePlan
from .rd import (DistortionWeights, LambdaSearchConfig, precompute_leaf_costs,
                 search_lambda)
from .tracking import (BlobDetector, BoundingBox, FusionStrategy,
                       IdentityEnhancer, MultiObjectTracker, OracleDetector,
                       Source, event_tracker_substeps, run_fusion,
                       temporal_filter)


@dataclass
class RunConfig:
    r_max_bps: float = 1_000_000.0
    frame_rate: float = 30.0
    n_bins: int = 4
    pdr_candidates: tuple = (1.0, 2.0, 3.0)
    event_weight: float = 500.0
    roi_weight: float = 1000.0
    background_weight: float = 1.0
    fusion_strategy: str = "confidence"
    detector: str = "oracle"
    oracle_jitter: int = 0
    oracle_dropout: float = 0.0
    blob_min_area: int = 1
    blob_dilate: int = 2
    tolerance: float = 0.05
    seed: int = 0
    min_leaf_side: int = 1
    max_lambda_iterations: int = 20
    use_event_tracking: bool = True
    match_class: bool = False
    assoc_iou: float = 0.3
    max_age: int = 3
    min_hits: int = 1
    filter_threshold: float = 0.7

    @property
    def frame_budget_bits(self) -> int:
        return int(round(self.r_max_bps / self.frame_rate))

    @property
    def frame_interval_us(self) -> int:
        return int(round(1_000_000 / self.frame_rate))

    def chip_config(self) -> ChipConfig:
        return ChipConfig(
            n_bins=self.n_bins, min_leaf_side=self.min_leaf_side,
            schedule=PdrSchedule(tuple(self.pdr_candidates)),
            roi_weight=self.roi_weight,
            background_weight=self.background_weight,
            event_weight=self.event_weight, tolerance=self.tolerance,
            max_lambda_iterations=self.max_lambda_iterations,
            frame_interval_us=self.frame_interval_us)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["pdr_candidates"] = ",".join(str(c) for c in self.pdr_candidates)
        return d

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name not in values:
                continue
            raw = values[f.name]
            if f.name == "pdr_candidates":
                kwargs[f.name] = tuple(float(x) for x in str(raw).split(","))
            elif f.type in ("int",):
                kwargs[f.name] = int(raw)
            elif f.type in ("float",):
                kwargs[f.name] = float(raw)
            elif f.type in ("bool",):
                kwargs[f.name] = str(raw).lower() in ("1", "true", "yes")
            else:
                kwargs[f.name] = raw
        return cls(**kwargs)


@dataclass
class Dataset:
    """Frames plus the events of each preceding interval and ground truth.

    events[k] covers [(k-1) * interval, k * interval) in microseconds;
    events[0] is empty.
    """

    frames: list
    events: list
    gt: list
    name: str = "dataset"
    valid_side: int | None = None

    @property
    def side(self) -> int:
        return self.frames[0].side

    @property
    def n_frames(self) -> int:
        return len(self.frames)


def dataset_from_sequence(seq: SyntheticSequence, name: str = "synthetic"
                          ) -> Dataset:
    return Dataset(frames=seq.frames, events=seq.events, gt=seq.boxes,
                   name=name)


def dataset_from_files(frames: list, events: np.ndarray, gt=None,
                       frame_interval_us: int = 33_333,
                       name: str = "files",
                       valid_side: int | None = None) -> Dataset:
    """Slice a global event stream into per-frame intervals."""
    ev = sort_events(events)
    t = ev[:, 2] if len(ev) else np.empty(0, dtype=np.int64)
    per_frame = [empty_events()]
    for k in range(1, len(frames)):
        t0, t1 = (k - 1) * frame_interval_us, k * frame_interval_us
        lo, hi = np.searchsorted(t, [t0, t1])
        per_frame.append(ev[lo:hi])
    if gt is None:
        gt = [[] for _ in frames]
    return Dataset(frames=list(frames), events=per_frame, gt=gt, name=name,
                   valid_side=valid_side)


PRESETS = {
    "moving-squares": lambda seed=0, n_frames=20: moving_squares_scene(
        side=64, n_frames=n_frames, n_shapes=2, speed=2.0, size=16, seed=seed),
    "textured-squares": lambda seed=0, n_frames=20: moving_squares_scene(
        side=64, n_frames=n_frames, n_shapes=2, speed=2.0, size=16, seed=seed,
        textured=True),
    "fast-crossing": lambda seed=0, n_frames=8: fast_crossing_scene(
        seed=seed, n_frames=n_frames),  # pair with n_bins=8, blob_dilate=5
}


def make_preset_dataset(name: str, seed: int = 0, n_frames: int | None = None,
                        **overrides) -> Dataset:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; have {sorted(PRESETS)}")
    kw = {"seed": seed}
    if n_frames is not None:
        kw["n_frames"] = n_frames
    scene = PRESETS[name](**kw)
    for k, v in overrides.items():
        setattr(scene, k, v)
    return dataset_from_sequence(generate_synthetic_sequence(scene), name=name)


# ---------------------------------------------------------------------------
# Closed loop


@dataclass
class RunLog:
    config: RunConfig
    packets: list = field(default_factory=list)
    fused_per_frame: list = field(default_factory=list)
    roi_per_frame: list = field(default_factory=list)
    track_rows: list = field(default_factory=list)
    search_traces: list = field(default_factory=list)
    n_search_calls: int = 0
    n_tree_calls: int = 0
    mota_acc: MotaAccumulator = field(default_factory=MotaAccumulator)
    recon_checks: list = field(default_factory=list)

    def mota(self) -> float:
        return self.mota_acc.mota()

    def rates(self) -> RateReport:
        return rate_report(self.packets, self.config.frame_rate)


def _make_intensity_detector(config: RunConfig, dataset: Dataset):
    if config.detector == "oracle":
        return OracleDetector(dataset.gt, jitter_px=config.oracle_jitter,
                              dropout=config.oracle_dropout, seed=config.seed)
    if config.detector == "blob":
        return BlobDetector(min_area=config.blob_min_area,
                            dilate=config.blob_dilate)
    raise ValueError(f"unknown detector {config.detector!r}")


def _track_key(box: BoundingBox) -> int:
    # Namespace the two trackers' ids into one MOT id space.
    return 2 * (box.track_id or 0) + box.source.value


def run_closed_loop(config: RunConfig, dataset: Dataset,
                    chip_step=None) -> RunLog:
    """Drive the full loop over a dataset; chip_step may be swapped out (the
    prefixed-allocation sweep does) and defaults to the joint optimizer."""
    log = RunLog(config=config)
    chip_cfg = config.chip_config()
    if dataset.valid_side is not None and dataset.valid_side < dataset.side:
        chip_cfg.valid_side = dataset.valid_side
    state = ChipState.bootstrap(dataset.side, chip_cfg)
    host_prev = state.prev_recon
    strategy = FusionStrategy(config.fusion_strategy)
    int_tracker = MultiObjectTracker(Source.INTENSITY,
                                     iou_threshold=config.assoc_iou,
                                     max_age=config.max_age,
                                     min_hits=config.min_hits,
                                     frame_side=dataset.side)
    ev_tracker = MultiObjectTracker(Source.EVENT,
                                    iou_threshold=config.assoc_iou,
                                    max_age=config.max_age,
                                    min_hits=config.min_hits,
                                    frame_side=dataset.side)
    int_detector = _make_intensity_detector(config, dataset)
    ev_detector = BlobDetector(min_area=config.blob_min_area,
                               dilate=config.blob_dilate)
    enhancer = IdentityEnhancer()
    if chip_step is None:
        def chip_step(frame, events, roi, state):
            pkt, new_state, search = encode_step(
                frame, events, roi, config.frame_budget_bits, state)
            return pkt, new_state, [search]

    roi: list[BoundingBox] = []
    prev_fused: list[BoundingBox] = []
    for k in range(dataset.n_frames):
        frame = dataset.frames[k]
        pkt, state, searches = chip_step(frame, dataset.events[k], roi, state)
        for s in searches:
            log.search_traces.append((k, s.trace))
            log.n_search_calls += 1
            log.n_tree_calls += s.n_evaluations
        log.packets.append(pkt)

        # Channel: bytes across, then host-side decode.
        received = deserialize_packet(serialize_packet(pkt))
        recon, plan, planes = decode_packet(received, host_prev,
                                            chip_cfg.schedule)
        same = bool(np.array_equal(recon.pixels, state.prev_recon.pixels))
        log.recon_checks.append(same)
        if not same:
            raise AssertionError(
                f"chip/host reconstruction diverged at frame {k}")

        event_frames = [planes[b, 0].astype(np.int16)
                        + planes[b, 1].astype(np.int16)
                        for b in range(received.n_bins)]
        enhanced = enhancer.enhance(host_prev, recon, event_frames)
        host_prev = recon
        int_dets = int_detector.detect(enhanced, k)
        int_boxes = int_tracker.step(int_dets, dt=1.0)
        if config.use_event_tracking:
            ev_boxes = event_tracker_substeps(ev_tracker, event_frames,
                                              ev_detector, received.n_bins, k)
        else:
            ev_boxes = []
        fused = run_fusion(int_boxes, ev_boxes, strategy=strategy,
                           filter_threshold=config.filter_threshold,
                           match_class=config.match_class)
        roi = temporal_filter(fused, prev_fused)
        prev_fused = fused

        log.fused_per_frame.append(fused)
        log.roi_per_frame.append(roi)
        for b in fused:
            log.track_rows.append((k, _track_key(b), round(b.x, 2),
                                   round(b.y, 2), round(b.w, 2),
                                   round(b.h, 2), round(b.score, 3),
                                   b.class_label, b.source.name.lower()))
        gt_pairs = [(g.object_id, BoundingBox(x=g.x, y=g.y, w=g.w, h=g.h,
                                              class_label=g.label))
                    for g in dataset.gt[k]]
        preds = [replace(b, track_id=_track_key(b)) for b in fused]
        log.mota_acc.add_frame(gt_pairs, preds)
    return log


# ---------------------------------------------------------------------------
# Prefixed-allocation chip step


def make_prefixed_chip_step(config: RunConfig, intensity_fraction: float):
    """Chip step that budgets the modalities separately: an intensity-only
    lambda search against fraction * budget, then one uniform PDR candidate
    chosen largest-data-first to fit the event remainder."""
    if not 0.0 < intensity_fraction <= 1.0:
        raise ValueError("intensity_fraction must be in (0, 1]")

    def step(frame: Frame, events, roi, state: ChipState):
        cfg = state.config
        t1 = state.frame_index * cfg.frame_interval_us
        t0 = t1 - cfg.frame_interval_us
        volume = bin_events(events, t0, t1, cfg.n_bins, frame.side, frame.side)
        weights = DistortionWeights.from_boxes(
            frame.side, roi, roi_weight=cfg.roi_weight,
            background_weight=cfg.background_weight,
            event_weight=cfg.event_weight, valid_side=cfg.valid_side)
        tables = precompute_leaf_costs(frame, state.prev_recon, volume,
                                       weights, cfg.schedule,
                                       cfg.min_leaf_side)
        budget = config.frame_budget_bits
        budget_i = int(round(intensity_fraction * budget))
        budget_e = budget - budget_i
        search = search_lambda(tables, LambdaSearchConfig(
            r_max_bits=budget_i, tolerance=cfg.tolerance,
            max_iterations=cfg.max_lambda_iterations,
            warm_start=state.last_lambda), intensity_only=True)
        base = search.result
        rect_index = {r: i for i, r in enumerate(tables.rects)}
        m = cfg.schedule.n_candidates
        chosen = None
        chosen_bits = None
        for c in range(m):  # ascending radius: most events kept first
            bits = sum(int(tables.cand_re[rect_index[rect], c])
                       for rect, _ in base.plan.leaves)
            if bits <= budget_e:
                chosen, chosen_bits = c, bits
                break
        drop_all = chosen is None
        if drop_all:
            # No radius fits: send empty occupancy maps at the minimum floor.
            chosen = m - 1
            chosen_bits = sum(
                empty_leaf_payload_bits(cfg.n_bins, cfg.schedule.index_bits)
                for _ in base.plan.leaves)
        leaves = tuple((rect, LeafConfig(lc.mode, lc.value, chosen))
                       for rect, lc in base.plan.leaves)
        plan = QuadTreePlan(base.plan.frame_side, base.plan.min_leaf_side,
                            leaves)
        kept = []
        d_e = 0.0
        for rect, _lc in plan.leaves:
            rid = rect_index[rect]
            if drop_all or tables.kept[rid] is None:
                kept.append(empty_events())
                if drop_all and tables.kept[rid] is not None:
                    d_e += cfg.event_weight * int(tables.n_events[rid])
            else:
                kept.append(tables.kept[rid][chosen])
                d_e += float(tables.cand_de[rid, chosen])
        result = replace(base, plan=plan, kept_by_leaf=kept, d_e=d_e,
                         r_e=int(chosen_bits), intensity_only=False)
        boundary = search.boundary or chosen_bits > budget_e
        pkt = build_packet(result, volume, cfg.schedule,
                           frame_index=state.frame_index, boundary=boundary)
        mirrored = deserialize_packet(serialize_packet(pkt))
        recon, _plan, _planes = decode_packet(mirrored, state.prev_recon,
                                              cfg.schedule)
        new_state = ChipState(config=cfg, prev_recon=recon,
                              frame_index=state.frame_index + 1,
                              last_lambda=search.lam)
        return pkt, new_state, [search]

    return step


# ---------------------------------------------------------------------------
# Sweeps


@dataclass
class SweepRow:
    mode: str
    rate_bps: float
    intensity_fraction: float | None
    mota: float
    achieved_bps: float
    n_search_calls: int
    n_tree_calls: int
    boundary_frames: int


def sweep(config: RunConfig, dataset: Dataset, mode: str, rates,
          fractions=None) -> list[SweepRow]:
    """Fig-style table: joint mode runs the loop once per rate point;
    prefixed mode runs it once per (rate, allocation) pair."""
    if mode not in ("joint", "prefixed"):
        raise ValueError("mode must be 'joint' or 'prefixed'")
    if fractions is None:
        fractions = [f / 10.0 for f in range(1, 11)]
    rows = []
    for rate in rates:
        cfg = replace(config, r_max_bps=float(rate))
        if mode == "joint":
            log = run_closed_loop(cfg, dataset)
            rows.append(_sweep_row("joint", rate, None, log))
        else:
            for frac in fractions:
                step = make_prefixed_chip_step(cfg, frac)
                log = run_closed_loop(cfg, dataset, chip_step=step)
                rows.append(_sweep_row("prefixed", rate, frac, log))
    return rows


def _sweep_row(mode: str, rate: float, frac, log: RunLog) -> SweepRow:
    rep = log.rates()
    return SweepRow(mode=mode, rate_bps=float(rate), intensity_fraction=frac,
                    mota=log.mota(), achieved_bps=rep.bits_per_second,
                    n_search_calls=log.n_search_calls,
                    n_tree_calls=log.n_tree_calls,
                    boundary_frames=sum(1 for p in log.packets if p.boundary))
