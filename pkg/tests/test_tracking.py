import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evquad.tracking import (BlobDetector, BoundingBox, FusionStrategy,
                             IdentityEnhancer, MultiObjectTracker,
                             OracleDetector, Source, _box_to_z, _f_matrix,
                             _greedy_iou_match, _H, _P0, _Q, _R,
                             default_confidence_scorer, event_tracker_substeps,
                             extract_fusion_features, fuse_boxes, iou,
                             run_fusion, score_and_filter, temporal_filter)


def box(x, y, w, h, source=Source.INTENSITY, score=1.0, label="object",
        track_id=None):
    return BoundingBox(x=x, y=y, w=w, h=h, source=source, score=score,
                       class_label=label, track_id=track_id)


class TestIou:
    def test_identical(self):
        assert iou(box(1, 2, 5, 5), box(1, 2, 5, 5)) == 1.0

    def test_disjoint(self):
        assert iou(box(0, 0, 2, 2), box(10, 10, 2, 2)) == 0.0

    def test_unit_boxes_half_offset(self):
        a = box(0.0, 0.0, 1.0, 1.0)
        b = box(0.5, 0.0, 1.0, 1.0)
        assert iou(a, b) == pytest.approx(1.0 / 3.0)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0, 20), st.floats(0, 20), st.floats(1, 10),
           st.floats(1, 10), st.floats(0, 20), st.floats(0, 20),
           st.floats(1, 10), st.floats(1, 10))
    def test_symmetric_and_bounded(self, ax, ay, aw, ah, bx, by, bw, bh):
        a, b = box(ax, ay, aw, ah), box(bx, by, bw, bh)
        v = iou(a, b)
        assert v == iou(b, a)
        assert 0.0 <= v <= 1.0


class GT:
    def __init__(self, x, y, w, h, label="object"):
        self.x, self.y, self.w, self.h, self.label = x, y, w, h, label


class TestOracleDetector:
    def test_zero_noise_reproduces_gt(self):
        gt = [[GT(4, 4, 8, 8), GT(20, 20, 6, 6)]]
        det = OracleDetector(gt)
        out = det.detect(None, 0)
        assert [(b.x, b.y, b.w, b.h) for b in out] == [(4, 4, 8, 8),
                                                       (20, 20, 6, 6)]

    def test_full_dropout(self):
        det = OracleDetector([[GT(4, 4, 8, 8)]], dropout=1.0, seed=3)
        assert det.detect(None, 0) == []

    def test_deterministic_under_seed(self):
        gt = [[GT(4, 4, 8, 8), GT(20, 20, 6, 6)]] * 5
        a = OracleDetector(gt, jitter_px=2, dropout=0.3, seed=42)
        b = OracleDetector(gt, jitter_px=2, dropout=0.3, seed=42)
        for k in range(5):
            assert [(q.x, q.y) for q in a.detect(None, k)] == \
                [(q.x, q.y) for q in b.detect(None, k)]


class TestBlobDetector:
    def test_empty_frame(self):
        assert BlobDetector().detect(np.zeros((16, 16), dtype=int)) == []

    def test_single_dense_blob(self):
        frame = np.zeros((16, 16), dtype=int)
        frame[4:12, 4:12] = 1
        out = BlobDetector(min_area=4, dilate=1).detect(frame)
        assert len(out) == 1
        b = out[0]
        assert (b.x, b.y, b.w, b.h) == (4, 4, 8, 8)
        assert b.score == 1.0

    def test_two_blobs_match_flood_fill_oracle(self):
        rng = np.random.default_rng(0)
        frame = np.zeros((32, 32), dtype=int)
        frame[2:8, 2:8] = 1
        frame[20:30, 18:26] = 1
        out = BlobDetector(min_area=1, dilate=0).detect(frame)

        # Hand-written 8-connected flood fill oracle.
        seen = np.zeros_like(frame, dtype=bool)
        comps = []
        for y in range(32):
            for x in range(32):
                if frame[y, x] and not seen[y, x]:
                    stack = [(y, x)]
                    seen[y, x] = True
                    pix = []
                    while stack:
                        cy, cx = stack.pop()
                        pix.append((cy, cx))
                        for dy in (-1, 0, 1):
                            for dx in (-1, 0, 1):
                                ny, nx = cy + dy, cx + dx
                                if 0 <= ny < 32 and 0 <= nx < 32 and \
                                        frame[ny, nx] and not seen[ny, nx]:
                                    seen[ny, nx] = True
                                    stack.append((ny, nx))
                    ys = [p[0] for p in pix]
                    xs = [p[1] for p in pix]
                    comps.append((min(xs), min(ys),
                                  max(xs) - min(xs) + 1,
                                  max(ys) - min(ys) + 1))
        got = sorted((b.x, b.y, b.w, b.h) for b in out)
        assert got == sorted(comps)

    def test_min_area_filters(self):
        frame = np.zeros((16, 16), dtype=int)
        frame[3, 3] = 1
        assert BlobDetector(min_area=2, dilate=0).detect(frame) == []
        assert len(BlobDetector(min_area=1, dilate=0).detect(frame)) == 1


def kf_oracle_track(detections, dts):
    """Hand-run reference Kalman filter for one object: same matrices,
    independent implementation."""
    x = np.zeros(7)
    x[:4] = _box_to_z(detections[0])
    p = _P0.copy()
    for det, dt in zip(detections[1:], dts):
        f = _f_matrix(dt)
        x = f @ x
        p = f @ p @ f.T + _Q
        z = _box_to_z(det)
        y = z - _H @ x
        s = _H @ p @ _H.T + _R
        k = p @ _H.T @ np.linalg.inv(s)
        x = x + k @ y
        p = (np.eye(7) - k @ _H) @ p
    return x


class TestTracker:
    def test_single_mover_matches_kf_oracle(self):
        trk = MultiObjectTracker(Source.INTENSITY, frame_side=64)
        dets = [box(4 + 2 * k, 10, 8, 8) for k in range(10)]
        for d in dets:
            trk.step([d], dt=1.0)
        assert len(trk.tracks) == 1
        oracle = kf_oracle_track(dets, [1.0] * 9)
        assert np.allclose(trk.tracks[0].x, oracle)
        # Position error after burn-in is essentially gone.
        cx = trk.tracks[0].x[0]
        assert abs(cx - (4 + 2 * 9 + 4)) < 0.5

    def test_track_ids_stable_and_unique(self):
        trk = MultiObjectTracker(Source.INTENSITY, frame_side=64)
        ids_seen = []
        for k in range(20):
            out = trk.step([box(4 + k, 4, 8, 8), box(4 + k, 40, 8, 8)],
                           dt=1.0)
            ids_seen.append(sorted(b.track_id for b in out))
        assert ids_seen[1:] == [ids_seen[1]] * 19  # no switches after init
        assert len(set(ids_seen[1])) == 2

    def test_deletion_after_max_age(self):
        trk = MultiObjectTracker(Source.INTENSITY, max_age=3, frame_side=64)
        trk.step([box(4, 4, 8, 8)], dt=1.0)
        for _ in range(3):
            trk.step([], dt=1.0)
        assert len(trk.tracks) == 1  # unmatched == max_age: still alive
        trk.step([], dt=1.0)
        assert trk.tracks == []  # unmatched > max_age: removed

    def test_class_label_immutable(self):
        trk = MultiObjectTracker(Source.INTENSITY, frame_side=64)
        trk.step([box(4, 4, 8, 8, label="car")], dt=1.0)
        trk.step([box(5, 4, 8, 8, label="boat")], dt=1.0)
        assert trk.tracks[0].class_label == "car"

    def test_score_tracks_hit_streak(self):
        trk = MultiObjectTracker(Source.INTENSITY, frame_side=64)
        out1 = trk.step([box(4, 4, 8, 8)], dt=1.0)
        assert out1[0].score == pytest.approx(1 / 3)
        trk.step([box(5, 4, 8, 8)], dt=1.0)
        out3 = trk.step([box(6, 4, 8, 8)], dt=1.0)
        assert out3[0].score == 1.0
        out4 = trk.step([], dt=1.0)  # miss resets the streak
        assert out4 and out4[0].score == 0.0

    def test_offscreen_boxes_omitted(self):
        trk = MultiObjectTracker(Source.INTENSITY, frame_side=32)
        trk.step([box(16, 10, 8, 8)], dt=1.0)
        out = trk.step([box(20, 10, 8, 8)], dt=1.0)  # 4 px/frame rightward
        assert len(out) == 1
        for _ in range(4):
            out = trk.advance(1.0)
        assert out == []  # center extrapolated past the frame edge

    def test_greedy_association_prefers_best_iou(self):
        preds = [box(0, 0, 10, 10), box(20, 0, 10, 10)]
        dets = [box(1, 0, 10, 10), box(21, 0, 10, 10)]
        pairs = _greedy_iou_match(preds, dets, 0.3)
        assert sorted(pairs) == [(0, 0), (1, 1)]


class TestEventSubsteps:
    def test_n1_degenerates_to_single_predict(self):
        a = MultiObjectTracker(Source.EVENT, frame_side=64)
        b = MultiObjectTracker(Source.EVENT, frame_side=64)
        for trk in (a, b):
            trk.step([box(4, 4, 8, 8)], dt=1.0)
        det = BlobDetector()
        out_a = event_tracker_substeps(a, [np.zeros((64, 64), dtype=int)],
                                       det, 1)
        out_b = b.advance(1.0)
        assert [(q.x, q.y, q.w, q.h) for q in out_a] == \
            [(q.x, q.y, q.w, q.h) for q in out_b]

    def test_static_blob_converges(self):
        trk = MultiObjectTracker(Source.EVENT, frame_side=64)
        frame = np.zeros((64, 64), dtype=int)
        frame[10:18, 10:18] = 1
        det = BlobDetector(min_area=1, dilate=1)
        for _ in range(3):
            out = event_tracker_substeps(trk, [frame] * 4, det, 4)
        assert len(out) == 1
        b = out[0]
        assert abs(b.x - 10) < 1 and abs(b.y - 10) < 1
        assert b.score == 1.0

    def test_sub_frame_crosser_seen_only_by_event_tracker(self):
        # Object present only in the middle bins of one interval.
        n = 4
        frames = [np.zeros((64, 64), dtype=int) for _ in range(n)]
        for b in (1, 2):
            frames[b][30:40, 25 + 5 * b:35 + 5 * b] = 1
        ev_trk = MultiObjectTracker(Source.EVENT, frame_side=64)
        out = event_tracker_substeps(ev_trk, frames, BlobDetector(), n)
        assert len(out) == 1  # event side saw it
        int_trk = MultiObjectTracker(Source.INTENSITY, frame_side=64)
        assert int_trk.step([], dt=1.0) == []  # intensity never did


class TestFusionFeatures:
    def test_lone_box(self):
        b = box(4, 4, 8, 8)
        f = extract_fusion_features(b, [b], [])
        assert f.overlap_ratio == 0.0
        assert f.crowdedness == 0
        assert f.support_value == 0
        assert f.size == 64
        assert f.aspect_ratio == 1.0

    def test_colocated_cross_source_support(self):
        bi = box(4, 4, 8, 8, Source.INTENSITY)
        be = box(4, 4, 8, 8, Source.EVENT)
        fi = extract_fusion_features(bi, [bi], [be])
        fe = extract_fusion_features(be, [bi], [be])
        assert fi.support_value == 1 and fe.support_value == 1

    def test_crafted_layout_hand_table(self):
        a = box(0, 0, 10, 10, Source.INTENSITY)          # overlaps b
        b = box(5, 0, 10, 10, Source.INTENSITY)          # center inside a? no
        c = box(2, 2, 4, 4, Source.INTENSITY)            # center inside a
        d = box(0, 0, 10, 10, Source.EVENT)              # supports a
        feats = extract_fusion_features(a, [a, b, c], [d])
        # OR: max IoU among same-source others: iou(a,b)=50/150, iou(a,c)=16/100
        assert feats.overlap_ratio == pytest.approx(1 / 3)
        # CR: centers of b (10,5) outside a; c (4,4) inside -> 1
        assert feats.crowdedness == 1
        assert feats.support_value == 1


class TestScorerAndFilter:
    def test_published_formula_values(self):
        # Supported lone box passes; unsupported duplicate fails.
        supported = box(0, 0, 8, 8, score=1.0)
        f_sup = extract_fusion_features(supported, [supported],
                                        [box(0, 0, 8, 8, Source.EVENT)])
        assert default_confidence_scorer(supported, f_sup) == pytest.approx(
            min(1.0, 0.5 + 0.4 + 0.2))
        dup_a = box(0, 0, 10, 10, score=1.0)
        dup_b = box(1, 0, 10, 10, score=1.0)
        f_dup = extract_fusion_features(dup_a, [dup_a, dup_b], [])
        v = iou(dup_a, dup_b)
        # dup_b's center falls inside dup_a: one crowdedness count.
        assert default_confidence_scorer(dup_a, f_dup) == pytest.approx(
            0.5 - 0.3 * v + 0.2 - 0.1 / 3)
        assert default_confidence_scorer(dup_a, f_dup) < 0.7  # filtered

    def test_keep_all_and_drop_all(self):
        boxes = [(box(0, 0, 4, 4), extract_fusion_features(
            box(0, 0, 4, 4), [], []))]
        assert len(score_and_filter(boxes, scorer=lambda b, f: 1.0)) == 1
        assert score_and_filter(boxes, scorer=lambda b, f: 0.0) == []

    def test_scorer_contract_enforced(self):
        boxes = [(box(0, 0, 4, 4), extract_fusion_features(
            box(0, 0, 4, 4), [], []))]
        with pytest.raises(ValueError):
            score_and_filter(boxes, scorer=lambda b, f: 1.5)


class TestFuseBoxes:
    def _pair(self):
        bi = box(10, 10, 10, 10, Source.INTENSITY, score=1.0, track_id=1)
        be = box(12, 10, 10, 10, Source.EVENT, score=1.0, track_id=2)
        return bi, be

    def test_identical_partners_all_strategies_agree(self):
        bi = box(4, 4, 8, 8, Source.INTENSITY, score=1.0)
        be = box(4, 4, 8, 8, Source.EVENT, score=1.0)
        filt = [(bi, None), (be, None)]
        for strat in FusionStrategy:
            out = fuse_boxes(filt, [bi], [be], strategy=strat)
            assert len(out) == 1
            got = out[0]
            assert (got.x, got.y, got.w, got.h) == (4, 4, 8, 8)

    def test_intersection_and_union_containment(self):
        bi, be = self._pair()
        assert iou(bi, be) >= 0.5
        inter = fuse_boxes([(bi, None)], [bi], [be],
                           FusionStrategy.INTERSECTION)[0]
        union = fuse_boxes([(bi, None)], [bi], [be],
                           FusionStrategy.UNION)[0]
        for fused, outer in ((inter, bi), (inter, be)):
            assert fused.x >= outer.x - 1e-9
            assert fused.x + fused.w <= outer.x + outer.w + 1e-9
        for inner in (bi, be):
            assert union.x <= inner.x and union.y <= inner.y
            assert union.x + union.w >= inner.x + inner.w

    def test_low_iou_partner_passes_through(self):
        bi = box(0, 0, 10, 10, Source.INTENSITY)
        be = box(7, 0, 10, 10, Source.EVENT)  # IoU 3/17 < 0.5
        out = fuse_boxes([(bi, None)], [bi], [be], FusionStrategy.UNION)
        assert out == [bi]

    def test_mutual_pair_deduplicates(self):
        bi, be = self._pair()
        out = fuse_boxes([(bi, None), (be, None)], [bi], [be],
                         FusionStrategy.CONFIDENCE)
        assert len(out) == 1
        assert out[0].source is Source.INTENSITY  # tie prefers intensity

    def test_no_box_creation(self):
        bi, be = self._pair()
        for strat in FusionStrategy:
            out = fuse_boxes([(bi, None), (be, None)], [bi], [be], strat)
            assert len(out) <= 2


class TestTemporalFilter:
    def test_first_frame_passthrough(self):
        now = [box(0, 0, 4, 4)]
        assert temporal_filter(now, []) == now
        assert temporal_filter(now, None) == now

    def test_static_box_kept(self):
        prev = [box(0, 0, 8, 8)]
        now = [box(1, 0, 8, 8)]
        assert temporal_filter(now, prev) == now

    def test_new_appearance_dropped(self):
        prev = [box(0, 0, 8, 8)]
        now = [box(40, 40, 8, 8)]
        assert temporal_filter(now, prev) == []


class TestRunFusion:
    def test_end_to_end_single_object(self):
        bi = box(10, 10, 10, 10, Source.INTENSITY, score=1.0, track_id=3)
        be = box(11, 10, 10, 10, Source.EVENT, score=1.0, track_id=9)
        out = run_fusion([bi], [be])
        assert len(out) == 1

    def test_identity_enhancer_passthrough(self):
        from evquad.imaging import Frame
        f = Frame(np.zeros((8, 8), dtype=np.uint8))
        g = Frame(np.ones((8, 8), dtype=np.uint8))
        assert IdentityEnhancer().enhance(f, g, []) is g
