"""evquad: joint intensity/event quadtree rate-distortion compression with a
closed-loop host-chip tracking simulator."""

from .imaging import (Frame, EventVolume, GTBox, SceneConfig, Shape,
                      aggregate_counts, bin_events, fast_crossing_scene,
                      generate_synthetic_sequence, moving_squares_scene,
                      synthesize_events)
from .quadtree import (LeafConfig, Mode, QuadTreePlan, Rect,
                       deserialize_plan, enumerate_segmentations,
                       count_segmentations, reconstruct_frame,
                       serialize_plan, superpixel_value)
from .event_codec import (PdrSchedule, pdr_for_block, poisson_disk_sample,
                          sample_candidates)
from .rd import (DistortionWeights, LambdaSearchConfig, OptimizationResult,
                 RoiRegion, optimize_frame, optimize_tree,
                 precompute_leaf_costs, search_lambda)
from .chip import (ChipConfig, ChipPacket, ChipState, build_packet,
                   decode_packet, deserialize_packet, encode_step,
                   serialize_packet)
from .tracking import (BlobDetector, BoundingBox, FusionStrategy,
                       MultiObjectTracker, OracleDetector, Source,
                       event_tracker_substeps, extract_fusion_features,
                       fuse_boxes, iou, run_fusion, score_and_filter,
                       temporal_filter)
from .metrics import MotaAccumulator, match_frame, mota, rate_report
from .runner import (Dataset, RunConfig, RunLog, dataset_from_sequence,
                     make_preset_dataset, run_closed_loop, sweep)

__version__ = "0.1.0"
