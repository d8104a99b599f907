"""Chip-side orchestration: per-step joint optimization, bit-exact packet
assembly, and the chip's mirror of the host reconstruction.

Packet format (.evp), all integers big-endian:

  magic    4 bytes  b"EVQP"
  version  u8       PACKET_FORMAT_VERSION
  flags    u8       bit 0: optimizer hit the budget boundary
  frame    u32      frame index
  side     u16      frame side in pixels
  min_leaf u16      minimum leaf side
  n_bins   u8       temporal bins per interval
  pdr_cnt  u8       PDR candidate count
  r_i      u32      segmentation substream length in bits (byte-aligned)
  r_e      u32      event substream length in bits (per-leaf byte-aligned)
  body     ceil((r_i + r_e) / 8) bytes: segmentation bytes then event bytes

Header-declared lengths are verified on decode; version, length and
truncation problems raise distinct error types.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .event_codec import PdrSchedule, decode_event_planes, encode_event_stream
from .imaging import EventVolume, Frame, bin_events
from .quadtree import QuadTreePlan, deserialize_plan, reconstruct_frame, serialize_plan
from .rd import (DistortionWeights, LambdaSearchConfig, LambdaSearchResult,
                 OptimizationResult, precompute_leaf_costs, search_lambda)

PACKET_FORMAT_VERSION = 1
PACKET_MAGIC = b"EVQP"
_HEADER = struct.Struct(">4sBBIHHBBII")


class PacketError(ValueError):
    """Base class for packet decode failures."""


class PacketVersionError(PacketError):
    pass


class PacketLengthError(PacketError):
    pass


class PacketTruncatedError(PacketError):
    pass


@dataclass(frozen=True)
class ChipPacket:
    frame_index: int
    frame_side: int
    min_leaf_side: int
    n_bins: int
    pdr_count: int
    r_i_bits: int
    r_e_bits: int
    seg_bytes: bytes
    event_bytes: bytes
    boundary: bool = False

    @property
    def body_bits(self) -> int:
        return self.r_i_bits + self.r_e_bits

    @property
    def total_bytes(self) -> int:
        return _HEADER.size + len(self.seg_bytes) + len(self.event_bytes)


def serialize_packet(pkt: ChipPacket) -> bytes:
    if pkt.r_i_bits != 8 * len(pkt.seg_bytes):
        raise PacketLengthError("r_i does not match segmentation bytes")
    if pkt.r_e_bits != 8 * len(pkt.event_bytes):
        raise PacketLengthError("r_e does not match event bytes")
    header = _HEADER.pack(PACKET_MAGIC, PACKET_FORMAT_VERSION,
                          1 if pkt.boundary else 0,
                          pkt.frame_index, pkt.frame_side, pkt.min_leaf_side,
                          pkt.n_bins, pkt.pdr_count,
                          pkt.r_i_bits, pkt.r_e_bits)
    return header + pkt.seg_bytes + pkt.event_bytes


def deserialize_packet(data: bytes) -> ChipPacket:
    if len(data) < _HEADER.size:
        raise PacketTruncatedError(
            f"packet too short for header: {len(data)} bytes")
    magic, version, flags, frame_index, side, min_leaf, n_bins, pdr_cnt, \
        r_i, r_e = _HEADER.unpack_from(data)
    if magic != PACKET_MAGIC:
        raise PacketError(f"bad magic {magic!r}")
    if version != PACKET_FORMAT_VERSION:
        raise PacketVersionError(
            f"packet version {version}, expected {PACKET_FORMAT_VERSION}")
    if r_i % 8 or r_e % 8:
        raise PacketLengthError("substream lengths must be byte-aligned")
    body_bytes = (r_i + r_e) // 8
    if len(data) != _HEADER.size + body_bytes:
        if len(data) < _HEADER.size + body_bytes:
            raise PacketTruncatedError(
                f"body truncated: have {len(data) - _HEADER.size} bytes, "
                f"header declares {body_bytes}")
        raise PacketLengthError(
            f"body length mismatch: have {len(data) - _HEADER.size} bytes, "
            f"header declares {body_bytes}")
    seg_end = _HEADER.size + r_i // 8
    return ChipPacket(frame_index=frame_index, frame_side=side,
                      min_leaf_side=min_leaf, n_bins=n_bins, pdr_count=pdr_cnt,
                      r_i_bits=r_i, r_e_bits=r_e,
                      seg_bytes=data[_HEADER.size:seg_end],
                      event_bytes=data[seg_end:],
                      boundary=bool(flags & 1))


def build_packet(result: OptimizationResult, volume: EventVolume,
                 schedule: PdrSchedule, frame_index: int,
                 boundary: bool = False) -> ChipPacket:
    """Serialize an optimizer result into a self-delimiting packet."""
    seg_bytes, seg_bits = serialize_plan(result.plan)
    ev_bytes, ev_bits, _kept = encode_event_stream(
        result.plan, volume, schedule, kept_by_leaf=result.kept_by_leaf)
    assert seg_bits == result.r_i_raw
    assert ev_bits == result.r_e
    return ChipPacket(frame_index=frame_index,
                      frame_side=result.plan.frame_side,
                      min_leaf_side=result.plan.min_leaf_side,
                      n_bins=volume.n_bins,
                      pdr_count=schedule.n_candidates,
                      r_i_bits=8 * len(seg_bytes),
                      r_e_bits=ev_bits,
                      seg_bytes=seg_bytes, event_bytes=ev_bytes,
                      boundary=boundary)


def decode_packet(pkt: ChipPacket, prev_recon: Frame, schedule: PdrSchedule
                  ) -> tuple[Frame, QuadTreePlan, np.ndarray]:
    """Host-side decode: reconstruct the frame and the per-bin event planes.

    Returns (reconstruction, plan, planes) where planes has shape
    (n_bins, 2, side, side), positive polarity first.
    """
    if pkt.pdr_count != schedule.n_candidates:
        raise PacketError(
            f"packet coded with {pkt.pdr_count} radius candidates, "
            f"decoder schedule has {schedule.n_candidates}")
    plan, seg_consumed = deserialize_plan(pkt.seg_bytes, pkt.frame_side,
                                          pkt.min_leaf_side)
    if seg_consumed > pkt.r_i_bits:
        raise PacketLengthError("segmentation stream overran its declared length")
    planes, pdr_indices, ev_consumed = decode_event_planes(
        pkt.event_bytes, plan, pkt.n_bins, schedule)
    if ev_consumed != pkt.r_e_bits:
        raise PacketLengthError(
            f"event stream consumed {ev_consumed} bits, header declares "
            f"{pkt.r_e_bits}")
    # Reattach the pdr indices that traveled in the event stream.
    leaves = tuple((rect, type(cfg)(cfg.mode, cfg.value, pdr))
                   for (rect, cfg), pdr in zip(plan.leaves, pdr_indices))
    plan = QuadTreePlan(plan.frame_side, plan.min_leaf_side, leaves)
    recon = reconstruct_frame(prev_recon, plan)
    return recon, plan, planes


@dataclass
class ChipConfig:
    n_bins: int = 4
    min_leaf_side: int = 1
    schedule: PdrSchedule = field(default_factory=PdrSchedule)
    roi_weight: float = 1000.0
    background_weight: float = 1.0
    event_weight: float = 500.0
    tolerance: float = 0.05
    max_lambda_iterations: int = 20
    frame_interval_us: int = 33_333
    valid_side: int | None = None  # pad band beyond this gets zero weight


@dataclass
class ChipState:
    """Chip-held mirror of the host reconstruction plus warm-start state."""

    config: ChipConfig
    prev_recon: Frame
    frame_index: int = 0
    last_lambda: float | None = None

    @classmethod
    def bootstrap(cls, frame_side: int, config: ChipConfig) -> "ChipState":
        gray = Frame(np.full((frame_side, frame_side), 128, dtype=np.uint8),
                     index=-1)
        return cls(config=config, prev_recon=gray)


def encode_step(frame: Frame, events, roi_boxes, r_max_bits: int,
                state: ChipState) -> tuple[ChipPacket, ChipState, LambdaSearchResult]:
    """One chip step: weight the ROIs, run the budgeted optimization,
    emit the packet and update the reconstruction mirror by decoding it."""
    cfg = state.config
    # Events accompanying frame k cover the interval since frame k-1.
    t1 = state.frame_index * cfg.frame_interval_us
    t0 = t1 - cfg.frame_interval_us
    volume = bin_events(events, t0, t1, cfg.n_bins, frame.side, frame.side)
    weights = DistortionWeights.from_boxes(
        frame.side, roi_boxes, roi_weight=cfg.roi_weight,
        background_weight=cfg.background_weight,
        event_weight=cfg.event_weight, valid_side=cfg.valid_side)
    tables = precompute_leaf_costs(frame, state.prev_recon, volume, weights,
                                   cfg.schedule, cfg.min_leaf_side)
    search = search_lambda(tables, LambdaSearchConfig(
        r_max_bits=r_max_bits, tolerance=cfg.tolerance,
        max_iterations=cfg.max_lambda_iterations,
        warm_start=state.last_lambda))
    pkt = build_packet(search.result, volume, cfg.schedule,
                       frame_index=state.frame_index,
                       boundary=search.boundary)
    # Mirror the host: decode our own packet.
    mirrored = deserialize_packet(serialize_packet(pkt))
    recon, _plan, _planes = decode_packet(mirrored, state.prev_recon,
                                          cfg.schedule)
    new_state = ChipState(config=cfg, prev_recon=recon,
                          frame_index=state.frame_index + 1,
                          last_lambda=search.lam)
    return pkt, new_state, search
