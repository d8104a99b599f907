"""Quadtree segmentation plans, bit-exact plan serialization and host-side
intensity reconstruction.

Wire layout of a plan (MSB-first within bytes):
  [split flags, pre-order DFS, one bit per node with side > min_leaf_side]
  [one mode bit per leaf, z-order]
  [8 value bits per Acquire leaf, z-order]
Nodes already at min_leaf_side cannot split and carry no flag. Child order is
z-order: top-left, top-right, bottom-left, bottom-right.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple

from .bitio import BitReader, BitWriter, BitstreamError
from .imaging import Frame, _is_pow2


class Rect(NamedTuple):
    """Square block: top-left corner plus side length."""

    x: int
    y: int
    side: int

    @property
    def area(self) -> int:
        return self.side * self.side

    def children(self) -> tuple["Rect", "Rect", "Rect", "Rect"]:
        h = self.side // 2
        return (Rect(self.x, self.y, h), Rect(self.x + h, self.y, h),
                Rect(self.x, self.y + h, h), Rect(self.x + h, self.y + h, h))


class Mode(enum.Enum):
    SKIP = 0
    ACQUIRE = 1


@dataclass(frozen=True)
class LeafConfig:
    mode: Mode
    value: int | None = None  # superpixel mean, present iff ACQUIRE
    pdr_index: int = 0

    def __post_init__(self):
        if self.mode is Mode.ACQUIRE:
            if self.value is None or not 0 <= self.value <= 255:
                raise ValueError("ACQUIRE leaf needs an 8-bit value")
        elif self.value is not None:
            raise ValueError("SKIP leaf must not carry a value")
        if self.pdr_index < 0:
            raise ValueError("pdr_index must be >= 0")


@dataclass(frozen=True)
class QuadTreePlan:
    """Leaves in depth-first z-order; they tile the frame exactly."""

    frame_side: int
    min_leaf_side: int
    leaves: tuple  # tuple[(Rect, LeafConfig), ...]

    def __post_init__(self):
        if not _is_pow2(self.frame_side) or not _is_pow2(self.min_leaf_side):
            raise ValueError("frame_side and min_leaf_side must be powers of two")
        if self.min_leaf_side > self.frame_side:
            raise ValueError("min_leaf_side exceeds frame_side")
        area = sum(r.area for r, _ in self.leaves)
        if area != self.frame_side * self.frame_side:
            raise ValueError("leaves do not tile the frame")

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)

    def rate_decomposition(self) -> tuple[int, int, int]:
        """(segmentation bits, mode bits, value bits) of the serialized plan."""
        r_seg = _count_flags(self.frame_side, self.min_leaf_side,
                             [r for r, _ in self.leaves])
        r_mode = self.n_leaves
        r_v = 8 * sum(1 for _, c in self.leaves if c.mode is Mode.ACQUIRE)
        return r_seg, r_mode, r_v


def superpixel_value(frame: Frame, rect: Rect) -> int:
    """Block mean, rounded half away from zero, clamped to [0, 255]."""
    if rect.side <= 0:
        raise ValueError("empty rect")
    if rect.x < 0 or rect.y < 0 or rect.x + rect.side > frame.side \
            or rect.y + rect.side > frame.side:
        raise ValueError(f"rect {rect} outside frame of side {frame.side}")
    block = frame.pixels[rect.y:rect.y + rect.side, rect.x:rect.x + rect.side]
    mean = float(block.sum()) / rect.area
    return min(255, int(math.floor(mean + 0.5)))


def _leaf_set_walk(frame_side: int, min_side: int, leaf_rects: set,
                   visit_flag, visit_leaf) -> None:
    """Pre-order DFS over the tree implied by a set of leaf rects."""

    def rec(rect: Rect):
        is_leaf = rect in leaf_rects
        if rect.side > min_side:
            visit_flag(rect, not is_leaf)
        elif not is_leaf:
            raise ValueError(f"node {rect} below min side is not a leaf")
        if is_leaf:
            visit_leaf(rect)
        else:
            for ch in rect.children():
                rec(ch)

    rec(Rect(0, 0, frame_side))


def _count_flags(frame_side: int, min_side: int, rects: list) -> int:
    n = 0

    def on_flag(rect, is_split):
        nonlocal n
        n += 1

    _leaf_set_walk(frame_side, min_side, set(rects), on_flag, lambda r: None)
    return n


def serialize_plan(plan: QuadTreePlan) -> tuple[bytes, int]:
    """Serialize to (bytes, exact bit length). Inverse of deserialize_plan."""
    leaf_rects = {r for r, _ in plan.leaves}
    cfg_by_rect = {r: c for r, c in plan.leaves}
    w = BitWriter()
    order: list[Rect] = []
    _leaf_set_walk(plan.frame_side, plan.min_leaf_side, leaf_rects,
                   lambda rect, split: w.write_bit(split),
                   order.append)
    for rect in order:
        w.write_bit(cfg_by_rect[rect].mode.value)
    for rect in order:
        cfg = cfg_by_rect[rect]
        if cfg.mode is Mode.ACQUIRE:
            w.write(cfg.value, 8)
    return w.getvalue(), w.bit_length


def deserialize_plan(data: bytes, frame_side: int, min_leaf_side: int,
                     pdr_indices=None, bit_offset: int = 0) -> tuple[QuadTreePlan, int]:
    """Decode a plan; returns (plan, bits consumed). pdr_indices, if given,
    are attached to leaves in z-order (they travel in the event stream)."""
    r = BitReader(data, bit_offset)
    rects: list[Rect] = []

    def rec(rect: Rect):
        split = bool(r.read_bit()) if rect.side > min_leaf_side else False
        if split:
            for ch in rect.children():
                rec(ch)
        else:
            rects.append(rect)

    try:
        rec(Rect(0, 0, frame_side))
        modes = [Mode(r.read_bit()) for _ in rects]
        leaves = []
        for i, rect in enumerate(rects):
            value = r.read(8) if modes[i] is Mode.ACQUIRE else None
            pdr = int(pdr_indices[i]) if pdr_indices is not None else 0
            leaves.append((rect, LeafConfig(modes[i], value, pdr)))
    except BitstreamError as e:
        raise BitstreamError(f"plan decode failed: {e}") from None
    plan = QuadTreePlan(frame_side=frame_side, min_leaf_side=min_leaf_side,
                        leaves=tuple(leaves))
    return plan, r.bit_offset - bit_offset


def reconstruct_frame(prev_recon: Frame, plan: QuadTreePlan) -> Frame:
    """Skip leaves copy the co-located block of prev_recon; Acquire leaves
    fill with the superpixel value."""
    if prev_recon.side != plan.frame_side:
        raise ValueError(
            f"size mismatch: recon {prev_recon.side} vs plan {plan.frame_side}"
        )
    out = prev_recon.pixels.copy()
    for rect, cfg in plan.leaves:
        if cfg.mode is Mode.ACQUIRE:
            out[rect.y:rect.y + rect.side, rect.x:rect.x + rect.side] = cfg.value
    return Frame(out, index=prev_recon.index + 1)


def uniform_plan(frame_side: int, min_leaf_side: int, leaf_side: int,
                 mode: Mode = Mode.SKIP, value: int | None = None,
                 pdr_index: int = 0) -> QuadTreePlan:
    """Regular tiling at a fixed leaf side; handy for tests and bootstraps."""
    leaves = []
    for y in range(0, frame_side, leaf_side):
        for x in range(0, frame_side, leaf_side):
            leaves.append((Rect(x, y, leaf_side),
                           LeafConfig(mode, value, pdr_index)))
    # Reorder into z-order via the DFS walk.
    rects = {r for r, _ in leaves}
    order: list[Rect] = []
    _leaf_set_walk(frame_side, min_leaf_side, rects, lambda r, s: None,
                   order.append)
    cfg_by_rect = dict(leaves)
    return QuadTreePlan(frame_side, min_leaf_side,
                        tuple((r, cfg_by_rect[r]) for r in order))


def count_segmentations(frame_side: int, min_leaf_side: int) -> int:
    """count(s) = 1 + count(s/2)^4, count(min) = 1."""
    if frame_side == min_leaf_side:
        return 1
    return 1 + count_segmentations(frame_side // 2, min_leaf_side) ** 4


def enumerate_segmentations(frame_side: int, min_leaf_side: int = 1
                            ) -> Iterator[list]:
    """Yield every legal segmentation exactly once, as a z-ordered leaf list.

    Guarded to frame_side <= 16; this is exhaustive-oracle support.
    """
    if frame_side > 16:
        raise ValueError("enumerate_segmentations is guarded to side <= 16")
    if not _is_pow2(frame_side) or not _is_pow2(min_leaf_side):
        raise ValueError("sides must be powers of two")

    def rec(rect: Rect) -> Iterator[list]:
        yield [rect]
        if rect.side > min_leaf_side:
            c0, c1, c2, c3 = rect.children()
            for l0 in rec(c0):
                for l1 in rec(c1):
                    for l2 in rec(c2):
                        for l3 in rec(c3):
                            yield l0 + l1 + l2 + l3

    yield from rec(Rect(0, 0, frame_side))
