"""Lossy per-leaf event compression.

Pipeline per quadtree leaf: thin the block's events with a Poisson-disk
radius scaled from the block size, collapse the kept events into binary
occupancy maps (one per temporal bin and polarity), and entropy-code each
map as zero-run lengths with a fixed static canonical prefix code.

Leaf payload layout: ceil(log2(M)) bits of pdr index (M = candidate count,
0 bits if M == 1), then the n_bins * 2 coded maps (positive polarity first,
bin-major), padded to a byte boundary. Payloads are independently decodable
given their offset.

The run-length alphabet is {0..63, ESC, EOM}. ESC is followed by a 12-bit
literal; literal 4095 means "advance 4095 zeros and keep reading the run",
so arbitrarily long runs stay codable. Code lengths follow power-of-two
buckets, which keeps the total payload length monotone under event removal
(merging runs a and b into a+b+1 never costs more bits than a and b did).
Changing the table is a packet-format version bump.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bitio import BitReader, BitWriter, BitstreamError
from .imaging import EX, EY, EP, EventVolume, empty_events, sort_events
from .quadtree import QuadTreePlan, Rect

HUFFMAN_TABLE_VERSION = 1

ESC_SYMBOL = 64
EOM_SYMBOL = 65
ESC_LITERAL_BITS = 12
ESC_CONTINUE = 4095  # literal meaning "4095 zeros consumed, run continues"
MAX_DIRECT_RUN = 63

# symbol -> code length; runs bucket as 0 | 1-2 | 3-6 | 7-14 | 15-30 | 31-62 | 63
RUN_CODE_LENGTHS: tuple[int, ...] = tuple(
    [2] + [4] * 2 + [6] * 4 + [8] * 8 + [10] * 16 + [12] * 32 + [14]
    + [4]   # ESC
    + [2]   # EOM
)
assert len(RUN_CODE_LENGTHS) == 66


def _canonical_codes(lengths) -> list[tuple[int, int]]:
    """Canonical prefix code assignment: (code, length) per symbol, codes
    assigned in (length, symbol) order."""
    order = sorted(range(len(lengths)), key=lambda s: (lengths[s], s))
    codes = [None] * len(lengths)
    code = 0
    prev_len = lengths[order[0]]
    for sym in order:
        code <<= lengths[sym] - prev_len
        codes[sym] = (code, lengths[sym])
        prev_len = lengths[sym]
        code += 1
    return codes


CODES: tuple[tuple[int, int], ...] = tuple(_canonical_codes(RUN_CODE_LENGTHS))

# Decoder tables: first canonical code and symbol index per code length.
_DEC_BY_LEN: dict[int, dict[int, int]] = {}
for _sym, (_code, _ln) in enumerate(CODES):
    _DEC_BY_LEN.setdefault(_ln, {})[_code] = _sym


def run_cost_bits(run: int) -> int:
    """Total bits to encode a zero-run of the given length."""
    if run < 0:
        raise ValueError("run must be >= 0")
    bits = 0
    while run >= ESC_CONTINUE:
        bits += RUN_CODE_LENGTHS[ESC_SYMBOL] + ESC_LITERAL_BITS
        run -= ESC_CONTINUE
    if run <= MAX_DIRECT_RUN:
        bits += RUN_CODE_LENGTHS[run]
    else:
        bits += RUN_CODE_LENGTHS[ESC_SYMBOL] + ESC_LITERAL_BITS
    return bits


def _write_symbol(w: BitWriter, sym: int) -> None:
    code, ln = CODES[sym]
    w.write(code, ln)


def _write_run(w: BitWriter, run: int) -> None:
    while run >= ESC_CONTINUE:
        _write_symbol(w, ESC_SYMBOL)
        w.write(ESC_CONTINUE, ESC_LITERAL_BITS)
        run -= ESC_CONTINUE
    if run <= MAX_DIRECT_RUN:
        _write_symbol(w, run)
    else:
        _write_symbol(w, ESC_SYMBOL)
        w.write(run, ESC_LITERAL_BITS)


def _read_symbol(r: BitReader) -> int:
    code = 0
    ln = 0
    while ln <= 14:
        code = (code << 1) | r.read_bit()
        ln += 1
        sym = _DEC_BY_LEN.get(ln, {}).get(code)
        if sym is not None:
            return sym
    raise BitstreamError(f"invalid prefix code at bit offset {r.bit_offset}")


def encode_occupancy(w: BitWriter, flat_positions: np.ndarray) -> None:
    """Code one occupancy map given the sorted raster indices of its ones."""
    prev = -1
    for pos in flat_positions.tolist():
        _write_run(w, pos - prev - 1)
        prev = pos
    _write_symbol(w, EOM_SYMBOL)


def decode_occupancy(r: BitReader, n_cells: int) -> list[int]:
    """Inverse of encode_occupancy; returns raster indices of ones."""
    out = []
    cursor = 0
    while True:
        run = 0
        while True:
            sym = _read_symbol(r)
            if sym == EOM_SYMBOL:
                if run:
                    raise BitstreamError(
                        f"dangling run before end-of-map at bit {r.bit_offset}")
                return out
            if sym == ESC_SYMBOL:
                lit = r.read(ESC_LITERAL_BITS)
                run += lit
                if lit == ESC_CONTINUE:
                    continue
            else:
                run += sym
            break
        cursor += run
        if cursor >= n_cells:
            raise BitstreamError(
                f"occupancy overrun: cell {cursor} of {n_cells}")
        out.append(cursor)
        cursor += 1


def occupancy_code_bits(flat_positions: np.ndarray) -> int:
    """Bit length of one coded map, without materializing bits."""
    if len(flat_positions) == 0:
        return RUN_CODE_LENGTHS[EOM_SYMBOL]
    runs = np.diff(flat_positions, prepend=-1) - 1
    return int(sum(run_cost_bits(int(x)) for x in runs)) \
        + RUN_CODE_LENGTHS[EOM_SYMBOL]


# ---------------------------------------------------------------------------
# Poisson-disk thinning


def pdr_for_block(block_side: int, base_r: float) -> float:
    """Effective disk radius for a block: 0 below side 4 (keep everything),
    base at 4, doubled at 8, quadrupled from 16 up."""
    if block_side < 4:
        return 0.0
    if block_side == 4:
        return float(base_r)
    if block_side == 8:
        return 2.0 * base_r
    return 4.0 * base_r


def poisson_disk_sample(events: np.ndarray, r: float) -> np.ndarray:
    """Greedy scan in (t, y, x) order; an event is kept iff no previously
    kept event lies within Euclidean distance r of its pixel. r == 0 keeps
    everything. Deterministic."""
    ev = sort_events(events)
    if r <= 0 or len(ev) == 0:
        return ev
    r2 = float(r) * float(r)
    kept_idx: list[int] = []
    kept_xy: list[tuple[int, int]] = []
    for i in range(len(ev)):
        x, y = int(ev[i, EX]), int(ev[i, EY])
        ok = True
        for kx, ky in kept_xy:
            dx = x - kx
            dy = y - ky
            if dx * dx + dy * dy < r2:
                ok = False
                break
        if ok:
            kept_idx.append(i)
            kept_xy.append((x, y))
    return ev[kept_idx]


@dataclass(frozen=True)
class PdrSchedule:
    """Candidate base radii (ascending) plus the block-size scale rule."""

    base_candidates: tuple = (1.0,)

    def __post_init__(self):
        cands = tuple(float(c) for c in self.base_candidates)
        if not cands:
            raise ValueError("need at least one candidate radius")
        if any(b < a for a, b in zip(cands, cands[1:])):
            raise ValueError("candidates must be sorted ascending")
        object.__setattr__(self, "base_candidates", cands)

    @property
    def n_candidates(self) -> int:
        return len(self.base_candidates)

    @property
    def index_bits(self) -> int:
        return max(0, math.ceil(math.log2(self.n_candidates))) \
            if self.n_candidates > 1 else 0

    def effective_radius(self, block_side: int, index: int) -> float:
        return pdr_for_block(block_side, self.base_candidates[index])


def sample_candidates(events: np.ndarray, block_side: int,
                      schedule: PdrSchedule) -> list[np.ndarray]:
    """Kept-event arrays per candidate, nested along the ascending-radius
    ladder: candidate i+1 is thinned from candidate i's kept set, so
    kept(i+1) is a subset of kept(i) and both satisfy their disk property."""
    out = []
    current = sort_events(events)
    prev_r = None
    for i in range(schedule.n_candidates):
        r = schedule.effective_radius(block_side, i)
        if prev_r is None or r > prev_r:
            current = poisson_disk_sample(current, r)
            prev_r = r
        out.append(current)
    return out


# ---------------------------------------------------------------------------
# Leaf payloads


def leaf_occupancy_positions(events: np.ndarray, rect: Rect, n_bins: int,
                         t_start: int, t_end: int) -> list[np.ndarray]:
    """Sorted raster indices of occupied cells per (bin, polarity) map,
    positive polarity first within each bin."""
    maps: list[np.ndarray] = []
    if len(events):
        t = events[:, 2]
        bin_idx = (n_bins * (t - t_start)) // (t_end - t_start)
        flat = (events[:, EY] - rect.y) * rect.side + (events[:, EX] - rect.x)
    for b in range(n_bins):
        for pol in (1, -1):
            if len(events) == 0:
                maps.append(np.empty(0, dtype=np.int64))
                continue
            sel = (bin_idx == b) & (events[:, EP] == pol)
            pos = np.unique(flat[sel])
            maps.append(pos)
    return maps


def leaf_payload_bits(maps: list[np.ndarray], index_bits: int) -> int:
    """Byte-padded bit length of a leaf payload; this is the leaf's event
    rate contribution."""
    bits = index_bits + sum(occupancy_code_bits(m) for m in maps)
    return 8 * ((bits + 7) // 8)


def empty_leaf_payload_bits(n_bins: int, index_bits: int) -> int:
    bits = index_bits + 2 * n_bins * RUN_CODE_LENGTHS[EOM_SYMBOL]
    return 8 * ((bits + 7) // 8)


def encode_leaf_events(w: BitWriter, maps: list[np.ndarray], pdr_index: int,
                       index_bits: int) -> None:
    """Append one leaf payload (already at a byte boundary) to the writer."""
    if w.bit_length % 8:
        raise ValueError("leaf payloads must start byte-aligned")
    if index_bits:
        w.write(pdr_index, index_bits)
    elif pdr_index:
        raise ValueError("nonzero pdr_index with a single candidate")
    for m in maps:
        encode_occupancy(w, m)
    w.align_to_byte()


def decode_leaf_events(r: BitReader, rect: Rect, n_bins: int,
                       index_bits: int) -> tuple[int, list[list[int]]]:
    """Decode one leaf payload -> (pdr_index, per-map raster indices)."""
    r.align_to_byte()
    pdr_index = r.read(index_bits) if index_bits else 0
    maps = []
    for _ in range(2 * n_bins):
        maps.append(decode_occupancy(r, rect.area))
    r.align_to_byte()
    return pdr_index, maps


def encode_event_stream(plan: QuadTreePlan, volume: EventVolume,
                        schedule: PdrSchedule,
                        kept_by_leaf: list[np.ndarray] | None = None
                        ) -> tuple[bytes, int, list[np.ndarray]]:
    """Encode all leaves' events against a plan.

    Thinning uses each leaf's pdr_index from the plan unless pre-thinned
    kept-event arrays are supplied. Returns (bytes, bit length including
    per-leaf padding, kept events per leaf).
    """
    events = volume.flatten()
    w = BitWriter()
    kept_out = []
    for i, (rect, cfg) in enumerate(plan.leaves):
        if kept_by_leaf is not None:
            kept = kept_by_leaf[i]
        else:
            inside = _events_in_rect(events, rect)
            r = schedule.effective_radius(rect.side, cfg.pdr_index)
            kept = poisson_disk_sample(inside, r)
        maps = leaf_occupancy_positions(kept, rect, volume.n_bins,
                                    volume.t_start, volume.t_end)
        encode_leaf_events(w, maps, cfg.pdr_index, schedule.index_bits)
        kept_out.append(kept)
    return w.getvalue(), w.bit_length, kept_out


def _events_in_rect(events: np.ndarray, rect: Rect) -> np.ndarray:
    if len(events) == 0:
        return empty_events()
    m = ((events[:, EX] >= rect.x) & (events[:, EX] < rect.x + rect.side)
         & (events[:, EY] >= rect.y) & (events[:, EY] < rect.y + rect.side))
    return events[m]


def decode_event_stream(data: bytes, plan: QuadTreePlan, n_bins: int,
                        schedule: PdrSchedule, bit_offset: int = 0
                        ) -> tuple[np.ndarray, list[int], int]:
    """Decode an event stream into per-bin signed event frames.

    Returns (frames, pdr indices per leaf, bits consumed). frames has shape
    (n_bins, side, side) with values in {-1, 0, +1} per polarity cell;
    cells occupied by both polarities sum to 0 but are preserved in the
    separate polarity planes of decode_event_planes if needed.
    """
    planes, pdr, consumed = decode_event_planes(data, plan, n_bins, schedule,
                                                bit_offset)
    frames = planes[:, 0].astype(np.int16) - planes[:, 1].astype(np.int16)
    return frames, pdr, consumed


def decode_event_planes(data: bytes, plan: QuadTreePlan, n_bins: int,
                        schedule: PdrSchedule, bit_offset: int = 0
                        ) -> tuple[np.ndarray, list[int], int]:
    """Exact occupancy reconstruction: (n_bins, 2, side, side) uint8 array,
    plane 0 positive polarity, plane 1 negative."""
    r = BitReader(data, bit_offset)
    side = plan.frame_side
    planes = np.zeros((n_bins, 2, side, side), dtype=np.uint8)
    pdr_indices = []
    for leaf_i, (rect, _cfg) in enumerate(plan.leaves):
        try:
            pdr_index, maps = decode_leaf_events(r, rect, n_bins,
                                                 schedule.index_bits)
        except BitstreamError as e:
            raise BitstreamError(f"leaf {leaf_i}: {e}") from None
        pdr_indices.append(pdr_index)
        for m_i, positions in enumerate(maps):
            b, pol_plane = divmod(m_i, 2)
            for pos in positions:
                y, x = divmod(pos, rect.side)
                planes[b, pol_plane, rect.y + y, rect.x + x] = 1
    return planes, pdr_indices, r.bit_offset - bit_offset
