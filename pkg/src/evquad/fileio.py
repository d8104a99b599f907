"""On-disk formats: binary PGM (P5) frames, `x y t p` event text files,
flat key=value run configs, MOT-style tracking CSVs and JSON reports."""

from __future__ import annotations

import json
import os
import numpy as np

from .imaging import Frame, as_event_array, empty_events, sort_events


def write_pgm(path, pixels: np.ndarray) -> None:
    px = np.asarray(pixels, dtype=np.uint8)
    h, w = px.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(px.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    # Header: magic, width, height, maxval; comments allowed between tokens.
    tokens = []
    i = 2
    while len(tokens) < 3:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i] != 0x0A:
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        tokens.append(int(data[i:j]))
        i = j
    i += 1  # single whitespace after maxval
    w, h, maxval = tokens
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    px = np.frombuffer(data[i:i + w * h], dtype=np.uint8).reshape(h, w)
    return px.copy()


def pad_to_pow2(pixels: np.ndarray) -> tuple[np.ndarray, int]:
    """Edge-replicate pad to the next square power-of-two side.

    Returns (padded pixels, original valid side); callers give the padded
    band zero distortion weight.
    """
    px = np.asarray(pixels, dtype=np.uint8)
    h, w = px.shape
    side = 1
    while side < max(h, w):
        side *= 2
    if (h, w) == (side, side):
        return px, side
    out = np.pad(px, ((0, side - h), (0, side - w)), mode="edge")
    return out, max(h, w)


def write_events(path, events) -> None:
    ev = as_event_array(events)
    with open(path, "w") as f:
        for x, y, t, p in ev.tolist():
            f.write(f"{x} {y} {t} {p}\n")


def read_events(path) -> np.ndarray:
    rows = []
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"{path}:{ln}: expected 'x y t p'")
            rows.append([int(parts[0]), int(parts[1]), int(parts[2]),
                         int(parts[3])])
    if not rows:
        return empty_events()
    return sort_events(np.array(rows, dtype=np.int64))


def load_frames_dir(path) -> tuple[list[Frame], int]:
    """Load sorted .pgm frames, padding to a power of two as needed.

    Returns (frames, valid side): pixels at or beyond the valid side are
    padding and should carry zero distortion weight.
    """
    names = sorted(n for n in os.listdir(path) if n.endswith(".pgm"))
    if not names:
        raise ValueError(f"no .pgm frames in {path}")
    frames = []
    valid = 0
    for k, name in enumerate(names):
        px = read_pgm(os.path.join(path, name))
        px, v = pad_to_pow2(px)
        valid = max(valid, v)
        frames.append(Frame(px, index=k))
    return frames, valid


# ---------------------------------------------------------------------------
# Flat key=value config files


def write_config(path, values: dict) -> None:
    with open(path, "w") as f:
        for k, v in values.items():
            if isinstance(v, (list, tuple)):
                v = ",".join(str(x) for x in v)
            f.write(f"{k} = {v}\n")


def read_config(path) -> dict:
    out = {}
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{ln}: expected 'key = value'")
            k, v = (s.strip() for s in line.split("=", 1))
            out[k] = v
    return out


# ---------------------------------------------------------------------------
# Tracking / report outputs


def write_tracks_csv(path, rows) -> None:
    """rows: (frame, id, x, y, w, h, score, class, source)."""
    with open(path, "w") as f:
        f.write("frame,id,x,y,w,h,score,class,source\n")
        for r in rows:
            f.write(",".join(str(v) for v in r) + "\n")


def write_gt_csv(path, boxes_per_frame) -> None:
    with open(path, "w") as f:
        f.write("frame,id,x,y,w,h,label\n")
        for k, boxes in enumerate(boxes_per_frame):
            for b in boxes:
                f.write(f"{k},{b.object_id},{b.x},{b.y},{b.w},{b.h},{b.label}\n")


def read_gt_csv(path):
    """Returns boxes per frame as lists of (object_id, box-like)."""
    from .imaging import GTBox
    frames: dict[int, list] = {}
    with open(path) as f:
        header = f.readline()
        for line in f:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            k = int(parts[0])
            box = GTBox(object_id=int(parts[1]), x=int(float(parts[2])),
                        y=int(float(parts[3])), w=int(float(parts[4])),
                        h=int(float(parts[5])),
                        label=parts[6] if len(parts) > 6 else "object")
            frames.setdefault(k, []).append(box)
    if not frames:
        return []
    n = max(frames) + 1
    return [frames.get(k, []) for k in range(n)]


def write_report_json(path, report: dict) -> None:
    with open(path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
