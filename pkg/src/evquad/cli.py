"""Command line front end.

  evquad synth --preset moving-squares --out data/
  evquad run --config cfg.txt --frames data/frames --events data/events.txt
             --gt data/gt.csv --out run/
  evquad sweep --mode joint --rates 1e6,1.5e6 --preset moving-squares --out sweep.csv
"""

from __future__ import annotations

import argparse
import os
import sys

from . import fileio
from .imaging import generate_synthetic_sequence
from .runner import (Dataset, PRESETS, RunConfig, dataset_from_files,
                     make_preset_dataset, run_closed_loop, sweep)


def _load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return RunConfig.from_dict(fileio.read_config(path))


def cmd_synth(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    frames_dir = os.path.join(args.out, "frames")
    os.makedirs(frames_dir, exist_ok=True)
    scene = PRESETS[args.preset](seed=args.seed)
    if args.frames:
        scene.n_frames = args.frames
    seq = generate_synthetic_sequence(scene)
    for frame in seq.frames:
        fileio.write_pgm(os.path.join(frames_dir, f"{frame.index:05d}.pgm"),
                         frame.pixels)
    all_events = [ev for ev in seq.events if len(ev)]
    if all_events:
        import numpy as np
        fileio.write_events(os.path.join(args.out, "events.txt"),
                            np.concatenate(all_events))
    else:
        fileio.write_events(os.path.join(args.out, "events.txt"), [])
    fileio.write_gt_csv(os.path.join(args.out, "gt.csv"), seq.boxes)
    fileio.write_config(os.path.join(args.out, "config.txt"),
                        RunConfig(seed=args.seed).to_dict())
    print(f"wrote {len(seq.frames)} frames, events and gt to {args.out}")
    return 0


def _dataset_from_args(args, config: RunConfig) -> Dataset:
    if getattr(args, "preset", None):
        return make_preset_dataset(args.preset, seed=config.seed)
    frames, valid_side = fileio.load_frames_dir(args.frames)
    events = fileio.read_events(args.events) if args.events else []
    gt = None
    if args.gt:
        gt = fileio.read_gt_csv(args.gt)
        gt = gt[:len(frames)] + [[] for _ in range(len(frames) - len(gt))]
    return dataset_from_files(frames, events, gt=gt,
                              frame_interval_us=config.frame_interval_us,
                              valid_side=valid_side)


def cmd_run(args) -> int:
    config = _load_config(args.config)
    dataset = _dataset_from_args(args, config)
    log = run_closed_loop(config, dataset)
    os.makedirs(args.out, exist_ok=True)
    fileio.write_tracks_csv(os.path.join(args.out, "tracks.csv"),
                            log.track_rows)
    with open(os.path.join(args.out, "packets.evp"), "wb") as f:
        from .chip import serialize_packet
        for pkt in log.packets:
            f.write(serialize_packet(pkt))
    rep = log.rates()
    report = dict(
        frames=dataset.n_frames,
        bitrate_bps=rep.bits_per_second,
        intensity_fraction=rep.intensity_fraction,
        event_fraction=rep.event_fraction,
        n_search_calls=log.n_search_calls,
        n_tree_calls=log.n_tree_calls,
    )
    if any(dataset.gt):
        report.update(mota=log.mota(), **log.mota_acc.totals)
    fileio.write_report_json(os.path.join(args.out, "report.json"), report)
    with open(os.path.join(args.out, "metrics.csv"), "w") as f:
        f.write("frame,misses,false_positives,mismatches,n_gt,r_i_bits,"
                "r_e_bits\n")
        for k, (c, pkt) in enumerate(zip(log.mota_acc.frames, log.packets)):
            f.write(f"{k},{c.misses},{c.false_positives},{c.mismatches},"
                    f"{c.n_gt},{pkt.r_i_bits},{pkt.r_e_bits}\n")
    with open(os.path.join(args.out, "lambda_trace.csv"), "w") as f:
        f.write("frame,lambda,rate_bits,distortion,j\n")
        for k, trace in log.search_traces:
            for lam, rate, dist, j in trace:
                f.write(f"{k},{lam:.6g},{rate},{dist:.6g},{j:.6g}\n")
    print(f"run complete: {dataset.n_frames} frames, "
          f"{rep.bits_per_second / 1e6:.3f} Mbps achieved"
          + (f", MOTA {report['mota']:.4f}" if "mota" in report else ""))
    return 0


def cmd_sweep(args) -> int:
    config = _load_config(args.config)
    dataset = _dataset_from_args(args, config)
    rates = [float(r) for r in args.rates.split(",")]
    rows = sweep(config, dataset, args.mode, rates)
    out = args.out or "sweep.csv"
    with open(out, "w") as f:
        f.write("mode,rate_bps,intensity_fraction,mota,achieved_bps,"
                "n_search_calls,n_tree_calls,boundary_frames\n")
        for r in rows:
            frac = "" if r.intensity_fraction is None \
                else f"{r.intensity_fraction:.2f}"
            f.write(f"{r.mode},{r.rate_bps:.0f},{frac},{r.mota:.4f},"
                    f"{r.achieved_bps:.1f},{r.n_search_calls},"
                    f"{r.n_tree_calls},{r.boundary_frames}\n")
    for r in rows:
        frac = "joint" if r.intensity_fraction is None \
            else f"{int(round(100 * r.intensity_fraction))}% intensity"
        print(f"{r.mode} @ {r.rate_bps / 1e6:.2f} Mbps ({frac}): "
              f"MOTA {r.mota:.4f}, {r.achieved_bps / 1e6:.3f} Mbps")
    print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evquad")
    sub = p.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    p_synth.add_argument("--preset", choices=sorted(PRESETS),
                         default="moving-squares")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--frames", type=int, default=None)
    p_synth.set_defaults(func=cmd_synth)

    p_run = sub.add_parser("run", help="closed-loop run over a dataset")
    p_run.add_argument("--config", default=None)
    p_run.add_argument("--frames", default=None, help="directory of .pgm frames")
    p_run.add_argument("--events", default=None, help="x y t p event file")
    p_run.add_argument("--gt", default=None, help="ground-truth csv")
    p_run.add_argument("--preset", choices=sorted(PRESETS), default=None,
                       help="use a synthetic preset instead of files")
    p_run.add_argument("--out", required=True)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="allocation sweep")
    p_sweep.add_argument("--mode", choices=("prefixed", "joint"),
                         required=True)
    p_sweep.add_argument("--rates", required=True,
                         help="comma-separated bits per second, e.g. 1e6,1.5e6")
    p_sweep.add_argument("--config", default=None)
    p_sweep.add_argument("--frames", default=None)
    p_sweep.add_argument("--events", default=None)
    p_sweep.add_argument("--gt", default=None)
    p_sweep.add_argument("--preset", choices=sorted(PRESETS), default=None)
    p_sweep.add_argument("--out", default=None)
    p_sweep.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command in ("run", "sweep") and not args.preset and not args.frames:
        print("error: give --preset or --frames", file=sys.stderr)
        return 2
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
