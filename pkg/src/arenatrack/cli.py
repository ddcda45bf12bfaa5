"""Command-line entry points: dataset generation, live tracking, evaluation."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .fusion import (
    DEFAULT_GATE_M,
    DEFAULT_TICK_RATE_HZ,
    NoiseProfile,
    annotations_to_messages,
    error_percentiles,
    load_rig_registry,
    run_tracker,
)
from .syngen import DatasetManifest, load_annotations, load_profile, run_profile


def _add_syngen_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--profile", required=True, help="profile JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the profile seed")


def cmd_syngen(args) -> int:
    profile = load_profile(args.profile)
    annotations, manifest = run_profile(profile, args.out, seed=args.seed)
    counts = manifest.to_json_dict()["counts"]
    print(f"wrote {len(annotations)} annotations to {args.out}")
    print(f"split train/val/test: {counts['train']}/{counts['val']}/{counts['test']}")
    return 0


def cmd_track(args) -> int:
    rigs = load_rig_registry(args.rigs)
    if args.stdin:
        from .server import run_stdin_replay
        stats = run_stdin_replay(rigs, sys.stdin, sys.stdout, args.rate, args.gate)
        print(f"replayed {stats['messages']} messages over {stats['ticks']} ticks "
              f"({stats['malformed']} malformed, "
              f"{stats['dropped_unknown_camera']} unknown-camera)", file=sys.stderr)
        return 0
    from .server import TcpService
    host, _, port = args.listen.rpartition(":")
    publish = None
    if args.publish:
        phost, _, pport = args.publish.rpartition(":")
        publish = (phost or "127.0.0.1", int(pport))
    service = TcpService(rigs, args.rate, args.gate,
                         listen=(host or "127.0.0.1", int(port)), publish=publish,
                         out_stream=None if publish else sys.stdout)
    service.start()
    print(f"listening on {service.listen_address}, rate {args.rate} Hz", file=sys.stderr)
    try:
        while True:
            import time
            time.sleep(0.5)
    except KeyboardInterrupt:
        service.stop()
    return 0


def cmd_eval(args) -> int:
    manifest_path = Path(args.dataset)
    manifest = DatasetManifest.load(manifest_path)
    base = manifest_path.parent
    annotations = load_annotations(base / manifest.annotations_path)
    if manifest.rigs_path is None:
        print("error: manifest has no rig registry (dataset has no sequences)",
              file=sys.stderr)
        return 2
    rigs = load_rig_registry(base / manifest.rigs_path)
    known = {r.camera_id for r in rigs}
    annotations = [a for a in annotations if a.camera_id in known]
    noise = NoiseProfile.load(args.noise) if args.noise else NoiseProfile()
    rng = np.random.default_rng(noise.seed)
    messages = annotations_to_messages(annotations, noise=noise, rng=rng)

    # Ground-truth world position per (time, object).
    gt: dict[float, dict[int, np.ndarray]] = {}
    for a in annotations:
        gt.setdefault(a.time_s, {})[a.object_id] = a.cuboid_world.base_center.as_array()
    times = sorted(gt)

    duration = max(times) + 1.0 / args.rate if times else 0.0
    ticks = run_tracker(messages, rigs, tick_rate=args.rate, gate=args.gate,
                        duration=duration)
    errors = []
    for t, fused in ticks:
        if not fused:
            continue
        nearest_t = min(times, key=lambda x: abs(x - t))
        objs = gt[nearest_t]
        for f in fused:
            p = f.world_position.as_array()
            errors.append(min(float(np.linalg.norm(p - q)) for q in objs.values()))

    rows = error_percentiles(errors)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["percentile", "fused_error_m"])
        for p, e in rows:
            w.writerow([p, e])
    finally:
        if args.out:
            out.close()
    print(f"evaluated {len(errors)} fused positions over {len(ticks)} ticks",
          file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="arenatrack",
        description="Multi-camera positional tracking toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_syn = sub.add_parser("syngen", help="generate an annotation dataset")
    _add_syngen_args(p_syn)
    p_syn.set_defaults(func=cmd_syngen)

    p_track = sub.add_parser("track", help="run the fusion service")
    p_track.add_argument("--rigs", required=True, help="rig registry JSON")
    p_track.add_argument("--rate", type=float, default=DEFAULT_TICK_RATE_HZ)
    p_track.add_argument("--gate", type=float, default=DEFAULT_GATE_M)
    mode = p_track.add_mutually_exclusive_group(required=True)
    mode.add_argument("--listen", help="host:port to accept detection streams")
    mode.add_argument("--stdin", action="store_true",
                      help="replay line-delimited messages from stdin")
    p_track.add_argument("--publish", default=None,
                         help="host:port to serve fused output (default: stdout)")
    p_track.set_defaults(func=cmd_track)

    p_eval = sub.add_parser("eval", help="noise-model error report over a dataset")
    p_eval.add_argument("--dataset", required=True, help="dataset manifest JSON")
    p_eval.add_argument("--noise", default=None, help="noise profile JSON")
    p_eval.add_argument("--out", default=None, help="CSV output path (default: stdout)")
    p_eval.add_argument("--rate", type=float, default=DEFAULT_TICK_RATE_HZ)
    p_eval.add_argument("--gate", type=float, default=DEFAULT_GATE_M)
    p_eval.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


def syngen_entry(argv=None) -> int:
    """Standalone ``syngen`` script equivalent to ``arenatrack syngen``."""
    parser = argparse.ArgumentParser(prog="syngen",
                                     description="generate an annotation dataset")
    _add_syngen_args(parser)
    args = parser.parse_args(argv)
    return cmd_syngen(args)


if __name__ == "__main__":
    raise SystemExit(main())
