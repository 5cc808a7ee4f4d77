"""``patchnet`` command line: train, track, flops, scale-sweep, selftest, make-seq."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

from . import selftest
from .correlation import CorrelationConfig
from .experiments import (DEFAULT_SCALES, SWEEP_HEADER, scale_sweep, sequence_summary,
                          synthetic_sequence)
from .fileio import (ConfigError, FormatError, list_frames, load_weights, parse_config,
                     read_groundtruth, read_ppm, save_weights, schema_of, write_csv,
                     write_sequence)
from .flops import ablation_rows, patch_size_sweep
from .kernels import InvalidArgument
from .matcher import Matcher
from .tracking import (KeyframePolicy, SessionError, TrackSession, avg_flops, groundtruth_oracle,
                       noisy_oracle)
from .training import TrainConfig, train

log = logging.getLogger("patchnet")

TRAIN_LOG_HEADER = ["step", "loc_loss", "bbox_loss", "total"]
TRACK_HEADER = ["frame", "object_id", "x_min", "y_min", "x_max", "y_max", "confidence",
                "was_keyframe"]
DEFAULT_ORACLE_FLOPS = 2.5e9


class CliError(Exception):
    pass


def _fmt(v: float) -> str:
    return repr(float(v))


def load_config(path: str | None) -> tuple[CorrelationConfig, TrainConfig]:
    """Read a flat key=value file holding any CorrelationConfig/TrainConfig field."""
    if path is None:
        return CorrelationConfig(), TrainConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        values = parse_config(text, schema_of(CorrelationConfig, TrainConfig))
    except ConfigError as exc:
        raise CliError(f"{path}: {exc}") from None
    corr_keys = {f.name for f in fields(CorrelationConfig)}
    try:
        cc = CorrelationConfig(**{k: v for k, v in values.items() if k in corr_keys})
        tc = TrainConfig(**{k: v for k, v in values.items() if k not in corr_keys})
    except InvalidArgument as exc:
        raise CliError(f"{path}: {exc}") from None
    return cc, tc


def _out_text(path, text: str):
    if path is None or str(path) == "-":
        sys.stdout.write(text)


def cmd_train(args) -> int:
    cc, tc = load_config(args.config)
    if args.seed is not None:
        tc = replace(tc, seed=args.seed)
    if args.steps is not None:
        tc = replace(tc, steps=args.steps)
    params, rows = train(cc, tc)
    save_weights(args.out, params)
    log_path = args.log or str(Path(args.out).with_suffix(".log.csv"))
    write_csv(log_path, TRAIN_LOG_HEADER,
              [[r["step"], _fmt(r["loc_loss"]), _fmt(r["bbox_loss"]), _fmt(r["total"])] for r in rows])
    if rows:
        log.info("trained %d steps: total loss %.4f -> %.4f", len(rows), rows[0]["total"],
                 rows[-1]["total"])
    return 0


def track_rows(history, matcher_flops: float, oracle_flops: float, gt):
    rows = []
    for rec in history:
        for obj, box in zip(rec.ids, rec.boxes):
            rows.append([rec.index, obj, _fmt(box.x_min), _fmt(box.y_min), _fmt(box.x_max),
                         _fmt(box.y_max), _fmt(box.score), int(rec.was_keyframe)])
    miss, mean_iou = sequence_summary(history, gt)
    cost = avg_flops(history, oracle_flops, matcher_flops)
    rows.append(["summary", "", f"miss_rate={miss!r}", f"mean_iou={mean_iou!r}",
                 f"avg_flops={cost!r}", f"reduction={oracle_flops / cost!r}", "", ""])
    return rows


def cmd_track(args) -> int:
    try:
        params = load_weights(args.weights)
        frames = list_frames(args.seq)
    except (FormatError, OSError) as exc:
        raise CliError(str(exc)) from None
    gt = read_groundtruth(Path(args.seq) / "groundtruth.txt", len(frames))
    policy = KeyframePolicy(args.policy, args.interval, args.conf_threshold, args.max_inter)
    matcher = Matcher(params)
    oracle = (noisy_oracle(gt, args.oracle_noise, args.seed or 0) if args.oracle_noise
              else groundtruth_oracle(gt))
    session = TrackSession(matcher, oracle, policy)
    for path in frames:
        session.step(read_ppm(path))
    rows = track_rows(session.history, matcher.flops(), args.oracle_flops, gt)
    _out_text(args.out, write_csv(args.out, TRACK_HEADER, rows))
    return 0


FLOPS_HEADER = ["table", "name", "K", "N", "template_size", "search_size", "correlation",
                "aggregation", "fft", "total"]


def flops_rows(cc: CorrelationConfig):
    """Ablation rows at the configured geometry, then the patch-size sweep."""
    rows = []
    for name, corr, agg, fft, total in ablation_rows(cc):
        rows.append(["ablation", name, cc.K, cc.N, cc.template_size, cc.search_size,
                     corr, agg, fft, total])
    for K, N, tsz, ssz, corr, agg, fft, total in patch_size_sweep(cc):
        rows.append(["patch-size", f"K={K}", K, N, tsz, ssz, corr, agg, fft, total])
    return rows


def cmd_flops(args) -> int:
    cc, _ = load_config(args.config)
    _out_text(args.out, write_csv(args.out, FLOPS_HEADER, flops_rows(cc)))
    return 0


def cmd_scale_sweep(args) -> int:
    try:
        params = load_weights(args.weights)
    except (FormatError, OSError) as exc:
        raise CliError(str(exc)) from None
    scales = tuple(float(s) for s in args.scales.split(",")) if args.scales else DEFAULT_SCALES
    rows = scale_sweep(params, args.n, scales, seed=args.seed if args.seed is not None else 1234)
    rows = [[i, _fmt(s), m, _fmt(e)] for i, s, m, e in rows]
    _out_text(args.out, write_csv(args.out, SWEEP_HEADER, rows))
    return 0


def cmd_selftest(args) -> int:
    ok = selftest.run(print, kernel_instances=args.instances,
                      grad_seeds=tuple(range(args.grad_seeds)))
    return 0 if ok else 1


def cmd_make_seq(args) -> int:
    frames, gt = synthetic_sequence(args.seed or 0, args.frames, args.objects, static=args.static,
                                    speed=args.speed, zoom=args.zoom)
    write_sequence(args.out, frames, gt)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="patchnet", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="verb", required=True)

    t = sub.add_parser("train", help="train on synthetic pairs, write weights and a CSV log")
    t.add_argument("--config", help="key=value file (CorrelationConfig and TrainConfig fields)")
    t.add_argument("--out", required=True, help="weight file to write")
    t.add_argument("--log", help="training log CSV (default: <out>.log.csv)")
    t.add_argument("--seed", type=int)
    t.add_argument("--steps", type=int, help="override the configured step count")
    t.set_defaults(func=cmd_train)

    k = sub.add_parser("track", help="skip-frame tracking over a frame directory")
    k.add_argument("--weights", required=True)
    k.add_argument("--seq", required=True, help="directory with frame_%%06d.ppm and groundtruth.txt")
    k.add_argument("--policy", choices=("fixed", "online"), default="fixed")
    k.add_argument("--interval", type=int, default=5)
    k.add_argument("--conf-threshold", type=float, default=None)
    k.add_argument("--max-inter", type=int, default=5)
    k.add_argument("--oracle-flops", type=float, default=DEFAULT_ORACLE_FLOPS)
    k.add_argument("--oracle-noise", type=float, default=0.0,
                   help="std-dev (pixels) of jitter added to keyframe detections")
    k.add_argument("--seed", type=int)
    k.add_argument("--out", help="results CSV (default: stdout)")
    k.set_defaults(func=cmd_track)

    f = sub.add_parser("flops", help="analytic FLOP report and patch-size sweep")
    f.add_argument("--config")
    f.add_argument("--out")
    f.set_defaults(func=cmd_flops)

    s = sub.add_parser("scale-sweep", help="center error vs scale, patch matching vs full template")
    s.add_argument("--weights", required=True)
    s.add_argument("--n", type=int, default=100, help="number of synthetic objects")
    s.add_argument("--scales", help="comma-separated scale factors")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_scale_sweep)

    st = sub.add_parser("selftest", help="oracle-equivalence and gradient checks")
    st.add_argument("--instances", type=int, default=1000)
    st.add_argument("--grad-seeds", type=int, default=5)
    st.set_defaults(func=cmd_selftest)

    m = sub.add_parser("make-seq", help="write a synthetic PPM sequence with groundtruth")
    m.add_argument("--out", required=True)
    m.add_argument("--frames", type=int, default=30)
    m.add_argument("--objects", type=int, default=1)
    m.add_argument("--speed", type=float, default=0.02)
    m.add_argument("--zoom", type=float, default=0.01)
    m.add_argument("--static", action="store_true")
    m.add_argument("--seed", type=int)
    m.set_defaults(func=cmd_make_seq)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, SessionError, InvalidArgument, FormatError) as exc:
        print(f"patchnet {args.verb}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
