"""Command-line entry point: ``pitchtrack {track,post,ball,eval,synth}``.

Exit status is 0 on success, 1 on bad input or usage, 2 on internal errors.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path
from typing import Callable, Optional, Sequence

from . import pipeline
from .config import PipelineConfig, load_config
from .errors import ConfigError, InputError
from .io import SequenceBundle
from .synth import SynthScenario, synth_generate

log = logging.getLogger("pitchtrack")

EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


_D = PipelineConfig()

# (flag, config key, type, help); bool entries become --x/--no-x
_TRACKER_FLAGS = [
    ("--n-init", "n_init", int, f"matches needed to confirm a track (default {_D.tracker.n_init})"),
    ("--max-age", "max_age", int, f"frames a lost track survives (default {_D.tracker.max_age})"),
    ("--match-threshold", "match_threshold", float,
     f"maximum association cost (default {_D.tracker.match_threshold})"),
    ("--ema-alpha", "ema_alpha_base", float,
     f"appearance EMA momentum at full confidence (default {_D.tracker.ema_alpha_base})"),
    ("--det-min-conf", "det_min_conf", float,
     f"ignore detections below this confidence (default {_D.tracker.det_min_conf})"),
    ("--apply-cmc", "cmc", bool, "apply camera motion compensation when a CMC file is given (default on)"),
    ("--backfill", "backfill", bool, "emit boxes from a track's tentative frames (default on)"),
    ("--w-iou", "w_iou", float, f"IoU cost weight (default {_D.weights.w_iou})"),
    ("--w-app", "w_app", float, f"appearance cost weight (default {_D.weights.w_app})"),
    ("--w-vel", "w_vel", float, f"direction-consistency cost weight (default {_D.weights.w_vel})"),
    ("--gating-threshold", "gating_threshold", float,
     f"Mahalanobis gate (default {_D.kalman.gating_threshold})"),
    ("--nsa", "nsa", bool, "confidence-adaptive measurement noise (default on)"),
    ("--delta-t", "delta_t", int, f"frames spanned by the heading estimate (default {_D.kalman.delta_t})"),
]

_MERGE_FLAGS = [
    ("--boundary-margin", "boundary_margin", float,
     f"border band in px at 1080p; 0 disables boundary merging (default {_D.merge.boundary_margin:g})"),
    ("--max-gap-frames", "max_gap_frames", int,
     f"longest death-to-birth gap for boundary merging (default {_D.merge.max_gap_frames})"),
    ("--sim-threshold", "sim_threshold", float,
     f"per-frame cosine similarity threshold (default {_D.merge.sim_threshold})"),
    ("--sim-fraction", "sim_fraction", float,
     f"fraction of frames that must pass the threshold (default {_D.merge.sim_fraction})"),
    ("--link-max-gap", "link_max_gap", int, f"longest gap bridged by linking (default {_D.merge.link_max_gap})"),
    ("--link-max-dist", "link_max_dist", float,
     f"extrapolation distance in px at 1080p (default {_D.merge.link_max_dist:g})"),
    ("--gsi-tau", "gsi_tau", float, f"GP length scale in frames (default {_D.merge.gsi_tau:g})"),
    ("--gsi-max-gap", "gsi_max_gap", int, f"longest gap GSI fills (default {_D.merge.gsi_max_gap})"),
    ("--gsi-noise-var", "gsi_noise_var", float, f"GP observation noise, px^2 (default {_D.merge.gsi_noise_var:g})"),
]

_BALL_FLAGS = [
    ("--min-conf", "ball_min_conf", float, f"confidence floor (default {_D.ball.ball_min_conf})"),
    ("--window", "ball_window", int, f"smoothing window in frames, odd (default {_D.ball.ball_window})"),
    ("--order", "ball_poly_order", int, f"smoothing polynomial order (default {_D.ball.ball_poly_order})"),
    ("--max-dist", "ball_max_dist", float, f"gate distance in px (default {_D.ball.ball_max_dist:g})"),
    ("--refit-rounds", "ball_refit_rounds", int,
     f"outlier-rejection refits, 0 = single pass (default {_D.ball.ball_refit_rounds})"),
]

_COMMON_FLAGS = [
    ("--image-width", "image_width", int, f"frame width in px (default {_D.image_width})"),
    ("--image-height", "image_height", int, f"frame height in px (default {_D.image_height})"),
    ("--embedding-dim", "embedding_dim", int, f"appearance vector length (default {_D.embedding_dim})"),
]


def _add_flags(p: argparse.ArgumentParser, specs) -> None:
    for flag, key, typ, help_ in specs:
        if typ is bool:
            p.add_argument(flag, dest=f"cfg_{key}", action=argparse.BooleanOptionalAction,
                           default=None, help=help_)
        else:
            p.add_argument(flag, dest=f"cfg_{key}", type=typ, default=None, help=help_)


def _config_from_args(args) -> PipelineConfig:
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    return load_config(args.config, **overrides)


def _bundle_roots(path: Path) -> list[Path]:
    roots = SequenceBundle.discover(path)
    if not roots:
        raise InputError(f"{path}: no bundle.json found here or in sub-directories")
    return roots


def _over_bundles(fn: Callable[[Path], int], roots: list[Path], jobs: int) -> list[int]:
    if jobs > 1 and len(roots) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, roots))
    return [fn(r) for r in roots]


def cmd_track(args) -> int:
    cfg = _config_from_args(args)
    if args.bundle:
        roots = _bundle_roots(args.bundle)
        counts = _over_bundles(partial(pipeline.track_bundle, cfg=cfg), roots, args.jobs)
        for r, n in zip(roots, counts):
            log.info("%s: %d tracks", r, n)
        return EXIT_OK
    if not args.detections or not args.out:
        raise UsageError("track: --detections and --out are required without --bundle")
    emb_out = args.emb_out
    if emb_out is None and args.embeddings:
        emb_out = args.out.with_name(args.out.stem + "_emb.txt")
    n = pipeline.track_files(args.detections, args.out, cfg, args.embeddings,
                             args.cmc if cfg.tracker.cmc else None, emb_out)
    log.info("wrote %d tracks to %s", n, args.out)
    return EXIT_OK


def cmd_post(args) -> int:
    cfg = _config_from_args(args)
    stages = dict(gsi=args.gsi, link=args.link, boundary=args.boundary_merge)
    if args.bundle:
        roots = _bundle_roots(args.bundle)
        _over_bundles(partial(pipeline.post_bundle, cfg=cfg, **stages), roots, args.jobs)
        return EXIT_OK
    if not args.tracks or not args.out:
        raise UsageError("post: --tracks and --out are required without --bundle")
    n = pipeline.post_files(args.tracks, args.out, cfg, args.embeddings, **stages)
    log.info("wrote %d tracks to %s", n, args.out)
    return EXIT_OK


def cmd_ball(args) -> int:
    cfg = _config_from_args(args)
    if args.bundle:
        roots = _bundle_roots(args.bundle)
        _over_bundles(partial(pipeline.ball_bundle, cfg=cfg), roots, args.jobs)
        return EXIT_OK
    if not args.detections or not args.out:
        raise UsageError("ball: --detections and --out are required without --bundle")
    n = pipeline.ball_files(args.detections, args.out, cfg)
    log.info("wrote %d ball boxes to %s", n, args.out)
    return EXIT_OK


def _eval_pairs(args) -> dict[str, tuple[Path, Path]]:
    if args.bundle:
        pairs = {}
        for root in _bundle_roots(args.bundle):
            b = SequenceBundle.load(root)
            gt = b.path("ball_gt" if args.pred_name == pipeline.BALL else "gt")
            if gt is None:
                raise InputError(f"{root}: bundle has no ground truth")
            pairs[b.name if b.name not in pairs else str(root)] = (gt, root / args.pred_name)
        return pairs
    if not args.gt or not args.pred:
        raise UsageError("eval: --gt and --pred are required without --bundle")
    if args.gt.is_dir() != args.pred.is_dir():
        raise InputError("eval: --gt and --pred must both be files or both be directories")
    if args.gt.is_dir():
        names = sorted(p.name for p in args.gt.glob("*.txt"))
        if not names:
            raise InputError(f"{args.gt}: no .txt files")
        return {n: (args.gt / n, args.pred / n) for n in names}
    return {args.pred.stem: (args.gt, args.pred)}


def cmd_eval(args) -> int:
    report = pipeline.eval_files(_eval_pairs(args))
    kv, txt = report.write(args.out)
    sys.stdout.write(report.to_table())
    log.info("wrote %s and %s", kv, txt)
    return EXIT_OK


def cmd_synth(args) -> int:
    scenario = SynthScenario.from_file(args.scenario) if args.scenario else SynthScenario()
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
    bundle = synth_generate(scenario, args.out, name=args.name or args.out.name)
    log.info("wrote bundle %s", bundle.root)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pitchtrack", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def with_config(p):
        p.add_argument("--config", type=Path, help="key=value file; command-line flags take precedence")
        _add_flags(p, _COMMON_FLAGS)

    def with_bundle(p):
        p.add_argument("--bundle", type=Path, help="bundle directory, or a directory of bundles")
        p.add_argument("--jobs", type=int, default=1, help="sequences processed in parallel")

    p = sub.add_parser("track", help="online player tracking")
    p.add_argument("--detections", type=Path, help="MOT detection file")
    p.add_argument("--embeddings", type=Path, help="embedding sidecar for the detections")
    p.add_argument("--cmc", type=Path, help="camera motion sidecar")
    p.add_argument("--out", type=Path, help="MOT output file")
    p.add_argument("--emb-out", type=Path, help="per-track embedding sidecar (default: <out>_emb.txt)")
    with_bundle(p)
    with_config(p)
    _add_flags(p, _TRACKER_FLAGS)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("post", help="offline refinement: GSI, linking, boundary merge")
    p.add_argument("--tracks", type=Path, help="MOT tracker output")
    p.add_argument("--embeddings", type=Path, help="per-track embedding sidecar written by 'track'")
    p.add_argument("--out", type=Path, help="refined MOT output")
    p.add_argument("--gsi", action=argparse.BooleanOptionalAction, default=True, help="GSI stage")
    p.add_argument("--link", action=argparse.BooleanOptionalAction, default=True, help="linking stage")
    p.add_argument("--boundary-merge", action=argparse.BooleanOptionalAction, default=True,
                   help="boundary appearance-merge stage")
    with_bundle(p)
    with_config(p)
    _add_flags(p, _MERGE_FLAGS)
    p.add_argument("--ema-alpha", dest="cfg_ema_alpha_base", type=float, default=None,
                   help="EMA momentum used to rebuild track embeddings")
    p.set_defaults(func=cmd_post)

    p = sub.add_parser("ball", help="single-object ball filtering")
    p.add_argument("--detections", type=Path, help="MOT ball detection file")
    p.add_argument("--out", type=Path, help="MOT output file")
    with_bundle(p)
    with_config(p)
    _add_flags(p, _BALL_FLAGS)
    p.set_defaults(func=cmd_ball)

    p = sub.add_parser("eval", help="HOTA evaluation")
    p.add_argument("--gt", type=Path, help="ground-truth file or directory")
    p.add_argument("--pred", type=Path, help="prediction file or directory")
    p.add_argument("--bundle", type=Path, help="evaluate bundle output against its ground truth")
    p.add_argument("--pred-name", default=pipeline.REFINED,
                   help=f"prediction file inside each bundle (default {pipeline.REFINED})")
    p.add_argument("--out", type=Path, required=True, help="report prefix; writes <out>.kv and <out>.txt")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic bundle")
    p.add_argument("--scenario", type=Path, help="key=value scenario file")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--name", help="sequence name stored in the bundle")
    p.add_argument("--out", type=Path, required=True, help="output bundle directory")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INPUT
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"pitchtrack: error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_INPUT
    except (InputError, ConfigError, OSError) as exc:
        print(f"pitchtrack: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"pitchtrack: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
