"""File-level drivers for each pipeline stage, shared by the CLI."""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

from .ball import ball_pipeline
from .config import PipelineConfig
from .core import ObjectClass
from .io import (
    SequenceBundle,
    load_detections,
    parse_cmc,
    parse_embeddings,
    parse_mot_file,
    records_to_frames,
    records_to_tracklets,
    tracklet_embeddings,
    write_embeddings,
    write_mot_file,
)
from .metrics import EvalReport, compute_hota_multi
from .postprocess import refine
from .tracker import run_sequence

log = logging.getLogger(__name__)

TRACKS = "tracks.txt"
TRACK_EMB = "tracks_emb.txt"
REFINED = "refined.txt"
BALL = "ball.txt"


def _report_warnings(warnings: list[str]) -> None:
    for w in warnings[:20]:
        log.warning(w)
    if len(warnings) > 20:
        log.warning("... %d more warnings", len(warnings) - 20)


def track_files(detections: Path, out: Path, cfg: PipelineConfig,
                embeddings: Optional[Path] = None, cmc: Optional[Path] = None,
                emb_out: Optional[Path] = None, num_frames: Optional[int] = None) -> int:
    """Run the online tracker; returns the number of output tracklets."""
    warnings: list[str] = []
    emb = parse_embeddings(embeddings, cfg.embedding_dim, warnings) if embeddings else None
    dets = load_detections(detections, emb, ObjectClass.PLAYER, warnings)
    motion = parse_cmc(cmc) if cmc else None
    _report_warnings(warnings)
    frames = range(num_frames) if num_frames else None
    ts = run_sequence(dets, motion, cfg.tracker, cfg.weights, cfg.kalman,
                      embedding_dim=cfg.embedding_dim if emb else None, frames=frames)
    write_mot_file(ts, out)
    if emb_out is not None:
        write_embeddings(tracklet_embeddings(ts), emb_out)
    return len(ts)


def post_files(tracks: Path, out: Path, cfg: PipelineConfig, embeddings: Optional[Path] = None,
               gsi: bool = True, link: bool = True, boundary: bool = True) -> int:
    warnings: list[str] = []
    emb = parse_embeddings(embeddings, cfg.embedding_dim, warnings) if embeddings else None
    ts = records_to_tracklets(parse_mot_file(tracks, warnings), emb, cfg.tracker.ema_alpha_base)
    _report_warnings(warnings)
    refined = refine(ts, (cfg.image_width, cfg.image_height), cfg.merge, gsi=gsi, link=link,
                     boundary=boundary)
    write_mot_file(refined, out)
    return len(refined)


def ball_files(detections: Path, out: Path, cfg: PipelineConfig) -> int:
    warnings: list[str] = []
    dets = load_detections(detections, None, ObjectClass.BALL, warnings)
    _report_warnings(warnings)
    track = ball_pipeline(dets, cfg.ball)
    write_mot_file(track, out)
    return len(track)


def eval_files(pairs: dict[str, tuple[Path, Path]]) -> EvalReport:
    data = {}
    for name, (gt, pred) in pairs.items():
        data[name] = (records_to_frames(parse_mot_file(gt)), records_to_frames(parse_mot_file(pred)))
    return compute_hota_multi(data)


def bundle_config(bundle: SequenceBundle, cfg: PipelineConfig) -> PipelineConfig:
    return cfg.with_overrides({"image_width": bundle.image_width,
                               "image_height": bundle.image_height,
                               "embedding_dim": bundle.embedding_dim})


def track_bundle(root: Path, cfg: PipelineConfig) -> int:
    b = SequenceBundle.load(root)
    cfg = bundle_config(b, cfg)
    return track_files(b.path("detections"), b.root / TRACKS, cfg, b.path("embeddings"),
                       b.path("cmc") if cfg.tracker.cmc else None, b.root / TRACK_EMB,
                       b.num_frames or None)


def post_bundle(root: Path, cfg: PipelineConfig, gsi: bool = True, link: bool = True,
                boundary: bool = True) -> int:
    b = SequenceBundle.load(root)
    cfg = bundle_config(b, cfg)
    emb = b.root / TRACK_EMB
    return post_files(b.root / TRACKS, b.root / REFINED, cfg, emb if emb.is_file() else None,
                      gsi, link, boundary)


def ball_bundle(root: Path, cfg: PipelineConfig) -> int:
    b = SequenceBundle.load(root)
    if b.path("ball_detections") is None:
        raise FileNotFoundError(f"{root}: bundle has no ball detections")
    return ball_files(b.path("ball_detections"), b.root / BALL, bundle_config(b, cfg))
