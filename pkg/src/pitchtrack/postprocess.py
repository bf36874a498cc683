"""Offline refinement of tracker output.

Three stages, always applied in this order when enabled:

1. ``gsi_smooth``: fill short gaps and smooth each tracklet with Gaussian
   process regression.
2. ``link_tracklets``: join fragments whose motion lines up.
3. ``boundary_merge``: join fragments that die and are reborn away from the
   image border and look alike.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import scipy.linalg

from .config import MergeConfig
from .core import Tracklet, normalize

log = logging.getLogger(__name__)

_COORDS = 4  # cx, cy, w, h


def _to_cxcywh(boxes: np.ndarray) -> np.ndarray:
    out = boxes.astype(float).copy()
    out[:, :2] += out[:, 2:] / 2.0
    return out


def _to_xywh(vals: np.ndarray) -> np.ndarray:
    out = vals.astype(float).copy()
    out[:, :2] -= out[:, 2:] / 2.0
    return out


def gp_regress(x_train: np.ndarray, y_train: np.ndarray, x_eval: np.ndarray,
               tau: float, noise_var: float) -> np.ndarray:
    """Posterior mean of a GP with linear mean and RBF kernel of length ``tau``.

    The linear trend is removed by least squares; the kernel amplitude is the
    residual variance. Raises ``np.linalg.LinAlgError`` if the kernel system
    cannot be factorised.
    """
    x_train = np.asarray(x_train, dtype=float)
    y_train = np.asarray(y_train, dtype=float)
    x_eval = np.asarray(x_eval, dtype=float)
    if len(x_train) >= 2:
        slope, intercept = np.polyfit(x_train, y_train, 1)
    else:
        slope, intercept = 0.0, float(y_train[0])
    resid = y_train - (slope * x_train + intercept)
    trend_eval = slope * x_eval + intercept
    amp = float(np.var(resid))
    if amp <= 1e-12:
        return trend_eval
    d_tt = x_train[:, None] - x_train[None, :]
    K = amp * np.exp(-0.5 * (d_tt / tau) ** 2)
    K[np.diag_indices_from(K)] += noise_var
    chol = scipy.linalg.cho_factor(K, lower=True)
    weights = scipy.linalg.cho_solve(chol, resid)
    d_et = x_eval[:, None] - x_train[None, :]
    K_et = amp * np.exp(-0.5 * (d_et / tau) ** 2)
    out = trend_eval + K_et @ weights
    if not np.all(np.isfinite(out)):
        raise np.linalg.LinAlgError("non-finite GP posterior")
    return out


def _fill_linear(frames: np.ndarray, values: np.ndarray, full: np.ndarray) -> np.ndarray:
    values = values.reshape(len(frames), -1)
    return np.stack([np.interp(full, frames, values[:, k]) for k in range(values.shape[1])], axis=1)


def _smooth_piece(t: Tracklet, tid: int, tau: float, noise_var: float) -> Tracklet:
    if len(t) == 1:
        return Tracklet(tid, t.frames.copy(), t.boxes.copy(), t.confs.copy(),
                        None if t.embeddings is None else t.embeddings.copy(), t.ema_embedding)
    full = np.arange(t.start, t.end + 1)
    vals = _fill_linear(t.frames, _to_cxcywh(t.boxes), full)
    smoothed = np.empty_like(vals)
    for k in range(_COORDS):
        try:
            smoothed[:, k] = gp_regress(full, vals[:, k], full, tau, noise_var)
        except np.linalg.LinAlgError:
            log.warning("tracklet %d: GP regression failed on coordinate %d, using linear fill", tid, k)
            smoothed[:, k] = vals[:, k]
    smoothed[:, 2:] = np.maximum(smoothed[:, 2:], 1e-3)
    confs = np.interp(full, t.frames, t.confs)
    embs = None
    if t.embeddings is not None:
        embs = np.full((len(full), t.embeddings.shape[1]), np.nan)
        embs[t.frames - t.start] = t.embeddings
    return Tracklet(tid, full, _to_xywh(smoothed), confs, embs, t.ema_embedding)


def _split_points(frames: np.ndarray, max_gap: int) -> list[int]:
    missing = np.diff(frames) - 1
    return (np.nonzero(missing > max_gap)[0] + 1).tolist()


def gsi_smooth(t: Tracklet, tau: float = 10.0, max_gap: int = 20, noise_var: float = 1.0,
               next_id: Optional[Callable[[], int]] = None) -> list[Tracklet]:
    """Interpolate and smooth one tracklet.

    Gaps longer than ``max_gap`` frames split the tracklet; the longest piece
    keeps the id and the others draw fresh ids from ``next_id``.
    """
    cuts = _split_points(t.frames, max_gap)
    bounds = [0, *cuts, len(t)]
    pieces = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        pieces.append(Tracklet(
            t.id, t.frames[lo:hi], t.boxes[lo:hi], t.confs[lo:hi],
            None if t.embeddings is None else t.embeddings[lo:hi], t.ema_embedding))
    if len(pieces) > 1 and next_id is None:
        raise ValueError(f"tracklet {t.id} must be split but no id allocator was given")
    keeper = max(range(len(pieces)), key=lambda i: (len(pieces[i]), -i))
    out = []
    for i, piece in enumerate(pieces):
        tid = t.id if i == keeper else next_id()
        out.append(_smooth_piece(piece, tid, tau, noise_var))
    return out


def _id_allocator(ts: Iterable[Tracklet]) -> Callable[[], int]:
    start = max((t.id for t in ts), default=0) + 1
    counter = itertools.count(start)
    return lambda: next(counter)


def gsi_all(ts: Sequence[Tracklet], cfg: MergeConfig = MergeConfig()) -> list[Tracklet]:
    alloc = _id_allocator(ts)
    out = []
    for t in sorted(ts, key=lambda t: t.id):
        out.extend(gsi_smooth(t, cfg.gsi_tau, cfg.gsi_max_gap, cfg.gsi_noise_var, alloc))
    return sorted(out, key=lambda t: t.id)


def bridge(a: Tracklet, b: Tracklet, tid: int, tau: float = 10.0,
           noise_var: float = 1.0) -> Tracklet:
    """Concatenate ``a`` and a later ``b``, regressing boxes for the frames between them.

    Existing boxes are kept as they are; only the gap is synthesised, from
    a GP fitted to the frames on both sides of it.
    """
    gap = np.arange(a.end + 1, b.start)
    parts_f = [a.frames, gap, b.frames]
    if len(gap):
        ctx = max(2, int(round(2 * tau)))
        fa, fb = a.frames[-ctx:], b.frames[:ctx]
        ctx_f = np.concatenate([fa, fb])
        ctx_v = np.concatenate([_to_cxcywh(a.boxes[-ctx:]), _to_cxcywh(b.boxes[:ctx])])
        fill = np.empty((len(gap), _COORDS))
        for k in range(_COORDS):
            try:
                fill[:, k] = gp_regress(ctx_f, ctx_v[:, k], gap, tau, noise_var)
            except np.linalg.LinAlgError:
                log.warning("bridge %d: GP failed on coordinate %d, using linear fill", tid, k)
                fill[:, k] = np.interp(gap, ctx_f, ctx_v[:, k])
        fill[:, 2:] = np.maximum(fill[:, 2:], 1e-3)
        gap_boxes = _to_xywh(fill)
        gap_conf = np.interp(gap, [a.end, b.start], [a.confs[-1], b.confs[0]])
    else:
        gap_boxes = np.empty((0, 4))
        gap_conf = np.empty(0)
    embs = None
    if a.embeddings is not None or b.embeddings is not None:
        dim = (a.embeddings if a.embeddings is not None else b.embeddings).shape[1]
        rows = []
        for t in (a, None, b):
            if t is None:
                rows.append(np.full((len(gap), dim), np.nan))
            elif t.embeddings is None:
                rows.append(np.full((len(t), dim), np.nan))
            else:
                rows.append(t.embeddings)
        embs = np.concatenate(rows)
    ema = b.ema_embedding if b.ema_embedding is not None else a.ema_embedding
    return Tracklet(tid, np.concatenate(parts_f), np.concatenate([a.boxes, gap_boxes, b.boxes]),
                    np.concatenate([a.confs, gap_conf, b.confs]), embs, ema)


def extrapolate_center(t: Tracklet, frame: int, window: int = 10) -> np.ndarray:
    """Constant-velocity projection of ``t``'s center to ``frame``."""
    c = t.centers()[-window:]
    f = t.frames[-window:].astype(float)
    if len(f) < 2:
        return c[-1].copy()
    vel = np.array([np.polyfit(f, c[:, k], 1)[0] for k in range(2)])
    return c[-1] + vel * (frame - t.end)


def _merge_pass(ts: list[Tracklet], pairs: list[tuple[tuple, int, int]], cfg: MergeConfig,
                merges: Optional[list]) -> tuple[list[Tracklet], bool]:
    if not pairs:
        return ts, False
    by_id = {t.id: t for t in ts}
    used: set[int] = set()
    merged_any = False
    for _, aid, bid in sorted(pairs):
        if aid in used or bid in used:
            continue
        used.update((aid, bid))
        a, b = by_id.pop(aid), by_id.pop(bid)
        by_id[aid] = bridge(a, b, aid, cfg.gsi_tau, cfg.gsi_noise_var)
        if merges is not None:
            merges.append((aid, bid))
        merged_any = True
    return sorted(by_id.values(), key=lambda t: t.id), merged_any


def link_tracklets(ts: Sequence[Tracklet], cfg: MergeConfig = MergeConfig(),
                   merges: Optional[list[tuple[int, int]]] = None) -> list[Tracklet]:
    """Appearance-free linking of fragments by constant-velocity extrapolation."""
    ts = sorted(ts, key=lambda t: t.id)
    while True:
        pairs = []
        for a in ts:
            for b in ts:
                gap = b.start - a.end
                if b.id == a.id or gap <= 0 or gap > cfg.link_max_gap:
                    continue
                pred = extrapolate_center(a, b.start, cfg.link_window)
                dist = float(np.hypot(*(pred - b.centers()[0])))
                if dist <= cfg.link_max_dist:
                    pairs.append(((dist, a.id, b.id), a.id, b.id))
        ts, changed = _merge_pass(ts, pairs, cfg, merges)
        if not changed:
            return ts


def is_interior(box: np.ndarray, image: tuple[float, float], margin: float) -> bool:
    x, y, w, h = box
    W, H = image
    return x >= margin and y >= margin and x + w <= W - margin and y + h <= H - margin


def _reference_embedding(t: Tracklet) -> Optional[np.ndarray]:
    if t.ema_embedding is not None:
        return t.ema_embedding
    embs = t.frame_embeddings()
    if len(embs) == 0:
        return None
    try:
        return normalize(embs.mean(axis=0))
    except ValueError:
        return None


@dataclass
class MergeStats:
    skipped_no_embedding: int = 0


def boundary_merge(ts: Sequence[Tracklet], image: tuple[float, float],
                   cfg: MergeConfig = MergeConfig(),
                   merges: Optional[list[tuple[int, int]]] = None,
                   stats: Optional[MergeStats] = None) -> list[Tracklet]:
    """Merge tracklets that end and begin away from the image border.

    A death at least ``boundary_margin`` pixels from every edge is matched to
    an interior birth within ``max_gap_frames`` if enough of the newcomer's
    frames have appearance similarity ``>= sim_threshold`` to the dead
    tracklet's averaged embedding. A margin of zero disables the stage.
    """
    ts = sorted(ts, key=lambda t: t.id)
    if cfg.boundary_margin <= 0:
        return ts
    stats = stats if stats is not None else MergeStats()
    margin = cfg.boundary_margin
    while True:
        pairs = []
        births = [b for b in ts if is_interior(b.boxes[0], image, margin)]
        for a in ts:
            if not is_interior(a.boxes[-1], image, margin):
                continue
            ref = _reference_embedding(a)
            for b in births:
                gap = b.start - a.end
                if b.id == a.id or gap <= 0 or gap > cfg.max_gap_frames:
                    continue
                cand = b.frame_embeddings()
                if len(cand) == 0 and b.ema_embedding is not None:
                    cand = b.ema_embedding[None, :]
                if ref is None or len(cand) == 0:
                    stats.skipped_no_embedding += 1
                    log.warning("boundary merge: no embeddings for pair %d -> %d", a.id, b.id)
                    continue
                sims = np.clip(cand @ ref, -1.0, 1.0)
                frac = float(np.mean(sims >= cfg.sim_threshold))
                if frac >= cfg.sim_fraction:
                    pairs.append(((-float(sims.mean()), a.id, b.id), a.id, b.id))
        ts, changed = _merge_pass(ts, pairs, cfg, merges)
        if not changed:
            return ts


def refine(ts: Sequence[Tracklet], image: tuple[float, float], cfg: MergeConfig = MergeConfig(),
           gsi: bool = True, link: bool = True, boundary: bool = True) -> list[Tracklet]:
    """Run the enabled stages in their fixed order: GSI, linking, boundary merge."""
    cfg = cfg.scaled(image[1])
    out = sorted(ts, key=lambda t: t.id)
    if gsi:
        out = gsi_all(out, cfg)
    if link:
        out = link_tracklets(out, cfg)
    if boundary:
        out = boundary_merge(out, image, cfg)
    return out
