"""Single-object ball filtering over per-frame detection lists."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .config import BallParams
from .core import BBox, Detection
from .errors import InputError


class BallSource(enum.Enum):
    DETECTED = "detected"
    INTERPOLATED = "interpolated"


@dataclass
class BallTrack:
    frames: list[int] = field(default_factory=list)
    boxes: list[BBox] = field(default_factory=list)
    sources: list[BallSource] = field(default_factory=list)
    confs: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.frames)

    def __bool__(self) -> bool:
        return bool(self.frames)

    def centers(self) -> np.ndarray:
        return np.array([b.center for b in self.boxes]).reshape(-1, 2)


def _frames_dict(frames) -> dict[int, Sequence[Detection]]:
    if isinstance(frames, Mapping):
        return dict(frames)
    return dict(enumerate(frames))


def select_candidates(frames: Mapping[int, Sequence[Detection]] | Sequence[Sequence[Detection]],
                      min_conf: float = 0.05) -> dict[int, Optional[Detection]]:
    """Most confident detection per frame at or above ``min_conf``; input order breaks ties."""
    out: dict[int, Optional[Detection]] = {}
    for f, dets in sorted(_frames_dict(frames).items()):
        best = None
        for d in dets:
            if d.confidence >= min_conf and (best is None or d.confidence > best.confidence):
                best = d
        out[f] = best
    return out


def smooth_centers(points: Sequence[tuple[int, float, float]], window: int = 51,
                   order: int = 3, at: Optional[Sequence[int]] = None
                   ) -> list[tuple[int, float, float]]:
    """Centered sliding least-squares polynomial smoothing.

    Each point is replaced by the value at its frame of a polynomial fitted
    to the points within ``(window - 1) / 2`` frames of it. Windows near the
    ends or across gaps simply hold fewer points; the order drops when a
    window holds too few to support it. ``at`` evaluates the same local fits
    at other frames instead; a frame whose window is empty is omitted.
    """
    if window < 1 or window % 2 != 1:
        raise InputError(f"window must be a positive odd number, got {window}")
    if order < 0:
        raise InputError(f"order must be non-negative, got {order}")
    if len(points) < 2:
        raise InputError("smoothing needs at least 2 points")
    pts = sorted(points, key=lambda p: p[0])
    f = np.array([p[0] for p in pts], dtype=float)
    if np.any(np.diff(f) <= 0):
        raise InputError("frames must be unique")
    xy = np.array([[p[1], p[2]] for p in pts], dtype=float)
    targets = f if at is None else np.asarray(sorted(at), dtype=float)
    half = (window - 1) // 2
    lo = np.searchsorted(f, targets - half, side="left")
    hi = np.searchsorted(f, targets + half, side="right")
    out = []
    for i, fi in enumerate(targets):
        sl = slice(lo[i], hi[i])
        n = hi[i] - lo[i]
        if n == 0:
            continue
        deg = min(order, n - 1)
        # centre and scale the abscissa so the fit is well conditioned; the
        # smoothed value is then the constant coefficient
        u = (f[sl] - fi) / max(half, 1)
        V = np.vander(u, deg + 1, increasing=True)
        base = xy[sl].mean(axis=0)
        coef, *_ = np.linalg.lstsq(V, xy[sl] - base, rcond=None)
        out.append((int(fi), float(base[0] + coef[0, 0]), float(base[1] + coef[0, 1])))
    return out


def gate_detections(cands: Mapping[int, Sequence[Detection] | Detection | None],
                    smoothed: Mapping[int, tuple[float, float]] | Sequence[tuple[int, float, float]],
                    max_dist: float = 100.0) -> list[Detection]:
    """Per frame, keep the detection nearest the smoothed point if strictly closer than ``max_dist``.

    ``cands`` values may be a single detection, ``None`` or a list of
    detections for that frame.
    """
    if not isinstance(smoothed, Mapping):
        smoothed = {int(f): (x, y) for f, x, y in smoothed}
    kept = []
    for f in sorted(cands):
        c = cands[f]
        if c is None:
            continue
        dets = [c] if isinstance(c, Detection) else list(c)
        if not dets:
            continue
        if f not in smoothed:
            raise InputError(f"no smoothed point for frame {f}")
        sx, sy = smoothed[f]
        best, best_d = None, np.inf
        for d in dets:
            cx, cy = d.bbox.center
            dist = float(np.hypot(cx - sx, cy - sy))
            if dist < best_d:
                best, best_d = d, dist
        if best_d < max_dist:
            kept.append(best)
    return kept


def interpolate_track(retained: Sequence[Detection]) -> BallTrack:
    """Linearly fill the frames between retained detections. No extrapolation."""
    track = BallTrack()
    if not retained:
        return track
    dets = sorted(retained, key=lambda d: d.frame)
    for prev, nxt in zip(dets[:-1], dets[1:]):
        if nxt.frame == prev.frame:
            raise InputError(f"two retained detections at frame {prev.frame}")
    for i, d in enumerate(dets):
        track.frames.append(d.frame)
        track.boxes.append(d.bbox)
        track.sources.append(BallSource.DETECTED)
        track.confs.append(d.confidence)
        if i + 1 == len(dets):
            break
        nxt = dets[i + 1]
        (c0x, c0y), (c1x, c1y) = d.bbox.center, nxt.bbox.center
        span = nxt.frame - d.frame
        for k in range(1, span):
            t = k / span
            w = d.bbox.w + (nxt.bbox.w - d.bbox.w) * t
            h = d.bbox.h + (nxt.bbox.h - d.bbox.h) * t
            cx = c0x + (c1x - c0x) * t
            cy = c0y + (c1y - c0y) * t
            track.frames.append(d.frame + k)
            track.boxes.append(BBox.from_center(cx, cy, w, h))
            track.sources.append(BallSource.INTERPOLATED)
            track.confs.append(d.confidence + (nxt.confidence - d.confidence) * t)
    return track


def ball_pipeline(frames: Mapping[int, Sequence[Detection]] | Sequence[Sequence[Detection]],
                  cfg: BallParams = BallParams()) -> BallTrack:
    frames = _frames_dict(frames)
    cands = select_candidates(frames, cfg.ball_min_conf)
    points = [(f, *d.bbox.center) for f, d in cands.items() if d is not None]
    if not points:
        return BallTrack()
    if len(points) == 1:
        return interpolate_track([d for d in cands.values() if d is not None])
    pool = {f: [d for d in frames[f] if d.confidence >= cfg.ball_min_conf] for f, d in cands.items()
            if d is not None}
    points = robust_fit_points(points, cfg)
    smoothed = smooth_centers(points, cfg.ball_window, cfg.ball_poly_order, at=sorted(pool))
    covered = {f for f, _, _ in smoothed}
    retained = gate_detections({f: pool[f] for f in pool if f in covered}, smoothed, cfg.ball_max_dist)
    return interpolate_track(retained)


def robust_fit_points(points: Sequence[tuple[int, float, float]], cfg: BallParams = BallParams()
                      ) -> list[tuple[int, float, float]]:
    """Drop outlying candidates from the smoothing input.

    Each round removes every point that sits at least ``ball_max_dist`` from
    its own smoothed value and is the worst such point within its window,
    then refits. Points dragged off by a neighbouring outlier lie closer
    than the outlier itself, so they survive the round it is removed in.
    """
    pts = sorted(points)
    half = (cfg.ball_window - 1) // 2
    for _ in range(cfg.ball_refit_rounds):
        if len(pts) < 3:
            break
        sm = smooth_centers(pts, cfg.ball_window, cfg.ball_poly_order)
        f = np.array([p[0] for p in pts])
        r = np.hypot(*(np.array([p[1:] for p in pts]) - np.array([q[1:] for q in sm])).T)
        lo = np.searchsorted(f, f - half, side="left")
        hi = np.searchsorted(f, f + half, side="right")
        drop = {i for i in range(len(pts))
                if r[i] >= cfg.ball_max_dist and r[i] >= r[lo[i]:hi[i]].max()}
        if not drop:
            break
        pts = [p for i, p in enumerate(pts) if i not in drop]
    return pts
