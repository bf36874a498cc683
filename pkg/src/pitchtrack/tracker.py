"""Online player tracker combining Kalman motion, CMC, appearance and OC-style recovery."""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .assoc import build_cost_matrix, iou_cost_matrix, solve_assignment
from .config import AssociationWeights, KalmanParams, TrackerParams
from .core import BBox, Detection, Measurement, Tracklet, bbox_to_measurement, check_unit, normalize
from .errors import ConfigError, InputError
from .motion import (
    AffineMotion,
    KalmanState,
    ObservationHistory,
    apply_cmc,
    interpolate_measurements,
    kf_initiate,
    kf_predict,
    kf_update,
    nsa_scale,
    oru_reupdate,
)


class TrackState(enum.Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    LOST = "lost"
    REMOVED = "removed"


_ALLOWED = {
    TrackState.TENTATIVE: {TrackState.CONFIRMED, TrackState.REMOVED},
    TrackState.CONFIRMED: {TrackState.LOST},
    TrackState.LOST: {TrackState.CONFIRMED, TrackState.REMOVED},
    TrackState.REMOVED: set(),
}


@dataclass
class _Entry:
    frame: int
    bbox: BBox
    confidence: float
    embedding: Optional[np.ndarray]
    backfilled: bool


@dataclass(eq=False)
class Track:
    id: int
    kf: KalmanState
    history: ObservationHistory
    ema_embedding: Optional[np.ndarray] = None
    state: TrackState = TrackState.TENTATIVE
    hits: int = 1
    time_since_update: int = 0
    last_frame: int = 0
    last_box: Optional[BBox] = None
    last_conf: float = 0.0
    # filter state right after the most recent real update
    anchor: Optional[KalmanState] = None
    entries: list[_Entry] = field(default_factory=list)

    def transition(self, new: TrackState) -> None:
        if new is self.state:
            return
        if new not in _ALLOWED[self.state]:
            raise RuntimeError(f"illegal track transition {self.state.name} -> {new.name}")
        self.state = new

    def last_observation(self) -> tuple[int, Measurement]:
        return self.last_frame, bbox_to_measurement(self.last_box)


def update_embedding_ema(old: Optional[np.ndarray], e: np.ndarray, conf: float,
                         alpha_base: float = 0.9) -> np.ndarray:
    """Confidence-weighted EMA of unit appearance vectors.

    Low-confidence detections move the average less.
    """
    if not 0.0 <= conf <= 1.0:
        raise InputError(f"confidence must lie in [0, 1], got {conf}")
    if old is None:
        return e
    if old.shape != e.shape:
        raise ConfigError(f"embedding dimension mismatch: {old.shape} vs {e.shape}")
    alpha = alpha_base + (1.0 - alpha_base) * (1.0 - conf)
    return normalize(alpha * old + (1.0 - alpha) * e)


class Tracker:
    """Stateful per-sequence tracker; feed frames in increasing order via :meth:`step`."""

    def __init__(self, params: TrackerParams = TrackerParams(),
                 weights: AssociationWeights = AssociationWeights(),
                 kalman: KalmanParams = KalmanParams(),
                 embedding_dim: Optional[int] = None):
        self.params = params
        self.weights = weights
        self.kalman = kalman
        self.embedding_dim = embedding_dim
        self.tracks: list[Track] = []
        self.finished: list[Track] = []
        self.frame: Optional[int] = None
        self._ids = itertools.count(1)

    @property
    def live_tracks(self) -> list[Track]:
        return [t for t in self.tracks if t.state is not TrackState.REMOVED]

    def step(self, frame: int, detections: Sequence[Detection],
             cmc: Optional[AffineMotion] = None) -> list[tuple[int, BBox, float]]:
        if self.frame is not None and frame <= self.frame:
            raise InputError(f"frame {frame} is not after previous frame {self.frame}")
        for d in detections:
            if d.frame != frame:
                raise InputError(f"detection for frame {d.frame} passed at frame {frame}")
            if d.embedding is not None and self.embedding_dim is not None:
                check_unit(d.embedding, self.embedding_dim)
        self.frame = frame
        p = self.params
        dets = [d for d in detections if d.confidence >= p.det_min_conf]

        if cmc is not None and p.cmc and not cmc.is_identity():
            for t in self.tracks:
                self._apply_cmc(t, cmc)
        for t in self.tracks:
            self._predict(t)

        active = [t for t in self.tracks if t.state in (TrackState.CONFIRMED, TrackState.TENTATIVE)]
        cost = build_cost_matrix(active, dets, self._frame_weights(active, dets), self.kalman)
        matches, _, unmatched = solve_assignment(cost, p.match_threshold)
        matched_pairs = [(active[r], dets[c]) for r, c in matches]
        matched_tracks = {id(t) for t, _ in matched_pairs}

        lost = [t for t in self.tracks if t.state is TrackState.LOST]
        if lost and unmatched:
            rest = [dets[c] for c in unmatched]
            boxes = np.array([t.last_box.to_array() for t in lost])
            matches2, _, unmatched2 = solve_assignment(iou_cost_matrix(boxes, rest), p.match_threshold)
            for r, c in matches2:
                t = lost[r]
                self._reupdate(t, frame, rest[c])
                matched_pairs.append((t, rest[c]))
                matched_tracks.add(id(t))
            unmatched = [unmatched[c] for c in unmatched2]

        for t, d in matched_pairs:
            self._update(t, frame, d)

        for t in self.tracks:
            if id(t) in matched_tracks:
                continue
            t.time_since_update += 1
            if t.state is TrackState.TENTATIVE:
                t.transition(TrackState.REMOVED)
            elif t.state is TrackState.CONFIRMED:
                t.transition(TrackState.LOST)
            if t.state is TrackState.LOST and t.time_since_update > p.max_age:
                t.transition(TrackState.REMOVED)

        for c in unmatched:
            self._spawn(frame, dets[c])

        still = []
        for t in self.tracks:
            (self.finished if t.state is TrackState.REMOVED else still).append(t)
        self.tracks = still

        out = [(t.id, t.last_box, t.last_conf) for t in self.tracks
               if t.state is TrackState.CONFIRMED and t.time_since_update == 0]
        out.sort(key=lambda r: r[0])
        return out

    def _frame_weights(self, tracks: Sequence[Track], dets: Sequence[Detection]) -> AssociationWeights:
        # A frame with no appearance on either side would pay the neutral
        # appearance cost on every pair and sink all matches under threshold.
        w = self.weights
        if w.w_app > 0 and (w.w_iou > 0 or w.w_vel > 0):
            if all(d.embedding is None for d in dets) or all(t.ema_embedding is None for t in tracks):
                return replace(w, w_app=0.0)
        return w

    def _apply_cmc(self, t: Track, a: AffineMotion) -> None:
        t.kf = apply_cmc(t.kf, a)
        if t.anchor is not None:
            t.anchor = apply_cmc(t.anchor, a)
        t.history.transform(a)
        if t.last_box is not None:
            cx, cy = a.apply_points(np.array(t.last_box.center))
            s = a.scale
            t.last_box = BBox.from_center(float(cx), float(cy), t.last_box.w * s, t.last_box.h * s)

    def _predict(self, t: Track) -> None:
        if t.kf.mean[3] + t.kf.mean[7] <= 0:
            # keep the height positive when a track shrinks while coasting
            mean = t.kf.mean.copy()
            mean[7] = 0.0
            t.kf = KalmanState(mean, t.kf.covariance)
        t.kf = kf_predict(t.kf, self.kalman)
        if t.state is TrackState.LOST and t.anchor is not None:
            ref = np.trace(t.anchor.covariance) * self.params.covariance_cap
            cur = np.trace(t.kf.covariance)
            if cur > ref:
                t.kf = KalmanState(t.kf.mean, t.kf.covariance * (ref / cur))

    def _noise(self, d: Detection) -> float:
        return nsa_scale(d.confidence) if self.kalman.nsa else 1.0

    def _reupdate(self, t: Track, frame: int, d: Detection) -> None:
        if t.anchor is None:
            return
        z = bbox_to_measurement(d.bbox)
        virtual = interpolate_measurements(t.last_observation(), (frame, z))
        s = oru_reupdate(t.anchor, virtual, 1.0, self.kalman)
        t.kf = kf_predict(s, self.kalman)

    def _update(self, t: Track, frame: int, d: Detection) -> None:
        z = bbox_to_measurement(d.bbox)
        t.kf = kf_update(t.kf, z, self._noise(d), self.kalman)
        t.anchor = t.kf
        t.history.append(frame, z)
        t.last_frame, t.last_box, t.last_conf = frame, d.bbox, d.confidence
        t.hits += 1
        t.time_since_update = 0
        if d.embedding is not None:
            t.ema_embedding = update_embedding_ema(t.ema_embedding, d.embedding, d.confidence,
                                                   self.params.ema_alpha_base)
        if t.state is TrackState.TENTATIVE:
            if t.hits >= self.params.n_init:
                t.transition(TrackState.CONFIRMED)
                for e in t.entries:
                    e.backfilled = True
        elif t.state is TrackState.LOST:
            t.transition(TrackState.CONFIRMED)
        t.entries.append(_Entry(frame, d.bbox, d.confidence, d.embedding, False))

    def _spawn(self, frame: int, d: Detection) -> None:
        z = bbox_to_measurement(d.bbox)
        kf = kf_initiate(z, self.kalman)
        t = Track(id=next(self._ids), kf=kf, history=ObservationHistory(self.kalman.history_len),
                  ema_embedding=d.embedding, last_frame=frame, last_box=d.bbox,
                  last_conf=d.confidence, anchor=kf)
        t.history.append(frame, z)
        t.entries.append(_Entry(frame, d.bbox, d.confidence, d.embedding, False))
        if self.params.n_init <= 1:
            t.state = TrackState.CONFIRMED
        self.tracks.append(t)

    def tracklets(self, backfill: Optional[bool] = None) -> list[Tracklet]:
        """All boxes emitted so far, one tracklet per confirmed identity."""
        backfill = self.params.backfill if backfill is None else backfill
        out = []
        for t in sorted(self.finished + self.tracks, key=lambda t: t.id):
            if t.state is TrackState.TENTATIVE or (t.state is TrackState.REMOVED and t.hits < self.params.n_init):
                continue
            entries = [e for e in t.entries if backfill or not e.backfilled]
            if not entries:
                continue
            out.append(_to_tracklet(t.id, entries, t.ema_embedding))
        return out


def _to_tracklet(tid: int, entries: list[_Entry], ema: Optional[np.ndarray]) -> Tracklet:
    embs = None
    dims = {e.embedding.shape[0] for e in entries if e.embedding is not None}
    if dims:
        dim = dims.pop()
        embs = np.full((len(entries), dim), np.nan)
        for i, e in enumerate(entries):
            if e.embedding is not None:
                embs[i] = e.embedding
    return Tracklet(
        id=tid,
        frames=[e.frame for e in entries],
        boxes=[e.bbox.to_array() for e in entries],
        confs=[e.confidence for e in entries],
        embeddings=embs,
        ema_embedding=ema,
    )


def run_sequence(detections: Mapping[int, Sequence[Detection]] | Sequence[Sequence[Detection]],
                 cmc: Optional[Mapping[int, AffineMotion]] = None,
                 params: TrackerParams = TrackerParams(),
                 weights: AssociationWeights = AssociationWeights(),
                 kalman: KalmanParams = KalmanParams(),
                 embedding_dim: Optional[int] = None,
                 frames: Optional[Iterable[int]] = None) -> list[Tracklet]:
    """Track a whole sequence and return its tracklets, sorted by id.

    ``detections`` maps frame index to that frame's detections (or is a list
    indexed by frame). Frames missing from the mapping are treated as empty.
    """
    if not isinstance(detections, Mapping):
        detections = dict(enumerate(detections))
    cmc = cmc or {}
    if frames is None:
        keys = [k for k, v in detections.items() if v]
        if not keys:
            return []
        frames = range(min(keys), max(keys) + 1)
    tracker = Tracker(params, weights, kalman, embedding_dim)
    for f in frames:
        tracker.step(f, detections.get(f, ()), cmc.get(f))
    return tracker.tracklets()
