"""Fused association costs and the frame-level assignment solve."""
from __future__ import annotations

from typing import Optional, Protocol, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .config import AssociationWeights, KalmanParams
from .core import Detection, bbox_to_measurement, iou_matrix
from .errors import ConfigError, NumericalError
from .motion import KalmanState, ObservationHistory, gating_distances, velocity_direction_cost


class AssociableTrack(Protocol):
    kf: KalmanState
    ema_embedding: Optional[np.ndarray]
    history: ObservationHistory


def predicted_boxes(tracks: Sequence[AssociableTrack]) -> np.ndarray:
    out = np.empty((len(tracks), 4))
    for i, t in enumerate(tracks):
        mean = t.kf.mean
        h = max(mean[3], 1e-6)
        w = max(mean[2] * h, 1e-6)
        out[i] = (mean[0] - w / 2.0, mean[1] - h / 2.0, w, h)
    return out


def detection_boxes(detections: Sequence[Detection]) -> np.ndarray:
    if not detections:
        return np.empty((0, 4))
    return np.array([d.bbox.to_array() for d in detections])


def build_cost_matrix(tracks: Sequence[AssociableTrack], detections: Sequence[Detection],
                      weights: AssociationWeights = AssociationWeights(),
                      kalman: KalmanParams = KalmanParams()) -> np.ndarray:
    """Rows are tracks, columns detections; gated pairs are ``inf``."""
    n, m = len(tracks), len(detections)
    cost = np.zeros((n, m))
    if n == 0 or m == 0:
        return cost
    det_boxes = detection_boxes(detections)
    ious = iou_matrix(predicted_boxes(tracks), det_boxes)
    meas = [bbox_to_measurement(d.bbox) for d in detections]
    meas_arr = np.array(meas)

    if weights.w_iou > 0:
        cost += weights.w_iou * (1.0 - ious)

    if weights.w_app > 0:
        app = np.full((n, m), 0.5)
        det_emb_idx = [j for j, d in enumerate(detections) if d.embedding is not None]
        trk_emb_idx = [i for i, t in enumerate(tracks) if t.ema_embedding is not None]
        if det_emb_idx and trk_emb_idx:
            D = np.stack([detections[j].embedding for j in det_emb_idx])
            T = np.stack([tracks[i].ema_embedding for i in trk_emb_idx])
            if D.shape[1] != T.shape[1]:
                raise ConfigError(f"embedding dimension mismatch: {T.shape[1]} vs {D.shape[1]}")
            sims = np.clip(T @ D.T, -1.0, 1.0)
            app[np.ix_(trk_emb_idx, det_emb_idx)] = (1.0 - sims) / 2.0
        cost += weights.w_app * app

    if weights.w_vel > 0:
        for i, t in enumerate(tracks):
            for j, z in enumerate(meas):
                cost[i, j] += weights.w_vel * velocity_direction_cost(t.history, z, kalman.delta_t)

    for i, t in enumerate(tracks):
        try:
            gd = gating_distances(t.kf, meas_arr, kalman)
        except NumericalError:
            cost[i, :] = np.inf
            continue
        cost[i, gd > kalman.gating_threshold] = np.inf
    if weights.w_iou > 0:
        cost[ious <= 0.0] = np.inf
    return cost


def iou_cost_matrix(boxes: np.ndarray, detections: Sequence[Detection]) -> np.ndarray:
    """``1 - IoU`` against fixed boxes; disjoint pairs are ``inf``."""
    ious = iou_matrix(boxes, detection_boxes(detections))
    cost = 1.0 - ious
    cost[ious <= 0.0] = np.inf
    return cost


def solve_assignment(c: np.ndarray, max_cost: float
                     ) -> tuple[list[tuple[int, int]], list[int], list[int]]:
    """Minimum-cost one-to-one assignment over the finite entries of ``c``.

    Pairs costing more than ``max_cost`` are dissolved after the solve.
    Returns ``(matches, unmatched_rows, unmatched_cols)``, sorted.
    """
    c = np.asarray(c, dtype=float)
    if c.ndim != 2:
        raise ValueError("cost matrix must be 2-D")
    n, m = c.shape
    if n == 0 or m == 0:
        return [], list(range(n)), list(range(m))
    finite = np.isfinite(c)
    matches: list[tuple[int, int]] = []
    if finite.any():
        # Any feasible pair is preferred over leaving both sides unmatched.
        big = (np.abs(c[finite]).max() + 1.0) * (min(n, m) + 1)
        work = np.where(finite, c, big)
        rows, cols = linear_sum_assignment(work)
        for r, k in zip(rows.tolist(), cols.tolist()):
            if finite[r, k] and c[r, k] <= max_cost:
                matches.append((r, k))
    matches.sort()
    mr = {r for r, _ in matches}
    mc = {k for _, k in matches}
    return (matches,
            [r for r in range(n) if r not in mr],
            [k for k in range(m) if k not in mc])
