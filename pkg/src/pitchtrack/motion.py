"""Constant-velocity Kalman filter in (cx, cy, aspect, h) space.

The state is ``(cx, cy, aspect, h, v_cx, v_cy, v_aspect, v_h)``. Noise is
scaled by the box height, so the filter behaves the same for near and far
players.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np
import scipy.linalg

from .config import KalmanParams
from .core import Measurement
from .errors import InputError, NumericalError

NDIM = 4
_F = np.eye(2 * NDIM)
_F[:NDIM, NDIM:] = np.eye(NDIM)
_H = np.eye(NDIM, 2 * NDIM)

_DEFAULT = KalmanParams()


@dataclass(frozen=True, eq=False)
class KalmanState:
    mean: np.ndarray
    covariance: np.ndarray

    @property
    def measurement(self) -> Measurement:
        return Measurement(*(float(v) for v in self.mean[:NDIM]))


@dataclass(frozen=True, eq=False)
class AffineMotion:
    """Maps image coordinates of frame ``frame - 1`` into frame ``frame``."""

    linear: np.ndarray
    translation: np.ndarray
    frame: int = 0

    def __post_init__(self):
        lin = np.asarray(self.linear, dtype=float).reshape(2, 2)
        tr = np.asarray(self.translation, dtype=float).reshape(2)
        if not (np.all(np.isfinite(lin)) and np.all(np.isfinite(tr))):
            raise InputError("affine motion must be finite")
        if abs(np.linalg.det(lin)) <= 1e-6:
            raise InputError("affine motion has a degenerate linear part")
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "translation", tr)

    @classmethod
    def identity(cls, frame: int = 0) -> "AffineMotion":
        return cls(np.eye(2), np.zeros(2), frame)

    @property
    def scale(self) -> float:
        return math.sqrt(abs(np.linalg.det(self.linear)))

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.linear, np.eye(2)) and not self.translation.any())

    def inverse(self) -> "AffineMotion":
        inv = np.linalg.inv(self.linear)
        return AffineMotion(inv, -inv @ self.translation, self.frame)

    def apply_points(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return pts @ self.linear.T + self.translation

    def apply_measurement(self, m: Measurement) -> Measurement:
        cx, cy = self.linear @ np.array([m.cx, m.cy]) + self.translation
        return Measurement(float(cx), float(cy), m.aspect, m.h * self.scale)


class ObservationHistory:
    """Bounded buffer of the most recent accepted ``(frame, Measurement)`` pairs."""

    def __init__(self, maxlen: int = 30, items: Iterable[tuple[int, Measurement]] = ()):
        self._buf: deque[tuple[int, Measurement]] = deque(maxlen=maxlen)
        for frame, m in items:
            self.append(frame, m)

    def append(self, frame: int, m: Measurement) -> None:
        if self._buf and frame <= self._buf[-1][0]:
            raise InputError(f"observation frames must increase ({frame} after {self._buf[-1][0]})")
        self._buf.append((int(frame), Measurement(*m)))

    def transform(self, a: AffineMotion) -> None:
        self._buf = deque(((f, a.apply_measurement(m)) for f, m in self._buf), maxlen=self._buf.maxlen)

    @property
    def maxlen(self) -> int:
        return self._buf.maxlen or 0

    def __len__(self) -> int:
        return len(self._buf)

    def __iter__(self) -> Iterator[tuple[int, Measurement]]:
        return iter(self._buf)

    def __getitem__(self, i: int) -> tuple[int, Measurement]:
        return self._buf[i]

    @property
    def last(self) -> Optional[tuple[int, Measurement]]:
        return self._buf[-1] if self._buf else None


def _check_measurement(m: Measurement | np.ndarray) -> np.ndarray:
    z = np.asarray(m, dtype=float).reshape(NDIM)
    if not np.all(np.isfinite(z)):
        raise InputError(f"non-finite measurement {tuple(z)}")
    return z


def kf_initiate(m: Measurement, params: KalmanParams = _DEFAULT) -> KalmanState:
    z = _check_measurement(m)
    h = z[3]
    wp, wv = params.std_weight_position, params.std_weight_velocity
    std = np.array([
        2 * wp * h, 2 * wp * h, 1e-2, 2 * wp * h,
        10 * wv * h, 10 * wv * h, 1e-5, 10 * wv * h,
    ])
    mean = np.concatenate([z, np.zeros(NDIM)])
    return KalmanState(mean, np.diag(std ** 2))


def process_noise(s: KalmanState, params: KalmanParams = _DEFAULT) -> np.ndarray:
    h = s.mean[3]
    wp, wv = params.std_weight_position, params.std_weight_velocity
    std = np.array([wp * h, wp * h, 1e-2, wp * h, wv * h, wv * h, 1e-5, wv * h])
    return np.diag(std ** 2)


def measurement_noise(s: KalmanState, noise_scale: float = 1.0,
                      params: KalmanParams = _DEFAULT) -> np.ndarray:
    h = s.mean[3]
    wp = params.std_weight_position
    std = np.array([wp * h, wp * h, 1e-1, wp * h])
    return np.diag(std ** 2) * noise_scale


def nsa_scale(confidence: float) -> float:
    """Measurement-noise multiplier for a detection of the given confidence."""
    return float(min(1.0, max(0.01, 1.0 - confidence)))


def kf_predict(s: KalmanState, params: KalmanParams = _DEFAULT) -> KalmanState:
    mean = _F @ s.mean
    cov = _F @ s.covariance @ _F.T + process_noise(s, params)
    return KalmanState(mean, _symmetrize(cov))


def kf_project(s: KalmanState, noise_scale: float = 1.0,
               params: KalmanParams = _DEFAULT) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of the state in measurement space."""
    mean = s.mean[:NDIM].copy()
    cov = s.covariance[:NDIM, :NDIM] + measurement_noise(s, noise_scale, params)
    return mean, cov


def kf_update(s: KalmanState, m: Measurement, noise_scale: float = 1.0,
              params: KalmanParams = _DEFAULT) -> KalmanState:
    if not noise_scale > 0:
        raise InputError(f"noise_scale must be positive, got {noise_scale}")
    z = _check_measurement(m)
    proj_mean, proj_cov = kf_project(s, noise_scale, params)
    PHt = s.covariance[:, :NDIM]
    try:
        chol = scipy.linalg.cho_factor(proj_cov, lower=True, check_finite=False)
        gain = scipy.linalg.cho_solve(chol, PHt.T, check_finite=False).T
    except np.linalg.LinAlgError as exc:
        raise NumericalError("innovation covariance is not positive definite") from exc
    mean = s.mean + gain @ (z - proj_mean)
    # Joseph form keeps the covariance PSD under round-off
    I_KH = np.eye(2 * NDIM) - gain @ _H
    R = measurement_noise(s, noise_scale, params)
    cov = I_KH @ s.covariance @ I_KH.T + gain @ R @ gain.T
    return KalmanState(mean, _symmetrize(cov))


def gating_distance(s: KalmanState, m: Measurement | np.ndarray,
                    params: KalmanParams = _DEFAULT) -> float:
    """Squared Mahalanobis distance of ``m`` from the projected state."""
    return float(gating_distances(s, np.asarray(m, dtype=float).reshape(1, NDIM), params)[0])


def gating_distances(s: KalmanState, ms: np.ndarray, params: KalmanParams = _DEFAULT) -> np.ndarray:
    mean, cov = kf_project(s, 1.0, params)
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular innovation covariance") from exc
    d = np.asarray(ms, dtype=float).reshape(-1, NDIM) - mean
    z = scipy.linalg.solve_triangular(L, d.T, lower=True, check_finite=False)
    return np.sum(z * z, axis=0)


def _cmc_matrix(a: AffineMotion) -> np.ndarray:
    T = np.eye(2 * NDIM)
    T[0:2, 0:2] = a.linear
    T[4:6, 4:6] = a.linear
    T[3, 3] = a.scale
    T[7, 7] = a.scale
    return T


def apply_cmc(s: KalmanState, a: AffineMotion) -> KalmanState:
    T = _cmc_matrix(a)
    mean = T @ s.mean
    mean[0:2] += a.translation
    cov = T @ s.covariance @ T.T
    return KalmanState(mean, _symmetrize(cov))


def velocity_direction_cost(h: ObservationHistory | Sequence[tuple[int, Measurement]],
                            m: Measurement, delta_t: int = 3) -> float:
    """Angle between a track's recent heading and the heading towards ``m``, over pi.

    The heading is taken from the observation at least ``delta_t`` frames
    before the newest one. Returns the neutral 0.5 when the history is too
    short or a direction is undefined.
    """
    hist = list(h)
    if len(hist) < 2:
        return 0.5
    newest_frame, newest = hist[-1]
    ref = None
    for frame, obs in reversed(hist[:-1]):
        if newest_frame - frame >= delta_t:
            ref = obs
            break
    if ref is None:
        return 0.5
    track_dir = np.array([newest.cx - ref.cx, newest.cy - ref.cy])
    cand_dir = np.array([m.cx - newest.cx, m.cy - newest.cy])
    n1 = np.linalg.norm(track_dir)
    n2 = np.linalg.norm(cand_dir)
    if n1 == 0.0 or n2 == 0.0:
        return 0.5
    cos = float(np.clip(np.dot(track_dir, cand_dir) / (n1 * n2), -1.0, 1.0))
    return math.acos(cos) / math.pi


def interpolate_measurements(start: tuple[int, Measurement],
                             stop: tuple[int, Measurement]) -> list[Measurement]:
    """Virtual measurements for the frames strictly between two observations."""
    f0, m0 = start
    f1, m1 = stop
    a, b = np.asarray(m0, dtype=float), np.asarray(m1, dtype=float)
    n = f1 - f0
    return [Measurement(*(a + (b - a) * k / n)) for k in range(1, n)]


def oru_reupdate(s: KalmanState, gap: Sequence[Measurement], noise_scale: float = 1.0,
                 params: KalmanParams = _DEFAULT) -> KalmanState:
    """Replay predict+update over virtual measurements bridging an occlusion.

    ``s`` is the filter state at the track's last real observation.
    """
    for m in gap:
        s = kf_update(kf_predict(s, params), m, noise_scale, params)
    return s


def _symmetrize(p: np.ndarray) -> np.ndarray:
    return 0.5 * (p + p.T)
