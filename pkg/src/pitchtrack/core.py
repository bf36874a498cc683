"""Geometric and appearance primitives shared by all pipeline stages."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import ConfigError, InputError

UNIT_NORM_TOL = 1e-6


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in image pixels, top-left corner plus size."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.w, self.h)):
            raise InputError(f"non-finite box {self!r}")
        if self.w <= 0 or self.h <= 0:
            raise InputError(f"box must have positive size, got w={self.w} h={self.h}")

    @property
    def center(self) -> tuple[float, float]:
        return self.x + self.w / 2.0, self.y + self.h / 2.0

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.w, self.h], dtype=float)

    @classmethod
    def from_array(cls, a: Sequence[float]) -> "BBox":
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "BBox":
        return cls(cx - w / 2.0, cy - h / 2.0, w, h)


class ObjectClass(enum.Enum):
    PLAYER = "player"
    BALL = "ball"


class Measurement(NamedTuple):
    """Kalman measurement space: center, aspect ratio (w/h) and height."""

    cx: float
    cy: float
    aspect: float
    h: float

    def to_array(self) -> np.ndarray:
        return np.array(self, dtype=float)


@dataclass(frozen=True, eq=False)
class Detection:
    frame: int
    bbox: BBox
    confidence: float
    cls: ObjectClass = ObjectClass.PLAYER
    embedding: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.frame < 0:
            raise InputError(f"frame index must be non-negative, got {self.frame}")
        if not 0.0 <= self.confidence <= 1.0:
            raise InputError(f"confidence must lie in [0, 1], got {self.confidence}")
        if self.embedding is not None:
            emb = np.asarray(self.embedding, dtype=float)
            check_unit(emb)
            object.__setattr__(self, "embedding", emb)


def check_unit(v: np.ndarray, dim: int | None = None) -> np.ndarray:
    if v.ndim != 1:
        raise ConfigError(f"embedding must be a vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise ConfigError(f"embedding dimension {v.shape[0]} != configured {dim}")
    norm = float(np.linalg.norm(v))
    if abs(norm - 1.0) > UNIT_NORM_TOL:
        raise InputError(f"embedding is not unit-norm (norm={norm:.9f})")
    return v


def normalize(v: np.ndarray) -> np.ndarray:
    """Scale ``v`` to unit length. Zero vectors are rejected."""
    v = np.asarray(v, dtype=float)
    norm = float(np.linalg.norm(v))
    if norm == 0.0 or not math.isfinite(norm):
        raise InputError("cannot normalise a zero or non-finite vector")
    return v / norm


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.w * a.h + b.w * b.h - inter)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of ``(n, 4)`` and ``(m, 4)`` arrays of xywh boxes."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    ax2 = a[:, 0] + a[:, 2]
    ay2 = a[:, 1] + a[:, 3]
    bx2 = b[:, 0] + b[:, 2]
    by2 = b[:, 1] + b[:, 3]
    iw = np.minimum(ax2[:, None], bx2[None, :]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(ay2[:, None], by2[None, :]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    return inter / union


def bbox_to_measurement(b: BBox) -> Measurement:
    return Measurement(b.x + b.w / 2.0, b.y + b.h / 2.0, b.w / b.h, b.h)


def measurement_to_bbox(m: Measurement | np.ndarray) -> BBox:
    cx, cy, aspect, h = (float(v) for v in m[:4])
    w = aspect * h
    return BBox(cx - w / 2.0, cy - h / 2.0, w, h)


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """Dot product of two unit vectors, clipped to [-1, 1]."""
    if u.shape != v.shape:
        raise ConfigError(f"embedding dimension mismatch: {u.shape} vs {v.shape}")
    return float(np.clip(np.dot(u, v), -1.0, 1.0))


@dataclass
class Tracklet:
    """One identity's boxes over strictly increasing frames.

    ``embeddings`` is either ``None`` or an ``(n, D)`` array whose rows are
    NaN on frames without an appearance vector (e.g. interpolated frames).
    """

    id: int
    frames: np.ndarray
    boxes: np.ndarray
    confs: np.ndarray
    embeddings: Optional[np.ndarray] = None
    ema_embedding: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.int64).reshape(-1)
        self.boxes = np.asarray(self.boxes, dtype=float).reshape(-1, 4)
        self.confs = np.asarray(self.confs, dtype=float).reshape(-1)
        n = len(self.frames)
        if n == 0:
            raise InputError(f"tracklet {self.id} is empty")
        if len(self.boxes) != n or len(self.confs) != n:
            raise InputError(f"tracklet {self.id}: field lengths differ")
        if n > 1 and np.any(np.diff(self.frames) <= 0):
            raise InputError(f"tracklet {self.id}: frames must be strictly increasing")
        if self.embeddings is not None:
            self.embeddings = np.asarray(self.embeddings, dtype=float)
            if self.embeddings.ndim != 2 or len(self.embeddings) != n:
                raise InputError(f"tracklet {self.id}: embeddings must be (n, D)")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def start(self) -> int:
        return int(self.frames[0])

    @property
    def end(self) -> int:
        return int(self.frames[-1])

    def centers(self) -> np.ndarray:
        return self.boxes[:, :2] + self.boxes[:, 2:] / 2.0

    def frame_embeddings(self) -> np.ndarray:
        """Rows of ``embeddings`` that are present (no NaN)."""
        if self.embeddings is None:
            return np.empty((0, 0))
        ok = ~np.isnan(self.embeddings).any(axis=1)
        return self.embeddings[ok]
