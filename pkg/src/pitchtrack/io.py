"""Readers and writers for the on-disk formats.

Frame numbers are 1-based in every file and 0-based everywhere in memory;
the conversion happens only in this module.

* MOT text: ``frame,id,x,y,w,h,conf,a,b,c`` (detections use ``id = -1``).
* Embedding sidecar: ``frame,index,v1,...,vD`` where ``index`` is the
  detection's position within its frame in the detection file (or a track
  id for the tracker's own sidecar).
* CMC sidecar: ``frame,a11,a12,tx,a21,a22,ty``, mapping frame ``frame-1``
  coordinates into frame ``frame``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .ball import BallTrack
from .core import BBox, Detection, ObjectClass, Tracklet
from .errors import InputError
from .motion import AffineMotion

UNIT_BAND = 0.1


class MotRecord(NamedTuple):
    frame: int  # 0-based
    id: int
    bbox: BBox
    conf: float


def _fields(line: str, path, lineno: int, minimum: int) -> list[float]:
    parts = [p.strip() for p in line.split(",")]
    if len(parts) < minimum:
        raise InputError(f"{path}:{lineno}: expected at least {minimum} fields, got {len(parts)}")
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise InputError(f"{path}:{lineno}: non-numeric field in {line!r}") from None
    if not all(math.isfinite(v) for v in vals):
        raise InputError(f"{path}:{lineno}: non-finite field in {line!r}")
    return vals


def _int(v: float, what: str, path, lineno: int) -> int:
    if not float(v).is_integer():
        raise InputError(f"{path}:{lineno}: {what} must be an integer, got {v}")
    return int(v)


def parse_mot_file(path: str | Path, warnings: Optional[list[str]] = None) -> list[MotRecord]:
    """Parse a MOT text file. Boxes with non-positive size are skipped and reported in ``warnings``."""
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        v = _fields(line, path, lineno, 7)
        frame = _int(v[0], "frame", path, lineno)
        if frame < 1:
            raise InputError(f"{path}:{lineno}: frame numbers start at 1, got {frame}")
        tid = _int(v[1], "id", path, lineno)
        x, y, w, h, conf = v[2:7]
        if w <= 0 or h <= 0:
            if warnings is not None:
                warnings.append(f"{path}:{lineno}: non-positive box size, line skipped")
            continue
        out.append(MotRecord(frame - 1, tid, BBox(x, y, w, h), conf))
    return out


def group_by_frame(records: Iterable[MotRecord]) -> dict[int, list[MotRecord]]:
    out: dict[int, list[MotRecord]] = {}
    for r in records:
        out.setdefault(r.frame, []).append(r)
    return out


def records_to_frames(records: Iterable[MotRecord]) -> dict[int, list[tuple[int, BBox]]]:
    """Frame -> [(id, box)], the shape the evaluator consumes."""
    out: dict[int, list[tuple[int, BBox]]] = {}
    for r in records:
        out.setdefault(r.frame, []).append((r.id, r.bbox))
    return out


def records_to_tracklets(records: Iterable[MotRecord],
                         embeddings: Optional[Mapping[tuple[int, int], np.ndarray]] = None,
                         ema_alpha_base: float = 0.9) -> list[Tracklet]:
    """Group tracker output by id; attach per-frame embeddings keyed by ``(frame, id)``."""
    from .tracker import update_embedding_ema

    by_id: dict[int, list[MotRecord]] = {}
    for r in records:
        by_id.setdefault(r.id, []).append(r)
    dim = None
    if embeddings:
        dim = len(next(iter(embeddings.values())))
    out = []
    for tid in sorted(by_id):
        rs = sorted(by_id[tid], key=lambda r: r.frame)
        frames = [r.frame for r in rs]
        if len(set(frames)) != len(frames):
            raise InputError(f"track {tid} has two boxes in one frame")
        embs = None
        ema = None
        if dim is not None:
            embs = np.full((len(rs), dim), np.nan)
            for i, r in enumerate(rs):
                e = embeddings.get((r.frame, tid))
                if e is not None:
                    embs[i] = e
                    ema = update_embedding_ema(ema, e, min(max(r.conf, 0.0), 1.0), ema_alpha_base)
            if ema is None:
                embs = None
        out.append(Tracklet(tid, frames, [r.bbox.to_array() for r in rs], [r.conf for r in rs],
                            embs, ema))
    return out


def _mot_line(frame: int, tid: int, box: Sequence[float], conf: float) -> str:
    x, y, w, h = (float(b) for b in box)
    return f"{frame + 1},{tid},{x:.6f},{y:.6f},{w:.6f},{h:.6f},{conf:.6f},-1,-1,-1\n"


def write_mot_file(data: Sequence[Tracklet] | BallTrack | Sequence[MotRecord], path: str | Path,
                   ball_id: int = 1) -> None:
    """Write tracks as MOT text, sorted by (frame, id)."""
    rows: list[tuple[int, int, Sequence[float], float]] = []
    if isinstance(data, BallTrack):
        confs = data.confs or [1.0] * len(data)
        for f, b, c in zip(data.frames, data.boxes, confs):
            rows.append((f, ball_id, b.to_array(), c))
    else:
        for item in data:
            if isinstance(item, Tracklet):
                for f, b, c in zip(item.frames.tolist(), item.boxes, item.confs.tolist()):
                    rows.append((f, item.id, b, c))
            else:
                rows.append((item.frame, item.id, item.bbox.to_array(), item.conf))
    rows.sort(key=lambda r: (r[0], r[1]))
    with open(path, "w") as fh:
        fh.writelines(_mot_line(*r) for r in rows)


def parse_embeddings(path: str | Path, dim: int,
                     warnings: Optional[list[str]] = None) -> dict[tuple[int, int], np.ndarray]:
    """Read an embedding sidecar into ``{(frame, index): unit vector}``.

    Vectors whose norm is off by less than 10% are renormalised (and
    reported); anything further off, including zero vectors, is an error.
    """
    out: dict[tuple[int, int], np.ndarray] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        v = _fields(line, path, lineno, 3)
        if len(v) != dim + 2:
            raise InputError(f"{path}:{lineno}: expected {dim} components, got {len(v) - 2}")
        frame = _int(v[0], "frame", path, lineno)
        if frame < 1:
            raise InputError(f"{path}:{lineno}: frame numbers start at 1, got {frame}")
        idx = _int(v[1], "index", path, lineno)
        vec = np.array(v[2:], dtype=float)
        norm = float(np.linalg.norm(vec))
        dev = abs(norm - 1.0)
        if dev >= UNIT_BAND:
            raise InputError(f"{path}:{lineno}: embedding norm {norm:.6f} outside the accepted band")
        if dev > 1e-6:
            vec = vec / norm
            if warnings is not None:
                warnings.append(f"{path}:{lineno}: embedding renormalised (norm {norm:.6f})")
        key = (frame - 1, idx)
        if key in out:
            raise InputError(f"{path}:{lineno}: duplicate embedding for frame {frame} index {idx}")
        out[key] = vec
    return out


def write_embeddings(emb: Mapping[tuple[int, int], np.ndarray], path: str | Path) -> None:
    with open(path, "w") as fh:
        for (frame, idx) in sorted(emb):
            vals = ",".join(f"{x:.8f}" for x in emb[(frame, idx)])
            fh.write(f"{frame + 1},{idx},{vals}\n")


def tracklet_embeddings(ts: Iterable[Tracklet]) -> dict[tuple[int, int], np.ndarray]:
    out = {}
    for t in ts:
        if t.embeddings is None:
            continue
        for f, e in zip(t.frames.tolist(), t.embeddings):
            if not np.isnan(e).any():
                out[(f, t.id)] = e
    return out


def parse_cmc(path: str | Path) -> dict[int, AffineMotion]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        v = _fields(line, path, lineno, 7)
        if len(v) != 7:
            raise InputError(f"{path}:{lineno}: expected 7 fields, got {len(v)}")
        frame = _int(v[0], "frame", path, lineno)
        if frame < 1:
            raise InputError(f"{path}:{lineno}: frame numbers start at 1, got {frame}")
        a11, a12, tx, a21, a22, ty = v[1:]
        try:
            out[frame - 1] = AffineMotion(np.array([[a11, a12], [a21, a22]]), np.array([tx, ty]), frame - 1)
        except InputError as exc:
            raise InputError(f"{path}:{lineno}: {exc}") from None
    return out


def write_cmc(cmc: Mapping[int, AffineMotion], path: str | Path) -> None:
    with open(path, "w") as fh:
        for f in sorted(cmc):
            a = cmc[f]
            (a11, a12), (a21, a22) = a.linear
            tx, ty = a.translation
            fh.write(f"{f + 1},{a11:.9f},{a12:.9f},{tx:.6f},{a21:.9f},{a22:.9f},{ty:.6f}\n")


def load_detections(path: str | Path, embeddings: Optional[Mapping[tuple[int, int], np.ndarray]] = None,
                    cls: ObjectClass = ObjectClass.PLAYER,
                    warnings: Optional[list[str]] = None) -> dict[int, list[Detection]]:
    """Detections per frame, in file order, with sidecar embeddings attached by position."""
    out: dict[int, list[Detection]] = {}
    for r in parse_mot_file(path, warnings):
        dets = out.setdefault(r.frame, [])
        emb = embeddings.get((r.frame, len(dets))) if embeddings else None
        if not 0.0 <= r.conf <= 1.0:
            raise InputError(f"{path}: frame {r.frame + 1}: confidence {r.conf} outside [0, 1]")
        dets.append(Detection(r.frame, r.bbox, r.conf, cls, emb))
    return out


@dataclass
class SequenceBundle:
    """A directory holding one sequence's inputs, described by ``bundle.json``."""

    root: Path
    name: str = "seq"
    image_width: int = 1920
    image_height: int = 1080
    frame_rate: float = 25.0
    num_frames: int = 0
    embedding_dim: int = 512
    files: dict[str, str] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    MANIFEST = "bundle.json"

    def path(self, key: str) -> Optional[Path]:
        name = self.files.get(key)
        return None if name is None else self.root / name

    def save(self) -> Path:
        data = asdict(self)
        data.pop("root")
        target = self.root / self.MANIFEST
        target.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
        return target

    @classmethod
    def load(cls, root: str | Path) -> "SequenceBundle":
        root = Path(root)
        manifest = root / cls.MANIFEST
        if not manifest.is_file():
            raise InputError(f"{root}: no {cls.MANIFEST}")
        try:
            data = json.loads(manifest.read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"{manifest}: {exc}") from None
        bundle = cls(root=root, **data)
        for key, name in bundle.files.items():
            if not (root / name).is_file():
                raise InputError(f"{root}: {key} file {name!r} is missing")
        return bundle

    @staticmethod
    def discover(root: str | Path) -> list[Path]:
        """``root`` itself if it is a bundle, else its immediate sub-directories that are."""
        root = Path(root)
        if (root / SequenceBundle.MANIFEST).is_file():
            return [root]
        return sorted(p for p in root.iterdir() if (p / SequenceBundle.MANIFEST).is_file())
