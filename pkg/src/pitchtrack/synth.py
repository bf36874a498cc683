"""Deterministic synthetic scenes: players, a ball, detections, embeddings and camera pan.

Ground truth and every noise source are drawn from independent streams of a
single seed, in fixed-size blocks, so changing ``split_events`` only removes
detections and never perturbs anything else.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .config import read_kv_file
from .core import BBox, Detection, ObjectClass
from .errors import ConfigError
from .io import MotRecord, SequenceBundle, write_cmc, write_embeddings, write_mot_file
from .motion import AffineMotion

BALL_SIZE = 14.0
BALL_GRAVITY = 0.2


@dataclass(frozen=True)
class SynthScenario:
    num_players: int = 10
    ball: bool = True
    duration: int = 300
    detection_dropout: float = 0.0
    clutter_rate: float = 0.0
    embedding_noise_sigma: float = 0.05
    camera_pan: float = 0.0
    # (player id, first missing frame), 0-based frames
    split_events: tuple[tuple[int, int], ...] = ()
    seed: int = 0
    split_gap: int = 45
    image_width: int = 1920
    image_height: int = 1080
    frame_rate: float = 25.0
    embedding_dim: int = 32
    jitter_px: float = 1.0
    ball_jitter_px: float = 0.5
    ball_clutter_min_dist: float = 150.0
    max_speed: float = 4.0
    ball_max_speed: float = 8.0
    pan_amplitude: float = 300.0

    def __post_init__(self):
        if not 0.0 <= self.detection_dropout <= 1.0:
            raise ConfigError("detection_dropout must lie in [0, 1]")
        if self.clutter_rate < 0 or self.embedding_noise_sigma < 0 or self.camera_pan < 0:
            raise ConfigError("rates, noise and pan must be non-negative")
        if self.duration < 1 or self.num_players < 0 or self.embedding_dim < 2:
            raise ConfigError("duration must be >= 1, embedding_dim >= 2")
        object.__setattr__(self, "split_events",
                           tuple((int(p), int(f)) for p, f in self.split_events))
        for pid, _ in self.split_events:
            if not 1 <= pid <= self.num_players:
                raise ConfigError(f"split event refers to unknown player {pid}")

    @classmethod
    def from_kv(cls, values: dict[str, str]) -> "SynthScenario":
        kwargs = {}
        types = {f.name: type(getattr(cls(), f.name)) for f in fields(cls)}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in types:
                raise ConfigError(f"unknown scenario key {key!r}")
            if key == "split_events":
                events = []
                for item in filter(None, (s.strip() for s in raw.split(","))):
                    pid, _, frame = item.partition(":")
                    try:
                        events.append((int(pid), int(frame) - 1))
                    except ValueError:
                        raise ConfigError(f"bad split event {item!r}, expected id:frame") from None
                kwargs[key] = tuple(events)
            elif types[key] is bool:
                kwargs[key] = raw.strip().lower() in ("1", "true", "yes", "on")
            else:
                try:
                    kwargs[key] = types[key](raw)
                except ValueError:
                    raise ConfigError(f"{key}: cannot parse {raw!r}") from None
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path) -> "SynthScenario":
        return cls.from_kv(read_kv_file(path))


@dataclass
class SynthData:
    scenario: SynthScenario
    gt: dict[int, list[tuple[int, BBox]]]
    detections: dict[int, list[Detection]]
    ball_gt: dict[int, BBox]
    ball_detections: dict[int, list[Detection]]
    ball_clutter: dict[int, list[Detection]]
    cmc: dict[int, AffineMotion]
    identity_embeddings: np.ndarray
    # frames where a player's detection was removed by a split event
    split_frames: dict[int, list[int]] = field(default_factory=dict)

    @property
    def identities(self) -> list[int]:
        return list(range(1, self.scenario.num_players + 1))


def camera_offsets(s: SynthScenario) -> np.ndarray:
    """Horizontal camera offset per frame: a triangle wave moving ``camera_pan`` px/frame."""
    c = np.zeros(s.duration)
    if s.camera_pan <= 0:
        return c
    direction = 1.0
    for t in range(1, s.duration):
        nxt = c[t - 1] + direction * s.camera_pan
        if nxt > s.pan_amplitude or nxt < 0:
            direction = -direction
            nxt = c[t - 1] + direction * s.camera_pan
        c[t] = nxt
    return c


def _player_paths(s: SynthScenario, rng: np.random.Generator, x_lo: float):
    N, T = s.num_players, s.duration
    W, H = s.image_width, s.image_height
    heights = rng.uniform(60, 90, N)
    widths = heights * rng.uniform(0.4, 0.5, N)
    pos = np.zeros((T, N, 2))  # world top-left
    for p in range(N):
        lo = np.array([x_lo + 2, 2.0])
        hi = np.array([W - widths[p] - 2, H - heights[p] - 2])
        x = rng.uniform(lo, hi)
        t = 0
        while t < T:
            seg = int(rng.integers(25, 101))
            speed = rng.uniform(0.5, s.max_speed)
            ang = rng.uniform(0, 2 * np.pi)
            v = speed * np.array([np.cos(ang), np.sin(ang)])
            for _ in range(seg):
                if t >= T:
                    break
                pos[t, p] = x
                x = x + v
                for k in range(2):
                    if x[k] < lo[k]:
                        x[k] = 2 * lo[k] - x[k]
                        v[k] = -v[k]
                    elif x[k] > hi[k]:
                        x[k] = 2 * hi[k] - x[k]
                        v[k] = -v[k]
                t += 1
    return pos, widths, heights


def _ball_path(s: SynthScenario, rng: np.random.Generator, x_lo: float) -> np.ndarray:
    T = s.duration
    W, H = s.image_width, s.image_height
    lo = np.array([x_lo + 20.0, 300.0])
    hi = np.array([W - 20.0, H - 60.0])
    centers = np.zeros((T, 2))
    cur = rng.uniform(lo, hi)
    t = 0
    while t < T:
        for _ in range(50):
            dur = int(rng.integers(20, 61))
            ang = rng.uniform(0, 2 * np.pi)
            reach = rng.uniform(2.0, s.ball_max_speed) * dur
            target = np.clip(cur + reach * np.array([np.cos(ang), np.sin(ang)]), lo, hi)
            v = (target - cur) / dur
            v[1] -= BALL_GRAVITY * dur / 2.0
            k = np.arange(1, dur + 1)[:, None]
            arc = cur + v * k + np.array([0.0, BALL_GRAVITY / 2.0]) * k ** 2
            if arc[:, 1].min() > 40:
                break
        for row in arc:
            if t >= T:
                break
            centers[t] = cur if t == 0 else row
            t += 1
        cur = arc[-1]
    return centers


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _clip_box(x, y, w, h, W, H) -> Optional[BBox]:
    x1, y1 = max(0.0, x), max(0.0, y)
    x2, y2 = min(float(W), x + w), min(float(H), y + h)
    if x2 - x1 < 1 or y2 - y1 < 1:
        return None
    return BBox(x1, y1, x2 - x1, y2 - y1)


def generate(s: SynthScenario) -> SynthData:
    """Build a scene in memory."""
    streams = [np.random.default_rng(ss) for ss in np.random.SeedSequence(s.seed).spawn(8)]
    r_paths, r_ball, r_det, r_clutter, r_emb, r_bdet, r_bclut, r_id = streams
    T, N, D = s.duration, s.num_players, s.embedding_dim
    W, H = s.image_width, s.image_height
    offs = camera_offsets(s)
    x_lo = s.pan_amplitude if s.camera_pan > 0 else 0.0

    pos, widths, heights = _player_paths(s, r_paths, x_lo)
    ball_world = _ball_path(s, r_ball, x_lo)
    identity = _unit(r_id.normal(size=(N, D)))

    jitter = r_det.normal(size=(T, N, 4))
    drop = r_det.random((T, N))
    confs = r_det.uniform(0.5, 0.95, (T, N))
    emb_noise = r_emb.normal(size=(T, N, D)) * (s.embedding_noise_sigma / np.sqrt(D))

    split_mask = np.zeros((T, N), dtype=bool)
    split_frames: dict[int, list[int]] = {}
    for pid, f0 in s.split_events:
        lo, hi = max(0, f0), min(T, f0 + s.split_gap)
        split_mask[lo:hi, pid - 1] = True
        split_frames.setdefault(pid, []).extend(range(lo, hi))

    gt: dict[int, list[tuple[int, BBox]]] = {}
    dets: dict[int, list[Detection]] = {}
    clutter_counts = r_clutter.poisson(s.clutter_rate, T) if s.clutter_rate > 0 else np.zeros(T, int)
    for t in range(T):
        frame_gt = []
        frame_dets = []
        for p in range(N):
            x = pos[t, p, 0] - offs[t]
            y = pos[t, p, 1]
            box = BBox(x, y, widths[p], heights[p])
            frame_gt.append((p + 1, box))
            if split_mask[t, p] or drop[t, p] < s.detection_dropout:
                continue
            j = jitter[t, p] * s.jitter_px
            cx, cy = box.center
            w = max(4.0, box.w + 0.5 * j[2])
            h = max(4.0, box.h + 0.5 * j[3])
            dbox = _clip_box(cx + j[0] - w / 2, cy + j[1] - h / 2, w, h, W, H)
            if dbox is None:
                continue
            emb = _unit(identity[p] + emb_noise[t, p])
            frame_dets.append(Detection(t, dbox, float(confs[t, p]), ObjectClass.PLAYER, emb))
        for _ in range(int(clutter_counts[t])):
            h = r_clutter.uniform(50, 90)
            w = h * r_clutter.uniform(0.35, 0.6)
            x = r_clutter.uniform(0, W - w)
            y = r_clutter.uniform(0, H - h)
            emb = _unit(r_clutter.normal(size=D))
            frame_dets.append(Detection(t, BBox(x, y, w, h), float(r_clutter.uniform(0.1, 0.45)),
                                        ObjectClass.PLAYER, emb))
        # per-frame stream so that removed detections do not shift other draws
        order = np.random.default_rng((s.seed, 7, t)).permutation(len(frame_dets))
        gt[t] = frame_gt
        dets[t] = [frame_dets[i] for i in order]

    ball_gt: dict[int, BBox] = {}
    ball_dets: dict[int, list[Detection]] = {}
    ball_clutter: dict[int, list[Detection]] = {}
    if s.ball:
        bj = r_bdet.normal(size=(T, 2)) * s.ball_jitter_px
        bdrop = r_bdet.random(T)
        bconf = r_bdet.uniform(0.55, 0.95, T)
        bcounts = r_bclut.poisson(s.clutter_rate * 1.0, T) if s.clutter_rate > 0 else np.zeros(T, int)
        for t in range(T):
            cx = ball_world[t, 0] - offs[t]
            cy = ball_world[t, 1]
            ball_gt[t] = BBox.from_center(cx, cy, BALL_SIZE, BALL_SIZE)
            frame = []
            if bdrop[t] >= s.detection_dropout:
                frame.append(Detection(t, BBox.from_center(cx + bj[t, 0], cy + bj[t, 1], BALL_SIZE, BALL_SIZE),
                                       float(bconf[t]), ObjectClass.BALL))
            clutter = []
            for _ in range(int(bcounts[t])):
                for _ in range(100):
                    px = r_bclut.uniform(BALL_SIZE, W - BALL_SIZE)
                    py = r_bclut.uniform(BALL_SIZE, H - BALL_SIZE)
                    if np.hypot(px - cx, py - cy) >= s.ball_clutter_min_dist:
                        break
                else:
                    continue
                clutter.append(Detection(t, BBox.from_center(px, py, BALL_SIZE, BALL_SIZE),
                                         float(r_bclut.uniform(0.05, 0.5)), ObjectClass.BALL))
            frame.extend(clutter)
            order = r_bclut.permutation(len(frame))
            ball_dets[t] = [frame[i] for i in order]
            ball_clutter[t] = clutter

    cmc = {}
    for t in range(1, T):
        dx = offs[t] - offs[t - 1]
        cmc[t] = AffineMotion(np.eye(2), np.array([-dx, 0.0]), t)

    return SynthData(s, gt, dets, ball_gt, ball_dets, ball_clutter, cmc, identity, split_frames)


def gt_as_detections(data: SynthData) -> dict[int, list[Detection]]:
    """Perfect detections: ground-truth boxes with noise-free identity embeddings."""
    out = {}
    for t, items in data.gt.items():
        out[t] = [Detection(t, box, 1.0, ObjectClass.PLAYER, data.identity_embeddings[pid - 1])
                  for pid, box in items]
    return out


def synth_generate(s: SynthScenario, out_dir: str | Path, name: str = "synth") -> SequenceBundle:
    """Generate a scene and write it as a bundle directory."""
    data = generate(s)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"gt": "gt.txt", "detections": "det.txt", "embeddings": "emb.txt", "cmc": "cmc.txt"}
    write_mot_file([MotRecord(t, pid, box, 1.0) for t, items in data.gt.items() for pid, box in items],
                   out / files["gt"])
    write_mot_file([MotRecord(t, -1, d.bbox, d.confidence) for t, ds in data.detections.items() for d in ds],
                   out / files["detections"])
    emb = {(t, i): d.embedding for t, ds in data.detections.items() for i, d in enumerate(ds)
           if d.embedding is not None}
    write_embeddings(emb, out / files["embeddings"])
    write_cmc(data.cmc, out / files["cmc"])
    if s.ball:
        files["ball_gt"] = "ball_gt.txt"
        files["ball_detections"] = "ball_det.txt"
        write_mot_file([MotRecord(t, 1, b, 1.0) for t, b in data.ball_gt.items()], out / files["ball_gt"])
        write_mot_file([MotRecord(t, -1, d.bbox, d.confidence) for t, ds in data.ball_detections.items()
                        for d in ds], out / files["ball_detections"])
    scenario = dataclasses.asdict(s)
    scenario["split_events"] = [[p, f + 1] for p, f in s.split_events]
    bundle = SequenceBundle(
        root=out, name=name, image_width=s.image_width, image_height=s.image_height,
        frame_rate=s.frame_rate, num_frames=s.duration, embedding_dim=s.embedding_dim,
        files=files, extra={"scenario": scenario},
    )
    bundle.save()
    return bundle
