import numpy as np
import pytest

from pitchtrack.core import BBox, Detection, ObjectClass, Tracklet


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def linear_tracklet(tid, frames, start=(500.0, 400.0), vel=(2.0, 1.0), size=(30.0, 70.0),
                    emb=None, noise=0.0, rng=None):
    frames = np.asarray(frames)
    t = frames - frames[0]
    cx = start[0] + vel[0] * t
    cy = start[1] + vel[1] * t
    w, h = size
    boxes = np.stack([cx - w / 2, cy - h / 2, np.full_like(cx, w), np.full_like(cx, h)], axis=1)
    embs = None
    ema = None
    if emb is not None:
        rng = rng or np.random.default_rng(0)
        rows = emb[None, :] + noise / np.sqrt(len(emb)) * rng.normal(size=(len(frames), len(emb)))
        embs = rows / np.linalg.norm(rows, axis=1, keepdims=True)
        ema = unit(embs.mean(axis=0))
    return Tracklet(tid, frames, boxes, np.full(len(frames), 0.9), embs, ema)


def det(frame, x, y, w=30.0, h=60.0, conf=0.9, emb=None, cls=ObjectClass.PLAYER):
    return Detection(frame, BBox(x, y, w, h), conf, cls, None if emb is None else unit(emb))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the test summary
ACCEPTANCE: list[str] = []


def record(name: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
