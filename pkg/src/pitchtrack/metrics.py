"""HOTA / DetA / AssA evaluation of tracker output against ground truth."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import BBox, iou_matrix
from .errors import InputError

ALPHAS = np.round(np.arange(0.05, 0.99, 0.05), 2)
_EPS = np.finfo(float).eps

# frame -> [(id, box)]; boxes may be BBox or xywh sequences
FrameBoxes = Mapping[int, Sequence[tuple[int, BBox | Sequence[float]]]]


@dataclass(frozen=True)
class FrameAnnotations:
    frame: int
    gt: Sequence[tuple[int, BBox]]
    pred: Sequence[tuple[int, BBox]]

    def __post_init__(self):
        for side, name in ((self.gt, "gt"), (self.pred, "pred")):
            ids = [i for i, _ in side]
            if len(set(ids)) != len(ids):
                raise InputError(f"frame {self.frame}: duplicate {name} ids")


@dataclass
class EvalReport:
    alphas: np.ndarray
    hota_alpha: np.ndarray
    deta_alpha: np.ndarray
    assa_alpha: np.ndarray
    loca_alpha: np.ndarray
    tp: np.ndarray
    fn: np.ndarray
    fp: np.ndarray
    sequences: list[str] = field(default_factory=list)

    @property
    def hota(self) -> float:
        return float(self.hota_alpha.mean())

    @property
    def deta(self) -> float:
        return float(self.deta_alpha.mean())

    @property
    def assa(self) -> float:
        return float(self.assa_alpha.mean())

    @property
    def loca(self) -> float:
        return float(self.loca_alpha.mean())

    def as_dict(self) -> dict[str, float]:
        out = {"HOTA": self.hota, "DetA": self.deta, "AssA": self.assa, "LocA": self.loca}
        for a, h in zip(self.alphas, self.hota_alpha):
            out[f"HOTA_alpha_{int(round(a * 100)):02d}"] = float(h)
        return out

    def to_kv(self) -> str:
        return "".join(f"{k}={v:.6f}\n" for k, v in self.as_dict().items())

    def to_table(self) -> str:
        lines = [f"{'alpha':>6} {'HOTA':>9} {'DetA':>9} {'AssA':>9} {'LocA':>9} {'TP':>8} {'FN':>8} {'FP':>8}"]
        for i, a in enumerate(self.alphas):
            lines.append(
                f"{a:6.2f} {self.hota_alpha[i]:9.6f} {self.deta_alpha[i]:9.6f} "
                f"{self.assa_alpha[i]:9.6f} {self.loca_alpha[i]:9.6f} "
                f"{int(self.tp[i]):8d} {int(self.fn[i]):8d} {int(self.fp[i]):8d}")
        lines.append(f"{'mean':>6} {self.hota:9.6f} {self.deta:9.6f} {self.assa:9.6f} {self.loca:9.6f}")
        return "\n".join(lines) + "\n"

    def write(self, prefix: str | Path) -> tuple[Path, Path]:
        prefix = Path(prefix)
        kv = prefix.with_name(prefix.name + ".kv")
        txt = prefix.with_name(prefix.name + ".txt")
        kv.write_text(self.to_kv())
        txt.write_text(self.to_table())
        return kv, txt


def match_frame(gt_boxes: np.ndarray, pred_boxes: np.ndarray, alpha: float,
                assoc_scores: np.ndarray, ious: np.ndarray | None = None) -> list[tuple[int, int]]:
    """Bijective gt/pred matching for one frame at threshold ``alpha``.

    Maximises the number of pairs with IoU >= alpha first, and the summed
    ``assoc_scores * iou`` second. Indices are positions within the frame.
    """
    if ious is None:
        ious = iou_matrix(gt_boxes, pred_boxes)
    if ious.size == 0:
        return []
    valid = ious >= alpha - _EPS
    if not valid.any():
        return []
    # each secondary term is <= 1, so K over the pair count makes the primary term dominate
    K = float(min(ious.shape) + 1)
    score = np.where(valid, K + assoc_scores * ious, 0.0)
    rows, cols = linear_sum_assignment(-score)
    return sorted((int(r), int(c)) for r, c in zip(rows, cols) if valid[r, c])


def _as_array(box) -> np.ndarray:
    if isinstance(box, BBox):
        return box.to_array()
    return np.asarray(box, dtype=float).reshape(4)


def _frame_arrays(items) -> tuple[np.ndarray, np.ndarray]:
    ids = np.array([int(i) for i, _ in items], dtype=np.int64)
    boxes = np.array([_as_array(b) for _, b in items]).reshape(-1, 4)
    if len(set(ids.tolist())) != len(ids):
        raise InputError("duplicate ids within a frame")
    return ids, boxes


@dataclass
class _SeqCounts:
    tp: np.ndarray
    fn: np.ndarray
    fp: np.ndarray
    assa_sum: np.ndarray  # sum over TPs of A(c)
    loca_sum: np.ndarray


def _evaluate_sequence(gt: FrameBoxes, pred: FrameBoxes) -> _SeqCounts:
    gt_frames = sorted(f for f, v in gt.items())
    pred_frames = [f for f, v in pred.items() if len(v)]
    if gt_frames:
        lo, hi = gt_frames[0], gt_frames[-1]
        bad = [f for f in pred_frames if f < lo or f > hi]
        if bad:
            raise InputError(f"prediction frames {bad[:3]} outside ground-truth range [{lo}, {hi}]")
    elif pred_frames:
        raise InputError("predictions given for a sequence with no ground-truth frames")
    frames = sorted(set(gt_frames) | set(pred_frames))

    per_frame = []
    gt_ids_all: dict[int, int] = {}
    pr_ids_all: dict[int, int] = {}
    for f in frames:
        g_ids, g_boxes = _frame_arrays(gt.get(f, ()))
        p_ids, p_boxes = _frame_arrays(pred.get(f, ()))
        for i in g_ids.tolist():
            gt_ids_all.setdefault(i, len(gt_ids_all))
        for i in p_ids.tolist():
            pr_ids_all.setdefault(i, len(pr_ids_all))
        gi = np.array([gt_ids_all[i] for i in g_ids.tolist()], dtype=np.int64)
        pi = np.array([pr_ids_all[i] for i in p_ids.tolist()], dtype=np.int64)
        per_frame.append((gi, pi, iou_matrix(g_boxes, p_boxes)))

    n_g, n_p = len(gt_ids_all), len(pr_ids_all)
    A = len(ALPHAS)
    # pass 1: soft co-occurrence counts give a global id-alignment score
    potential = np.zeros((n_g, n_p))
    gt_count = np.zeros(n_g)
    pr_count = np.zeros(n_p)
    for gi, pi, ious in per_frame:
        gt_count[gi] += 1
        pr_count[pi] += 1
        if ious.size == 0:
            continue
        denom = ious.sum(axis=0, keepdims=True) + ious.sum(axis=1, keepdims=True) - ious
        sim = np.divide(ious, denom, out=np.zeros_like(ious), where=denom > _EPS)
        potential[np.ix_(gi, pi)] += sim
    align = potential / np.maximum(1.0, gt_count[:, None] + pr_count[None, :] - potential)

    tp = np.zeros(A)
    fn = np.zeros(A)
    fp = np.zeros(A)
    loca = np.zeros(A)
    matches = np.zeros((A, n_g, n_p))
    for gi, pi, ious in per_frame:
        ng, npr = len(gi), len(pi)
        if ng == 0 or npr == 0:
            fn += ng
            fp += npr
            continue
        scores = align[np.ix_(gi, pi)]
        for a_i, alpha in enumerate(ALPHAS):
            m = match_frame(None, None, float(alpha), scores, ious)
            k = len(m)
            tp[a_i] += k
            fn[a_i] += ng - k
            fp[a_i] += npr - k
            if k:
                r = np.array([x for x, _ in m])
                c = np.array([y for _, y in m])
                loca[a_i] += ious[r, c].sum()
                np.add.at(matches[a_i], (gi[r], pi[c]), 1)

    assa_sum = np.zeros(A)
    for a_i in range(A):
        mc = matches[a_i]
        ass = mc / np.maximum(1.0, gt_count[:, None] + pr_count[None, :] - mc)
        assa_sum[a_i] = float((mc * ass).sum())
    return _SeqCounts(tp, fn, fp, assa_sum, loca)


def _report(counts: Sequence[_SeqCounts], names: list[str]) -> EvalReport:
    A = len(ALPHAS)
    tp = np.sum([c.tp for c in counts], axis=0) if counts else np.zeros(A)
    fn = np.sum([c.fn for c in counts], axis=0) if counts else np.zeros(A)
    fp = np.sum([c.fp for c in counts], axis=0) if counts else np.zeros(A)
    assa_sum = np.sum([c.assa_sum for c in counts], axis=0) if counts else np.zeros(A)
    loca_sum = np.sum([c.loca_sum for c in counts], axis=0) if counts else np.zeros(A)
    deta = tp / np.maximum(1.0, tp + fn + fp)
    assa = assa_sum / np.maximum(1.0, tp)
    loca = np.where(tp > 0, loca_sum / np.maximum(1.0, tp), 0.0)
    hota = np.sqrt(deta * assa)
    return EvalReport(ALPHAS.copy(), hota, deta, assa, loca, tp, fn, fp, names)


def compute_hota(gt: FrameBoxes, pred: FrameBoxes) -> EvalReport:
    """Evaluate one sequence. Both sides map frame index to ``[(id, box), ...]``."""
    return _report([_evaluate_sequence(gt, pred)], [])


def compute_hota_multi(pairs: Mapping[str, tuple[FrameBoxes, FrameBoxes]]) -> EvalReport:
    """Pool several sequences: detection counts add up, AssA is TP-weighted."""
    names = sorted(pairs)
    return _report([_evaluate_sequence(*pairs[n]) for n in names], names)


def frames_from_annotations(items: Sequence[FrameAnnotations]) -> tuple[dict, dict]:
    gt = {a.frame: list(a.gt) for a in items}
    pred = {a.frame: list(a.pred) for a in items}
    return gt, pred
