"""Frame-level clustering (NMI) and boundary-detection scores."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)


@dataclass
class ConfusionMatrix:
    counts: np.ndarray
    ref_labels: list
    hyp_labels: list

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def _label_at(segments, times):
    """Label of the segment covering each time, or ``None``."""
    starts = np.array([s for s, _, _ in segments], dtype=np.float64)
    ends = np.array([e for _, e, _ in segments], dtype=np.float64)
    idx = np.searchsorted(starts, times, side="right") - 1
    out = []
    for t, i in zip(times, idx):
        out.append(segments[i][2] if i >= 0 and t < ends[i] else None)
    return out


def frame_confusion(ref: dict, hyp: dict, frame_shift_ms: float = 10.0) -> ConfusionMatrix:
    """Tally (reference, hypothesis) label pairs at every frame centre.

    ``ref`` and ``hyp`` map utterance ids to ``(start_ms, end_ms, label)``
    lists. Frames not covered by both labelings are skipped.
    """
    pairs = []
    for uid in ref:
        if uid not in hyp or not ref[uid] or not hyp[uid]:
            continue
        r = sorted(ref[uid])
        h = sorted(hyp[uid])
        end = max(e for _, e, _ in r)
        n = int(np.floor(end / frame_shift_ms + 1e-9))
        centres = (np.arange(n) + 0.5) * frame_shift_ms
        for a, b in zip(_label_at(r, centres), _label_at(h, centres)):
            if a is not None and b is not None:
                pairs.append((a, b))
    if not pairs:
        raise DataError("reference and hypothesis share no scored frames")
    ref_labels = sorted({a for a, _ in pairs}, key=str)
    hyp_labels = sorted({b for _, b in pairs}, key=str)
    ri = {lab: i for i, lab in enumerate(ref_labels)}
    hi = {lab: i for i, lab in enumerate(hyp_labels)}
    counts = np.zeros((len(ref_labels), len(hyp_labels)), dtype=np.int64)
    for a, b in pairs:
        counts[ri[a], hi[b]] += 1
    return ConfusionMatrix(counts, ref_labels, hyp_labels)


def _entropy(p):
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def nmi(confusion) -> float:
    """``200 * I(P; U) / (H(P) + H(U))`` in percent."""
    counts = np.asarray(getattr(confusion, "counts", confusion), dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise DataError("confusion matrix is empty")
    joint = counts / total
    h_ref = _entropy(joint.sum(axis=1))
    h_hyp = _entropy(joint.sum(axis=0))
    denom = h_ref + h_hyp
    if denom <= 0:
        logger.warning("NMI undefined for a single-cell confusion matrix; returning 0")
        return 0.0
    mi = h_ref + h_hyp - _entropy(joint.ravel())
    return float(np.clip(200.0 * mi / denom, 0.0, 100.0))


def internal_boundaries(segments) -> list[float]:
    """Segment edges excluding the utterance start and end."""
    if not segments:
        return []
    segs = sorted(segments)
    first, last = segs[0][0], max(e for _, e, _ in segs)
    edges = sorted({s for s, _, _ in segs} | {e for _, e, _ in segs})
    return [b for b in edges if b != first and b != last]


def match_boundaries(ref_bounds, hyp_bounds, tolerance_ms: float = 20.0) -> int:
    """Greedy one-to-one matching in time order; returns the number of hits."""
    ref_bounds = sorted(ref_bounds)
    used = [False] * len(ref_bounds)
    hits, lo = 0, 0
    for h in sorted(hyp_bounds):
        while lo < len(ref_bounds) and (used[lo] or ref_bounds[lo] < h - tolerance_ms - 1e-9):
            lo += 1
        j = lo
        while j < len(ref_bounds) and ref_bounds[j] <= h + tolerance_ms + 1e-9:
            if not used[j]:
                used[j] = True
                hits += 1
                break
            j += 1
    return hits


def prf(hits: int, n_ref: int, n_hyp: int):
    precision = hits / n_hyp if n_hyp else 0.0
    recall = hits / n_ref if n_ref else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f


def boundary_counts(ref: dict, hyp: dict, tolerance_ms: float = 20.0):
    """``(hits, n_ref, n_hyp)`` pooled over the utterances of ``ref``."""
    hits = n_ref = n_hyp = 0
    for uid, segs in ref.items():
        rb = internal_boundaries(segs)
        hb = internal_boundaries(hyp.get(uid, []))
        hits += match_boundaries(rb, hb, tolerance_ms)
        n_ref += len(rb)
        n_hyp += len(hb)
    return hits, n_ref, n_hyp


def boundary_fscore(ref: dict, hyp: dict, tolerance_ms: float = 20.0):
    """Boundary ``(precision, recall, fscore)`` within +-``tolerance_ms``."""
    return prf(*boundary_counts(ref, hyp, tolerance_ms))


def evaluate(ref: dict, hyp: dict, frame_shift_ms: float = 10.0,
             tolerance_ms: float = 20.0) -> dict:
    conf = frame_confusion(ref, hyp, frame_shift_ms)
    hits, n_ref, n_hyp = boundary_counts(ref, hyp, tolerance_ms)
    p, r, f = prf(hits, n_ref, n_hyp)
    return {"nmi": nmi(conf), "precision": p, "recall": r, "fscore": f,
            "n_frames": conf.total, "n_ref_boundaries": n_ref, "n_hyp_boundaries": n_hyp}
