"""Binarisation and IoU metrics over tiles."""
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, ShapeMismatch

THRESHOLD = 0.5


def binarize(prob, threshold=THRESHOLD):
    """1 where prob > threshold (strict), else 0."""
    return (np.asarray(prob) > threshold).astype(np.uint8)


def _check(pred, gt):
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    return pred.astype(bool), gt.astype(bool)


def overlap_counts(pred, gt):
    p, g = _check(pred, gt)
    return int(np.count_nonzero(p & g)), int(np.count_nonzero(p | g))


def iou(pred, gt):
    """|pred & gt| / |pred | gt|; two empty masks score 1.0."""
    inter, union = overlap_counts(pred, gt)
    return 1.0 if union == 0 else inter / union


@dataclass(frozen=True)
class TileResult:
    tile_id: str
    intersection: int
    union: int

    @property
    def iou(self):
        return 1.0 if self.union == 0 else self.intersection / self.union


def tile_results(pairs, ids=None):
    pairs = list(pairs)
    ids = [str(i) for i in range(len(pairs))] if ids is None else list(ids)
    return [TileResult(tid, *overlap_counts(p, g)) for tid, (p, g) in zip(ids, pairs)]


def summarize(results):
    """(A_IoU, G_IoU) from per-tile counts."""
    if not results:
        raise EmptyInput("no tiles to summarize")
    a = sum(r.iou for r in results) / len(results)
    union = sum(r.union for r in results)
    g = 1.0 if union == 0 else sum(r.intersection for r in results) / union
    return a, g


def a_iou(pairs):
    """Mean of per-tile IoU."""
    return summarize(tile_results(pairs))[0]


def g_iou(pairs):
    """IoU of the stitched map; for a tile partition the count sums give it directly."""
    return summarize(tile_results(pairs))[1]


def format_report(results):
    """``tile_id,intersection,union,iou`` lines then the A_IoU / G_IoU summary."""
    a, g = summarize(results)
    lines = [f"{r.tile_id},{r.intersection},{r.union},{r.iou:.4f}" for r in results]
    lines += [f"A_IoU={a:.4f}", f"G_IoU={g:.4f}"]
    return "\n".join(lines) + "\n"
