"""Segmentation metrics from a confusion matrix.

Rows of the matrix are ground-truth ids, columns predicted ids. Ground-truth
id 0 (unannotated) is never counted; a prediction of 0 against an annotated
element lands in column 0, the miss column, and counts as a false negative
of the ground-truth class only.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import logging
import os
import numpy as np
from .aux import InvalidInputError, DimensionMismatchError, SpaceMismatchError
from .fileio import read_csv, frame_indices, read_label_png, frame_name
from .fusion3d import read_labeled_cloud
from .labelspace import LabelMap, project_topk
__docformat__ = 'reStructuredText en'

logger = logging.getLogger(__name__)
_chunk = 1 << 22


# -----------------------------------------------------------------------------
#                               Confusion matrix
class ConfusionMatrix:
    """Square matrix of counts indexed by class id."""

    def __init__(self, counts):
        counts = np.asarray(counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise DimensionMismatchError('confusion matrix must be square')
        if np.any(counts < 0):
            raise InvalidInputError('negative counts')
        if counts.size and counts[0].any():
            raise InvalidInputError('row 0 (unannotated) must be empty')
        self.counts = counts

    @classmethod
    def empty(cls, n=1):
        return cls(np.zeros((n, n), dtype=np.int64))

    @property
    def n(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    def __getitem__(self, key):
        gt, pred = key
        if max(gt, pred) >= self.n:
            return 0
        return int(self.counts[gt, pred])

    def __add__(self, other):
        n = max(self.n, other.n)
        return ConfusionMatrix(_padded(self.counts, n) +
                               _padded(other.counts, n))

    def __eq__(self, other):
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        n = max(self.n, other.n)
        return np.array_equal(_padded(self.counts, n),
                              _padded(other.counts, n))

    def transposed(self):
        """Matrix with ground truth and prediction swapped.

        The miss column has no annotated counterpart and is dropped.
        """
        counts = self.counts.T.copy()
        counts[:1] = 0
        return ConfusionMatrix(counts)

    def nonzero(self):
        """Dictionary ``(gt, pred) -> count`` of the non-zero cells."""
        gt, pred = np.nonzero(self.counts)
        return {(int(g), int(p)): int(self.counts[g, p])
                for g, p in zip(gt, pred)}

    # ------------------------------- tallies ------------------------------
    def true_positives(self):
        tp = np.diag(self.counts).copy()
        tp[:1] = 0
        return tp

    def gt_counts(self):
        return self.counts.sum(axis=1)

    def pred_counts(self):
        pred = self.counts.sum(axis=0)
        pred[:1] = 0
        return pred


def _padded(counts, n):
    out = np.zeros((n, n), dtype=np.int64)
    out[:counts.shape[0], :counts.shape[1]] = counts
    return out


def _bincount_matrix(gt, pred, n):
    keep = gt != 0
    return np.bincount(n*gt[keep] + pred[keep],
                       minlength=n*n).reshape(n, n)


def confusion(gt, pred, n=None, workers=None):
    """Confusion matrix of two label arrays of equal length.

    :param gt: ground-truth ids (id 0 is skipped)
    :param pred: predicted ids (id 0 is a miss)
    :param n: matrix size (default: largest id + 1)
    :param workers: number of threads; partial matrices are summed
    :rtype: ConfusionMatrix
    """
    if isinstance(gt, LabelMap) and isinstance(pred, LabelMap) and \
            gt.space != pred.space:
        raise SpaceMismatchError('gt in {:s}, prediction in {:s}'.format(
            gt.space, pred.space))
    gt = np.asarray(gt.data if isinstance(gt, LabelMap) else gt)
    pred = np.asarray(pred.data if isinstance(pred, LabelMap) else pred)
    if gt.shape != pred.shape:
        raise DimensionMismatchError('gt has {:d} elements, prediction {:d}'
                                     .format(gt.size, pred.size))
    gt = gt.astype(np.int64).ravel()
    pred = pred.astype(np.int64).ravel()
    if gt.size and min(gt.min(), pred.min()) < 0:
        raise InvalidInputError('negative label ids')
    top = int(max(gt.max(initial=0), pred.max(initial=0)))
    if n is None:
        n = top + 1
    elif n <= top:
        raise InvalidInputError('matrix size {:d} too small for id {:d}'
                                .format(n, top))
    chunks = [slice(a, a + _chunk) for a in range(0, gt.size, _chunk)]
    if len(chunks) <= 1:
        return ConfusionMatrix(_bincount_matrix(gt, pred, n))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = pool.map(lambda s: _bincount_matrix(gt[s], pred[s], n),
                         chunks)
        return ConfusionMatrix(sum(parts))


# -----------------------------------------------------------------------------
#                               Metrics
def _check(cm):
    if cm.total == 0:
        raise InvalidInputError('no evaluated elements')


def per_class_iou(cm):
    """IoU of every class present in the ground truth or the prediction.

    :rtype: dict
    """
    _check(cm)
    tp = cm.true_positives()
    gt = cm.gt_counts()
    pred = cm.pred_counts()
    union = gt + pred - tp
    present = np.flatnonzero(gt + pred > 0)
    return {int(c): tp[c]/union[c] for c in present if c != 0}


def miou(cm):
    return float(np.mean(list(per_class_iou(cm).values())))


def per_class_accuracy(cm):
    _check(cm)
    tp = cm.true_positives()
    gt = cm.gt_counts()
    return {int(c): tp[c]/gt[c] for c in np.flatnonzero(gt) if c != 0}


def macc(cm):
    return float(np.mean(list(per_class_accuracy(cm).values())))


def tacc(cm):
    _check(cm)
    return float(cm.true_positives().sum()/cm.total)


# -----------------------------------------------------------------------------
#                               Class groups
@dataclass(frozen=True)
class ClassGroups:
    """Named, disjoint sets of class ids (e.g. head, common and tail)."""
    groups: tuple  # ((name, frozenset of ids), ...)

    def __post_init__(self):
        seen = dict()
        for name, ids in self.groups:
            for c in ids:
                if c in seen:
                    raise InvalidInputError(
                        'class {:d} in groups {:s} and {:s}'.format(
                            c, seen[c], name))
                seen[c] = name

    @classmethod
    def from_dict(cls, groups):
        return cls(tuple((str(k), frozenset(int(c) for c in v))
                         for k, v in groups.items()))

    def names(self):
        return [name for name, _ in self.groups]

    def validate(self, space):
        for name, ids in self.groups:
            for c in ids:
                if c == 0 or c not in space:
                    raise InvalidInputError('group {:s}: id {:d} is not a '
                                            'class of {:s}'.format(
                                                name, c, space.name))
        return self


def load_class_groups(path):
    """Reads a CSV with header ``id,group``; group order follows the file."""
    groups = dict()
    for row in read_csv(path, required=('id', 'group')):
        try:
            cid = int(row['id'])
        except ValueError:
            raise InvalidInputError('{:s}: invalid id {!r}'.format(
                str(path), row['id']))
        groups.setdefault(row['group'], set()).add(cid)
    return ClassGroups.from_dict(groups)


def group_summary(cm, groups):
    """Mean IoU of every group over its classes present in the ground truth.
    Groups without such a class are left out of the result."""
    iou = per_class_iou(cm)
    gt = cm.gt_counts()
    out = dict()
    for name, ids in groups.groups:
        values = [iou[c] for c in sorted(ids) if c < len(gt) and gt[c] > 0]
        if values:
            out[name] = float(np.mean(values))
    return out


def metrics(cm, groups=None):
    """Dictionary with ``per_class_iou``, ``miou``, ``macc``, ``tacc`` and
    ``groups``, ready for JSON output."""
    iou = per_class_iou(cm)
    return dict(per_class_iou={str(c): float(v) for c, v in iou.items()},
                miou=miou(cm), macc=macc(cm), tacc=tacc(cm),
                groups=group_summary(cm, groups) if groups else dict())


# -----------------------------------------------------------------------------
#                       Cross-space (zero-shot) evaluation
def class_frequencies(labels):
    """Dictionary ``id -> count`` of the non-zero ids of a label array."""
    ids, counts = np.unique(np.asarray(labels), return_counts=True)
    return {int(i): int(c) for i, c in zip(ids, counts) if i != 0}


def evaluate_projected(gt, pred, m, space, k=None, frequencies=None,
                       groups=None):
    """Metrics of predictions projected into the ground-truth space.

    :param gt: ground-truth ids in space ``space``
    :param pred: predicted ids in the source space of ``m``
    :param m: mapping source space -> ``space``
    :param space: ground-truth label space
    :param k: keep only the ``k`` most frequent target classes (``None``
        keeps all)
    :param frequencies: class frequencies ranking the target classes
        (default: those of ``gt``)
    :return: metrics dictionary (see :py:func:`metrics`)
    """
    if m.target != space.name:
        raise SpaceMismatchError('mapping target {:s} is not {:s}'.format(
            m.target, space.name))
    gt = np.asarray(gt)
    pred = np.asarray(pred).astype(np.int64)
    if k is not None:
        m = project_topk(space, m, k, frequencies if frequencies is not None
                         else class_frequencies(gt))
    lut = m.lut(int(pred.max(initial=0)) + 1)
    return metrics(confusion(gt, lut[pred]), groups)


# -----------------------------------------------------------------------------
#                               File inputs
def confusion_clouds(gt_path, pred_path):
    """Confusion of two labeled-cloud PLY files over the same points."""
    gt = read_labeled_cloud(gt_path)
    pred = read_labeled_cloud(pred_path)
    if len(gt) != len(pred):
        raise DimensionMismatchError('{:s} has {:d} points, {:s} has {:d}'
                                     .format(str(gt_path), len(gt),
                                             str(pred_path), len(pred)))
    return confusion(gt.label, pred.label)


def label_pairs_dirs(gt_dir, pred_dir):
    """Frame label pairs of two directories of ``%06d.png`` label maps."""
    indices = frame_indices(gt_dir)
    missing = sorted(set(indices) - set(frame_indices(pred_dir)))
    if missing:
        raise InvalidInputError('{:s}: no prediction for frame(s) {:s}'
                                .format(str(pred_dir), str(missing[:5])))
    for k in indices:
        yield (read_label_png(os.path.join(gt_dir, frame_name(k))),
               read_label_png(os.path.join(pred_dir, frame_name(k))))


def confusion_dirs(gt_dir, pred_dir):
    """Confusion accumulated over all frames of two label-map directories."""
    cm = ConfusionMatrix.empty()
    for gt, pred in label_pairs_dirs(gt_dir, pred_dir):
        cm = cm + confusion(gt, pred)
    return cm
