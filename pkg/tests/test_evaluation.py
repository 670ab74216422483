import os
import numpy as np
import pytest
from semfuse import evaluation
from semfuse.aux import (DimensionMismatchError, InvalidInputError,
                         SpaceMismatchError, are_close)
from semfuse.evaluation import (ClassGroups, ConfusionMatrix, confusion,
                                confusion_clouds, confusion_dirs,
                                evaluate_projected, group_summary,
                                load_class_groups, macc, metrics, miou,
                                per_class_iou, tacc)
from semfuse.fileio import write_csv, write_label_png
from semfuse.fusion3d import LabeledCloud, write_labeled_cloud
from semfuse.labelspace import LabelMap, make_label_space, make_mapping


# -------------------------------------------------------------
#       ****     TEST: metrics      ****
# -------------------------------------------------------------
def test_two_class_example():
    cm = confusion([1, 1, 2, 2], [1, 2, 2, 2])
    iou = per_class_iou(cm)
    assert are_close(iou[1], 0.5) and are_close(iou[2], 2./3.)
    assert are_close(miou(cm), 7./12.)
    assert are_close(tacc(cm), 0.75)
    assert are_close(macc(cm), 0.75)
    assert cm.nonzero() == {(1, 1): 1, (1, 2): 1, (2, 2): 2}


def test_perfect_prediction():
    gt = np.random.default_rng(6).integers(1, 9, size=500)
    cm = confusion(gt, gt)
    assert miou(cm) == 1. and macc(cm) == 1. and tacc(cm) == 1.


def test_miss_column_and_unannotated():
    cm = confusion([1, 1, 2, 0], [0, 1, 2, 5])
    assert cm.total == 3
    assert cm[1, 0] == 1 and cm[0, 5] == 0
    iou = per_class_iou(cm)
    assert sorted(iou) == [1, 2]
    assert are_close(iou[1], 0.5) and iou[2] == 1.
    assert are_close(tacc(cm), 2./3.)


def test_no_evaluated_elements():
    cm = confusion([0, 0], [1, 2])
    with pytest.raises(InvalidInputError):
        miou(cm)
    with pytest.raises(InvalidInputError):
        tacc(ConfusionMatrix.empty())


def test_confusion_checks():
    with pytest.raises(DimensionMismatchError):
        confusion([1, 2], [1])
    with pytest.raises(SpaceMismatchError):
        confusion(LabelMap([[1]], 'a'), LabelMap([[1]], 'b'))
    with pytest.raises(InvalidInputError):
        confusion([1, -1], [1, 1])
    with pytest.raises(InvalidInputError):
        ConfusionMatrix([[1, 0], [0, 1]])


def test_chunked_confusion_matches(monkeypatch):
    rng = np.random.default_rng(7)
    gt = rng.integers(0, 6, size=1000)
    pred = rng.integers(0, 6, size=1000)
    ref = confusion(gt, pred)
    monkeypatch.setattr(evaluation, '_chunk', 64)
    assert confusion(gt, pred, workers=4) == ref


def test_matrix_sum_pads():
    a = confusion([1], [1])
    b = confusion([3], [2])
    s = a + b
    assert s.n == 4 and s.total == 2
    assert s == b + a


def test_confusion_ignores_element_order():
    rng = np.random.default_rng(8)
    gt = rng.integers(0, 7, size=600)
    pred = rng.integers(0, 7, size=600)
    ref = confusion(gt, pred)
    for _ in range(5):
        order = rng.permutation(gt.size)
        assert confusion(gt[order], pred[order]) == ref


def test_swapping_gt_and_prediction_transposes():
    rng = np.random.default_rng(9)
    gt = rng.integers(1, 7, size=400)
    pred = rng.integers(1, 7, size=400)
    assert confusion(pred, gt) == confusion(gt, pred).transposed()
    gt[::5] = 0
    pred[::7] = 0
    swapped = confusion(pred, gt, n=7).counts
    cm = confusion(gt, pred, n=7)
    assert np.array_equal(swapped[1:, 1:], cm.transposed().counts[1:, 1:])
    t = cm.transposed().counts
    assert not t[0].any() and not t[:, 0].any()
    assert t.sum() == ((gt != 0) & (pred != 0)).sum()


def test_matrix_size_must_cover_ids():
    assert confusion([1, 2], [2, 3], n=6).n == 6
    with pytest.raises(InvalidInputError):
        confusion([1, 2], [2, 3], n=3)
    with pytest.raises(InvalidInputError):
        confusion([4], [1], n=4)


# -------------------------------------------------------------
#       ****     TEST: class groups      ****
# -------------------------------------------------------------
def test_group_summary(tmp_path):
    cm = confusion([1, 1, 2, 2, 4], [1, 2, 2, 2, 4])
    groups = ClassGroups.from_dict({'head': [1, 2], 'tail': [3, 4],
                                    'rare': [5]})
    summary = group_summary(cm, groups)
    assert sorted(summary) == ['head', 'tail']
    assert are_close(summary['head'], 7./12.)
    assert summary['tail'] == 1.
    out = metrics(cm, groups)
    assert out['groups'] == summary
    assert sorted(out['per_class_iou']) == ['1', '2', '4']
    path = tmp_path / 'groups.csv'
    write_csv(path, ('id', 'group'),
              [(1, 'head'), (2, 'head'), (3, 'tail'), (4, 'tail')])
    assert load_class_groups(path).names() == ['head', 'tail']
    with pytest.raises(InvalidInputError):
        ClassGroups.from_dict({'a': [1], 'b': [1]})
    with pytest.raises(InvalidInputError):
        groups.validate(make_label_space('s', ('x', 'y')))


# -------------------------------------------------------------
#       ****     TEST: cross-space evaluation      ****
# -------------------------------------------------------------
def test_projected_top_k():
    space = make_label_space('g', ('a', 'b', 'c'))
    m = make_mapping('p', 'g', {10: 1, 11: 2, 12: 3})
    gt = [1, 1, 1, 2, 3]
    pred = [10, 10, 11, 11, 12]
    full = evaluate_projected(gt, pred, m, space)
    assert are_close(full['miou'], 13./18.)
    top1 = evaluate_projected(gt, pred, m, space, k=1)
    assert are_close(top1['miou'], 2./9.)
    with pytest.raises(SpaceMismatchError):
        evaluate_projected(gt, pred, make_mapping('p', 'x', {10: 1}), space)


# -------------------------------------------------------------
#       ****     TEST: file inputs      ****
# -------------------------------------------------------------
def test_confusion_dirs(tmp_path):
    gt_dir = str(tmp_path / 'gt')
    pred_dir = str(tmp_path / 'pred')
    for k in range(3):
        write_label_png(os.path.join(gt_dir, '{:06d}.png'.format(k)),
                        np.array([[1, 2], [2, 0]]))
        write_label_png(os.path.join(pred_dir, '{:06d}.png'.format(k)),
                        np.array([[1, 1], [2, 3]]))
    cm = confusion_dirs(gt_dir, pred_dir)
    assert cm.nonzero() == {(1, 1): 3, (2, 1): 3, (2, 2): 3}
    os.remove(os.path.join(pred_dir, '000002.png'))
    with pytest.raises(InvalidInputError):
        confusion_dirs(gt_dir, pred_dir)


def test_confusion_clouds(tmp_path):
    def cloud(labels):
        n = len(labels)
        zeros = np.zeros(n, dtype=int)
        return LabeledCloud(np.zeros((n, 3)), np.tile((0., 0., 1.), (n, 1)),
                            np.array(labels), zeros, zeros, zeros)

    write_labeled_cloud(tmp_path / 'gt.ply', cloud([1, 2, 2, 0]))
    write_labeled_cloud(tmp_path / 'pred.ply', cloud([1, 2, 1, 1]))
    write_labeled_cloud(tmp_path / 'short.ply', cloud([1]))
    cm = confusion_clouds(tmp_path / 'gt.ply', tmp_path / 'pred.ply')
    assert cm.nonzero() == {(1, 1): 1, (2, 2): 1, (2, 1): 1}
    with pytest.raises(DimensionMismatchError):
        confusion_clouds(tmp_path / 'gt.ply', tmp_path / 'short.ply')
