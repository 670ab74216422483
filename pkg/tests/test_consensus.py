import os
import numpy as np
import pytest
from semfuse.aux import (DimensionMismatchError, InvalidInputError,
                         MissingArtifactError, SpaceMismatchError,
                         are_close_arr)
from semfuse.consensus import (ConsensusMap, VoteConfig, aggregate,
                               consensus_paths, merge_augmented,
                               read_consensus, read_consensus_top1,
                               run_consensus, write_consensus)
from semfuse.labelspace import (LabelMap, make_label_space, make_mapping,
                                write_label_map)

dyadic = (0.25, 0.5, 1., 2.)


def _brute_force(stack, weights, min_votes):
    votes = dict()
    for label, w in zip(stack, weights):
        if label != 0:
            votes[label] = votes.get(label, 0.) + w
    ranked = sorted(votes.items(), key=lambda kv: (-kv[1], kv[0]))
    if not ranked or ranked[0][1] < min_votes:
        return 0, 0., 0, 0.
    if len(ranked) == 1:
        return ranked[0][0], ranked[0][1], 0, 0.
    return ranked[0][0], ranked[0][1], ranked[1][0], ranked[1][1]


# -------------------------------------------------------------
#       ****     TEST: weighted vote against brute force      ****
# -------------------------------------------------------------
def test_aggregate_matches_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n_sources = int(rng.integers(1, 8))
        names = ['m{:d}'.format(k) for k in range(n_sources)]
        weights = dict(zip(names, rng.choice(dyadic, size=n_sources)))
        min_votes = float(rng.choice((0., 1., 1.5, 2.5)))
        maps = [LabelMap(rng.integers(0, 6, size=(20, 25)), 'u')
                for _ in names]
        cmap = aggregate(list(zip(names, maps)),
                         VoteConfig(weights, min_votes))
        assert cmap.shape == (20, 25) and cmap.space == 'u'
        stacks = np.stack([m.data for m in maps], axis=-1)
        w = [weights[n] for n in names]
        for r in range(20):
            for c in range(25):
                t1, v1, t2, v2 = _brute_force(stacks[r, c], w, min_votes)
                assert cmap.top1[r, c] == t1 and cmap.top1_votes[r, c] == v1
                assert cmap.top2[r, c] == t2 and cmap.top2_votes[r, c] == v2


def test_aggregate_ignores_source_order():
    rng = np.random.default_rng(4)
    names = ['a', 'b', 'c', 'd', 'e']
    maps = [LabelMap(rng.integers(0, 4, size=(8, 9)), 'u') for _ in names]
    cfg = VoteConfig({'a': 0.5, 'b': 1., 'c': 2., 'd': 0.25, 'e': 1.}, 1.)
    ref = aggregate(list(zip(names, maps)), cfg)
    for _ in range(10):
        order = rng.permutation(len(names))
        cmap = aggregate([(names[k], maps[k]) for k in order], cfg)
        for name in ('top1', 'top1_votes', 'top2', 'top2_votes'):
            assert np.array_equal(getattr(cmap, name), getattr(ref, name))


def test_unlabeled_never_wins():
    maps = [('a', LabelMap([[0, 0]], 'u')), ('b', LabelMap([[0, 3]], 'u')),
            ('c', LabelMap([[0, 0]], 'u'))]
    cmap = aggregate(maps, VoteConfig(min_votes=1.))
    assert cmap.top1.tolist() == [[0, 3]]
    assert cmap.top1_votes.tolist() == [[0., 1.]]


def test_aggregate_checks_inputs():
    a = LabelMap(np.zeros((2, 2)), 'u')
    with pytest.raises(InvalidInputError):
        aggregate([])
    with pytest.raises(InvalidInputError):
        aggregate([('a', a), ('a', a)])
    with pytest.raises(DimensionMismatchError):
        aggregate([('a', a), ('b', LabelMap(np.zeros((2, 3)), 'u'))])
    with pytest.raises(SpaceMismatchError):
        aggregate([('a', a), ('b', LabelMap(np.zeros((2, 2)), 'v'))])
    with pytest.raises(InvalidInputError):
        aggregate([('a', a)], VoteConfig({'b': 1.}))
    with pytest.raises(InvalidInputError):
        VoteConfig(min_votes=-1.)
    with pytest.raises(InvalidInputError):
        VoteConfig({'a': 0.})
    with pytest.raises(InvalidInputError):
        ConsensusMap(np.ones((1, 1)), np.ones((1, 1)), np.ones((1, 1)),
                     np.full((1, 1), 2.), 'u')


def test_merge_augmented_keeps_agreement():
    a = LabelMap([[1, 2, 3], [4, 5, 6]], 'u')
    b = LabelMap([[1, 0, 3], [4, 9, 6]], 'u')
    assert merge_augmented([a, b]).data.tolist() == [[1, 0, 3], [4, 0, 6]]
    assert merge_augmented([a]).data.tolist() == a.data.tolist()
    with pytest.raises(InvalidInputError):
        merge_augmented([])


# -------------------------------------------------------------
#       ****     TEST: consensus files      ****
# -------------------------------------------------------------
def test_consensus_files(tmp_path):
    cmap = ConsensusMap(np.array([[1, 0], [7, 300]]),
                        np.array([[2.5, 0.], [1.25, 3.]]),
                        np.array([[2, 0], [0, 4]]),
                        np.array([[0.5, 0.], [0., 3.]]), 'u')
    write_consensus(str(tmp_path), 12, cmap)
    names = sorted(os.listdir(tmp_path))
    assert names == ['000012.png', '000012_counts.png',
                     '000012_top2.png', '000012_top2_counts.png']
    back = read_consensus(str(tmp_path), 12, 'u')
    assert np.array_equal(back.top1, cmap.top1)
    assert np.array_equal(back.top2, cmap.top2)
    assert are_close_arr(back.top1_votes, cmap.top1_votes)
    assert are_close_arr(back.top2_votes, cmap.top2_votes)
    os.remove(consensus_paths(str(tmp_path), 12)[3])
    assert not read_consensus(str(tmp_path), 12).top2_votes.any()
    assert read_consensus_top1(str(tmp_path), 12, 'u').data.tolist() == \
        [[1, 0], [7, 300]]


def test_run_consensus_on_scene(tmp_path):
    space = make_label_space('unified', ('wall', 'floor', 'chair'))
    scene = str(tmp_path)
    pred = os.path.join(scene, 'predictions')
    maps = {'a': [[1, 2], [3, 0]], 'b': [[1, 2], [2, 0]],
            'c': [[10, 20], [20, 10]]}
    for name, data in maps.items():
        for index in (0, 1):
            write_label_map(os.path.join(pred, name, '{:06d}.png'.format(
                index)), LabelMap(data, name))
    m = make_mapping('c', 'unified', {10: 1, 20: 3})
    n = run_consensus(scene, ['a', 'b', 'c'], VoteConfig(min_votes=2.),
                      space, {'c': m}, workers=2)
    assert n == 2
    cmap = read_consensus(os.path.join(scene, 'consensus'), 1, 'unified')
    assert cmap.top1.tolist() == [[1, 2], [3, 0]]
    assert cmap.top1_votes.tolist() == [[3., 2.], [2., 0.]]
    assert cmap.top2.tolist() == [[0, 3], [2, 0]]


def test_run_consensus_missing_inputs(tmp_path):
    with pytest.raises(MissingArtifactError):
        run_consensus(str(tmp_path), ['a'])
    with pytest.raises(InvalidInputError):
        run_consensus(str(tmp_path), [])
    write_label_map(str(tmp_path / 'predictions' / 'a' / '000000.png'),
                    LabelMap([[1]], 'unified'))
    write_label_map(str(tmp_path / 'predictions' / 'b' / '000001.png'),
                    LabelMap([[1]], 'unified'))
    with pytest.raises(MissingArtifactError):
        run_consensus(str(tmp_path), ['a', 'b'], workers=1)
