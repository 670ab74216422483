"""Per-frame consensus of the label predictions of several models.

Every source votes with its weight for the label it predicts at a pixel;
label 0 is an abstention. The consensus keeps the two most voted labels and
their weighted counts.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import logging
import os
import numpy as np
from .aux import (default_min_votes, InvalidInputError, SpaceMismatchError,
                  DimensionMismatchError, MissingArtifactError)
from .fileio import (frame_name, frame_indices, read_label_png,
                     write_label_png)
from .labelspace import LabelMap, apply_mapping, read_label_map
from .votes import tally, top2
__docformat__ = 'reStructuredText en'

logger = logging.getLogger(__name__)
count_scale = 100.  # stored counts are round(votes*count_scale)
consensus_dir = 'consensus'
predictions_dir = 'predictions'


@dataclass(frozen=True)
class VoteConfig:
    """
    :ivar weights: dictionary ``source name -> weight``. When empty every
        source votes with weight 1.
    :ivar min_votes: minimum weighted count of the winning label
    """
    weights: dict = field(default_factory=dict)
    min_votes: float = default_min_votes

    def __post_init__(self):
        if self.min_votes < 0:
            raise InvalidInputError('min_votes must be non-negative')
        if any(w < 0 for w in self.weights.values()):
            raise InvalidInputError('weights must be non-negative')
        if self.weights and not any(w > 0 for w in self.weights.values()):
            raise InvalidInputError('at least one weight must be positive')

    def weight(self, source):
        if not self.weights:
            return 1.
        try:
            return float(self.weights[source])
        except KeyError:
            raise InvalidInputError('unknown source {!r}'.format(source))


@dataclass(frozen=True, eq=False)
class ConsensusMap:
    """Per-pixel top-2 labels with their weighted vote counts."""
    top1: np.ndarray
    top1_votes: np.ndarray
    top2: np.ndarray
    top2_votes: np.ndarray
    space: str

    def __post_init__(self):
        shape = np.shape(self.top1)
        for name in ('top1_votes', 'top2', 'top2_votes'):
            if np.shape(getattr(self, name)) != shape:
                raise DimensionMismatchError('{:s} does not match top1'
                                             .format(name))
        if np.any(self.top2_votes > self.top1_votes):
            raise InvalidInputError('top2 votes exceed top1 votes')
        if np.any(self.top2_votes < 0):
            raise InvalidInputError('negative votes')

    @property
    def shape(self):
        return np.shape(self.top1)

    def label_map(self):
        return LabelMap(self.top1, self.space)


def _check_maps(maps):
    if not maps:
        raise InvalidInputError('no predictions')
    shape = maps[0].shape
    space = maps[0].space
    for lm in maps[1:]:
        if lm.shape != shape:
            raise DimensionMismatchError('label maps {:s} and {:s} differ'
                                         .format(str(shape), str(lm.shape)))
        if lm.space != space:
            raise SpaceMismatchError('label maps in {:s} and {:s}'.format(
                space, lm.space))


def aggregate(predictions, cfg=VoteConfig()):
    """Weighted per-pixel vote over several sources.

    Label 0 never collects votes. The winner (ties broken by the smaller
    id) must reach ``cfg.min_votes``; otherwise the pixel is unlabeled with
    zero votes and no runner-up.

    :param predictions: list of ``(source name, LabelMap)``
    :param cfg: vote configuration
    :type cfg: VoteConfig
    :rtype: ConsensusMap
    """
    names = [name for name, _ in predictions]
    if len(set(names)) != len(names):
        raise InvalidInputError('duplicate source names')
    # summation order fixed by name: the result does not depend on the
    # order of the list
    predictions = sorted(predictions, key=lambda p: p[0])
    maps = [lm for _, lm in predictions]
    _check_maps(maps)
    weights = [cfg.weight(name) for name, _ in predictions]
    shape = maps[0].shape
    n_pixels = int(np.prod(shape))
    pixels = np.tile(np.arange(n_pixels), len(maps))
    labels = np.concatenate([lm.data.ravel() for lm in maps])
    w = np.repeat(weights, n_pixels)
    t1, v1, t2, v2 = top2(tally(pixels, labels, w, n_pixels))
    weak = v1 < cfg.min_votes
    for arr in (t1, v1, t2, v2):
        arr[weak] = 0
    return ConsensusMap(t1.reshape(shape).astype(np.uint16), v1.reshape(shape),
                        t2.reshape(shape).astype(np.uint16), v2.reshape(shape),
                        maps[0].space)


def merge_augmented(maps):
    """Reduces test-time augmented predictions of one source: pixels where
    all variants agree keep the label, the others become 0.

    :param maps: label maps already brought back to the original frame
    :rtype: LabelMap
    """
    _check_maps(maps)
    data = maps[0].data
    agree = np.ones(data.shape, dtype=bool)
    for lm in maps[1:]:
        agree &= lm.data == data
    return maps[0].with_data(np.where(agree, data, 0))


# -----------------------------------------------------------------------------
#                               Persistence
def consensus_paths(directory, index):
    """Top-1 ids, top-2 ids, top-1 counts and top-2 counts file paths."""
    stem = frame_name(index, '')
    return tuple(os.path.join(directory, stem + s + '.png')
                 for s in ('', '_top2', '_counts', '_top2_counts'))


def _counts_png(votes):
    return np.clip(np.rint(votes*count_scale), 0, 65535).astype(np.uint16)


def write_consensus(directory, index, cmap):
    p1, p2, c1, c2 = consensus_paths(directory, index)
    write_label_png(p1, cmap.top1)
    write_label_png(p2, cmap.top2)
    write_label_png(c1, _counts_png(cmap.top1_votes))
    write_label_png(c2, _counts_png(cmap.top2_votes))


def read_consensus(directory, index, space=''):
    """Reads a consensus map; counts are restored up to the 1/100 rounding
    of the files. Missing count files give zero counts."""
    p1, p2, c1, c2 = consensus_paths(directory, index)
    top1 = read_label_png(p1)
    top2_ = read_label_png(p2) if os.path.exists(p2) else np.zeros_like(top1)
    v1 = read_label_png(c1)/count_scale if os.path.exists(c1) \
        else np.zeros(top1.shape)
    v2 = read_label_png(c2)/count_scale if os.path.exists(c2) \
        else np.zeros(top1.shape)
    return ConsensusMap(top1, v1, top2_, np.minimum(v2, v1), space)


def read_consensus_top1(directory, index, space=''):
    return read_label_map(consensus_paths(directory, index)[0], space)


# -----------------------------------------------------------------------------
#                               Scene stage
def run_consensus(scene_dir, sources, cfg=VoteConfig(), space=None,
                  mappings=None, workers=None):
    """Consensus of every frame of a scene.

    Predictions are read from ``predictions/<source>/%06d.png`` and written
    to ``consensus/``.

    :param scene_dir: scene directory
    :param sources: names of the prediction sources
    :param cfg: vote configuration
    :param space: unified label space; when given every mapped prediction
        is checked against it
    :param mappings: dictionary ``source -> MappingTable`` into the unified
        space (sources without a mapping are already unified)
    :param workers: number of threads
    :return: number of frames
    """
    if not sources:
        raise InvalidInputError('no prediction sources')
    mappings = mappings or dict()
    space_name = space.name if space is not None else 'unified'
    dirs = {s: os.path.join(scene_dir, predictions_dir, s) for s in sources}
    for s, d in dirs.items():
        if not os.path.isdir(d):
            raise MissingArtifactError(d, 'predictions of {:s}'.format(s))
    indices = sorted(set().union(*(frame_indices(d) for d in dirs.values())))
    if not indices:
        raise MissingArtifactError(next(iter(dirs.values())),
                                   'no prediction frames')
    out_dir = os.path.join(scene_dir, consensus_dir)
    os.makedirs(out_dir, exist_ok=True)

    def load(source, index):
        path = os.path.join(dirs[source], frame_name(index))
        if not os.path.exists(path):
            raise MissingArtifactError(path, 'frame {:d} of {:s}'.format(
                index, source))
        m = mappings.get(source)
        if m is None:
            lm = read_label_map(path, space_name)
        else:
            lm = apply_mapping(m, read_label_map(path, m.source))
        if space is not None:
            lm.validate(space)
        return lm

    def work(index):
        cmap = aggregate([(s, load(s, index)) for s in sources], cfg)
        write_consensus(out_dir, index, cmap)
        return float(np.mean(cmap.top1 > 0))

    with ThreadPoolExecutor(max_workers=workers) as pool:
        coverage = list(pool.map(work, indices))
    logger.info('consensus of %d frames from %d sources, mean labeled '
                'fraction %.3f', len(indices), len(sources),
                float(np.mean(coverage)))
    return len(indices)
