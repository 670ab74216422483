"""Label vocabularies, mappings between them and label maps.

Every label space reserves id 0 for "unlabeled / ignore". Mappings are
many-to-one lookup tables; ids without an entry map to 0.
"""
from dataclasses import dataclass, field
from types import MappingProxyType
import logging
import os
import numpy as np
from .aux import InvalidInputError, SpaceMismatchError, DimensionMismatchError
from .fileio import read_csv, read_label_png, write_label_png
__docformat__ = 'reStructuredText en'

logger = logging.getLogger(__name__)
_reserved_names = ('unlabeled', 'unlabelled', 'ignore', 'unannotated',
                   'void', 'none', 'unknown')


# -----------------------------------------------------------------------------
#                               Label space
@dataclass(frozen=True, eq=False)
class LabelSpace:
    """Named, ordered class vocabulary.

    :ivar name: name of the space (e.g. ``wordnet``, ``scannet200``)
    :ivar classes: tuple of ``(id, name, synkey)``; synkey may be ``None``
    """
    name: str
    classes: tuple
    _by_id: dict = field(init=False, repr=False)

    def __post_init__(self):
        by_id = dict()
        synkeys = set()
        for cid, cname, synkey in self.classes:
            if cid < 0:
                raise InvalidInputError('negative id {:d}'.format(cid))
            if cid in by_id:
                raise InvalidInputError('duplicate id {:d}'.format(cid))
            if not cname:
                raise InvalidInputError('empty class name for id {:d}'
                                        .format(cid))
            if synkey:
                if synkey in synkeys:
                    raise InvalidInputError('duplicate synkey {:s}'
                                            .format(synkey))
                synkeys.add(synkey)
            by_id[cid] = (cname, synkey)
        if 0 not in by_id:
            raise InvalidInputError('id 0 must be the unlabeled class')
        object.__setattr__(self, '_by_id', by_id)

    def __contains__(self, cid):
        return int(cid) in self._by_id

    def __len__(self):
        return len(self.classes)

    @property
    def ids(self):
        return np.array([c[0] for c in self.classes], dtype=np.int64)

    @property
    def max_id(self):
        return max(self._by_id)

    def class_name(self, cid):
        return self._by_id[int(cid)][0]

    def synkey(self, cid):
        return self._by_id[int(cid)][1]

    def id_of(self, name):
        for cid, cname, synkey in self.classes:
            if cname == name or (synkey and synkey == name):
                return cid
        raise KeyError(name)

    def valid_mask(self, labels):
        """Boolean mask of the entries of ``labels`` that exist in the
        space."""
        lut = np.zeros(self.max_id + 1, dtype=bool)
        lut[self.ids] = True
        labels = np.asarray(labels)
        inside = labels <= self.max_id
        mask = np.zeros(labels.shape, dtype=bool)
        mask[inside] = lut[labels[inside]]
        return mask


def make_label_space(name, names, synkeys=None):
    """Label space with ids ``0..len(names)`` where id 0 is ``unlabeled``."""
    if synkeys is None:
        synkeys = [None]*len(names)
    classes = [(0, 'unlabeled', None)]
    classes += [(k + 1, n, s) for k, (n, s) in enumerate(zip(names, synkeys))]
    return LabelSpace(name, tuple(classes))


def load_label_space(path, name=None):
    """Reads a label space from a CSV file with header ``id,name,synkey``.

    :param path: CSV path
    :param name: space name (default: file stem)
    :return: label space, classes in file order. A missing id-0 row is added
        as ``unlabeled``.
    """
    rows = read_csv(path, required=('id', 'name'))
    if name is None:
        name = os.path.splitext(os.path.basename(str(path)))[0]
    classes = []
    seen = set()
    for row in rows:
        try:
            cid = int(row['id'])
        except ValueError:
            raise InvalidInputError('{:s}: invalid id {!r}'.format(
                str(path), row['id']))
        if cid in seen:
            raise InvalidInputError('{:s}: duplicate id {:d}'.format(
                str(path), cid))
        seen.add(cid)
        synkey = row.get('synkey') or None
        if cid == 0 and (synkey or row['name'].lower() not in _reserved_names):
            raise InvalidInputError(
                '{:s}: id 0 is reserved for unlabeled, got class {!r}'.format(
                    str(path), row['name']))
        classes.append((cid, row['name'], synkey))
    if 0 not in seen:
        classes.insert(0, (0, 'unlabeled', None))
    return LabelSpace(name, tuple(classes))


# -----------------------------------------------------------------------------
#                               Mapping tables
@dataclass(frozen=True, eq=False)
class MappingTable:
    """Many-to-one mapping ``source id -> target id``."""
    source: str
    target: str
    entries: MappingProxyType

    def __post_init__(self):
        clean = dict()
        for s, t in dict(self.entries).items():
            s, t = int(s), int(t)
            if s == 0:
                if t != 0:
                    raise InvalidInputError('source id 0 must map to 0')
                continue
            if t != 0:
                clean[s] = t
        object.__setattr__(self, 'entries', MappingProxyType(clean))

    def __call__(self, cid):
        return self.entries.get(int(cid), 0)

    def lut(self, size=0):
        """Lookup table indexed by source id; ids not in the table map to 0.

        :param size: minimum table length
        """
        n = max(size, max(self.entries, default=0) + 1)
        table = np.zeros(n, dtype=np.uint16)
        for s, t in self.entries.items():
            table[s] = t
        return table

    def target_ids(self):
        return set(self.entries.values())

    def validate(self, source_space, target_space):
        """Checks that every entry exists in the given spaces."""
        if (source_space.name, target_space.name) != (self.source,
                                                      self.target):
            raise SpaceMismatchError('mapping {:s}->{:s} used with {:s}->{:s}'
                                     .format(self.source, self.target,
                                             source_space.name,
                                             target_space.name))
        for s, t in self.entries.items():
            if s not in source_space:
                raise InvalidInputError('source id {:d} not in {:s}'.format(
                    s, source_space.name))
            if t not in target_space:
                raise InvalidInputError('target id {:d} not in {:s}'.format(
                    t, target_space.name))
        return self


def make_mapping(source, target, entries):
    return MappingTable(source, target, MappingProxyType(dict(entries)))


def identity_mapping(space):
    return make_mapping(space.name, space.name,
                        {cid: cid for cid in space.ids if cid != 0})


def load_mapping(path, source_space, target_space):
    """Reads a mapping CSV with header ``source_id,target_id``.

    Rows with a blank or 0 target are treated as "maps to unlabeled". When a
    source id appears with several targets the smallest target id is kept and
    a warning is logged.
    """
    rows = read_csv(path, required=('source_id', 'target_id'))
    targets = dict()
    for row in rows:
        try:
            s = int(row['source_id'])
            t = int(row['target_id']) if row['target_id'] else 0
        except ValueError:
            raise InvalidInputError('{:s}: invalid row {!r}'.format(
                str(path), row))
        if s == 0:
            if t != 0:
                logger.warning('%s: ignoring row 0 -> %d, id 0 always maps '
                               'to 0', path, t)
            continue
        targets.setdefault(s, set()).add(t)
    entries = dict()
    for s, ts in sorted(targets.items()):
        ts = sorted(t for t in ts if t != 0) or [0]
        if len(ts) > 1:
            logger.warning('%s: source id %d maps to %s, keeping %d',
                           path, s, ts, ts[0])
        entries[s] = ts[0]
    return make_mapping(source_space.name, target_space.name,
                        entries).validate(source_space, target_space)


def compose(m1, m2):
    """Mapping equivalent to applying ``m1`` and then ``m2``."""
    if m1.target != m2.source:
        raise SpaceMismatchError('cannot compose {:s}->{:s} with {:s}->{:s}'
                                 .format(m1.source, m1.target,
                                         m2.source, m2.target))
    entries = dict()
    for s, t in m1.entries.items():
        t2 = m2(t)
        if t2 != 0:
            entries[s] = t2
    return make_mapping(m1.source, m2.target, entries)


def rank_classes(space, class_frequencies):
    """Non-zero ids of ``space`` sorted by decreasing frequency, ties by
    ascending id."""
    ids = [int(c) for c in space.ids if c != 0]
    return sorted(ids, key=lambda c: (-class_frequencies.get(c, 0), c))


def project_topk(space, m, k, class_frequencies):
    """Restricts a mapping so that only the ``k`` most frequent target
    classes survive.

    :param space: target label space of ``m``
    :param m: mapping into ``space``
    :param k: number of target classes kept
    :param class_frequencies: dictionary ``target id -> count`` (missing ids
        count as 0)
    :return: restricted mapping; entries into dropped classes map to 0
    """
    if m.target != space.name:
        raise SpaceMismatchError('mapping target {:s} is not {:s}'.format(
            m.target, space.name))
    n_classes = len(space) - 1
    if k <= 0:
        raise InvalidInputError('k must be positive')
    if k > n_classes:
        raise InvalidInputError('k={:d} exceeds the {:d} classes of {:s}'
                                .format(k, n_classes, space.name))
    keep = set(rank_classes(space, class_frequencies)[:k])
    return make_mapping(m.source, m.target,
                        {s: t for s, t in m.entries.items() if t in keep})


# -----------------------------------------------------------------------------
#                               Label maps
@dataclass(frozen=True, eq=False)
class LabelMap:
    """Row-major grid of 16-bit label ids in a named space."""
    data: np.ndarray
    space: str

    def __post_init__(self):
        data = np.array(self.data, dtype=np.uint16, copy=True)
        if data.ndim != 2:
            raise DimensionMismatchError('label map must be 2-dimensional')
        data.setflags(write=False)
        object.__setattr__(self, 'data', data)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape

    def validate(self, space):
        if space.name != self.space:
            raise SpaceMismatchError('label map in {:s}, expected {:s}'
                                     .format(self.space, space.name))
        if not np.all(space.valid_mask(self.data)):
            bad = np.unique(self.data[~space.valid_mask(self.data)])
            raise InvalidInputError('ids {:s} not in space {:s}'.format(
                str(bad.tolist()), space.name))
        return self

    def with_data(self, data):
        return LabelMap(data, self.space)


def apply_mapping(m, lm):
    """Maps every pixel of a label map through a mapping table."""
    if lm.space != m.source:
        raise SpaceMismatchError('label map in {:s}, mapping from {:s}'
                                 .format(lm.space, m.source))
    lut = m.lut(int(lm.data.max(initial=0)) + 1)
    return LabelMap(lut[lm.data], m.target)


def read_label_map(path, space):
    return LabelMap(read_label_png(path), space)


def write_label_map(path, lm):
    write_label_png(path, lm.data)
