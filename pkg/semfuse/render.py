"""Color rendering of label maps for visual inspection."""
import logging
import os
import numpy as np
from matplotlib import colormaps
from .aux import unknown_color, InvalidInputError
from .consensus import consensus_dir, predictions_dir
from .fileio import (read_csv, frame_indices, frame_name, read_label_png,
                     write_color)
__docformat__ = 'reStructuredText en'

logger = logging.getLogger(__name__)
render_dir = 'render'
_palette = 'tab20'


def load_colormap(path):
    """Reads a colormap CSV with header ``id,r,g,b``.

    :return: dictionary ``id -> (r, g, b)``
    """
    colors = dict()
    for row in read_csv(path, required=('id', 'r', 'g', 'b')):
        try:
            cid = int(row['id'])
            rgb = tuple(int(row[c]) for c in 'rgb')
        except ValueError:
            raise InvalidInputError('{:s}: invalid row {!r}'.format(
                str(path), row))
        if cid < 0 or not all(0 <= c <= 255 for c in rgb):
            raise InvalidInputError('{:s}: invalid row {!r}'.format(
                str(path), row))
        colors[cid] = rgb
    return colors


def default_colormap(max_id):
    """Black for id 0, then the colors of the ``tab20`` palette in turn."""
    table = np.asarray(colormaps[_palette].colors)[:, :3]
    rgb = np.rint(table*255).astype(int)
    colors = {0: (0, 0, 0)}
    for cid in range(1, max_id + 1):
        colors[cid] = tuple(int(c) for c in rgb[(cid - 1) % len(rgb)])
    return colors


def colorize(labels, colors=None):
    """8-bit RGB image of a label grid.

    :param labels: label ids (rows x columns)
    :param colors: dictionary ``id -> (r, g, b)``; ids missing from it are
        magenta. ``None`` uses :py:func:`default_colormap`.
    :return: array (rows, columns, 3) of ``uint8``
    """
    labels = np.asarray(labels, dtype=np.int64)
    top = int(labels.max(initial=0))
    if colors is None:
        colors = default_colormap(top)
    size = max(top, max(colors, default=0)) + 1
    lut = np.empty((size, 3), dtype=np.uint8)
    lut[:] = unknown_color
    for cid, rgb in colors.items():
        lut[cid] = rgb
    return lut[labels]


def render_label_map(src, dst, colors=None):
    write_color(dst, colorize(read_label_png(src), colors))


def render_directory(src_dir, out_dir, colors=None):
    """Renders every ``%06d.png`` label map of a directory.

    :return: number of rendered frames
    """
    indices = frame_indices(src_dir)
    for index in indices:
        name = frame_name(index)
        render_label_map(os.path.join(src_dir, name),
                         os.path.join(out_dir, name), colors)
    return len(indices)


def render_scene(scene_dir, sources=(), colors=None):
    """Renders the consensus and the predictions of ``sources`` of a scene
    into ``render/<source>/``.

    :return: dictionary ``source -> number of frames``
    """
    targets = [('consensus', os.path.join(scene_dir, consensus_dir))]
    targets += [(s, os.path.join(scene_dir, predictions_dir, s))
                for s in sources]
    counts = dict()
    for name, directory in targets:
        if not os.path.isdir(directory):
            logger.info('nothing to render for %s', name)
            continue
        counts[name] = render_directory(
            directory, os.path.join(scene_dir, render_dir, name), colors)
    logger.info('rendered %s', counts)
    return counts
