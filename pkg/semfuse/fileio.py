"""Readers and writers for the scene directory layout: PNG frames, pose and
intrinsics text files, CSV tables, JSON documents and binary PLY files."""
import csv
import json
import logging
import os
import tempfile
import numpy as np
from PIL import Image
from .aux import (depth_scale, frame_stem, InvalidInputError,
                  MissingArtifactError)
__docformat__ = 'reStructuredText en'

logger = logging.getLogger(__name__)

_ply_types = {'char': 'i1', 'int8': 'i1', 'uchar': 'u1', 'uint8': 'u1',
              'short': 'i2', 'int16': 'i2', 'ushort': 'u2', 'uint16': 'u2',
              'int': 'i4', 'int32': 'i4', 'uint': 'u4', 'uint32': 'u4',
              'float': 'f4', 'float32': 'f4', 'double': 'f8',
              'float64': 'f8'}
_numpy2ply = {'i1': 'char', 'u1': 'uchar', 'i2': 'short', 'u2': 'ushort',
              'i4': 'int', 'u4': 'uint', 'f4': 'float', 'f8': 'double'}


def frame_name(index, suffix='.png'):
    return frame_stem.format(index) + suffix


def frame_indices(directory, suffix='.png'):
    """Sorted frame indices found in a directory of ``%06d<suffix>`` files
    (files with extra stem parts, e.g. ``000001_top2.png``, are skipped)."""
    if not os.path.isdir(directory):
        raise MissingArtifactError(directory)
    indices = []
    for name in os.listdir(directory):
        stem, ext = os.path.splitext(name)
        if ext == suffix and stem.isdigit():
            indices.append(int(stem))
    return sorted(indices)


# -----------------------------------------------------------------------------
#                               Images
def read_label_png(path):
    """Reads a single-channel label map (8 or 16 bit).

    :return: array of ``uint16`` ids (rows x columns)
    """
    if not os.path.exists(path):
        raise MissingArtifactError(path)
    with Image.open(path) as img:
        arr = np.array(img)
    if arr.ndim != 2:
        raise InvalidInputError('{:s}: label map must be single channel'
                                .format(str(path)))
    return arr.astype(np.uint16)


def write_label_png(path, labels):
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 65535:
        raise InvalidInputError('label ids out of 16-bit range')
    _makedirs_for(path)
    Image.fromarray(labels.astype(np.uint16)).save(path)


def read_depth_png(path, scale=depth_scale):
    """Reads a 16-bit depth PNG and converts it to meters."""
    return read_label_png(path).astype(np.float64)/scale


def write_depth_png(path, depth, scale=depth_scale):
    mm = np.rint(np.clip(depth, 0., 65535./scale)*scale)
    write_label_png(path, mm.astype(np.uint16))


def read_color(path):
    if not os.path.exists(path):
        raise MissingArtifactError(path)
    with Image.open(path) as img:
        return np.array(img.convert('RGB'))


def write_color(path, rgb):
    _makedirs_for(path)
    Image.fromarray(np.ascontiguousarray(rgb, dtype=np.uint8)).save(path)


def image_size(path):
    """(width, height) of an image without decoding its pixels."""
    if not os.path.exists(path):
        raise MissingArtifactError(path)
    with Image.open(path) as img:
        return img.size


# -----------------------------------------------------------------------------
#                       Poses, intrinsics, text tables
def read_pose_txt(path):
    """4x4 row-major camera-to-world matrix."""
    if not os.path.exists(path):
        raise MissingArtifactError(path)
    mat = np.loadtxt(path, dtype=np.float64)
    if mat.size != 16:
        raise InvalidInputError('{:s}: pose must hold 16 values'
                                .format(str(path)))
    return mat.reshape(4, 4)


def write_pose_txt(path, matrix):
    _makedirs_for(path)
    np.savetxt(path, np.asarray(matrix).reshape(4, 4), fmt='%.17g')


def read_intrinsics_txt(path):
    """``fx fy cx cy width height`` on a single line."""
    if not os.path.exists(path):
        raise MissingArtifactError(path)
    values = np.loadtxt(path, dtype=np.float64).ravel()
    if values.size != 6:
        raise InvalidInputError('{:s}: expected fx fy cx cy width height'
                                .format(str(path)))
    fx, fy, cx, cy, w, h = values
    return fx, fy, cx, cy, int(w), int(h)


def write_intrinsics_txt(path, fx, fy, cx, cy, width, height):
    _makedirs_for(path)
    with open(path, 'w') as f:
        f.write('{:.17g} {:.17g} {:.17g} {:.17g} {:d} {:d}\n'.format(
            fx, fy, cx, cy, width, height))


def read_csv(path, required=()):
    """Rows of a CSV file with a header as a list of dictionaries.

    :param path: file path
    :param required: column names that must be present in the header
    """
    if not os.path.exists(path):
        raise MissingArtifactError(path)
    with open(path, newline='', encoding='utf-8') as f:
        reader = csv.DictReader(f)
        header = [c.strip() for c in (reader.fieldnames or [])]
        missing = [c for c in required if c not in header]
        if missing:
            raise InvalidInputError('{:s}: missing column(s) {:s}'.format(
                str(path), ', '.join(missing)))
        rows = []
        for row in reader:
            rows.append({(k or '').strip(): (v or '').strip()
                         for k, v in row.items()})
    return rows


def write_csv(path, header, rows):
    _makedirs_for(path)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def read_json(path):
    if not os.path.exists(path):
        raise MissingArtifactError(path)
    with open(path, encoding='utf-8') as f:
        return json.load(f)


def write_json(path, obj):
    """Writes JSON atomically: the file holds either the old or the new
    document, never a partial one."""
    _makedirs_for(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix='.tmp-', suffix='.json', dir=directory)
    try:
        with os.fdopen(fd, 'w', encoding='utf-8') as f:
            json.dump(obj, f, indent=2, sort_keys=True)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


# -----------------------------------------------------------------------------
#                       PLY (binary little endian)
def write_ply(path, vertex, faces=None):
    """Writes a binary little-endian PLY file.

    :param path: output path
    :param vertex: list of ``(name, array)`` pairs; the PLY property type is
        taken from each array's dtype
    :param faces: optional array (m, 3) of vertex indices
    :type vertex: list
    :type faces: numpy.ndarray or None
    """
    n = len(vertex[0][1]) if vertex else 0
    dtype = []
    for name, values in vertex:
        values = np.asarray(values)
        if values.shape != (n,):
            raise InvalidInputError('vertex property {:s}: wrong length'
                                    .format(name))
        dtype.append((name, values.dtype.newbyteorder('<').str))
    data = np.empty(n, dtype=dtype)
    for name, values in vertex:
        data[name] = values
    lines = ['ply', 'format binary_little_endian 1.0',
             'element vertex {:d}'.format(n)]
    for name, values in vertex:
        lines.append('property {:s} {:s}'.format(
            _numpy2ply[np.asarray(values).dtype.str[1:]], name))
    if faces is not None:
        faces = np.asarray(faces, dtype=np.int32).reshape(-1, 3)
        lines.append('element face {:d}'.format(len(faces)))
        lines.append('property list uchar int vertex_indices')
    lines.append('end_header')
    _makedirs_for(path)
    with open(path, 'wb') as f:
        f.write(('\n'.join(lines) + '\n').encode('ascii'))
        f.write(data.tobytes())
        if faces is not None:
            face_data = np.empty(len(faces),
                                 dtype=[('n', 'u1'), ('v', '<i4', (3,))])
            face_data['n'] = 3
            face_data['v'] = faces
            f.write(face_data.tobytes())


def read_ply(path):
    """Reads a binary little-endian PLY file written by :py:func:`write_ply`
    (or any file with scalar vertex properties and triangle faces).

    :return: vertex structured array, faces (m, 3) or None
    """
    if not os.path.exists(path):
        raise MissingArtifactError(path)
    with open(path, 'rb') as f:
        if f.readline().strip() != b'ply':
            raise InvalidInputError('{:s}: not a PLY file'.format(str(path)))
        elements = []
        while True:
            line = f.readline()
            if not line:
                raise InvalidInputError('{:s}: truncated header'
                                        .format(str(path)))
            tokens = line.decode('ascii').split()
            if not tokens or tokens[0] in ('comment', 'obj_info'):
                continue
            if tokens[0] == 'format':
                if tokens[1] != 'binary_little_endian':
                    raise InvalidInputError(
                        '{:s}: unsupported PLY format {:s}'.format(
                            str(path), tokens[1]))
            elif tokens[0] == 'element':
                elements.append((tokens[1], int(tokens[2]), []))
            elif tokens[0] == 'property':
                elements[-1][2].append(tokens[1:])
            elif tokens[0] == 'end_header':
                break
        body = f.read()

    vertex = None
    faces = None
    offset = 0
    for name, count, props in elements:
        if props and props[0][0] == 'list':
            count_t, index_t = _ply_types[props[0][1]], _ply_types[props[0][2]]
            dtype = np.dtype([('n', '<' + count_t),
                              ('v', '<' + index_t, (3,))])
            arr = np.frombuffer(body, dtype=dtype, count=count, offset=offset)
            if count and np.any(arr['n'] != 3):
                raise InvalidInputError('{:s}: only triangle faces supported'
                                        .format(str(path)))
            offset += dtype.itemsize*count
            if name == 'face':
                faces = arr['v'].astype(np.int64)
            continue
        dtype = np.dtype([(p[1], '<' + _ply_types[p[0]]) for p in props])
        arr = np.frombuffer(body, dtype=dtype, count=count, offset=offset)
        offset += dtype.itemsize*count
        if name == 'vertex':
            vertex = arr.copy()
    if vertex is None:
        raise InvalidInputError('{:s}: no vertex element'.format(str(path)))
    return vertex, faces


def _makedirs_for(path):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
