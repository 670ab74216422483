"""Run configuration: ``pipeline.json`` merged with command-line flags.

``pipeline.json`` keys (all optional)::

    {
      "label_space": "labels.csv",
      "colormap": "colors.csv",
      "max_parallel": 2,
      "vote": {"weights": {"gsam": 1.0, ...}, "min_votes": 2},
      "lift": {"occlusion_tol": 0.05, "min_frame_votes": 1,
               "boundary_margin": 0, "stride": 1},
      "fusion": {"voxel_size": 0.008, "truncation": 0.04,
                 "downsample": 0.02, "max_depth": 6.0},
      "tasks": {"gsam": {"command": "...", "gravity_align": true,
                         "mirror_tta": true, "mapping": "gsam.csv",
                         "resources": [{"frames": 100, "cpus": 2,
                                        "ram_gb": 12, "hours": "6h",
                                        "gpus": 1}]}}
    }

Relative paths are relative to the directory of the file.
"""
from dataclasses import dataclass, field, replace
import logging
import os
from .aux import InvalidInputError, require
from .consensus import VoteConfig
from .fileio import read_json
from .fusion3d import FusionConfig
from .lift3d import LiftConfig
from .orchestrator import default_graph, apply_task_config
__docformat__ = 'reStructuredText en'

logger = logging.getLogger(__name__)
_sections = ('label_space', 'colormap', 'max_parallel', 'vote', 'lift',
             'fusion', 'tasks')
_path_keys = ('label_space', 'colormap')


@dataclass
class RunConfig:
    scene_dir: str = None
    config_path: str = None
    stages: tuple = ()
    vote: VoteConfig = field(default_factory=VoteConfig)
    lift: LiftConfig = field(default_factory=LiftConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    colormap: str = None
    label_space: str = None
    max_parallel: int = 1
    tasks: dict = field(default_factory=dict)

    def validate(self, read_stage=True):
        if self.max_parallel < 1:
            raise InvalidInputError('max_parallel must be >= 1')
        if read_stage and self.scene_dir is not None:
            require(self.scene_dir, 'scene directory')
        for path in (self.colormap, self.label_space):
            if path is not None:
                require(path)
        return self

    def graph(self):
        """Default task graph with the configured tasks applied."""
        return apply_task_config(default_graph(), self.tasks)

    def mapping_paths(self):
        """Dictionary ``task -> mapping CSV`` of the configured tasks."""
        return {name: t['mapping'] for name, t in self.tasks.items()
                if t.get('mapping')}


def _resolve(base, path):
    if path is None or os.path.isabs(path):
        return path
    return os.path.normpath(os.path.join(base, path))


def _dataclass_from(cls, values, section):
    known = set(cls.__dataclass_fields__)
    for key in sorted(set(values) - known):
        logger.debug('%s: ignoring unknown key %s', section, key)
    try:
        return cls(**{k: v for k, v in values.items() if k in known})
    except TypeError as err:
        raise InvalidInputError('{:s}: {:s}'.format(section, str(err)))


def load_pipeline_config(path):
    """Reads ``pipeline.json`` into a :py:class:`RunConfig`."""
    doc = read_json(require(path, 'pipeline configuration'))
    if not isinstance(doc, dict):
        raise InvalidInputError('{:s}: top level must be an object'.format(
            path))
    for key in sorted(set(doc) - set(_sections)):
        logger.debug('%s: ignoring unknown key %s', path, key)
    base = os.path.dirname(os.path.abspath(path))
    tasks = dict()
    for name, settings in doc.get('tasks', dict()).items():
        settings = dict(settings)
        if settings.get('mapping'):
            settings['mapping'] = _resolve(base, settings['mapping'])
        tasks[name] = settings
    cfg = RunConfig(
        config_path=path,
        vote=_dataclass_from(VoteConfig, doc.get('vote', dict()), 'vote'),
        lift=_dataclass_from(LiftConfig, doc.get('lift', dict()), 'lift'),
        fusion=_dataclass_from(FusionConfig, doc.get('fusion', dict()),
                               'fusion'),
        max_parallel=int(doc.get('max_parallel', 1)),
        tasks=tasks,
        **{k: _resolve(base, doc.get(k)) for k in _path_keys})
    # unknown tasks and settings fail early
    cfg.graph()
    return cfg


def make_run_config(scene_dir=None, config_path=None, stages=(),
                    max_parallel=None, voxel=None, trunc=None,
                    downsample=None, occlusion_tol=None, min_votes=None,
                    colormap=None):
    """Run configuration from ``pipeline.json`` (if any) overridden by
    command-line values (``None`` keeps the configured value)."""
    cfg = load_pipeline_config(config_path) if config_path else RunConfig()
    cfg.scene_dir = scene_dir
    cfg.stages = tuple(stages or ())
    if max_parallel is not None:
        cfg.max_parallel = max_parallel
    fusion = {k: v for k, v in (('voxel_size', voxel), ('truncation', trunc),
                                ('downsample', downsample)) if v is not None}
    if fusion:
        cfg.fusion = replace(cfg.fusion, **fusion)
    if occlusion_tol is not None:
        cfg.lift = replace(cfg.lift, occlusion_tol=occlusion_tol)
    if min_votes is not None:
        cfg.vote = replace(cfg.vote, min_votes=min_votes)
    if colormap is not None:
        cfg.colormap = colormap
    return cfg
