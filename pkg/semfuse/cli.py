"""``semfuse`` command line.

Every stage can run on its own (``sync``, ``fuse``, ``consensus``, ``lift``,
``render``, ``eval``) or as part of the task graph of a scene (``run``,
``status``). Exit codes: 0 when all requested work is done, 1 when a task
failed or work is left, 2 for usage errors and missing inputs. Unexpected
errors are logged with their traceback and exit with 1.
"""
from dataclasses import replace
import argparse
import json
import logging
import os
import shutil
import sys
from . import __version__
from .aux import (SemfuseError, InvalidInputError, SceneLockedError,
                  setup_logging)
from .config import make_run_config
from .consensus import run_consensus
from .evaluation import (confusion_clouds, confusion_dirs, evaluate_projected,
                         metrics, load_class_groups, class_frequencies)
from .fileio import read_csv, read_json, write_json
from .fusion3d import (fuse_scene, downsample, write_mesh, write_labeled_cloud,
                       read_labeled_cloud)
from .ingest import load_raw_recording, synchronize, load_scene, synced_dir
from .labelspace import LabelSpace, load_label_space, load_mapping
from .lift3d import lift_scene
from .orchestrator import (LocalBackend, ScriptBackend, StateStore, execute,
                           state_dir, tmp_dir)
from .render import load_colormap, render_scene
__docformat__ = 'reStructuredText en'

logger = logging.getLogger(__name__)
mesh_file = 'mesh.ply'
cloud_file = 'cloud.ply'
stats_file = 'stats.json'
pipeline_file = 'pipeline.json'


# -----------------------------------------------------------------------------
#                               Stages
def cmd_sync(cfg):
    """Synchronizes the raw recording of a scene into ``synced/``."""
    raw = load_raw_recording(cfg.scene_dir)
    scene = synchronize(raw, cfg.fusion.workers,
                        os.path.join(cfg.scene_dir, synced_dir))
    return len(scene)


def cmd_fuse(cfg):
    """TSDF fusion of ``synced/``: writes ``mesh.ply`` and the downsampled
    unlabeled ``cloud.ply``."""
    scene = load_scene(cfg.scene_dir)
    mesh = fuse_scene(scene, cfg.fusion).extract_mesh()
    if len(mesh) == 0:
        raise InvalidInputError('{:s}: empty mesh'.format(cfg.scene_dir))
    write_mesh(os.path.join(cfg.scene_dir, mesh_file), mesh)
    cloud = downsample(mesh, cfg.fusion.downsample)
    write_labeled_cloud(os.path.join(cfg.scene_dir, cloud_file), cloud)
    logger.info('%s: mesh of %d vertices, cloud of %d points',
                scene.id, len(mesh), len(cloud))
    return len(cloud)


def _space(cfg):
    return load_label_space(cfg.label_space) if cfg.label_space else None


def _mapping_source(path, name):
    """Source space of a mapping CSV: the source ids it lists."""
    ids = sorted({int(r['source_id']) for r in read_csv(
        path, required=('source_id', 'target_id'))} - {0})
    return LabelSpace(name, ((0, 'unlabeled', None),) +
                      tuple((i, str(i), None) for i in ids))


def _mappings(cfg, space):
    paths = cfg.mapping_paths()
    if paths and space is None:
        raise InvalidInputError('mappings need a label_space')
    return {name: load_mapping(path, _mapping_source(path, name), space)
            for name, path in paths.items()}


def consensus_sources(graph):
    return tuple(graph.deps('consensus'))


def cmd_consensus(cfg, sources=None):
    space = _space(cfg)
    sources = sources or consensus_sources(cfg.graph())
    return run_consensus(cfg.scene_dir, sources, cfg.vote, space,
                         _mappings(cfg, space), cfg.fusion.workers)


def cmd_lift(cfg):
    space = _space(cfg)
    cloud = lift_scene(cfg.scene_dir, cfg.lift,
                       space.name if space is not None else '')
    return len(cloud)


def cmd_render(cfg, sources=None):
    graph = cfg.graph()
    if sources is None:
        sources = [s for s in consensus_sources(graph)
                   if graph[s].visualizable]
    colors = load_colormap(cfg.colormap) if cfg.colormap else None
    return render_scene(cfg.scene_dir, sources, colors)


def cmd_postprocess(cfg):
    """Removes ``tmp/`` and writes ``stats.json``."""
    shutil.rmtree(os.path.join(cfg.scene_dir, tmp_dir), ignore_errors=True)
    store = StateStore(os.path.join(cfg.scene_dir, state_dir))
    tasks = dict()
    for name, state in store.table(cfg.graph()):
        duration = None
        if state.start is not None and state.end is not None:
            duration = state.end - state.start
        tasks[name] = dict(status=state.status, duration=duration,
                           exit_code=state.exit_code)
    stats = dict(scene=os.path.basename(os.path.normpath(cfg.scene_dir)),
                 tasks=tasks)
    lift_stats = os.path.join(cfg.scene_dir, 'lift_stats.json')
    if os.path.exists(lift_stats):
        stats['lift'] = read_json(lift_stats)
    write_json(os.path.join(cfg.scene_dir, stats_file), stats)


def builtin_stages(cfg):
    """Builtin tasks of the default graph bound to the stages above."""
    def bind(*stages):
        def stage(scene_dir, spec):
            scene_cfg = replace(cfg, scene_dir=scene_dir)
            for fn in stages:
                fn(scene_cfg)
        return stage

    return dict(preprocess=bind(cmd_sync, cmd_fuse),
                consensus=bind(cmd_consensus), lift=bind(cmd_lift),
                render=bind(cmd_render),
                postprocess=bind(cmd_postprocess))


# -----------------------------------------------------------------------------
#                               Orchestration
def cmd_run(cfg, emit_scripts=None, scenes=None):
    """Runs (or emits batch scripts for) the pending tasks of a scene.

    :return: run report
    """
    graph = cfg.graph()
    only = cfg.stages or None
    if emit_scripts:
        report = None
        for scene_dir in scenes or [cfg.scene_dir]:
            r = execute(graph, scene_dir, ScriptBackend(emit_scripts))
            if report is None:
                report = r
            else:
                report.scripts.extend(r.scripts)
        return report
    return execute(graph, cfg.scene_dir, LocalBackend(builtin_stages(cfg)),
                   cfg.max_parallel, only)


def status_table(cfg):
    """Rows ``(task, status, duration, exit code)`` in topological order."""
    store = StateStore(os.path.join(cfg.scene_dir, state_dir))
    rows = []
    for name, state in store.table(cfg.graph()):
        duration = '' if state.start is None or state.end is None else \
            '{:.1f}s'.format(state.end - state.start)
        code = '' if state.exit_code is None else str(state.exit_code)
        rows.append((name, state.status, duration, code))
    return rows


def cmd_status(cfg, out=None):
    out = out or sys.stdout
    rows = status_table(cfg)
    width = max(len(r[0]) for r in rows)
    for name, status, duration, code in rows:
        out.write('{:<{w}s}  {:<8s} {:>10s} {:>4s}\n'.format(
            name, status, duration, code, w=width))
    return rows


# -----------------------------------------------------------------------------
#                               Evaluation
def cmd_eval(gt, pred, groups=None, label_space=None, mapping=None,
             topk=None):
    """Metrics of a prediction (labeled cloud or label-map directory).

    :param mapping: mapping CSV from the prediction space to the
        ground-truth space (needs ``label_space``)
    :param topk: with a mapping, keep only the ``topk`` most frequent
        ground-truth classes
    :return: metrics dictionary
    """
    class_groups = load_class_groups(groups) if groups else None
    space = load_label_space(label_space) if label_space else None
    if class_groups is not None and space is not None:
        class_groups.validate(space)
    if mapping is None:
        if topk is not None:
            raise InvalidInputError('--topk needs a mapping')
        if os.path.isdir(gt):
            cm = confusion_dirs(gt, pred)
        else:
            cm = confusion_clouds(gt, pred)
        return metrics(cm, class_groups)
    if space is None:
        raise InvalidInputError('a mapping needs --label-space')
    if os.path.isdir(gt):
        raise InvalidInputError('projected evaluation needs labeled clouds')
    m = load_mapping(mapping, _mapping_source(mapping, 'prediction'), space)
    gt_labels = read_labeled_cloud(gt).label
    pred_labels = read_labeled_cloud(pred).label
    return evaluate_projected(gt_labels, pred_labels, m, space, topk,
                              class_frequencies(gt_labels), class_groups)


# -----------------------------------------------------------------------------
#                               Argument parsing
def _add_scene(p, multiple=False):
    if multiple:
        p.add_argument('--scene', action='append', required=True,
                       help='scene directory (repeatable with '
                            '--emit-scripts)')
    else:
        p.add_argument('--scene', required=True, help='scene directory')
    p.add_argument('--config', help='pipeline configuration (default: '
                                       '<scene>/pipeline.json if present)')


def _add_fusion(p):
    p.add_argument('--voxel', type=float, help='TSDF voxel size (m)')
    p.add_argument('--trunc', type=float, help='truncation distance (m)')
    p.add_argument('--downsample', type=float,
                   help='labeled cloud voxel size (m)')


def _add_vote(p):
    p.add_argument('--min-votes', type=float,
                   help='minimum weighted votes of a consensus label')


def _add_lift(p):
    p.add_argument('--occlusion-tol', type=float,
                   help='occlusion tolerance (m)')


def _add_colormap(p):
    p.add_argument('--colormap', help='colormap CSV (id,r,g,b)')


def build_parser():
    parser = argparse.ArgumentParser(
        prog='semfuse', description='Multi-model semantic labeling of RGB-D '
                                    'scans with 2D consensus and 3D lifting.')
    parser.add_argument('--version', action='version',
                        version='%(prog)s ' + __version__)
    parser.add_argument('--log', help='log level (default: $SEMFUSE_LOG or '
                                      'WARNING)')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('sync', help='synchronize a raw recording')
    _add_scene(p)

    p = sub.add_parser('fuse', help='TSDF fusion, mesh and point cloud')
    _add_scene(p)
    _add_fusion(p)

    p = sub.add_parser('consensus', help='per-frame consensus of models')
    _add_scene(p)
    _add_vote(p)
    p.add_argument('--sources', help='comma separated prediction sources '
                                     '(default: the base models)')

    p = sub.add_parser('lift', help='lift the consensus onto the cloud')
    _add_scene(p)
    _add_lift(p)

    p = sub.add_parser('render', help='color rendering of label maps')
    _add_scene(p)
    _add_colormap(p)
    p.add_argument('--sources', help='comma separated prediction sources')

    p = sub.add_parser('run', help='run the pending tasks of a scene')
    _add_scene(p, multiple=True)
    p.add_argument('--stage', action='append', default=[],
                   help='run only this task (repeatable)')
    p.add_argument('--max-parallel', type=int, help='concurrent tasks')
    p.add_argument('--emit-scripts', metavar='DIR',
                   help='write batch scripts for the pending tasks instead')
    _add_fusion(p)
    _add_vote(p)
    _add_lift(p)
    _add_colormap(p)

    p = sub.add_parser('status', help='task states of a scene')
    _add_scene(p)

    p = sub.add_parser('eval', help='segmentation metrics')
    p.add_argument('--gt', required=True,
                   help='ground-truth labeled cloud or label-map directory')
    p.add_argument('--pred', required=True,
                   help='predicted labeled cloud or label-map directory')
    p.add_argument('--groups', help='class groups CSV (id,group)')
    p.add_argument('--label-space', help='ground-truth label space CSV')
    p.add_argument('--mapping', help='mapping CSV prediction -> gt space')
    p.add_argument('--topk', type=int, help='evaluate the k most frequent '
                                            'classes only')
    p.add_argument('--output', help='write the metrics JSON here')
    return parser


def _sources(text):
    return tuple(s.strip() for s in text.split(',') if s.strip()) \
        if text else None


def _run_config(args):
    scenes = getattr(args, 'scene', None)
    scene = scenes[0] if isinstance(scenes, list) else scenes
    config = args.config
    if config is None and os.path.exists(os.path.join(scene, pipeline_file)):
        config = os.path.join(scene, pipeline_file)
    cfg = make_run_config(
        scene_dir=scene, config_path=config,
        stages=getattr(args, 'stage', ()),
        max_parallel=getattr(args, 'max_parallel', None),
        voxel=getattr(args, 'voxel', None),
        trunc=getattr(args, 'trunc', None),
        downsample=getattr(args, 'downsample', None),
        occlusion_tol=getattr(args, 'occlusion_tol', None),
        min_votes=getattr(args, 'min_votes', None),
        colormap=getattr(args, 'colormap', None))
    return cfg.validate()


def _dispatch(args):
    if args.command == 'eval':
        result = cmd_eval(args.gt, args.pred, args.groups, args.label_space,
                          args.mapping, args.topk)
        if args.output:
            write_json(args.output, result)
        sys.stdout.write(_json_text(result) + '\n')
        return 0
    cfg = _run_config(args)
    if args.command == 'run':
        if args.emit_scripts is None and len(args.scene) > 1:
            raise InvalidInputError('several scenes need --emit-scripts')
        report = cmd_run(cfg, args.emit_scripts, args.scene)
        if args.emit_scripts:
            sys.stdout.write('{:d} script(s) written\n'.format(
                len(report.scripts)))
            return 0
        for e in report.entries:
            sys.stdout.write('{:<12s} {:<8s} {:8.1f}s\n'.format(
                e['task'], e['status'], e['duration']))
        return 0 if report.ok else 1
    if args.command == 'status':
        cmd_status(cfg)
        return 0
    if args.command == 'sync':
        cmd_sync(cfg)
    elif args.command == 'fuse':
        cmd_fuse(cfg)
    elif args.command == 'consensus':
        cmd_consensus(cfg, _sources(args.sources))
    elif args.command == 'lift':
        cmd_lift(cfg)
    elif args.command == 'render':
        cmd_render(cfg, _sources(args.sources))
    return 0


def _json_text(obj):
    return json.dumps(obj, indent=2, sort_keys=True)


def main(argv=None):
    args = build_parser().parse_args(argv)
    setup_logging(args.log)
    try:
        return _dispatch(args)
    except SemfuseError as err:
        sys.stderr.write('semfuse: error: {:s}\n'.format(str(err)))
        return 1 if isinstance(err, SceneLockedError) else 2
    except Exception:
        logger.exception('%s failed', args.command)
        return 1


if __name__ == '__main__':
    sys.exit(main())
