"""Per-scene pipeline as a dependency graph of tasks.

Task states persist under ``<scene>/state/`` as ``<task>.json`` plus a
``<task>.done`` marker once the task succeeded. Only tasks that are not done
are (re)run, so an interrupted or partially failed run is resumed by running
it again.
"""
from concurrent.futures import ThreadPoolExecutor, wait, FIRST_COMPLETED
from dataclasses import dataclass, field, replace
from graphlib import TopologicalSorter, CycleError
import contextlib
import logging
import os
import shlex
import shutil
import subprocess
import sys
import threading
import time
import traceback
import numpy as np
from .aux import (GraphError, InvalidInputError, SceneLockedError,
                  MissingArtifactError, parse_hours)
from .consensus import merge_augmented, predictions_dir
from .fileio import (frame_name, frame_indices, read_json, write_json,
                     read_color, write_color)
from .gravity import (rotate_quarter, unrotate_labels, mirror,
                      read_gravity_json)
from .labelspace import read_label_map, write_label_map
__docformat__ = 'reStructuredText en'

logger = logging.getLogger(__name__)

PENDING = 'pending'
RUNNING = 'running'
DONE = 'done'
FAILED = 'failed'
BLOCKED = 'blocked'
SKIPPED = 'skipped'
statuses = (PENDING, RUNNING, DONE, FAILED)
_transitions = {PENDING: (RUNNING,), RUNNING: (DONE, FAILED),
                FAILED: (PENDING,), DONE: ()}

BUILTIN = 'builtin'
EXTERNAL = 'external'
state_dir = 'state'
logs_dir = 'logs'
tmp_dir = 'tmp'
_lock_name = '.lock'


# -----------------------------------------------------------------------------
#                               Resources
@dataclass(frozen=True)
class Anchor:
    frames: int
    cpus: int
    ram_gb: float
    hours: float
    gpus: int = 0

    def __post_init__(self):
        if self.frames < 1 or self.cpus < 1:
            raise InvalidInputError('anchor frames and cpus must be >= 1')
        if self.ram_gb <= 0 or self.hours <= 0 or self.gpus < 0:
            raise InvalidInputError('invalid anchor {!r}'.format(self))


@dataclass(frozen=True)
class Estimate:
    cpus: int
    ram_gb: float
    hours: float
    gpus: int


@dataclass(frozen=True)
class ResourceModel:
    """Resource anchors measured at some scene sizes (number of frames)."""
    anchors: tuple

    def __post_init__(self):
        if not self.anchors:
            raise InvalidInputError('a resource model needs an anchor')
        anchors = tuple(sorted(self.anchors, key=lambda a: a.frames))
        if len({a.frames for a in anchors}) != len(anchors):
            raise InvalidInputError('anchors must have distinct frame counts')
        object.__setattr__(self, 'anchors', anchors)

    @classmethod
    def constant(cls, cpus, ram_gb, hours, gpus=0):
        return cls((Anchor(1, cpus, ram_gb, parse_hours(hours), gpus),))

    @classmethod
    def from_config(cls, entries):
        """Model from a dictionary or list of dictionaries with keys
        ``frames`` (default 1), ``cpus``, ``ram_gb``, ``hours`` (number or
        string like '1h30m') and ``gpus``."""
        if isinstance(entries, dict):
            entries = [entries]
        anchors = []
        for e in entries:
            try:
                anchors.append(Anchor(int(e.get('frames', 1)), int(e['cpus']),
                                      float(e['ram_gb']),
                                      parse_hours(e['hours']),
                                      int(e.get('gpus', 0))))
            except KeyError as err:
                raise InvalidInputError('resource anchor misses {:s}'.format(
                    str(err)))
        return cls(tuple(anchors))


def estimate(model, n_frames):
    """Resources of a scene of ``n_frames`` frames.

    Each field is interpolated linearly between the bracketing anchors and
    clamped to the first/last anchor outside their range. CPUs and GPUs are
    rounded up.

    :type model: ResourceModel
    :rtype: Estimate
    """
    if not model.anchors:
        raise InvalidInputError('a resource model needs an anchor')
    if n_frames < 1:
        raise InvalidInputError('n_frames must be >= 1')
    x = [a.frames for a in model.anchors]

    def interp(name):
        return float(np.interp(n_frames, x,
                               [getattr(a, name) for a in model.anchors]))

    return Estimate(int(np.ceil(interp('cpus'))), interp('ram_gb'),
                    interp('hours'), int(np.ceil(interp('gpus'))))


# average requests of a typical scene
default_resources = {
    'preprocess': ResourceModel.constant(2, 24, '4h'),
    'gsam': ResourceModel.constant(2, 12, '6h', 1),
    'mask3d': ResourceModel.constant(8, 16, '1h30m', 1),
    'ovseg': ResourceModel.constant(2, 8, '8h', 1),
    'internimage': ResourceModel.constant(2, 10, '8h', 1),
    'omnidata': ResourceModel.constant(8, 8, '2h', 1),
    'hha': ResourceModel.constant(18, 9, '2h'),
    'cmx': ResourceModel.constant(2, 8, '3h', 1),
    'consensus': ResourceModel.constant(16, 16, '2h'),
    'lift': ResourceModel.constant(2, 72, '4h'),
    'render': ResourceModel.constant(8, 32, '30m'),
    'postprocess': ResourceModel.constant(1, 2, '15m'),
}


# -----------------------------------------------------------------------------
#                               Task graph
@dataclass(frozen=True)
class TaskSpec:
    """
    :ivar kind: ``builtin`` (a stage of this package) or ``external`` (a
        command template)
    :ivar command: template with ``{scene_dir}``, ``{frames}``,
        ``{input_dir}``, ``{output_dir}`` and ``{python}`` placeholders
    :ivar gravity_align: feed gravity-aligned frames and rotate the output
        label maps back
    :ivar mirror_tta: also run on mirrored frames and keep the labels both
        runs agree on
    """
    name: str
    kind: str = BUILTIN
    deps: tuple = ()
    resources: ResourceModel = ResourceModel.constant(1, 4, '1h')
    visualizable: bool = False
    command: str = None
    gravity_align: bool = False
    mirror_tta: bool = False
    mapping: str = None

    def __post_init__(self):
        if self.kind not in (BUILTIN, EXTERNAL):
            raise InvalidInputError('{:s}: unknown task kind {!r}'.format(
                self.name, self.kind))
        object.__setattr__(self, 'deps', tuple(self.deps))


class TaskGraph:
    """Acyclic graph of tasks. Insertion order breaks ties in the
    topological order."""

    def __init__(self, tasks):
        self.tasks = dict()
        for t in tasks:
            if t.name in self.tasks:
                raise GraphError('duplicate task {:s}'.format(t.name))
            self.tasks[t.name] = t
        self._order = {name: k for k, name in enumerate(self.tasks)}
        self.validate()

    def __contains__(self, name):
        return name in self.tasks

    def __getitem__(self, name):
        return self.tasks[name]

    def __iter__(self):
        return iter(self.tasks.values())

    def __len__(self):
        return len(self.tasks)

    def index(self, name):
        return self._order[name]

    def deps(self, name):
        return self.tasks[name].deps

    def sorter(self):
        return TopologicalSorter({t.name: t.deps for t in self})

    def validate(self):
        for t in self:
            for d in t.deps:
                if d not in self.tasks:
                    raise GraphError('task {:s} depends on unknown task {:s}'
                                     .format(t.name, d))
        try:
            self.sorter().prepare()
        except CycleError as err:
            raise GraphError('dependency cycle: {:s}'.format(
                ' -> '.join(err.args[1])))
        return self

    def topological_order(self):
        """Deterministic topological order (ready tasks in insertion
        order)."""
        sorter = self.sorter()
        sorter.prepare()
        order = []
        while sorter.is_active():
            ready = sorted(sorter.get_ready(), key=self.index)
            order.extend(ready)
            sorter.done(*ready)
        return order

    def ancestors(self, name):
        out = set()
        stack = list(self.deps(name))
        while stack:
            d = stack.pop()
            if d not in out:
                out.add(d)
                stack.extend(self.deps(d))
        return out

    def descendants(self, name):
        return {t.name for t in self if name in self.ancestors(t.name)}

    def with_task(self, spec):
        """Graph with ``spec`` added or replacing the task of the same
        name."""
        tasks = [spec if t.name == spec.name else t for t in self]
        if spec.name not in self.tasks:
            tasks.append(spec)
        return TaskGraph(tasks)


base_models = ('gsam', 'mask3d', 'ovseg', 'internimage', 'cmx')


def default_graph(resources=None):
    """Pipeline of one scene::

        preprocess -> gsam, mask3d, ovseg, internimage, omnidata
        omnidata -> hha -> cmx
        gsam, mask3d, ovseg, internimage, cmx -> consensus -> lift
        lift -> render, postprocess

    :param resources: dictionary ``task -> ResourceModel`` overriding the
        defaults
    :rtype: TaskGraph
    """
    res = dict(default_resources)
    res.update(resources or dict())

    def external(name, deps, visualizable=True):
        return TaskSpec(name, EXTERNAL, deps, res[name], visualizable)

    return TaskGraph([
        TaskSpec('preprocess', BUILTIN, (), res['preprocess']),
        external('gsam', ('preprocess',)),
        external('mask3d', ('preprocess',)),
        external('ovseg', ('preprocess',)),
        external('internimage', ('preprocess',)),
        external('omnidata', ('preprocess',)),
        external('hha', ('omnidata',), visualizable=False),
        external('cmx', ('hha',)),
        TaskSpec('consensus', BUILTIN, base_models, res['consensus'], True),
        TaskSpec('lift', BUILTIN, ('consensus',), res['lift'], True),
        TaskSpec('render', BUILTIN, ('lift',), res['render']),
        TaskSpec('postprocess', BUILTIN, ('lift',), res['postprocess']),
    ])


def apply_task_config(graph, tasks):
    """Applies the ``tasks`` section of a pipeline configuration.

    :param graph: base graph
    :param tasks: dictionary ``task name -> settings`` (``command``,
        ``deps``, ``resources``, ``gravity_align``, ``mirror_tta``,
        ``mapping``, ``visualizable``, ``kind``). Unknown task names add
        external tasks.
    :rtype: TaskGraph
    """
    for name, settings in tasks.items():
        settings = dict(settings)
        if 'resources' in settings:
            settings['resources'] = ResourceModel.from_config(
                settings['resources'])
        if 'deps' in settings:
            settings['deps'] = tuple(settings['deps'])
        known = {f for f in TaskSpec.__dataclass_fields__ if f != 'name'}
        for key in sorted(set(settings) - known):
            logger.debug('task %s: ignoring setting %s', name, key)
            settings.pop(key)
        if name in graph:
            spec = replace(graph[name], **settings)
        else:
            settings.setdefault('kind', EXTERNAL)
            spec = TaskSpec(name, **settings)
        graph = graph.with_task(spec)
    return graph


# -----------------------------------------------------------------------------
#                               Task state
@dataclass(frozen=True)
class TaskState:
    status: str = PENDING
    start: float = None
    end: float = None
    exit_code: int = None
    log: str = None

    def __post_init__(self):
        if self.status not in statuses:
            raise InvalidInputError('unknown status {!r}'.format(self.status))
        if self.status == DONE and (self.start is None or self.end is None or
                                    self.end < self.start):
            raise InvalidInputError('done state needs start <= end')

    def to(self, status, **kwargs):
        """Next state; only pending -> running -> done/failed and
        failed -> pending are allowed."""
        if status not in _transitions[self.status]:
            raise InvalidInputError('invalid transition {:s} -> {:s}'.format(
                self.status, status))
        return replace(self, status=status, **kwargs)

    def as_dict(self):
        return dict(status=self.status, start=self.start, end=self.end,
                    exit_code=self.exit_code, log=self.log)


class StateStore:
    """Task states of one scene; every transition is written atomically."""

    def __init__(self, directory):
        self.directory = directory
        self._lock = threading.Lock()

    def _json(self, task):
        return os.path.join(self.directory, task + '.json')

    def _marker(self, task):
        return os.path.join(self.directory, task + '.done')

    def read(self, task):
        path = self._json(task)
        if not os.path.exists(path):
            return TaskState()
        try:
            d = read_json(path)
            state = TaskState(d['status'], d.get('start'), d.get('end'),
                              d.get('exit_code'), d.get('log'))
        except (ValueError, KeyError, TypeError) as err:
            logger.warning('corrupt state file %s (%s), task is pending',
                           path, err)
            return TaskState()
        if state.status == DONE and not os.path.exists(self._marker(task)):
            logger.warning('task %s: done state without marker, task is '
                           'pending', task)
            return TaskState()
        return state

    def write(self, task, state):
        with self._lock:
            marker = self._marker(task)
            if state.status != DONE and os.path.exists(marker):
                os.remove(marker)
            write_json(self._json(task), state.as_dict())
            if state.status == DONE:
                with open(marker, 'w') as f:
                    f.write('{:d}\n'.format(state.exit_code or 0))

    def is_done(self, task):
        state = self.read(task)
        return state.status == DONE and state.exit_code == 0

    def reset(self, task):
        """Brings a stale running or a failed task back to pending."""
        state = self.read(task)
        if state.status == RUNNING:
            logger.warning('task %s was interrupted, marking it failed', task)
            state = state.to(FAILED, end=time.time())
            self.write(task, state)
        if state.status == FAILED:
            state = state.to(PENDING)
            self.write(task, state)
        return state

    def table(self, graph):
        return [(name, self.read(name)) for name in graph.topological_order()]


def _store(statedir):
    return statedir if isinstance(statedir, StateStore) \
        else StateStore(statedir)


def compute_pending(graph, statedir):
    """Tasks that are not done, in topological order.

    :param graph: task graph
    :param statedir: state directory or :py:class:`StateStore`
    :return: list of task names
    """
    store = _store(statedir)
    return [name for name in graph.topological_order()
            if not store.is_done(name)]


# -----------------------------------------------------------------------------
#                               Scene lock
@contextlib.contextmanager
def scene_lock(scene_dir):
    """Exclusive lock of a scene directory. A lock left by a dead process is
    taken over."""
    directory = os.path.join(scene_dir, state_dir)
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, _lock_name)
    for attempt in range(2):
        try:
            fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            break
        except FileExistsError:
            pid = _lock_owner(path)
            if attempt == 0 and pid is not None and not _alive(pid):
                logger.warning('removing stale lock of process %d', pid)
                os.remove(path)
                continue
            raise SceneLockedError('{:s} is locked by process {!s}'.format(
                scene_dir, pid))
    with os.fdopen(fd, 'w') as f:
        f.write('{:d}\n'.format(os.getpid()))
    try:
        yield path
    finally:
        if os.path.exists(path):
            os.remove(path)


def _lock_owner(path):
    try:
        with open(path) as f:
            return int(f.read().strip())
    except (OSError, ValueError):
        return None


def _alive(pid):
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


# -----------------------------------------------------------------------------
#                               Backends
class _ThreadFilter(logging.Filter):
    def __init__(self, ident):
        super().__init__()
        self.ident = ident

    def filter(self, record):
        return record.thread == self.ident


@contextlib.contextmanager
def _task_log(log_path):
    """Copies the package log records of the current thread to a file."""
    handler = logging.FileHandler(log_path, mode='a', encoding='utf-8')
    handler.setFormatter(logging.Formatter(
        '%(asctime)s %(levelname)-7s %(name)s: %(message)s'))
    handler.addFilter(_ThreadFilter(threading.get_ident()))
    pkg_logger = logging.getLogger('semfuse')
    previous = pkg_logger.level
    if previous == logging.NOTSET or previous > logging.INFO:
        pkg_logger.setLevel(logging.INFO)
    pkg_logger.addHandler(handler)
    try:
        yield
    finally:
        pkg_logger.removeHandler(handler)
        pkg_logger.setLevel(previous)
        handler.close()


def scene_frame_count(scene_dir):
    """Number of frames of a scene: synchronized frames when available,
    else raw color frames, else 1."""
    manifest = os.path.join(scene_dir, 'synced', 'manifest.json')
    if os.path.exists(manifest):
        return max(int(read_json(manifest).get('n_frames', 1)), 1)
    stamps = os.path.join(scene_dir, 'timestamps.json')
    if os.path.exists(stamps):
        return max(len(read_json(stamps).get('color', [])), 1)
    logger.warning('%s: unknown scene size, assuming 1 frame', scene_dir)
    return 1


class LocalBackend:
    """Runs builtin stages in-process and external commands as
    subprocesses.

    :param builtins: dictionary ``task name -> callable(scene_dir, spec)``
    :param extra: additional template placeholders
    """

    def __init__(self, builtins=None, extra=None):
        self.builtins = dict(builtins or dict())
        self.extra = dict(extra or dict())

    def run(self, spec, scene_dir, log_path):
        """Runs one task and returns its exit code."""
        with _task_log(log_path):
            try:
                if spec.kind == BUILTIN:
                    stage = self.builtins.get(spec.name)
                    if stage is None:
                        raise InvalidInputError('no stage bound to builtin '
                                                'task {:s}'.format(spec.name))
                    code = stage(scene_dir, spec)
                    return 0 if code is None else int(code)
                return run_external(spec, scene_dir, log_path, self.extra)
            except Exception:
                logger.error('task %s failed:\n%s', spec.name,
                             traceback.format_exc())
                return 1


class ScriptBackend:
    """Writes one batch script per pending task instead of running it.

    :param out_dir: output directory (one sub-directory per scene)
    :param command: template of the command of a script, with ``{scene_dir}``
        and ``{task}`` placeholders
    """

    def __init__(self, out_dir, command=None):
        self.out_dir = out_dir
        self.command = command or 'semfuse run --scene {scene_dir} ' \
                                  '--stage {task}'


def _template_values(spec, scene_dir, extra, input_dir, output_dir):
    values = dict(scene_dir=os.path.abspath(scene_dir),
                  frames=scene_frame_count(scene_dir),
                  input_dir=os.path.abspath(input_dir),
                  output_dir=os.path.abspath(output_dir),
                  python=sys.executable, task=spec.name)
    values.update(extra)
    return {k: shlex.quote(str(v)) for k, v in values.items()}


def _run_command(spec, scene_dir, extra, input_dir, output_dir, log_path):
    if not spec.command:
        raise InvalidInputError('task {:s} has no command'.format(spec.name))
    os.makedirs(output_dir, exist_ok=True)
    values = _template_values(spec, scene_dir, extra, input_dir, output_dir)
    try:
        command = spec.command.format(**values)
    except KeyError as err:
        raise InvalidInputError('task {:s}: unknown placeholder {:s}'.format(
            spec.name, str(err)))
    logger.info('task %s: %s', spec.name, command)
    with open(log_path, 'a', encoding='utf-8') as log:
        proc = subprocess.run(shlex.split(command), stdout=log,
                              stderr=subprocess.STDOUT)
    return proc.returncode


def _prepare_inputs(frames_dir, out_dir, gravity, flip):
    """Copies color frames rotated by their gravity quarter turns and/or
    mirrored."""
    os.makedirs(out_dir, exist_ok=True)
    for index in frame_indices(frames_dir):
        img = read_color(os.path.join(frames_dir, frame_name(index)))
        if gravity is not None:
            img = rotate_quarter(img, gravity.get(index, 0))
        if flip:
            img = mirror(img)
        write_color(os.path.join(out_dir, frame_name(index)), img)


def _restore_labels(out_dir, index, gravity, flip):
    lm = read_label_map(os.path.join(out_dir, frame_name(index)), '')
    if flip:
        lm = mirror(lm)
    if gravity is not None:
        lm = unrotate_labels(lm, gravity.get(index, 0))
    return lm


def run_external(spec, scene_dir, log_path, extra=None):
    """Runs an external task.

    Without augmentation the command reads ``synced/color`` and writes
    ``predictions/<task>/``. With ``gravity_align`` and/or ``mirror_tta`` it
    runs on transformed copies under ``tmp/<task>/``; the label maps are
    transformed back and, for ``mirror_tta``, merged keeping the labels both
    runs agree on.

    :return: exit code
    """
    extra = extra or dict()
    frames_dir = os.path.join(scene_dir, 'synced', 'color')
    out_dir = os.path.join(scene_dir, predictions_dir, spec.name)
    if not (spec.gravity_align or spec.mirror_tta):
        return _run_command(spec, scene_dir, extra, frames_dir, out_dir,
                            log_path)
    if not os.path.isdir(frames_dir):
        raise MissingArtifactError(frames_dir, 'run preprocess first')
    gravity = None
    if spec.gravity_align:
        gravity = {i: g.k for i, g in read_gravity_json(
            os.path.join(scene_dir, 'synced', 'gravity.json')).items()}
    work = os.path.join(scene_dir, tmp_dir, spec.name)
    variants = [False, True] if spec.mirror_tta else [False]
    outputs = []
    for flip in variants:
        suffix = '_mirror' if flip else ''
        in_dir = os.path.join(work, 'input' + suffix)
        run_dir = os.path.join(work, 'output' + suffix)
        _prepare_inputs(frames_dir, in_dir, gravity, flip)
        code = _run_command(spec, scene_dir, extra, in_dir, run_dir, log_path)
        if code != 0:
            return code
        outputs.append(run_dir)
    for index in frame_indices(frames_dir):
        maps = [_restore_labels(d, index, gravity, flip)
                for d, flip in zip(outputs, variants)]
        write_label_map(os.path.join(out_dir, frame_name(index)),
                        merge_augmented(maps))
    shutil.rmtree(work, ignore_errors=True)
    return 0


# -----------------------------------------------------------------------------
#                               Execution
@dataclass
class RunReport:
    entries: list = field(default_factory=list)
    scripts: list = field(default_factory=list)

    def add(self, task, status, duration=0., exit_code=None):
        self.entries.append(dict(task=task, status=status,
                                 duration=float(duration),
                                 exit_code=exit_code))

    def status(self, task):
        for e in self.entries:
            if e['task'] == task:
                return e['status']
        return None

    def executed(self):
        """Tasks that ran in this execution, in start order."""
        return [e['task'] for e in self.entries
                if e['status'] in (DONE, FAILED)]

    @property
    def ok(self):
        return all(e['status'] in (DONE, SKIPPED) for e in self.entries)


def _run_task(store, backend, spec, scene_dir, started):
    store.reset(spec.name)
    log_path = os.path.join(scene_dir, logs_dir, spec.name + '.log')
    os.makedirs(os.path.dirname(log_path), exist_ok=True)
    state = TaskState().to(RUNNING, start=time.time(), log=log_path)
    store.write(spec.name, state)
    started.append(spec.name)
    code = backend.run(spec, scene_dir, log_path)
    end = max(time.time(), state.start)
    state = state.to(DONE if code == 0 else FAILED, end=end, exit_code=code)
    store.write(spec.name, state)
    return state


def execute(graph, scene_dir, backend, max_parallel=1, only=None):
    """Runs the tasks of a scene that are not done.

    A task starts once all its dependencies are done; at most
    ``max_parallel`` tasks run at a time. A failure blocks the dependents of
    the failed task and nothing else.

    :param graph: task graph
    :param scene_dir: scene directory
    :param backend: :py:class:`LocalBackend` or :py:class:`ScriptBackend`
    :param max_parallel: maximum number of concurrent tasks
    :param only: run only these tasks (their dependencies must be done)
    :rtype: RunReport
    """
    if max_parallel < 1:
        raise InvalidInputError('max_parallel must be >= 1')
    if only is not None:
        unknown = set(only) - set(graph.tasks)
        if unknown:
            raise GraphError('unknown task(s): {:s}'.format(
                ', '.join(sorted(unknown))))
    report = RunReport()
    if isinstance(backend, ScriptBackend):
        report.scripts = emit_batch_scripts(graph, [scene_dir],
                                            backend.out_dir, backend.command)
        return report
    store = StateStore(os.path.join(scene_dir, state_dir))
    started = []
    with scene_lock(scene_dir):
        sorter = graph.sorter()
        sorter.prepare()
        unsuccessful = set()
        running = dict()
        with ThreadPoolExecutor(max_workers=max_parallel) as pool:
            while sorter.is_active():
                changed = False
                for name in sorted(sorter.get_ready(), key=graph.index):
                    selected = only is None or name in only
                    if store.is_done(name):
                        if selected:
                            report.add(name, SKIPPED)
                    elif not selected or any(d in unsuccessful
                                             for d in graph.deps(name)):
                        if selected:
                            report.add(name, BLOCKED)
                        unsuccessful.add(name)
                    else:
                        fut = pool.submit(_run_task, store, backend,
                                          graph[name], scene_dir, started)
                        running[fut] = name
                        continue
                    sorter.done(name)
                    changed = True
                if changed:
                    continue
                if not running:
                    raise GraphError('no runnable task')
                finished, _ = wait(running, return_when=FIRST_COMPLETED)
                for fut in sorted(finished, key=lambda f: running[f]):
                    name = running.pop(fut)
                    state = fut.result()
                    report.add(name, state.status, state.end - state.start,
                               state.exit_code)
                    if state.status != DONE:
                        unsuccessful.add(name)
                        logger.warning('task %s failed with exit code %d, '
                                       'see %s', name, state.exit_code,
                                       state.log)
                    sorter.done(name)
    order = {name: k for k, name in enumerate(started)}
    report.entries.sort(key=lambda e: (order.get(e['task'], len(order)),
                                       graph.index(e['task'])))
    return report


# -----------------------------------------------------------------------------
#                               Batch scripts
def _script_name(graph, name):
    return '{:02d}_{:s}.sh'.format(graph.index(name), name)


def emit_batch_scripts(graph, scenes, out_dir, command=None):
    """One script per pending task of every scene.

    Each script holds resource request lines ``#RES cpus=.. ram_gb=..
    hours=.. gpus=..`` (estimated for the scene size), one ``#DEP <task>``
    line per dependency and the command running the task.

    :param graph: task graph
    :param scenes: scene directories
    :param out_dir: output directory; scripts go to ``<out_dir>/<scene>/``
    :param command: command template (see :py:class:`ScriptBackend`)
    :return: list of written script paths
    """
    command = command or ScriptBackend(out_dir).command
    written = []
    for scene_dir in scenes:
        scene = os.path.basename(os.path.normpath(scene_dir))
        pending = compute_pending(graph, os.path.join(scene_dir, state_dir))
        if not pending:
            continue
        n_frames = scene_frame_count(scene_dir)
        directory = os.path.join(out_dir, scene)
        try:
            os.makedirs(directory, exist_ok=True)
        except OSError as err:
            raise InvalidInputError('cannot write scripts to {:s}: {:s}'
                                    .format(directory, str(err)))
        for name in pending:
            spec = graph[name]
            res = estimate(spec.resources, n_frames)
            lines = ['#!/bin/sh',
                     '#TASK {:s}'.format(name),
                     '#SCENE {:s}'.format(scene),
                     '#RES cpus={:d} ram_gb={:g} hours={:g} gpus={:d}'.format(
                         res.cpus, res.ram_gb, res.hours, res.gpus)]
            lines += ['#DEP {:s}'.format(d) for d in spec.deps]
            lines.append(command.format(
                scene_dir=shlex.quote(os.path.abspath(scene_dir)),
                task=shlex.quote(name)))
            path = os.path.join(directory, _script_name(graph, name))
            with open(path, 'w') as f:
                f.write('\n'.join(lines) + '\n')
            written.append(path)
        logger.info('%s: %d script(s) written to %s', scene, len(pending),
                    directory)
    return written


def parse_batch_script(path):
    """Task name, resource request and dependencies of an emitted script."""
    name, res, deps = None, dict(), []
    with open(path) as f:
        for line in f:
            if line.startswith('#TASK '):
                name = line.split()[1]
            elif line.startswith('#RES '):
                for item in line.split()[1:]:
                    key, value = item.split('=')
                    res[key] = float(value)
            elif line.startswith('#DEP '):
                deps.append(line.split()[1])
    return name, res, deps
