import json
import os
import numpy as np
import pytest
from semfuse import __version__
from semfuse.cli import main
from semfuse.fileio import (frame_indices, read_color, read_json,
                            write_label_png)
from semfuse.fusion3d import read_labeled_cloud
from semfuse.orchestrator import default_graph
from semfuse.synthetic import (predict_directory, write_demo_scene,
                               write_ground_truth)

repo_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
task_order = default_graph().topological_order()


@pytest.fixture
def importable(monkeypatch):
    """External tasks run ``python -m semfuse.synthetic`` in a subprocess."""
    path = os.environ.get('PYTHONPATH')
    monkeypatch.setenv('PYTHONPATH', repo_root if not path
                       else repo_root + os.pathsep + path)


def _outputs(scene):
    """Contents of the deterministic outputs of a scene."""
    out = dict()
    for name in ('mesh.ply', 'cloud.ply', 'labels.ply'):
        with open(os.path.join(scene, name), 'rb') as f:
            out[name] = f.read()
    directory = os.path.join(scene, 'consensus')
    for name in sorted(os.listdir(directory)):
        with open(os.path.join(directory, name), 'rb') as f:
            out['consensus/' + name] = f.read()
    return out


# -------------------------------------------------------------
#       ****     TEST: status and usage      ****
# -------------------------------------------------------------
def test_status_of_fresh_scene(tmp_path, capsys):
    scene = str(tmp_path / 'scene')
    write_demo_scene(scene, n_frames=4)
    assert main(['status', '--scene', scene]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [line.split()[0] for line in lines] == task_order
    assert all(line.split()[1] == 'pending' for line in lines)


def test_usage_errors(tmp_path, capsys):
    assert main(['sync', '--scene', str(tmp_path / 'none')]) == 2
    assert 'missing artifact' in capsys.readouterr().err
    assert main(['run', '--scene', str(tmp_path), '--scene',
                 str(tmp_path)]) == 2
    with pytest.raises(SystemExit) as err:
        main(['--version'])
    assert err.value.code == 0
    assert __version__ in capsys.readouterr().out
    with pytest.raises(SystemExit):
        main(['fuse'])


def test_locked_scene(tmp_path):
    scene = str(tmp_path)
    os.makedirs(os.path.join(scene, 'state'))
    with open(os.path.join(scene, 'state', '.lock'), 'w') as f:
        f.write('{:d}\n'.format(os.getpid()))
    assert main(['run', '--scene', scene]) == 1


def test_unexpected_error_is_logged(tmp_path, monkeypatch, caplog):
    def broken(args):
        raise RuntimeError('disk on fire')

    monkeypatch.setattr('semfuse.cli._dispatch', broken)
    assert main(['status', '--scene', str(tmp_path)]) == 1
    record = [r for r in caplog.records if r.name == 'semfuse.cli'][-1]
    assert record.levelname == 'ERROR'
    assert record.getMessage() == 'status failed'
    assert 'disk on fire' in str(record.exc_info[1])


def test_render_all_zero_map_is_black(tmp_path):
    scene = str(tmp_path)
    write_label_png(os.path.join(scene, 'consensus', '000000.png'),
                    np.zeros((6, 8), dtype=np.uint16))
    assert main(['render', '--scene', scene]) == 0
    img = read_color(os.path.join(scene, 'render', 'consensus',
                                  '000000.png'))
    assert img.shape == (6, 8, 3) and not img.any()


def test_emit_scripts_for_several_scenes(tmp_path, capsys):
    scenes = [str(tmp_path / name) for name in ('s0', 's1')]
    for s in scenes:
        os.makedirs(s)
    out = str(tmp_path / 'jobs')
    argv = ['run', '--emit-scripts', out]
    for s in scenes:
        argv += ['--scene', s]
    assert main(argv) == 0
    assert '{:d} script(s)'.format(2*len(task_order)) in \
        capsys.readouterr().out
    assert sorted(os.listdir(out)) == ['s0', 's1']
    assert len(os.listdir(os.path.join(out, 's1'))) == len(task_order)


# -------------------------------------------------------------
#       ****     TEST: synthetic scene end to end      ****
# -------------------------------------------------------------
def test_synthetic_scene_end_to_end(tmp_path, importable, capsys):
    scene = str(tmp_path / 'room')
    write_demo_scene(scene, seed=1, n_frames=12)
    assert main(['run', '--scene', scene]) == 0
    for name in ('mesh.ply', 'cloud.ply', 'labels.ply', 'stats.json',
                 'lift_stats.json'):
        assert os.path.exists(os.path.join(scene, name))
    for model in ('gsam', 'mask3d', 'ovseg', 'internimage', 'cmx'):
        assert frame_indices(os.path.join(scene, 'predictions', model)) == \
            list(range(12))
    assert frame_indices(os.path.join(scene, 'render', 'consensus')) == \
        list(range(12))
    assert not os.path.exists(os.path.join(scene, 'tmp'))
    stats = read_json(os.path.join(scene, 'stats.json'))
    assert stats['tasks']['lift']['status'] == 'done'
    assert stats['lift']['n_points'] == len(read_labeled_cloud(
        os.path.join(scene, 'labels.ply')))
    capsys.readouterr()

    # everything is done: a second run executes nothing
    assert main(['run', '--scene', scene]) == 0
    assert all(line.split()[1] == 'skipped'
               for line in capsys.readouterr().out.splitlines())

    # same inputs, same bytes
    twin = str(tmp_path / 'twin')
    write_demo_scene(twin, seed=1, n_frames=12)
    assert main(['run', '--scene', twin]) == 0
    assert _outputs(twin) == _outputs(scene)

    write_ground_truth(scene)
    result = str(tmp_path / 'metrics.json')
    capsys.readouterr()
    assert main(['eval', '--gt', os.path.join(scene, 'labels_gt.ply'),
                 '--pred', os.path.join(scene, 'labels.ply'),
                 '--output', result]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed == read_json(result)
    assert 0.4 < printed['tacc'] <= 1.
    assert 0. < printed['miou'] <= 1.


def test_stages_one_by_one(tmp_path):
    scene = str(tmp_path / 'room')
    write_demo_scene(scene, n_frames=6)
    assert main(['sync', '--scene', scene]) == 0
    assert main(['fuse', '--scene', scene, '--voxel', '0.05', '--trunc',
                 '0.15', '--downsample', '0.1']) == 0
    cloud = read_labeled_cloud(os.path.join(scene, 'cloud.ply'))
    assert len(cloud) > 0 and not cloud.label.any()
    # the consensus needs predictions
    assert main(['consensus', '--scene', scene]) == 2
    color = os.path.join(scene, 'synced', 'color')
    for model in ('gsam', 'ovseg'):
        predict_directory(color, os.path.join(scene, 'predictions', model),
                          model, noise=0.)
    assert main(['consensus', '--scene', scene, '--sources', 'gsam,ovseg',
                 '--min-votes', '1']) == 0
    assert frame_indices(os.path.join(scene, 'consensus')) == list(range(6))
    assert main(['lift', '--scene', scene]) == 0
    labels = read_labeled_cloud(os.path.join(scene, 'labels.ply'))
    assert len(labels) == len(cloud) and labels.label.any()
