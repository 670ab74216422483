import os
import pytest
from semfuse.aux import (GraphError, InvalidInputError, MissingArtifactError,
                         are_close)
from semfuse.config import load_pipeline_config, make_run_config
from semfuse.fileio import write_json


def _write(tmp_path, doc):
    path = str(tmp_path / 'conf' / 'pipeline.json')
    write_json(path, doc)
    return path


def test_load_pipeline_config(tmp_path):
    path = _write(tmp_path, {
        'label_space': 'labels.csv', 'colormap': '/abs/colors.csv',
        'max_parallel': 3, 'comment': 'ignored',
        'vote': {'weights': {'gsam': 2.0}, 'min_votes': 1.5},
        'lift': {'occlusion_tol': 0.1, 'stride': 2},
        'fusion': {'voxel_size': 0.02, 'truncation': 0.06, 'extra': 1},
        'tasks': {'gsam': {'mapping': 'maps/gsam.csv', 'mirror_tta': True}}})
    cfg = load_pipeline_config(path)
    assert cfg.label_space == os.path.join(str(tmp_path), 'conf',
                                           'labels.csv')
    assert cfg.colormap == '/abs/colors.csv'
    assert cfg.max_parallel == 3
    assert cfg.vote.weight('gsam') == 2.
    assert cfg.lift.stride == 2 and are_close(cfg.lift.occlusion_tol, 0.1)
    assert are_close(cfg.fusion.voxel_size, 0.02)
    assert cfg.mapping_paths() == {'gsam': os.path.join(
        str(tmp_path), 'conf', 'maps', 'gsam.csv')}
    assert cfg.graph()['gsam'].mirror_tta


def test_command_line_overrides(tmp_path):
    path = _write(tmp_path, {'fusion': {'voxel_size': 0.02,
                                        'truncation': 0.06},
                             'vote': {'min_votes': 1.0}})
    cfg = make_run_config(str(tmp_path), path, ['lift'], max_parallel=4,
                          trunc=0.1, min_votes=3., occlusion_tol=0.2)
    assert cfg.stages == ('lift',) and cfg.max_parallel == 4
    assert are_close(cfg.fusion.voxel_size, 0.02)
    assert are_close(cfg.fusion.truncation, 0.1)
    assert cfg.vote.min_votes == 3. and cfg.lift.occlusion_tol == 0.2
    assert make_run_config().fusion == make_run_config(voxel=None).fusion


@pytest.mark.parametrize('doc, error', [
    ({'fusion': {'voxel_size': 0.1, 'truncation': 0.01}}, InvalidInputError),
    ({'vote': {'min_votes': -1}}, InvalidInputError),
    ({'tasks': {'a': {'deps': ['b']}, 'b': {'deps': ['a']}}}, GraphError),
    ([1, 2], InvalidInputError)])
def test_invalid_configs(tmp_path, doc, error):
    with pytest.raises(error):
        load_pipeline_config(_write(tmp_path, doc))


def test_validate(tmp_path):
    with pytest.raises(MissingArtifactError):
        load_pipeline_config(str(tmp_path / 'none.json'))
    cfg = make_run_config(str(tmp_path / 'missing'))
    with pytest.raises(MissingArtifactError):
        cfg.validate()
    cfg = make_run_config(str(tmp_path), max_parallel=0)
    with pytest.raises(InvalidInputError):
        cfg.validate()
