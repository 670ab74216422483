import numpy as np
from semfuse.consensus import VoteConfig, aggregate
from semfuse.evaluation import confusion, per_class_iou, tacc
from semfuse.labelspace import LabelMap
from semfuse.lift3d import lift
from semfuse.synthetic import (demo_models, make_frames, room_intrinsics,
                               room_keyframes, room_scene, simulate_prediction)

k_room = room_intrinsics()


def _room(seed):
    """Rendered room frames plus points sampled on the visible surfaces
    and their true labels."""
    prims, space = room_scene(seed)
    frames, gt = make_frames(prims, room_keyframes(2.), k_room)
    rays = k_room.pixel_rays()
    pts, labels = [], []
    for frame, lab in zip(frames[::4], gt[::4]):
        depth = frame.depth_map()[::8, ::8]
        keep = depth > 0
        cam = rays[::8, ::8][keep]*depth[keep][:, None]
        pts.append(frame.pose.camera_to_world(cam))
        labels.append(lab[::8, ::8][keep])
    return frames, gt, np.vstack(pts), np.concatenate(labels), len(space) - 1


def _predictions(gt, n_classes, seed):
    out = dict()
    for m, (model, swap) in enumerate(sorted(demo_models.items())):
        rng = np.random.default_rng((seed, m))
        out[model] = [LabelMap(simulate_prediction(g, n_classes, rng,
                                                   swap=swap), 'synthetic')
                      for g in gt]
    return out


def _gt_miou(gt, pred):
    """Mean IoU over the classes of the ground truth."""
    iou = per_class_iou(confusion(gt, pred))
    return float(np.mean([iou[c] for c in np.unique(gt) if c]))


# -------------------------------------------------------------
#       ****     TEST: consensus against single models      ****
# -------------------------------------------------------------
def test_consensus_beats_every_single_model_in_3d():
    for scene_seed in range(3):
        frames, gt, pts, truth, n_classes = _room(scene_seed)
        for seed in range(5):
            preds = _predictions(gt, n_classes, seed)
            single = {model: _gt_miou(truth, lift(pts, frames, maps,
                                                  k_room).label)
                      for model, maps in preds.items()}
            cmaps = [aggregate([(model, preds[model][k]) for model in preds],
                               VoteConfig(min_votes=2.))
                     for k in range(len(frames))]
            fused = _gt_miou(truth, lift(pts, frames, cmaps, k_room).label)
            assert fused >= max(single.values()) + 0.05, (scene_seed, seed)


def test_consensus_beats_every_single_model_per_pixel():
    frames, gt, _, _, n_classes = _room(0)
    preds = _predictions(gt, n_classes, 0)
    for k in (0, 7, 15):
        cmap = aggregate([(model, preds[model][k]) for model in preds],
                         VoteConfig(min_votes=2.))
        fused = tacc(confusion(gt[k], cmap.top1))
        for model in preds:
            assert fused > tacc(confusion(gt[k], preds[model][k].data))
