"""Shared scene builders for evaluation and acceptance tests."""

import numpy as np

from instancematch.evaluation import GroundTruth
from instancematch.matching import LabeledProposal

GRID = 16


def proposal(instance_id, score, box, mask=None):
    return LabeledProposal(box, mask, instance_id, score)


def random_box(rng, span=8.0):
    x0, y0 = rng.uniform(0, span, size=2)
    w, h = rng.uniform(0.5, 4.0, size=2)
    return (float(x0), float(y0), float(x0 + w), float(y0 + h))


def box_mask(box):
    mask = np.zeros((GRID, GRID), dtype=bool)
    x0, y0, x1, y1 = (int(min(max(v, 0), GRID - 1)) for v in box)
    mask[y0 : y1 + 1, x0 : x1 + 1] = True
    return mask


def random_scene(rng, images=2, with_masks=False):
    """Up to 5 gts and 10 predictions per image over a few instance ids."""
    gt = {}
    preds = {}
    for i in range(images):
        image_id = f"img{i}"
        objs = []
        for _ in range(int(rng.integers(0, 6))):
            box = random_box(rng)
            objs.append(
                GroundTruth(
                    int(rng.integers(0, 4)), box, box_mask(box) if with_masks else None
                )
            )
        gt[image_id] = objs
        ps = []
        for _ in range(int(rng.integers(0, 11))):
            if objs and rng.random() < 0.6:
                target = objs[rng.integers(0, len(objs))]
                jitter = rng.uniform(-1.0, 1.0, size=4)
                box = (
                    target.box[0] + jitter[0],
                    target.box[1] + jitter[1],
                    max(target.box[2] + jitter[2], target.box[0] + jitter[0] + 0.2),
                    max(target.box[3] + jitter[3], target.box[1] + jitter[1] + 0.2),
                )
                cls = target.instance_id if rng.random() < 0.8 else int(rng.integers(0, 4))
            else:
                box = random_box(rng)
                cls = int(rng.integers(0, 4))
            ps.append(
                proposal(
                    cls,
                    float(rng.random()),
                    box,
                    box_mask(box) if with_masks else None,
                )
            )
        preds[image_id] = ps
    return gt, preds
