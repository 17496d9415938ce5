"""Turn images into patch-grid containers the matching pipeline consumes.

Per query image the output container holds proposal boxes, full-image
masks, per-proposal patch grids with foreground masks, and the image id.
Per template set it holds one patch grid + foreground mask per view and
the instance ids. Embeddings are intentionally absent: the pipeline pools
them from the grids itself.

Pixel-mask to patch-mask rule: a patch counts as foreground when at least
half of its pixels are foreground; if that empties the mask, the single
patch with the highest coverage is used instead, so pooling always has
something to average.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import container
from .backends import PATCH_SIZE, make_backend

VALID_RESOLUTIONS = (224, 448)


@dataclass(frozen=True)
class ExtractionJob:
    image_paths: tuple  # query images
    template_dir: str | None  # <dir>/<instance>/<view>.png + <view>_mask.png
    out_dir: str
    prompt: str = "objects"
    box_threshold: float = 0.15
    resolution: int = 448
    backend: str = "classical"

    def __post_init__(self):
        if not 0.0 < self.box_threshold < 1.0:
            raise ValueError("box_threshold must lie in (0, 1)")
        if self.resolution not in VALID_RESOLUTIONS:
            raise ValueError(f"resolution must be one of {VALID_RESOLUTIONS}")
        object.__setattr__(self, "image_paths", tuple(str(p) for p in self.image_paths))


def load_image(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"))


def load_mask(path) -> np.ndarray:
    return (np.asarray(Image.open(path).convert("L")) > 127).astype(np.uint8)


def resize_to(arr: np.ndarray, size: int, nearest: bool = False) -> np.ndarray:
    mode = Image.NEAREST if nearest else Image.BILINEAR
    return np.asarray(Image.fromarray(arr).resize((size, size), mode))


def patch_foreground(pixel_mask: np.ndarray, side: int) -> np.ndarray:
    """Downsample a pixel mask to the patch grid (>= 50% coverage rule,
    falling back to the best-covered patch when nothing qualifies)."""
    size = side * PATCH_SIZE
    mask = np.asarray(pixel_mask[:size, :size], dtype=np.float64)
    coverage = mask.reshape(side, PATCH_SIZE, side, PATCH_SIZE).mean(axis=(1, 3))
    fg = coverage >= 0.5
    if not fg.any():
        fg = np.zeros_like(fg)
        fg[np.unravel_index(np.argmax(coverage), coverage.shape)] = True
    return fg.astype(np.uint8)


def _grid_records(backend, image, pixel_mask, box, resolution):
    """Crop to the box, resize, and compute (patches, patch_fg)."""
    x0, y0, x1, y1 = (int(round(v)) for v in box)
    x0, y0 = max(x0, 0), max(y0, 0)
    x1, y1 = min(x1, image.shape[1]), min(y1, image.shape[0])
    crop = image[y0:y1, x0:x1]
    mask_crop = pixel_mask[y0:y1, x0:x1]
    crop = resize_to(crop, resolution)
    mask_crop = resize_to((mask_crop * 255).astype(np.uint8), resolution, nearest=True)
    side = resolution // PATCH_SIZE
    patches = backend.patch_features(crop).astype(np.float32)
    fg = patch_foreground(mask_crop > 127, side)
    return patches, fg


def extract_templates(job: ExtractionJob, backend=None) -> Path:
    """Build templates.nids from <template_dir>/<instance>/<view>.png pairs.

    Instances are the sorted subdirectories; each view image ``v.png``
    needs a sibling ``v_mask.png``. View counts must agree across
    instances.
    """
    if job.template_dir is None:
        raise ValueError("job has no template_dir")
    backend = backend or make_backend(job.backend)
    root = Path(job.template_dir)
    instance_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not instance_dirs:
        raise ValueError(f"no instance directories under {root}")

    records: dict[str, np.ndarray] = {}
    view_counts = set()
    for n, inst_dir in enumerate(instance_dirs):
        views = sorted(
            p for p in inst_dir.glob("*.png") if not p.stem.endswith("_mask")
        )
        view_counts.add(len(views))
        for k, view_path in enumerate(views):
            mask_path = view_path.with_name(view_path.stem + "_mask.png")
            image = load_image(view_path)
            mask = load_mask(mask_path)
            box = _mask_bbox(mask)
            patches, fg = _grid_records(backend, image, mask, box, job.resolution)
            records[f"template_grid/{n}/{k}"] = patches
            records[f"template_fg/{n}/{k}"] = fg
    if len(view_counts) != 1 or 0 in view_counts:
        raise ValueError("every instance needs the same nonzero number of views")
    records["instance_ids"] = np.arange(len(instance_dirs), dtype=np.float64)

    out = Path(job.out_dir) / "templates.nids"
    out.parent.mkdir(parents=True, exist_ok=True)
    container.write(out, records)
    return out


def _mask_bbox(mask: np.ndarray):
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return (0.0, 0.0, float(mask.shape[1]), float(mask.shape[0]))
    return (float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1))


def extract_queries(job: ExtractionJob, backend=None) -> list[Path]:
    """Run proposal generation + feature extraction over each query image."""
    backend = backend or make_backend(job.backend)
    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for path in job.image_paths:
        image = load_image(path)
        proposals = backend.propose(image, job.prompt, job.box_threshold)
        records: dict[str, np.ndarray] = {}
        boxes = np.zeros((len(proposals), 4), dtype=np.float32)
        masks = np.zeros((len(proposals),) + image.shape[:2], dtype=np.uint8)
        for q, (box, mask, _confidence) in enumerate(proposals):
            boxes[q] = box
            masks[q] = mask
            patches, fg = _grid_records(backend, image, mask, box, job.resolution)
            records[f"grid/{q}"] = patches
            records[f"fg/{q}"] = fg
        records["boxes"] = boxes
        records["masks"] = masks
        image_id = Path(path).stem
        records["image_id"] = np.frombuffer(
            image_id.encode("utf-8"), dtype=np.uint8
        ).copy()
        out = out_dir / f"{image_id}.nids"
        container.write(out, records)
        written.append(out)
    return written


def extract(job: ExtractionJob) -> dict:
    """Full job: templates (if configured) and every query image."""
    backend = make_backend(job.backend)
    result = {}
    if job.template_dir is not None:
        result["templates"] = extract_templates(job, backend)
    result["queries"] = extract_queries(job, backend)
    return result
