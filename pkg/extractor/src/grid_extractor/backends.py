"""Feature/proposal backends behind one small interface.

``TorchBackend`` runs the intended pretrained stack: a text-prompted
grounding detector for boxes, a promptable segmenter for masks inside
those boxes, and a ViT whose last-layer patch tokens become the grid
features. It needs model weights available locally and raises
ModelLoadError otherwise.

``ClassicalBackend`` is a deterministic, dependency-light fallback used in
weight-free environments and CI: proposals come from connected components
of color saliency against the dominant background, and patch features are
a fixed random projection of per-patch color/edge statistics. It exists so
the container-producing path stays fully testable offline.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .errors import ModelLoadError, NoProposals

PATCH_SIZE = 14
CLASSICAL_DIM = 32
_MIN_COMPONENT_PX = 16


class ClassicalBackend:
    name = "classical"

    def __init__(self):
        rng = np.random.default_rng(1234)
        raw_dim = 10  # rgb mean, rgb std, edge energy, x, y, constant
        projection = rng.normal(size=(CLASSICAL_DIM, raw_dim))
        q, _ = np.linalg.qr(projection)
        self._projection = q[:, :raw_dim]

    def propose(self, image: np.ndarray, prompt: str, threshold: float):
        """Connected components of color saliency against the background.

        The prompt is accepted for interface parity and ignored; this
        backend has no notion of language.
        """
        del prompt
        img = np.asarray(image, dtype=np.float64)
        background = np.median(img.reshape(-1, 3), axis=0)
        saliency = np.abs(img - background).max(axis=2) / 255.0
        fg = saliency > 0.15
        labels, count = ndimage.label(fg)
        proposals = []
        for index in range(1, count + 1):
            component = labels == index
            if component.sum() < _MIN_COMPONENT_PX:
                continue
            confidence = float(saliency[component].mean())
            if confidence < threshold:
                continue
            ys, xs = np.nonzero(component)
            box = (
                float(xs.min()),
                float(ys.min()),
                float(xs.max() + 1),
                float(ys.max() + 1),
            )
            proposals.append((box, component.astype(np.uint8), confidence))
        if not proposals:
            raise NoProposals("no salient component above the box threshold")
        proposals.sort(key=lambda p: -p[2])
        return proposals

    def patch_features(self, crop: np.ndarray) -> np.ndarray:
        """(side, side, C) features from per-patch color/edge statistics."""
        crop = np.asarray(crop, dtype=np.float64) / 255.0
        size = crop.shape[0]
        side = size // PATCH_SIZE
        gray = crop.mean(axis=2)
        gy, gx = np.gradient(gray)
        edge = np.hypot(gx, gy)

        blocks = crop[: side * PATCH_SIZE, : side * PATCH_SIZE].reshape(
            side, PATCH_SIZE, side, PATCH_SIZE, 3
        )
        mean_rgb = blocks.mean(axis=(1, 3))
        std_rgb = blocks.std(axis=(1, 3))
        edge_blocks = edge[: side * PATCH_SIZE, : side * PATCH_SIZE].reshape(
            side, PATCH_SIZE, side, PATCH_SIZE
        )
        edge_mean = edge_blocks.mean(axis=(1, 3))
        ys, xs = np.mgrid[0:side, 0:side] / max(side - 1, 1)

        raw = np.concatenate(
            [
                mean_rgb,
                std_rgb,
                edge_mean[..., None],
                xs[..., None],
                ys[..., None],
                np.ones((side, side, 1)),  # keeps every patch vector nonzero
            ],
            axis=2,
        )
        return raw @ self._projection.T


class TorchBackend:
    """Grounding detector + promptable segmenter + ViT patch features.

    Models load lazily from local caches; any load failure surfaces as
    ModelLoadError. Inference is CPU-friendly at desk scale.
    """

    name = "torch"

    DETECTOR = "IDEA-Research/grounding-dino-tiny"
    SEGMENTER = "facebook/sam-vit-base"
    ENCODER = "facebook/dinov2-small"

    def __init__(self):
        try:
            import torch
            from transformers import (
                AutoImageProcessor,
                AutoModel,
                AutoProcessor,
                AutoModelForZeroShotObjectDetection,
                SamModel,
                SamProcessor,
            )
        except Exception as exc:  # pragma: no cover - import environment
            raise ModelLoadError(f"torch/transformers unavailable: {exc}") from exc
        self._torch = torch
        try:
            self._det_processor = AutoProcessor.from_pretrained(self.DETECTOR)
            self._detector = AutoModelForZeroShotObjectDetection.from_pretrained(
                self.DETECTOR
            ).eval()
            self._sam_processor = SamProcessor.from_pretrained(self.SEGMENTER)
            self._sam = SamModel.from_pretrained(self.SEGMENTER).eval()
            self._enc_processor = AutoImageProcessor.from_pretrained(self.ENCODER)
            self._encoder = AutoModel.from_pretrained(self.ENCODER).eval()
        except Exception as exc:
            raise ModelLoadError(f"could not load pretrained weights: {exc}") from exc

    def propose(self, image: np.ndarray, prompt: str, threshold: float):
        torch = self._torch
        from PIL import Image

        pil = Image.fromarray(image)
        text = prompt if prompt.endswith(".") else prompt + "."
        inputs = self._det_processor(images=pil, text=text, return_tensors="pt")
        with torch.no_grad():
            outputs = self._detector(**inputs)
        results = self._det_processor.post_process_grounded_object_detection(
            outputs,
            inputs.input_ids,
            box_threshold=threshold,
            text_threshold=0.25,
            target_sizes=[pil.size[::-1]],
        )[0]
        boxes = results["boxes"].cpu().numpy()
        scores = results["scores"].cpu().numpy()
        if boxes.shape[0] == 0:
            raise NoProposals("the grounding detector returned no boxes")

        sam_inputs = self._sam_processor(
            pil, input_boxes=[[list(map(float, b)) for b in boxes]], return_tensors="pt"
        )
        with torch.no_grad():
            sam_out = self._sam(**sam_inputs, multimask_output=False)
        masks = self._sam_processor.image_processor.post_process_masks(
            sam_out.pred_masks.cpu(),
            sam_inputs["original_sizes"].cpu(),
            sam_inputs["reshaped_input_sizes"].cpu(),
        )[0][:, 0].numpy()

        proposals = []
        for box, mask, score in zip(boxes, masks, scores):
            x0, y0, x1, y1 = (float(v) for v in box)
            if x1 <= x0 or y1 <= y0 or mask.sum() == 0:
                continue
            proposals.append(((x0, y0, x1, y1), mask.astype(np.uint8), float(score)))
        if not proposals:
            raise NoProposals("segmentation left no valid proposal")
        proposals.sort(key=lambda p: -p[2])
        return proposals

    def patch_features(self, crop: np.ndarray) -> np.ndarray:
        torch = self._torch
        from PIL import Image

        size = crop.shape[0]
        side = size // PATCH_SIZE
        pil = Image.fromarray(crop.astype(np.uint8))
        inputs = self._enc_processor(
            images=pil, return_tensors="pt", size={"height": size, "width": size}
        )
        with torch.no_grad():
            out = self._encoder(**inputs)
        tokens = out.last_hidden_state[0].cpu().numpy()
        # Drop the cls token (and registers, if present) ahead of the patch grid.
        patch_tokens = tokens[tokens.shape[0] - side * side :]
        return patch_tokens.reshape(side, side, -1).astype(np.float64)


def make_backend(name: str):
    if name == "classical":
        return ClassicalBackend()
    if name == "torch":
        return TorchBackend()
    raise ValueError(f"unknown backend {name!r}")
