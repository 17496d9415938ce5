"""Container-level glue: file schemas and the end-to-end pipeline stages.

Record-name conventions inside containers (the byte format itself is
defined in ``container``):

    templates.nids   "templates" (N,K,C) f32 [optional when grids present]
                     "instance_ids" (N,) f64
                     "template_grid/{n}/{k}" (H,W,C) f32  [optional]
                     "template_fg/{n}/{k}"   (H,W)   u8
    queries.nids     "embeddings" (Q,C) f32 [optional when grids present]
                     "boxes" (Q,4) f32, "masks" (Q,S,S) u8 [optional]
                     "grid/{q}" (H,W,C) f32, "fg/{q}" (H,W) u8 [optional]
                     "image_id" (L,) u8, UTF-8 bytes
    params.nids      "w1","b1","w2","b2" f64, "kind" u8 scalar
                     (0 = weight, 1 = clip), "beta" or "alpha" f64 scalar

Embeddings and grids are stored float32; pooling and all arithmetic happen
in float64 after load. When a container carries grids but no embeddings,
embeddings are recovered by foreground feature averaging.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adapter import (
    AdapterConfig,
    ClipAdapterConfig,
    MlpParams,
    WeightAdapterConfig,
    refine_embeddings,
)
from .config import RunManifest
from .container import read_container, write_container
from .embeddings import PatchGrid, TemplateSet, ffa_pool
from .errors import ContainerError
from .evaluation import ApResult, compute_ap
from .matching import (
    LabeledProposal,
    MatcherConfig,
    aggregate,
    appearance_matrix,
    apply_bonus,
    assign_argmax,
    assign_stable,
    score_templates,
    threshold_filter,
)
from .records import (
    RecordRow,
    mask_container_path,
    read_records,
    rows_to_ground_truth,
    rows_to_predictions,
    write_records,
)
from .synth import SynthScene
from .training import TrainConfig, loss_history_csv, train_adapter

_KIND_CODES = {"weight": 0, "clip": 1}


def _f32(arr) -> np.ndarray:
    return np.asarray(arr, dtype=np.float32)


def _encode_text(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).copy()


def _decode_text(arr: np.ndarray) -> str:
    return bytes(np.asarray(arr, dtype=np.uint8)).decode("utf-8")


# ---------------------------------------------------------------------------
# Template containers.


def save_template_set(path, templates: TemplateSet, grids=None) -> None:
    records: dict[str, np.ndarray] = {
        "templates": _f32(templates.embeddings),
        "instance_ids": np.asarray(templates.instance_ids, dtype=np.float64),
    }
    if grids is not None:
        for n, row in enumerate(grids):
            for k, grid in enumerate(row):
                records[f"template_grid/{n}/{k}"] = _f32(grid.patches)
                records[f"template_fg/{n}/{k}"] = grid.foreground.astype(np.uint8)
    write_container(path, records)


def load_template_set(path) -> tuple[TemplateSet, list | None]:
    records = read_container(path)
    if "instance_ids" not in records:
        raise ContainerError(f"{path}: missing 'instance_ids' record")
    ids = [int(v) for v in np.asarray(records["instance_ids"]).ravel()]
    grids = _collect_grids(records, "template_grid", "template_fg", len(ids))
    if "templates" in records:
        emb = np.asarray(records["templates"], dtype=np.float64)
    elif grids is not None:
        emb = np.asarray([[ffa_pool(g) for g in row] for row in grids])
    else:
        raise ContainerError(f"{path}: needs 'templates' or template grids")
    return TemplateSet(emb, ids), grids


def _collect_grids(records, grid_prefix, fg_prefix, n_count):
    rows = []
    for n in range(n_count):
        row = []
        k = 0
        while f"{grid_prefix}/{n}/{k}" in records:
            fg_name = f"{fg_prefix}/{n}/{k}"
            if fg_name not in records:
                raise ContainerError(f"missing foreground record {fg_name!r}")
            row.append(PatchGrid(records[f"{grid_prefix}/{n}/{k}"], records[fg_name]))
            k += 1
        rows.append(row)
    if all(not row for row in rows):
        return None
    counts = {len(row) for row in rows}
    if len(counts) != 1 or 0 in counts:
        raise ContainerError("each instance needs the same number of template grids")
    return rows


# ---------------------------------------------------------------------------
# Query containers.


@dataclass(frozen=True)
class QuerySet:
    embeddings: np.ndarray  # (Q, C) float64
    grids: list | None  # Q PatchGrid
    boxes: np.ndarray | None  # (Q, 4)
    masks: np.ndarray | None  # (Q, S, S) uint8
    image_id: str


def save_query_set(path, queries: QuerySet) -> None:
    records: dict[str, np.ndarray] = {"embeddings": _f32(queries.embeddings)}
    if queries.boxes is not None:
        records["boxes"] = _f32(queries.boxes)
    if queries.masks is not None:
        records["masks"] = np.asarray(queries.masks, dtype=np.uint8)
    if queries.grids is not None:
        for q, grid in enumerate(queries.grids):
            records[f"grid/{q}"] = _f32(grid.patches)
            records[f"fg/{q}"] = grid.foreground.astype(np.uint8)
    records["image_id"] = _encode_text(queries.image_id)
    write_container(path, records)


def load_query_set(path) -> QuerySet:
    records = read_container(path)
    if "image_id" not in records:
        raise ContainerError(f"{path}: missing 'image_id' record")
    image_id = _decode_text(records["image_id"])

    grids = None
    q = 0
    collected = []
    while f"grid/{q}" in records:
        fg_name = f"fg/{q}"
        if fg_name not in records:
            raise ContainerError(f"missing foreground record {fg_name!r}")
        collected.append(PatchGrid(records[f"grid/{q}"], records[fg_name]))
        q += 1
    if collected:
        grids = collected

    if "embeddings" in records:
        embeddings = np.asarray(records["embeddings"], dtype=np.float64)
    elif grids is not None:
        embeddings = np.asarray([ffa_pool(g) for g in grids])
    else:
        raise ContainerError(f"{path}: needs 'embeddings' or per-proposal grids")

    boxes = records.get("boxes")
    if boxes is not None:
        boxes = np.asarray(boxes, dtype=np.float64)
        if boxes.ndim != 2 or boxes.shape != (embeddings.shape[0], 4):
            raise ContainerError(f"{path}: 'boxes' must be (Q, 4)")
    masks = records.get("masks")
    if masks is not None:
        masks = np.asarray(masks, dtype=np.uint8)
        if masks.ndim != 3 or masks.shape[0] != embeddings.shape[0]:
            raise ContainerError(f"{path}: 'masks' must be (Q, S, S)")
    if grids is not None and len(grids) != embeddings.shape[0]:
        raise ContainerError(f"{path}: grid count != embedding count")
    return QuerySet(embeddings, grids, boxes, masks, image_id)


# ---------------------------------------------------------------------------
# Adapter parameter containers.


def save_adapter_params(path, cfg: AdapterConfig, params: MlpParams) -> None:
    records: dict[str, np.ndarray] = {
        name: np.asarray(arr, dtype=np.float64) for name, arr in params.items()
    }
    records["kind"] = np.asarray(_KIND_CODES[cfg.kind], dtype=np.uint8)
    if cfg.kind == "weight":
        records["beta"] = np.asarray(cfg.beta, dtype=np.float64)
    else:
        records["alpha"] = np.asarray(cfg.alpha, dtype=np.float64)
    write_container(path, records)


def load_adapter_params(path) -> tuple[AdapterConfig, MlpParams]:
    records = read_container(path)
    missing = [n for n in ("w1", "b1", "w2", "b2", "kind") if n not in records]
    if missing:
        raise ContainerError(f"{path}: missing records {missing}")
    params = MlpParams.from_dict(records)
    code = int(np.asarray(records["kind"]).ravel()[0])
    if code == _KIND_CODES["weight"]:
        beta = float(np.asarray(records.get("beta", 10.0)).ravel()[0])
        return WeightAdapterConfig(dim=params.dim, beta=beta), params
    if code == _KIND_CODES["clip"]:
        alpha = float(np.asarray(records.get("alpha", 0.6)).ravel()[0])
        return ClipAdapterConfig(dim=params.dim, alpha=alpha), params
    raise ContainerError(f"{path}: unknown adapter kind code {code}")


# ---------------------------------------------------------------------------
# Scenes.


def save_scene(out_dir, scene: SynthScene) -> dict[str, Path]:
    """Write templates.nids, queries.nids, and gt.tsv (+ mask container)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "templates": out_dir / "templates.nids",
        "queries": out_dir / "queries.nids",
        "gt": out_dir / "gt.tsv",
    }
    save_template_set(paths["templates"], scene.templates, scene.template_grids)
    save_query_set(
        paths["queries"],
        QuerySet(
            embeddings=scene.query_embeddings,
            grids=scene.query_grids,
            boxes=scene.boxes,
            masks=scene.masks,
            image_id=scene.image_id,
        ),
    )
    rows = []
    gt_masks: dict[str, np.ndarray] = {}
    for objs in scene.ground_truth.images.values():
        for i, g in enumerate(objs):
            name = f"mask/{i}"
            gt_masks[name] = g.mask.astype(np.uint8)
            rows.append(
                RecordRow(scene.image_id, g.instance_id, 1.0, g.box, name)
            )
    write_records(paths["gt"], rows)
    if gt_masks:
        write_container(mask_container_path(paths["gt"]), gt_masks)
    return paths


# ---------------------------------------------------------------------------
# Pipeline stages.


def run_match(manifest: RunManifest, out_path) -> list[LabeledProposal]:
    """Template-score, aggregate, optionally bonus, assign, filter, write."""
    mcfg = manifest.matcher_config()
    templates, template_grids = load_template_set(manifest.templates)
    queries = load_query_set(manifest.queries)
    if queries.boxes is None:
        raise ContainerError("matching needs proposal boxes in the query container")

    query_embeddings = queries.embeddings
    template_set = templates
    if manifest.params is not None:
        acfg, params = load_adapter_params(manifest.params)
        n, k, c = templates.embeddings.shape
        refined = refine_embeddings(
            acfg, params, templates.embeddings.reshape(n * k, c)
        )
        template_set = TemplateSet(refined.reshape(n, k, c), templates.instance_ids)
        query_embeddings = refine_embeddings(acfg, params, queries.embeddings)

    scores = aggregate(score_templates(query_embeddings, template_set), mcfg)
    if mcfg.use_appearance_bonus:
        if queries.grids is None or template_grids is None:
            raise ContainerError(
                "appearance bonus needs patch grids for queries and templates"
            )
        # Raw patch embeddings on purpose: the bonus never sees the adapter.
        bonus = appearance_matrix(queries.grids, template_grids, scores)
        scores = apply_bonus(scores, bonus)

    if mcfg.assignment == "stable":
        assigned = assign_stable(scores.instance_scores)
    else:
        assigned = assign_argmax(scores.instance_scores)

    proposals = []
    for q, (inst_index, score) in enumerate(assigned):
        instance_id = (
            None if inst_index is None else template_set.instance_ids[inst_index]
        )
        mask = queries.masks[q] if queries.masks is not None else None
        proposals.append(
            LabeledProposal(tuple(queries.boxes[q]), mask, instance_id, score)
        )
    kept = threshold_filter(proposals, mcfg.delta)

    rows = []
    out_masks: dict[str, np.ndarray] = {}
    for i, p in enumerate(kept):
        mask_name = None
        if p.mask is not None:
            mask_name = f"mask/{i}"
            out_masks[mask_name] = p.mask.astype(np.uint8)
        rows.append(
            RecordRow(queries.image_id, p.instance_id, p.score, p.box, mask_name)
        )
    write_records(out_path, rows)
    if out_masks:
        write_container(mask_container_path(out_path), out_masks)
    return kept


def run_eval(pred_path, gt_path, mode: str, out_path=None) -> ApResult:
    pred_rows = read_records(pred_path)
    gt_rows = read_records(gt_path)
    pred_masks = gt_masks = None
    if mode == "mask":
        pred_masks = read_container(mask_container_path(pred_path))
        gt_masks = read_container(mask_container_path(gt_path))
    predictions = rows_to_predictions(pred_rows, pred_masks)
    gt = rows_to_ground_truth(gt_rows, gt_masks)
    result = compute_ap(predictions, gt, mode)
    if out_path is not None:
        import json

        Path(out_path).write_text(
            json.dumps(result.as_dict(), indent=2) + "\n", encoding="utf-8"
        )
    return result


def run_train(
    kind: str,
    templates_path,
    train_cfg: TrainConfig,
    out_path,
    beta: float = 10.0,
    alpha: float = 0.6,
) -> tuple[MlpParams, np.ndarray]:
    templates, _ = load_template_set(templates_path)
    if kind == "weight":
        acfg: AdapterConfig = WeightAdapterConfig(dim=templates.dim, beta=beta)
    else:
        acfg = ClipAdapterConfig(dim=templates.dim, alpha=alpha)
    params, history = train_adapter(templates, acfg, train_cfg)
    save_adapter_params(out_path, acfg, params)
    Path(str(out_path) + ".loss.csv").write_text(
        loss_history_csv(history), encoding="utf-8"
    )
    return params, history


def run_refine(params_path, in_path, out_path) -> None:
    """Apply a trained adapter to a container's embeddings."""
    acfg, params = load_adapter_params(params_path)
    records = read_container(in_path)
    if "embeddings" in records:
        raw = np.asarray(records["embeddings"], dtype=np.float64)
    elif "templates" in records:
        raw = np.asarray(records["templates"], dtype=np.float64)
    else:
        queries = load_query_set(in_path)
        raw = queries.embeddings
    shape = raw.shape
    refined = refine_embeddings(acfg, params, raw.reshape(-1, shape[-1]))
    key = "templates" if "templates" in records and "embeddings" not in records else "embeddings"
    records[key] = _f32(refined.reshape(shape))
    write_container(out_path, records)
