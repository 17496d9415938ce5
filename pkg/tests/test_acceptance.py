"""Acceptance suite: every release criterion at its stated tolerance.

Each test prints one ``[acceptance] <name>: PASS|FAIL`` line (visible with
``pytest -s`` or ``pytest -v -s``) and then asserts, so the suite both
reports and gates. Run on its own with::

    pytest tests/test_acceptance.py -v -s
"""

import time

import numpy as np
import pytest

from instancematch.adapter import (
    MlpParams,
    WeightAdapterConfig,
    refine_embeddings,
    weight_adapter_forward,
    weighted_cosine,
)
from instancematch.container import parse_container, serialize_container
from instancematch.embeddings import TemplateSet, cosine_similarity
from instancematch.errors import ContainerError
from instancematch.evaluation import GroundTruthSet, compute_ap
from instancematch.matching import (
    MatcherConfig,
    ScoreTensor,
    aggregate,
    assign_argmax,
    assign_stable,
    score_templates,
)
from instancematch.synth import SynthConfig, gen_synth, sample_query_view
from instancematch.training import TrainConfig, grad_check, train_adapter

from helpers import random_scene
from oracles import ap_oracle, blocking_pairs, enumerate_stable_matchings


def report(name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    suffix = f"  ({detail})" if detail else ""
    print(f"[acceptance] {name}: {status}{suffix}")
    assert ok, f"{name}: {detail}"


def test_gradient_correctness():
    """Both adapters, C in {8, 16}, N=3, K=2: max rel err <= 1e-4, < 10 s."""
    start = time.monotonic()
    worst = 0.0
    for kind in ("weight", "clip"):
        for dim in (8, 16):
            err = grad_check(kind, dim=dim, num_instances=3, views=2, h=1e-5)
            worst = max(worst, err)
    elapsed = time.monotonic() - start
    report(
        "gradient correctness",
        worst <= 1e-4 and elapsed < 10.0,
        f"max rel err {worst:.2e}, {elapsed:.1f}s",
    )


def test_weight_range_bound():
    """Every gate across 10^4 random (params, f) draws lies in [0.5, 1)."""
    rng = np.random.default_rng(0)
    cfg = WeightAdapterConfig(dim=16)
    lo, hi = 1.0, 0.0
    for _ in range(100):
        params = MlpParams.init(16, rng)
        f = rng.normal(size=(100, 16)) * rng.uniform(0.1, 5.0)
        w, _ = weight_adapter_forward(cfg, params, f)
        lo = min(lo, float(w.min()))
        hi = max(hi, float(w.max()))
    report(
        "weight-range bound",
        lo >= 0.5 and hi < 1.0,
        f"gates in [{lo:.6f}, {hi:.17f}] over 10000 draws",
    )


def test_zero_mlp_neutrality():
    """Zero-initialized weight adapter changes no assignment on 100 scenes."""
    identical = True
    for seed in range(100):
        cfg = SynthConfig(
            num_instances=5,
            templates_per_instance=3,
            dim=16,
            sigma=0.3,
            distractors=2,
            confusable_fraction=0.4,
            seed=seed,
        )
        scene = gen_synth(cfg)
        acfg = WeightAdapterConfig(dim=16)
        params = MlpParams.zeros(16)
        n, k, c = scene.templates.embeddings.shape
        refined_t = TemplateSet(
            refine_embeddings(
                acfg, params, scene.templates.embeddings.reshape(n * k, c)
            ).reshape(n, k, c)
        )
        refined_q = refine_embeddings(acfg, params, scene.query_embeddings)

        raw = aggregate(
            score_templates(scene.query_embeddings, scene.templates), MatcherConfig()
        )
        ada = aggregate(score_templates(refined_q, refined_t), MatcherConfig())
        for assign in (assign_stable, assign_argmax):
            raw_ids = [p[0] for p in assign(raw.instance_scores)]
            ada_ids = [p[0] for p in assign(ada.instance_scores)]
            if raw_ids != ada_ids:
                identical = False
    report("zero-MLP neutrality", identical, "100 scenes, stable and argmax")


def test_stable_matching_correctness():
    """1000 random score matrices, Q, N <= 6: stable, and unique => exact."""
    rng = np.random.default_rng(42)
    unique_checked = 0
    ok = True
    for _ in range(1000):
        q = int(rng.integers(1, 7))
        n = int(rng.integers(1, 7))
        scores = rng.uniform(0, 1, size=(q, n))
        result = assign_stable(scores)
        assignment = {i: pair[0] for i, pair in enumerate(result)}
        if blocking_pairs(scores.tolist(), assignment):
            ok = False
        stable_set = enumerate_stable_matchings(scores.tolist())
        if not stable_set:
            ok = False
        if len(stable_set) == 1:
            unique_checked += 1
            if stable_set[0] != assignment:
                ok = False
    report(
        "stable-matching correctness",
        ok and unique_checked > 500,
        f"{unique_checked}/1000 had a unique stable matching",
    )


def test_ap_oracle_equivalence():
    """compute_ap vs brute-force PR enumeration within 1e-9 on 500 scenes."""
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(500):
        gt, preds = random_scene(rng)
        result = compute_ap(preds, GroundTruthSet(gt), "box")
        oracle_gt = {
            img: [(g.instance_id, g.box, None) for g in objs]
            for img, objs in gt.items()
        }
        oracle_preds = {
            img: [(p.instance_id, p.score, p.box, None) for p in ps]
            for img, ps in preds.items()
        }
        ap, ap50, ap75 = ap_oracle(oracle_preds, oracle_gt, "box")
        worst = max(
            worst, abs(result.ap - ap), abs(result.ap50 - ap50), abs(result.ap75 - ap75)
        )

    # Perfect predictions score 1.0; empty predictions score 0.0.
    from instancematch.evaluation import GroundTruth
    from instancematch.matching import LabeledProposal

    boxes = [(0.0, 0.0, 2.0, 2.0), (3.0, 3.0, 5.0, 5.0)]
    gt_set = GroundTruthSet({"img": [GroundTruth(i, boxes[i]) for i in range(2)]})
    perfect = compute_ap(
        {"img": [LabeledProposal(boxes[i], None, i, 1.0) for i in range(2)]},
        gt_set,
        "box",
    )
    empty = compute_ap({}, gt_set, "box")
    report(
        "AP oracle equivalence",
        worst <= 1e-9 and perfect.ap == 1.0 and empty.ap == 0.0,
        f"max deviation {worst:.2e}",
    )


def test_weighted_cosine_identity():
    """Matches cosine of explicitly gated vectors within 1e-9; beta-free."""
    rng = np.random.default_rng(3)
    worst_identity = 0.0
    worst_beta = 0.0
    for _ in range(10_000):
        dim = int(rng.integers(2, 24))
        q = rng.normal(size=dim)
        k = rng.normal(size=dim)
        w1 = rng.uniform(0.5, 1.0, size=dim)
        w2 = rng.uniform(0.5, 1.0, size=dim)
        expected = cosine_similarity(w1 * 10.0 * q, w2 * 10.0 * k)
        values = [weighted_cosine(q, k, w1, w2, beta) for beta in (1.0, 10.0, 100.0)]
        worst_identity = max(worst_identity, abs(values[1] - expected))
        worst_beta = max(worst_beta, max(values) - min(values))
    report(
        "weighted-cosine identity",
        worst_identity <= 1e-9 and worst_beta <= 1e-9,
        f"identity dev {worst_identity:.2e}, beta dev {worst_beta:.2e}",
    )


def test_desk_scale_adapter_benefit():
    """Confusable N=20/K=8/C=64 set: >= 5 point top-1 gain, >= 50% loss drop,
    under two minutes on one core."""
    start = time.monotonic()
    cfg = SynthConfig(
        num_instances=20,
        templates_per_instance=8,
        dim=64,
        sigma=0.2,
        confusable_fraction=0.5,
        seed=0,
    )
    scene = gen_synth(cfg)

    pair_cos = [
        cosine_similarity(scene.prototypes[i], scene.prototypes[i + 1])
        for i in range(0, 10, 2)
    ]
    assert all(c >= 0.95 for c in pair_cos)

    rng = np.random.default_rng(99)
    queries, labels = [], []
    for n in range(20):
        for _ in range(25):
            queries.append(sample_query_view(scene, n, rng, cfg.sigma))
            labels.append(n)
    queries = np.asarray(queries)
    labels = np.asarray(labels)

    def top1(query_embeddings, template_set):
        scores = aggregate(
            score_templates(query_embeddings, template_set), MatcherConfig()
        )
        picks = np.array([p[0] for p in assign_argmax(scores.instance_scores)])
        return float(np.mean(picks == labels))

    baseline = top1(queries, scene.templates)

    acfg = WeightAdapterConfig(dim=64)
    params, history = train_adapter(
        scene.templates, acfg, TrainConfig(epochs=500, seed=0)
    )
    n, k, c = scene.templates.embeddings.shape
    refined_templates = TemplateSet(
        refine_embeddings(
            acfg, params, scene.templates.embeddings.reshape(n * k, c)
        ).reshape(n, k, c)
    )
    trained = top1(refine_embeddings(acfg, params, queries), refined_templates)

    elapsed = time.monotonic() - start
    uplift = (trained - baseline) * 100
    loss_drop = 1.0 - history[-1] / history[0]
    report(
        "desk-scale adapter benefit",
        uplift >= 5.0 and loss_drop >= 0.5 and elapsed < 120.0,
        f"top-1 {baseline:.3f} -> {trained:.3f} (+{uplift:.1f} pts), "
        f"loss -{100 * loss_drop:.0f}%, {elapsed:.0f}s",
    )


def test_aggregation_semantics():
    """Hand-built 3-score case: max and top-k means match exact arithmetic."""
    ts = np.array([0.9, 0.1, 0.5]).reshape(1, 1, 3)
    tensor = ScoreTensor(ts, np.zeros((1, 1)))
    max_out = aggregate(tensor, MatcherConfig(aggregation="max"))
    avg2 = aggregate(tensor, MatcherConfig(aggregation="avg_k", avg_k=2))
    avg3 = aggregate(tensor, MatcherConfig(aggregation="avg_k", avg_k=3))
    ok = (
        max_out.instance_scores[0, 0] == 0.9
        and avg2.instance_scores[0, 0] == (0.9 + 0.5) / 2
        and avg3.instance_scores[0, 0] == (0.1 + 0.5 + 0.9) / 3
    )
    report("aggregation semantics", ok)


def test_format_robustness():
    """Round trip is bit-identical; 1000 random truncations all rejected."""
    rng = np.random.default_rng(11)
    records = {
        "a": rng.normal(size=(5, 3)).astype(np.float32),
        "b": rng.normal(size=(2, 2, 2)),
        "c": rng.integers(0, 256, size=17).astype(np.uint8),
    }
    blob = serialize_container(records)
    second = serialize_container(parse_container(blob))
    round_trip_ok = blob == second

    rejected = 0
    for offset in rng.integers(0, len(blob), size=1000):
        try:
            parse_container(blob[: int(offset)])
        except ContainerError:
            rejected += 1
    report(
        "format robustness",
        round_trip_ok and rejected == 1000,
        f"{rejected}/1000 truncations rejected",
    )


def test_primary_suite_needs_no_secondary():
    """The primary pipeline runs end to end on generated data alone."""
    import instancematch

    ok = not any(name.startswith("extractor") for name in dir(instancematch))
    report("no secondary dependency", ok)
