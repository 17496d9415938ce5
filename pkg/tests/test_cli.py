import json

import numpy as np
import pytest

from instancematch.cli import main
from instancematch.pipeline import (
    load_adapter_params,
    load_query_set,
    load_template_set,
    run_refine,
    save_scene,
)
from instancematch.synth import SynthConfig, gen_synth


NOISELESS = """
num_instances = 4
templates_per_instance = 3
dim = 16
sigma = 0.0
distractors = 2
seed = 5
"""

NOISY_CONFUSABLE = """
num_instances = 6
templates_per_instance = 4
dim = 16
sigma = 0.1
distractors = 1
confusable_fraction = 0.4
seed = 2
"""

TRAIN = """
epochs = 10
learning_rate = 0.003
seed = 1
"""


@pytest.fixture
def scene_dir(tmp_path):
    cfg = tmp_path / "synth.cfg"
    cfg.write_text(NOISELESS)
    out = tmp_path / "scene"
    assert main(["gen-synth", "--config", str(cfg), "--out", str(out)]) == 0
    return out


class TestGenSynth:
    def test_writes_scene_files(self, scene_dir):
        assert (scene_dir / "templates.nids").is_file()
        assert (scene_dir / "queries.nids").is_file()
        assert (scene_dir / "gt.tsv").is_file()
        assert (scene_dir / "gt.tsv.masks").is_file()

    def test_containers_load_back(self, scene_dir):
        templates, grids = load_template_set(scene_dir / "templates.nids")
        assert templates.num_instances == 4
        assert templates.templates_per_instance == 3
        assert grids is not None and len(grids) == 4
        queries = load_query_set(scene_dir / "queries.nids")
        assert queries.embeddings.shape == (6, 16)
        assert queries.boxes.shape == (6, 4)
        assert queries.masks is not None


class TestEndToEnd:
    def test_noiseless_match_eval_reaches_perfect_ap(self, scene_dir, tmp_path):
        preds = tmp_path / "preds.tsv"
        report = tmp_path / "report.json"
        assert (
            main(
                [
                    "match",
                    "--templates", str(scene_dir / "templates.nids"),
                    "--queries", str(scene_dir / "queries.nids"),
                    "--out", str(preds),
                ]
            )
            == 0
        )
        for mode in ("box", "mask"):
            assert (
                main(
                    [
                        "eval",
                        "--pred", str(preds),
                        "--gt", str(scene_dir / "gt.tsv"),
                        "--mode", mode,
                        "--out", str(report),
                    ]
                )
                == 0
            )
            result = json.loads(report.read_text())
            assert result["ap"] == 1.0
            assert result["ap50"] == 1.0
            assert result["ap75"] == 1.0

    def test_noiseless_chain_with_adapter_stays_perfect(self, scene_dir, tmp_path):
        # Queries equal templates exactly, so the trained adapter maps both
        # sides identically and the report still shows AP 1.0.
        train_cfg = tmp_path / "train.cfg"
        train_cfg.write_text("epochs = 5\n")
        params = tmp_path / "weight.params"
        assert (
            main(
                [
                    "train-adapter",
                    "--kind", "weight",
                    "--templates", str(scene_dir / "templates.nids"),
                    "--config", str(train_cfg),
                    "--out", str(params),
                ]
            )
            == 0
        )
        preds = tmp_path / "preds.tsv"
        report = tmp_path / "report.json"
        assert (
            main(
                [
                    "match",
                    "--templates", str(scene_dir / "templates.nids"),
                    "--queries", str(scene_dir / "queries.nids"),
                    "--params", str(params),
                    "--out", str(preds),
                ]
            )
            == 0
        )
        assert (
            main(
                [
                    "eval",
                    "--pred", str(preds),
                    "--gt", str(scene_dir / "gt.tsv"),
                    "--mode", "box",
                    "--out", str(report),
                ]
            )
            == 0
        )
        assert json.loads(report.read_text())["ap"] == 1.0

    def test_train_refine_match_chain(self, tmp_path):
        synth_cfg = tmp_path / "synth.cfg"
        synth_cfg.write_text(NOISY_CONFUSABLE)
        scene = tmp_path / "scene"
        assert main(["gen-synth", "--config", str(synth_cfg), "--out", str(scene)]) == 0

        train_cfg = tmp_path / "train.cfg"
        train_cfg.write_text(TRAIN)
        params = tmp_path / "weight.params"
        assert (
            main(
                [
                    "train-adapter",
                    "--kind", "weight",
                    "--templates", str(scene / "templates.nids"),
                    "--config", str(train_cfg),
                    "--out", str(params),
                ]
            )
            == 0
        )
        acfg, mlp = load_adapter_params(params)
        assert acfg.kind == "weight" and acfg.beta == 10.0
        loss_lines = (tmp_path / "weight.params.loss.csv").read_text().splitlines()
        assert loss_lines[0] == "epoch,loss"
        assert len(loss_lines) == 11

        refined = tmp_path / "refined.nids"
        assert (
            main(
                [
                    "refine",
                    "--params", str(params),
                    "--in", str(scene / "queries.nids"),
                    "--out", str(refined),
                ]
            )
            == 0
        )
        raw = load_query_set(scene / "queries.nids").embeddings
        ref = load_query_set(refined).embeddings
        assert ref.shape == raw.shape
        assert not np.allclose(ref, raw)

        preds = tmp_path / "preds.tsv"
        assert (
            main(
                [
                    "match",
                    "--templates", str(scene / "templates.nids"),
                    "--queries", str(scene / "queries.nids"),
                    "--params", str(params),
                    "--appearance",
                    "--out", str(preds),
                ]
            )
            == 0
        )
        assert preds.is_file()
        report = tmp_path / "report.json"
        assert (
            main(
                [
                    "eval",
                    "--pred", str(preds),
                    "--gt", str(scene / "gt.tsv"),
                    "--mode", "box",
                    "--out", str(report),
                ]
            )
            == 0
        )
        assert json.loads(report.read_text())["ap"] > 0.5

    def test_match_honors_config_aggregation_and_assignment(self, scene_dir, tmp_path):
        cfg = tmp_path / "match.cfg"
        cfg.write_text("aggregation = avg_k\navg_k = 2\nassignment = argmax\ndelta = 0.2\n")
        preds = tmp_path / "preds.tsv"
        assert (
            main(
                [
                    "match",
                    "--templates", str(scene_dir / "templates.nids"),
                    "--queries", str(scene_dir / "queries.nids"),
                    "--config", str(cfg),
                    "--out", str(preds),
                ]
            )
            == 0
        )
        manifest_text = (tmp_path / "preds.tsv.manifest").read_text()
        assert "aggregation = avg_k" in manifest_text
        assert "assignment = argmax" in manifest_text
        # argmax labels every proposal; delta only drops low scorers, and
        # the noiseless distractors score near zero.
        lines = preds.read_text().splitlines()
        assert len(lines) == 4
        report = tmp_path / "report.json"
        assert (
            main(
                [
                    "eval",
                    "--pred", str(preds),
                    "--gt", str(scene_dir / "gt.tsv"),
                    "--mode", "box",
                    "--out", str(report),
                ]
            )
            == 0
        )
        assert json.loads(report.read_text())["ap"] == 1.0

    def test_match_writes_reusable_manifest(self, scene_dir, tmp_path):
        preds = tmp_path / "preds.tsv"
        args = [
            "match",
            "--templates", str(scene_dir / "templates.nids"),
            "--queries", str(scene_dir / "queries.nids"),
            "--out", str(preds),
        ]
        assert main(args) == 0
        first = preds.read_bytes()
        manifest = str(preds) + ".manifest"
        again = tmp_path / "again.tsv"
        assert main(["match", "--manifest", manifest, "--out", str(again)]) == 0
        assert again.read_bytes() == first


class TestExitCodes:
    def test_missing_template_file_is_data_error(self, scene_dir, tmp_path):
        code = main(
            [
                "match",
                "--templates", str(tmp_path / "nope.nids"),
                "--queries", str(scene_dir / "queries.nids"),
                "--out", str(tmp_path / "preds.tsv"),
            ]
        )
        assert code == 2

    def test_usage_error_is_one(self):
        assert main(["match", "--out", "x.tsv"]) == 1
        assert main(["no-such-command"]) == 1

    def test_grad_check_passes(self, capsys):
        assert main(["grad-check", "--kind", "weight", "--dim", "8"]) == 0
        out = capsys.readouterr().out
        assert "max relative error" in out
        value = float(out.strip().split()[-1])
        assert value <= 1e-4

    def test_corrupt_container_is_data_error(self, tmp_path, scene_dir):
        bad = tmp_path / "bad.nids"
        bad.write_bytes(b"XXXX not a container")
        code = main(
            [
                "match",
                "--templates", str(bad),
                "--queries", str(scene_dir / "queries.nids"),
                "--out", str(tmp_path / "p.tsv"),
            ]
        )
        assert code == 2


class TestClipAdapterPath:
    def test_train_clip_adapter_and_reload(self, scene_dir, tmp_path):
        train_cfg = tmp_path / "train.cfg"
        train_cfg.write_text("epochs = 3\nalpha = 0.4\ndropout_rate = 0.5\n")
        params = tmp_path / "clip.params"
        assert (
            main(
                [
                    "train-adapter",
                    "--kind", "clip",
                    "--templates", str(scene_dir / "templates.nids"),
                    "--config", str(train_cfg),
                    "--out", str(params),
                ]
            )
            == 0
        )
        acfg, mlp = load_adapter_params(params)
        assert acfg.kind == "clip"
        assert acfg.alpha == 0.4
        assert mlp.dim == 16
        preds = tmp_path / "preds.tsv"
        assert (
            main(
                [
                    "match",
                    "--templates", str(scene_dir / "templates.nids"),
                    "--queries", str(scene_dir / "queries.nids"),
                    "--params", str(params),
                    "--out", str(preds),
                ]
            )
            == 0
        )


class TestRefineOnTemplates:
    def test_refine_rewrites_template_record(self, scene_dir, tmp_path):
        scene = gen_synth(SynthConfig(num_instances=3, templates_per_instance=2, dim=8, seed=0))
        tdir = tmp_path / "s"
        save_scene(tdir, scene)

        from instancematch.adapter import MlpParams, WeightAdapterConfig
        from instancematch.pipeline import save_adapter_params

        params_path = tmp_path / "p.nids"
        save_adapter_params(
            params_path, WeightAdapterConfig(dim=8), MlpParams.zeros(8)
        )
        out = tmp_path / "refined_templates.nids"
        run_refine(params_path, tdir / "templates.nids", out)
        refined, _ = load_template_set(out)
        raw, _ = load_template_set(tdir / "templates.nids")
        # Zero-initialized gates scale every embedding by 0.5 * beta.
        np.testing.assert_allclose(
            refined.embeddings,
            np.asarray(raw.embeddings * 5.0, dtype=np.float32),
            rtol=1e-6,
        )
