"""
Tests for stage orchestration, caching, ablation and heat maps
"""
from pathlib import Path

import numpy as np
import pytest

from selfie_synergy import pipeline
from selfie_synergy.artifacts import ArtifactStore, load_artifact
from selfie_synergy.config import Config
from selfie_synergy.dataset import DatasetManifest, ManifestRecord, generate_synthetic_dataset
from selfie_synergy.errors import ArgumentError, ConfigError, MissingArtifactError
from selfie_synergy.imaging import prepare_image, read_image

STAGE_FILES = {
    "split": "split.tsv",
    "features": "features.syng",
    "cca": "synergy.syng",
    "train": "net.syng",
    "descriptors": "descriptors.syng",
    "svm": "svm.syng",
}


@pytest.fixture
def completed(smoke_config, store):
    """Smoke configuration after one full run"""
    reports = pipeline.run_all(smoke_config, store)
    return smoke_config, store, reports


def write_masked(manifest, path, rects):
    records = [ManifestRecord(r.path, r.label, tuple(rects), True, r.image_id) for r in manifest.records]
    DatasetManifest(records).dump(path)
    return path


def test_stage_keys_chain(smoke_config):
    keys = pipeline.stage_keys(smoke_config)
    smoke_config.set("svm.C", 3.0, announce=False)
    changed = pipeline.stage_keys(smoke_config)
    assert changed.train == keys.train
    assert changed.descriptors == keys.descriptors
    assert changed.svm != keys.svm
    assert changed.baseline != keys.baseline
    smoke_config.set("cca.ridge", 0.01, announce=False)
    again = pipeline.stage_keys(smoke_config)
    assert again.features == keys.features
    assert again.cca != keys.cca and again.train != keys.train and again.descriptors != keys.descriptors


def test_stage_keys_need_manifest(smoke_config):
    smoke_config.set("data.manifest", None, announce=False)
    with pytest.raises(ConfigError, match="manifest"):
        pipeline.stage_keys(smoke_config)


def test_run_all_writes_every_stage(completed):
    config, store, reports = completed
    keys = pipeline.stage_keys(config)
    for stage, name in STAGE_FILES.items():
        assert (store.stage_dir(stage, getattr(keys, stage)) / name).exists()
    pipeline_report = reports["pipeline"]
    assert pipeline_report.total == 6
    assert 0.0 <= pipeline_report.accuracy <= 1.0
    assert pipeline_report.tuned_threshold is not None
    assert set(reports) == {"pipeline", "baseline"}
    assert (store.stage_dir("eval", keys.svm) / "report.txt").read_text().startswith("synergy-constrained")


def test_provenance_records_fit_split(completed):
    config, store, _ = completed
    keys = pipeline.stage_keys(config)
    for stage in ("cca", "train", "svm"):
        record = store.provenance(stage, getattr(keys, stage))
        assert record["fit_split"] == "train"
        assert record["fit_rows"] == 12
    assert store.provenance("split", keys.split)["counts"] == {"train": 12, "val": 2, "test": 6}
    assert store.provenance("cca", keys.cca)["inputs"] == {"features": keys.features, "split": keys.split}


def test_artifacts_cover_every_image(completed):
    config, store, _ = completed
    keys = pipeline.stage_keys(config)
    _, targets = pipeline.synergy_from_artifact(
        load_artifact(store.stage_dir("cca", keys.cca) / "synergy.syng"))
    assert targets.shape == (20, 2)
    train = pipeline._load_split(store, keys, "test").indices("train")
    np.testing.assert_allclose(targets[train].mean(axis=0), 0.0, atol=1e-9)
    bank = load_artifact(store.stage_dir("descriptors", keys.descriptors) / "descriptors.syng")
    assert bank.arrays["T"].shape == (20, 4)
    assert np.all(np.abs(bank.arrays["T"]) <= 1.0)
    assert bank.meta["layer_offsets"] == [0, 2]
    spec, params, head = pipeline.params_from_artifact(load_artifact(store.stage_dir("train", keys.train) / "net.syng"))
    assert spec.format() == config.get("net.layers")
    assert head == "linear"


def test_rerun_hits_every_cache(completed, capsys):
    config, store, first = completed
    capsys.readouterr()
    second = pipeline.run_all(config, store)
    out = capsys.readouterr().out
    assert "computing" not in out
    for stage in list(STAGE_FILES) + ["eval", "baseline"]:
        assert f"ℹ️ {stage}: cache hit" in out
    assert second["pipeline"] == first["pipeline"]


def test_svm_change_recomputes_only_downstream(completed, capsys):
    config, store, _ = completed
    config.set("svm.C", 0.25, announce=False)
    capsys.readouterr()
    pipeline.run_all(config, store)
    out = capsys.readouterr().out
    for stage in ("split", "features", "cca", "train", "descriptors"):
        assert f"ℹ️ {stage}: cache hit" in out
    for stage in ("svm", "eval", "baseline"):
        assert f"🔄 {stage}: computing" in out


def test_cold_runs_are_byte_identical(smoke_config, tmp_path):
    first, second = ArtifactStore(tmp_path / "one"), ArtifactStore(tmp_path / "two")
    pipeline.run_all(smoke_config, first)
    pipeline.run_all(smoke_config, second)
    keys = pipeline.stage_keys(smoke_config)
    for stage, name in STAGE_FILES.items():
        key = getattr(keys, stage)
        assert (first.stage_dir(stage, key) / name).read_bytes() == (second.stage_dir(stage, key) / name).read_bytes()
    for name in ("report.csv", "report.json"):
        assert (first.stage_dir("eval", keys.svm) / name).read_bytes() == \
            (second.stage_dir("eval", keys.svm) / name).read_bytes()


def test_missing_upstream_artifact(smoke_config, store):
    with pytest.raises(MissingArtifactError) as exc:
        pipeline.run_stage_cca(smoke_config, store)
    assert exc.value.stage == "features"
    pipeline.run_stage_features(smoke_config, store)
    with pytest.raises(MissingArtifactError) as exc:
        pipeline.run_stage_cca(smoke_config, store)
    assert exc.value.stage == "split"


def test_unconstrained_baseline(completed):
    config, store, _ = completed
    report = pipeline.run_baseline_unconstrained(config, store)
    assert report.total == 6
    keys = pipeline.stage_keys(config)
    spec, _, head = pipeline.params_from_artifact(
        load_artifact(store.stage_dir("unconstrained", keys.unconstrained) / "net.syng"))
    assert head == "classify"
    assert spec.output_dim == 2


def test_ablation_with_empty_masks_changes_nothing(completed, tmp_path):
    config, store, _ = completed
    manifest = pipeline.load_manifest(config)
    masked = write_masked(manifest, tmp_path / "empty_masks.tsv", ())
    result = pipeline.run_ablation(config, store, masked)
    assert result.drop == 0.0
    assert result.normal.decisions == result.masked.decisions
    assert result.skipped == []
    assert result.normal.total == 6


def test_ablation_matches_manifest_in_another_directory(completed, tmp_path):
    """Records are paired by image file even when the masked manifest stores absolute paths"""
    config, store, _ = completed
    manifest = pipeline.load_manifest(config)
    left_out = pipeline._load_split(store, pipeline.stage_keys(config), "test").indices("test")[0]
    records = [ManifestRecord(r.path, r.label, r.rects, i != left_out, r.image_id)
               for i, r in enumerate(manifest.records)]
    elsewhere = tmp_path / "elsewhere"
    elsewhere.mkdir()
    DatasetManifest(records).dump(elsewhere / "masked.tsv")
    assert Path((elsewhere / "masked.tsv").read_text().split("\t", 1)[0]).is_absolute()

    result = pipeline.run_ablation(config, store, elsewhere / "masked.tsv")

    assert result.skipped == [manifest.records[left_out].image_id]
    assert result.normal.total == 5


def test_ablation_skips_records_without_rects(completed, tmp_path):
    config, store, _ = completed
    manifest = pipeline.load_manifest(config)
    records = [ManifestRecord(r.path, r.label, (), False, r.image_id) for r in manifest.records]
    DatasetManifest(records).dump(tmp_path / "no_rects.tsv")
    with pytest.raises(ArgumentError, match="mask rects"):
        pipeline.run_ablation(config, store, tmp_path / "no_rects.tsv")


def test_ablation_writes_summary(completed, synthetic_dir):
    config, store, _ = completed
    result = pipeline.run_ablation(config, store, synthetic_dir / "manifest_corners.tsv")
    summaries = list((store.root / "ablation").glob("*/summary.txt"))
    assert len(summaries) == 1
    assert f"drop {result.drop:.2f} points" in summaries[0].read_text()
    assert (summaries[0].parent / "masked" / "report.json").exists()
    with pytest.raises(ArgumentError, match="unknown ablation model"):
        pipeline.run_ablation(config, store, synthetic_dir / "manifest_corners.tsv", model="both")


def test_training_batches_match_extraction_inputs(smoke_config):
    manifest = pipeline.load_manifest(smoke_config)
    batch = pipeline._load_images(manifest, [0, 3], 32)
    assert batch.dtype == np.float64
    np.testing.assert_array_equal(batch[1, 0], prepare_image(manifest.records[3].path, 32))
    assert pipeline._load_images(manifest, [], 32).dtype == np.float64


def test_heatmap_image():
    np.testing.assert_array_equal(pipeline.heatmap_image(np.full((2, 2), 3.0), 4), np.zeros((4, 4)))
    activation = np.zeros((2, 2))
    activation[0, 1] = 5.0
    out = pipeline.heatmap_image(activation, 4)
    assert out.dtype == np.uint8
    expected = np.zeros((4, 4), dtype=np.uint8)
    expected[:2, 2:] = 255
    np.testing.assert_array_equal(out, expected)


def test_export_heatmaps(completed, tmp_path):
    config, store, _ = completed
    image_id = pipeline.load_manifest(config).ids[0]
    paths = pipeline.export_heatmaps(config, store, [image_id], 2, [0, 1], tmp_path / "maps")
    assert [p.name for p in paths] == [f"{image_id}_conv2_f0.pgm", f"{image_id}_conv2_f1.pgm"]
    assert read_image(paths[0]).shape == (32, 32, 3)
    with pytest.raises(ArgumentError, match="layer"):
        pipeline.export_heatmaps(config, store, [image_id], 3, [0], tmp_path / "maps")
    with pytest.raises(ArgumentError, match="filter"):
        pipeline.export_heatmaps(config, store, [image_id], 1, [2], tmp_path / "maps")
    with pytest.raises(ArgumentError, match="unknown image"):
        pipeline.export_heatmaps(config, store, ["nope"], 1, [0], tmp_path / "maps")


@pytest.fixture(scope="module")
def acceptance(tmp_path_factory):
    """Full desk-scale run on 400 + 400 synthetic images"""
    root = tmp_path_factory.mktemp("acceptance")
    generate_synthetic_dataset(400, seed=0, out_dir=root / "data", size=64)
    config = Config(Path(__file__).parent.parent / "configs" / "synthetic.yaml", quiet=True)
    config.set("data.manifest", str(root / "data" / "manifest.tsv"), announce=False)
    store = ArtifactStore(root / "store")
    return config, store, pipeline.run_all(config, store), root / "data"


@pytest.mark.slow
def test_synthetic_pipeline_beats_baseline(acceptance):
    _, _, reports, _ = acceptance
    assert reports["pipeline"].accuracy >= 0.80
    assert reports["pipeline"].average_precision >= 0.85
    assert reports["baseline"].accuracy >= 0.60
    assert reports["pipeline"].accuracy > reports["baseline"].accuracy


@pytest.mark.slow
def test_synthetic_ablation(acceptance):
    config, store, _, data = acceptance
    informative = pipeline.run_ablation(config, store, data / "manifest.tsv")
    corners = pipeline.run_ablation(config, store, data / "manifest_corners.tsv")
    assert informative.drop >= 15.0
    assert abs(corners.drop) <= 5.0


@pytest.mark.slow
def test_synergy_baseline_on_shuffled_labels(smoke_config, tmp_path):
    """With labels unrelated to the images the baseline is at chance"""
    data = tmp_path / "data"
    manifest = generate_synthetic_dataset(400, seed=5, out_dir=data, size=32)
    shuffled = np.random.default_rng(0).permutation([r.label for r in manifest.records])
    records = [ManifestRecord(r.path, str(label), r.rects, True, r.image_id)
               for r, label in zip(manifest.records, shuffled)]
    DatasetManifest(records).dump(data / "shuffled.tsv")
    smoke_config.set("data.manifest", str(data / "shuffled.tsv"), announce=False)
    smoke_config.set("svm.epochs", 50, announce=False)
    store = ArtifactStore(tmp_path / "null-store")
    for stage in (pipeline.run_stage_split, pipeline.run_stage_features, pipeline.run_stage_cca):
        stage(smoke_config, store)

    report = pipeline.run_baseline_synergy_svm(smoke_config, store)

    assert report.total == 240
    assert abs(report.accuracy - 0.5) <= 0.1
