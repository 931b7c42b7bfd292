"""
Stage orchestration: features → CCA → constrained net → descriptors → SVM → reports
"""
import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import partial
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import click
import numpy as np

from .artifacts import (Artifact, ArtifactStore, ArtifactType, file_hash, load_artifact,
                        save_artifact, stable_hash)
from .classifier import (EvalReport, SvmModel, accuracy_at, decision_value, report_from_decisions,
                         svm_train, tune_threshold)
from .config import Config
from .convnet import NetParams, NetSpec, forward, init_params, predict, sgd_train
from .dataset import DatasetManifest, SplitAssignment, split_dataset, stack_images
from .descriptor import build_descriptor
from .errors import ArgumentError, ConfigError
from .handcraft import HogConfig, LbpConfig, handcrafted_pair
from .imaging import MaskRect, encode_pgm, prepare_image
from .keypoints import DogConfig
from .subspace import (CcaModel, PcaModel, Standardizer, SynergyModel, fit_synergy_model,
                       standardizer_apply, standardizer_fit)

FEATURE_KEYS = ("image_size", "hog.levels", "hog.bins", "hog.pyramid", "lbp.grid", "lbp.radius")
CCA_KEYS = ("pca.enabled", "pca.dims", "cca.k", "cca.ridge")
TRAIN_KEYS = ("image_size", "net.layers", "net.head", "train.lr0", "train.halve_every", "train.batch",
              "train.total_iters", "train.momentum", "train.seed", "train.val_every")
DOG_KEYS = ("dog.scales_per_octave", "dog.base_sigma", "dog.contrast_thresh", "dog.edge_ratio",
            "dog.max_octaves")
SVM_KEYS = ("svm.C", "svm.epochs", "svm.seed")
UNCONSTRAINED_KEYS = tuple(k for k in TRAIN_KEYS if k != "net.head")


@dataclass(frozen=True)
class StageKeys:
    manifest: str
    split: str
    features: str
    cca: str
    train: str
    descriptors: str
    svm: str
    baseline: str
    unconstrained: str


def stage_keys(config: Config) -> StageKeys:
    """Content address of every stage from its config slice and upstream keys"""
    manifest = _manifest_path(config)
    m = file_hash(manifest)
    split = stable_hash(["split", m, config.get("split.seed")])
    features = stable_hash(["features", m, config.section_hash(FEATURE_KEYS)])
    cca = stable_hash(["cca", features, split, config.section_hash(CCA_KEYS)])
    train = stable_hash(["train", cca, config.section_hash(TRAIN_KEYS)])
    descriptors = stable_hash(["descriptors", train, config.section_hash(DOG_KEYS)])
    svm = stable_hash(["svm", descriptors, split, config.section_hash(SVM_KEYS)])
    baseline = stable_hash(["baseline", cca, config.section_hash(SVM_KEYS)])
    unconstrained = stable_hash(["unconstrained", m, split, config.section_hash(UNCONSTRAINED_KEYS)])
    return StageKeys(m, split, features, cca, train, descriptors, svm, baseline, unconstrained)


@dataclass(frozen=True)
class StageResult:
    stage: str
    key: str
    path: Path
    cached: bool


@dataclass
class AblationResult:
    normal: EvalReport
    masked: EvalReport
    drop: float
    skipped: List[str] = field(default_factory=list)


def _manifest_path(config: Config) -> Path:
    path = config.get("data.manifest")
    if not path:
        raise ConfigError("no manifest configured; pass --manifest or set data.manifest")
    return Path(path)


def load_manifest(config: Config) -> DatasetManifest:
    return DatasetManifest.load(_manifest_path(config))


def _cache_hit(store: ArtifactStore, stage: str, key: str) -> Optional[StageResult]:
    if store.has(stage, key):
        click.echo(f"ℹ️ {stage}: cache hit ({key[:16]})")
        return StageResult(stage, key, store.stage_dir(stage, key), True)
    click.echo(f"🔄 {stage}: computing ({key[:16]})...")
    return None


def _fan_out(fn: Callable, items: Sequence, workers: int) -> List:
    """Map in manifest order, optionally across worker processes"""
    if workers <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def _load_split(store: ArtifactStore, keys: StageKeys, needed_by: str) -> SplitAssignment:
    path = store.require("split", keys.split, needed_by) / "split.tsv"
    tags = [line.split("\t")[1] for line in path.read_text().splitlines()]
    return SplitAssignment(tags, store.provenance("split", keys.split)["seed"])


def _load_images(manifest: DatasetManifest, indices: Iterable[int], size: int) -> np.ndarray:
    images = [prepare_image(manifest.records[i].path, size) for i in indices]
    if not images:
        return np.zeros((0, 1, size, size), dtype=np.float64)
    return stack_images(images).astype(np.float64, copy=False)


# -- serialization -----------------------------------------------------------

def synergy_to_artifact(model: SynergyModel, targets: np.ndarray) -> Artifact:
    arrays = {
        "cca.x_mean": model.cca.x_mean, "cca.y_mean": model.cca.y_mean,
        "cca.A": model.cca.A, "cca.B": model.cca.B, "cca.correlations": model.cca.correlations,
        "std.mean": model.standardizer.mean, "std.std": model.standardizer.std,
        "targets": targets,
    }
    for name, pca in (("pca_x", model.pca_x), ("pca_y", model.pca_y)):
        if pca is not None:
            arrays[f"{name}.mean"] = pca.mean
            arrays[f"{name}.components"] = pca.components
            arrays[f"{name}.variance"] = pca.explained_variance
    return Artifact(ArtifactType.SYNERGY_MODEL, arrays, {"ridge": model.cca.ridge, "k": model.cca.k})


def synergy_from_artifact(artifact: Artifact) -> Tuple[SynergyModel, np.ndarray]:
    a = artifact.arrays
    pcas = []
    for name in ("pca_x", "pca_y"):
        pcas.append(PcaModel(a[f"{name}.mean"], a[f"{name}.components"], a[f"{name}.variance"])
                    if f"{name}.mean" in a else None)
    cca = CcaModel(a["cca.x_mean"], a["cca.y_mean"], a["cca.A"], a["cca.B"],
                   a["cca.correlations"], artifact.meta["ridge"])
    model = SynergyModel(cca, Standardizer(a["std.mean"], a["std.std"]), pcas[0], pcas[1])
    return model, a["targets"]


def params_to_artifact(spec: NetSpec, params: NetParams, head: str) -> Artifact:
    meta = {"layers": spec.format(), "input_shape": list(spec.input_shape),
            "head": head, "seed": params.rng_seed}
    return Artifact(ArtifactType.NET_PARAMS, dict(params.arrays()), meta)


def params_from_artifact(artifact: Artifact) -> Tuple[NetSpec, NetParams, str]:
    meta = artifact.meta
    spec = NetSpec.parse(meta["layers"], tuple(meta["input_shape"]))
    weights = [artifact.arrays.get(f"layer{i}.weight") for i in range(len(spec.layers))]
    biases = [artifact.arrays.get(f"layer{i}.bias") for i in range(len(spec.layers))]
    return spec, NetParams(weights, biases, meta["seed"]), meta["head"]


def svm_to_artifact(model: SvmModel, scaler: Standardizer) -> Artifact:
    arrays = {"w": model.w, "b": np.array(model.b), "std.mean": scaler.mean, "std.std": scaler.std}
    return Artifact(ArtifactType.SVM_MODEL, arrays, {"C": model.C, "objective": model.objective})


def svm_from_artifact(artifact: Artifact) -> Tuple[SvmModel, Standardizer]:
    a = artifact.arrays
    model = SvmModel(w=a["w"], b=float(a["b"]), C=artifact.meta["C"], objective=artifact.meta["objective"])
    return model, Standardizer(a["std.mean"], a["std.std"])


def _report_to_files(report: EvalReport, directory: Path, title: str):
    report.to_csv(directory / "report.csv")
    (directory / "report.txt").write_text(report.summary(title))
    (directory / "report.json").write_text(json.dumps(asdict(report), sort_keys=True))


def _report_from_files(directory: Path) -> EvalReport:
    return EvalReport(**json.loads((directory / "report.json").read_text()))


# -- stages --------------------------------------------------------------------

def run_stage_split(config: Config, store: ArtifactStore) -> StageResult:
    keys = stage_keys(config)
    hit = _cache_hit(store, "split", keys.split)
    if hit:
        return hit
    started = time.time()
    manifest = load_manifest(config)
    split = split_dataset(manifest, config.get("split.seed"))
    directory = store.begin("split", keys.split)
    (directory / "split.tsv").write_text(split.to_tsv(manifest))
    click.echo(f"  split counts: {split.counts()}")
    store.commit("split", keys.split, keys.split, {"manifest": keys.manifest}, started,
                 {"seed": split.seed, "counts": split.counts()})
    return StageResult("split", keys.split, directory, False)


def _handcrafted_for(path: Path, size: int, hog_cfg: HogConfig, lbp_cfg: LbpConfig):
    return handcrafted_pair(prepare_image(path, size), hog_cfg, lbp_cfg)


def run_stage_features(config: Config, store: ArtifactStore) -> StageResult:
    """HOG and LBP descriptors of every manifest image"""
    keys = stage_keys(config)
    hit = _cache_hit(store, "features", keys.features)
    if hit:
        return hit
    started = time.time()
    manifest = load_manifest(config)
    fn = partial(_handcrafted_for, size=config.get("image_size"),
                 hog_cfg=config.hog_config(), lbp_cfg=config.lbp_config())
    pairs = _fan_out(fn, [r.path for r in manifest.records], config.get("workers"))
    artifact = Artifact(ArtifactType.FEATURE_BANK,
                        {"hog": np.stack([p[0] for p in pairs]), "lbp": np.stack([p[1] for p in pairs])},
                        {"ids": manifest.ids})
    directory = store.begin("features", keys.features)
    save_artifact(artifact, directory / "features.syng")
    store.commit("features", keys.features, config.section_hash(FEATURE_KEYS),
                 {"manifest": keys.manifest}, started)
    return StageResult("features", keys.features, directory, False)


def run_stage_cca(config: Config, store: ArtifactStore) -> StageResult:
    """Fit PCA, CCA and the synergy standardizer on train rows; emit S for every image"""
    keys = stage_keys(config)
    hit = _cache_hit(store, "cca", keys.cca)
    if hit:
        return hit
    started = time.time()
    bank = load_artifact(store.require("features", keys.features, "cca") / "features.syng")
    split = _load_split(store, keys, "cca")
    train = split.indices("train")
    hog, lbp = bank.arrays["hog"], bank.arrays["lbp"]
    pca_dims = config.get("pca.dims") if config.get("pca.enabled") else None
    model = fit_synergy_model(hog[train], lbp[train], config.get("cca.k"), config.get("cca.ridge"), pca_dims)
    targets = model.transform(hog, lbp)
    click.echo(f"  top canonical correlations: {np.round(model.cca.correlations[:5], 4).tolist()}")

    directory = store.begin("cca", keys.cca)
    save_artifact(synergy_to_artifact(model, targets), directory / "synergy.syng")
    with open(directory / "correlations.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["mode", "correlation"])
        for i, rho in enumerate(model.cca.correlations):
            writer.writerow([i, repr(float(rho))])
    store.commit("cca", keys.cca, config.section_hash(CCA_KEYS),
                 {"features": keys.features, "split": keys.split}, started,
                 {"fit_split": "train", "fit_rows": int(len(train))})
    return StageResult("cca", keys.cca, directory, False)


def run_stage_train(config: Config, store: ArtifactStore) -> StageResult:
    """Regress the synergy target with the constrained network"""
    keys = stage_keys(config)
    hit = _cache_hit(store, "train", keys.train)
    if hit:
        return hit
    started = time.time()
    _, targets = synergy_from_artifact(load_artifact(store.require("cca", keys.cca, "train") / "synergy.syng"))
    split = _load_split(store, keys, "train")
    manifest = load_manifest(config)
    size = config.get("image_size")
    train, val = split.indices("train"), split.indices("val")
    spec = config.net_spec()
    head = config.get("net.head")
    params, history = sgd_train(
        spec, init_params(spec, config.get("train.seed")),
        _load_images(manifest, train, size), targets[train],
        config.train_schedule(), (_load_images(manifest, val, size), targets[val]), head=head,
    )
    directory = store.begin("train", keys.train)
    save_artifact(params_to_artifact(spec, params, head), directory / "net.syng")
    history.to_csv(directory / "loss_history.csv")
    store.commit("train", keys.train, config.section_hash(TRAIN_KEYS), {"cca": keys.cca}, started,
                 {"fit_split": "train", "fit_rows": int(len(train)), "monitor_split": "val"})
    return StageResult("train", keys.train, directory, False)


def _descriptor_for(item: Tuple[Path, Tuple[MaskRect, ...]], spec: NetSpec, params: NetParams,
                    size: int, dog_cfg: DogConfig):
    path, rects = item
    descriptor = build_descriptor(spec, params, prepare_image(path, size, list(rects)), dog_cfg)
    return descriptor.data, descriptor.fallback, descriptor.layer_offsets


def _descriptors(config: Config, spec: NetSpec, params: NetParams,
                 items: Sequence[Tuple[Path, Tuple[MaskRect, ...]]]):
    fn = partial(_descriptor_for, spec=spec, params=params, size=config.get("image_size"),
                 dog_cfg=config.dog_config())
    return _fan_out(fn, items, config.get("workers"))


def run_stage_descriptors(config: Config, store: ArtifactStore) -> StageResult:
    """Keypoint-pooled conv descriptors T of every image"""
    keys = stage_keys(config)
    hit = _cache_hit(store, "descriptors", keys.descriptors)
    if hit:
        return hit
    started = time.time()
    spec, params, _ = params_from_artifact(load_artifact(store.require("train", keys.train, "descriptors") / "net.syng"))
    manifest = load_manifest(config)
    rows = _descriptors(config, spec, params, [(r.path, ()) for r in manifest.records])
    fallback = np.array([row[1] for row in rows], dtype=np.float64)
    artifact = Artifact(ArtifactType.DESCRIPTORS,
                        {"T": np.stack([row[0] for row in rows]), "fallback": fallback},
                        {"ids": manifest.ids, "layer_offsets": rows[0][2]})
    directory = store.begin("descriptors", keys.descriptors)
    save_artifact(artifact, directory / "descriptors.syng")
    (directory / "index.tsv").write_text("".join(f"{image_id}\t{row}\n" for row, image_id in enumerate(manifest.ids)))
    click.echo(f"  {int(fallback.sum())} of {len(rows)} images used the fallback keypoint grid")
    store.commit("descriptors", keys.descriptors, config.section_hash(DOG_KEYS), {"train": keys.train}, started)
    return StageResult("descriptors", keys.descriptors, directory, False)


def _fit_svm(config: Config, X: np.ndarray, y: np.ndarray) -> Tuple[SvmModel, Standardizer]:
    scaler = standardizer_fit(X)
    model = svm_train(standardizer_apply(scaler, X), y, C=config.get("svm.C"),
                      epochs=config.get("svm.epochs"), seed=config.get("svm.seed"), verbose=True)
    click.echo(f"  svm objective {model.objective:.6f}")
    return model, scaler


def run_stage_svm(config: Config, store: ArtifactStore) -> StageResult:
    keys = stage_keys(config)
    hit = _cache_hit(store, "svm", keys.svm)
    if hit:
        return hit
    started = time.time()
    bank = load_artifact(store.require("descriptors", keys.descriptors, "svm") / "descriptors.syng")
    split = _load_split(store, keys, "svm")
    train = split.indices("train")
    labels = load_manifest(config).labels
    model, scaler = _fit_svm(config, bank.arrays["T"][train], labels[train])
    directory = store.begin("svm", keys.svm)
    save_artifact(svm_to_artifact(model, scaler), directory / "svm.syng")
    store.commit("svm", keys.svm, config.section_hash(SVM_KEYS),
                 {"descriptors": keys.descriptors, "split": keys.split}, started,
                 {"fit_split": "train", "fit_rows": int(len(train))})
    return StageResult("svm", keys.svm, directory, False)


def _scored_report(decisions: np.ndarray, labels: np.ndarray, ids: List[str],
                   split: SplitAssignment) -> EvalReport:
    """Test report at threshold 0 plus the supplementary validation-tuned line"""
    test, val = split.indices("test"), split.indices("val")
    report = report_from_decisions(decisions[test], labels[test], [ids[i] for i in test])
    if len(val):
        threshold, _ = tune_threshold(decisions[val], labels[val])
        report.tuned_threshold = threshold
        report.tuned_accuracy = accuracy_at(decisions[test], labels[test], threshold)
    return report


def _evaluate_stage(store: ArtifactStore, stage: str, key: str, title: str,
                    compute: Callable[[], EvalReport], inputs: Dict[str, str]) -> EvalReport:
    if store.has(stage, key):
        click.echo(f"ℹ️ {stage}: cache hit ({key[:16]})")
        report = _report_from_files(store.stage_dir(stage, key))
    else:
        click.echo(f"🔄 {stage}: computing ({key[:16]})...")
        started = time.time()
        report = compute()
        directory = store.begin(stage, key)
        _report_to_files(report, directory, title)
        store.commit(stage, key, key, inputs, started, {"evaluated_split": "test"})
    click.echo(report.summary(title), nl=False)
    return report


def run_stage_eval(config: Config, store: ArtifactStore) -> EvalReport:
    """Evaluate the constrained pipeline on the test split"""
    keys = stage_keys(config)

    def compute() -> EvalReport:
        model, scaler = svm_from_artifact(load_artifact(store.require("svm", keys.svm, "eval") / "svm.syng"))
        bank = load_artifact(store.require("descriptors", keys.descriptors, "eval") / "descriptors.syng")
        manifest = load_manifest(config)
        decisions = decision_value(model, standardizer_apply(scaler, bank.arrays["T"]))
        return _scored_report(decisions, manifest.labels, manifest.ids, _load_split(store, keys, "eval"))

    return _evaluate_stage(store, "eval", keys.svm, "synergy-constrained network + SVM", compute,
                           {"svm": keys.svm})


def run_baseline_synergy_svm(config: Config, store: ArtifactStore) -> EvalReport:
    """Linear SVM directly on the standardized synergy features S"""
    keys = stage_keys(config)

    def compute() -> EvalReport:
        _, targets = synergy_from_artifact(load_artifact(store.require("cca", keys.cca, "baseline") / "synergy.syng"))
        split = _load_split(store, keys, "baseline")
        manifest = load_manifest(config)
        train = split.indices("train")
        model, scaler = _fit_svm(config, targets[train], manifest.labels[train])
        decisions = decision_value(model, standardizer_apply(scaler, targets))
        return _scored_report(decisions, manifest.labels, manifest.ids, split)

    return _evaluate_stage(store, "baseline", keys.baseline, "synergy feature + SVM baseline", compute,
                           {"cca": keys.cca, "split": keys.split})


def _class_targets(labels: np.ndarray) -> np.ndarray:
    """Class index 1 for selfie, 0 otherwise"""
    return (labels > 0).astype(np.intp)


def train_unconstrained(config: Config, store: ArtifactStore) -> StageResult:
    """Same network with a two-way output trained on labels"""
    keys = stage_keys(config)
    hit = _cache_hit(store, "unconstrained", keys.unconstrained)
    if hit:
        return hit
    started = time.time()
    split = _load_split(store, keys, "unconstrained")
    manifest = load_manifest(config)
    size = config.get("image_size")
    train, val = split.indices("train"), split.indices("val")
    classes = _class_targets(manifest.labels)
    spec = config.net_spec(out_dim=2)
    params, history = sgd_train(
        spec, init_params(spec, config.get("train.seed")),
        _load_images(manifest, train, size), classes[train], config.train_schedule(),
        (_load_images(manifest, val, size), classes[val]), head="classify",
    )
    directory = store.begin("unconstrained", keys.unconstrained)
    save_artifact(params_to_artifact(spec, params, "classify"), directory / "net.syng")
    history.to_csv(directory / "loss_history.csv")
    store.commit("unconstrained", keys.unconstrained, config.section_hash(UNCONSTRAINED_KEYS),
                 {"split": keys.split}, started, {"fit_split": "train", "fit_rows": int(len(train))})
    return StageResult("unconstrained", keys.unconstrained, directory, False)


def _net_decisions(spec: NetSpec, params: NetParams, images: np.ndarray) -> np.ndarray:
    logits = predict(spec, params, images)
    return logits[:, 1] - logits[:, 0]


def run_baseline_unconstrained(config: Config, store: ArtifactStore) -> EvalReport:
    """Label-trained network classifying directly from its two outputs"""
    keys = stage_keys(config)
    result = train_unconstrained(config, store)

    def compute() -> EvalReport:
        spec, params, _ = params_from_artifact(load_artifact(result.path / "net.syng"))
        manifest = load_manifest(config)
        split = _load_split(store, keys, "baseline-unconstrained")
        decisions = np.zeros(len(manifest))
        wanted = np.concatenate([split.indices("val"), split.indices("test")])
        decisions[wanted] = _net_decisions(spec, params, _load_images(manifest, wanted, config.get("image_size")))
        return _scored_report(decisions, manifest.labels, manifest.ids, split)

    return _evaluate_stage(store, "baseline-unconstrained", keys.unconstrained, "unconstrained network baseline",
                           compute, {"unconstrained": keys.unconstrained})


def run_all(config: Config, store: ArtifactStore, unconstrained: bool = False) -> Dict[str, EvalReport]:
    """Every stage in dependency order, then the reports"""
    config.validate()
    for stage in (run_stage_split, run_stage_features, run_stage_cca, run_stage_train,
                  run_stage_descriptors, run_stage_svm):
        stage(config, store)
    reports = {"pipeline": run_stage_eval(config, store),
               "baseline": run_baseline_synergy_svm(config, store)}
    if unconstrained:
        reports["unconstrained"] = run_baseline_unconstrained(config, store)
    return reports


# -- ablation and heatmaps -------------------------------------------------------

def run_ablation(config: Config, store: ArtifactStore, masked_manifest: Union[str, Path],
                 model: str = "constrained") -> AblationResult:
    """
    Evaluate frozen models on test images with annotated regions zeroed

    Records of the masked manifest are matched to the pipeline manifest by
    resolved image path, so the two may live in different directories. Test
    records without a rects column are skipped and listed.
    """
    keys = stage_keys(config)
    manifest = load_manifest(config)
    masks = DatasetManifest.load(masked_manifest)
    split = _load_split(store, keys, "ablate")
    index = masks.by_path()

    chosen, skipped = [], []
    for i in split.indices("test"):
        record = manifest.records[i]
        j = index.get(record.path.resolve())
        if j is None or not masks.records[j].has_rects:
            skipped.append(record.image_id)
        else:
            chosen.append((i, masks.records[j].rects))
    if skipped:
        click.echo(f"⚠️ {len(skipped)} test records have no mask rects and are skipped")
    if not chosen:
        raise ArgumentError("no test record in the masked manifest carries mask rects")

    rows = [i for i, _ in chosen]
    labels, ids = manifest.labels[rows], [manifest.records[i].image_id for i in rows]
    plain = [(manifest.records[i].path, ()) for i, _ in chosen]
    masked = [(manifest.records[i].path, rects) for i, rects in chosen]

    if model == "constrained":
        spec, params, _ = params_from_artifact(load_artifact(store.require("train", keys.train, "ablate") / "net.syng"))
        svm, scaler = svm_from_artifact(load_artifact(store.require("svm", keys.svm, "ablate") / "svm.syng"))

        def score(items):
            T = np.stack([row[0] for row in _descriptors(config, spec, params, items)])
            return decision_value(svm, standardizer_apply(scaler, T))
    elif model == "unconstrained":
        spec, params, _ = params_from_artifact(
            load_artifact(store.require("unconstrained", keys.unconstrained, "ablate") / "net.syng"))
        size = config.get("image_size")

        def score(items):
            images = stack_images([prepare_image(path, size, list(rects)) for path, rects in items])
            return _net_decisions(spec, params, images)
    else:
        raise ArgumentError(f"unknown ablation model '{model}'")

    click.echo(f"🔄 Ablating {len(rows)} test images ({model})...")
    normal = report_from_decisions(score(plain), labels, ids)
    masked_report = report_from_decisions(score(masked), labels, ids)
    result = AblationResult(normal, masked_report, 100.0 * (normal.accuracy - masked_report.accuracy), skipped)

    key = stable_hash(["ablation", keys.svm if model == "constrained" else keys.unconstrained,
                       file_hash(masked_manifest), model])
    directory = store.begin("ablation", key)
    _report_to_files(normal, directory / ".", f"{model}: unmasked test images")
    (directory / "masked").mkdir(exist_ok=True)
    _report_to_files(masked_report, directory / "masked", f"{model}: masked test images")
    (directory / "summary.txt").write_text(
        f"model {model}\nnormal accuracy {normal.accuracy:.4f}\nmasked accuracy {masked_report.accuracy:.4f}\n"
        f"drop {result.drop:.2f} points\nskipped {len(skipped)}: {' '.join(skipped)}\n"
    )
    click.echo(f"✓ Accuracy {normal.accuracy:.4f} → {masked_report.accuracy:.4f} "
               f"(drop {result.drop:.2f} points)")
    return result


def heatmap_image(activation: np.ndarray, out_size: int) -> np.ndarray:
    """Min-max scale one activation map to 0..255 and upscale with nearest neighbor"""
    low, high = float(activation.min()), float(activation.max())
    if high > low:
        scaled = np.round((activation - low) / (high - low) * 255.0).astype(np.uint8)
    else:
        scaled = np.zeros(activation.shape, dtype=np.uint8)
    rows = (np.arange(out_size) * activation.shape[0]) // out_size
    cols = (np.arange(out_size) * activation.shape[1]) // out_size
    return scaled[rows][:, cols]


def export_heatmaps(config: Config, store: ArtifactStore, image_ids: Sequence[str], layer: int,
                    filter_indices: Sequence[int], out_dir: Union[str, Path],
                    model: str = "constrained") -> List[Path]:
    """
    Write conv activation heat maps as PGM files

    Args:
        layer: Conv layer number, starting at 1
        filter_indices: Filters of that layer to render

    Returns:
        Paths named ``<image id>_conv<layer>_f<filter>.pgm``
    """
    keys = stage_keys(config)
    stage, key = ("train", keys.train) if model == "constrained" else ("unconstrained", keys.unconstrained)
    spec, params, _ = params_from_artifact(load_artifact(store.require(stage, key, "heatmaps") / "net.syng"))
    manifest = load_manifest(config)
    lookup = manifest.by_id()
    n_conv = len(spec.conv_indices)
    if not 1 <= layer <= n_conv:
        raise ArgumentError(f"layer must be in 1..{n_conv}, got {layer}")
    filters = spec.layers[spec.conv_indices[layer - 1]].filters
    bad = [f for f in filter_indices if not 0 <= f < filters]
    if bad:
        raise ArgumentError(f"filter indices {bad} out of range 0..{filters - 1}")
    missing = [i for i in image_ids if i not in lookup]
    if missing:
        raise ArgumentError(f"unknown image ids: {missing}")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    size = config.get("image_size")
    written = []
    for image_id in image_ids:
        img = prepare_image(manifest.records[lookup[image_id]].path, size)
        _, cache = forward(spec, params, img[None])
        maps = cache.conv_maps(0)[layer - 1]
        for f in filter_indices:
            path = out_dir / f"{image_id}_conv{layer}_f{f}.pgm"
            path.write_bytes(encode_pgm(heatmap_image(maps[f], size)))
            written.append(path)
    click.echo(f"✓ Wrote {len(written)} heat maps to {out_dir}")
    return written
