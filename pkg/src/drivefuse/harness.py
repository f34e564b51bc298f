"""Experiment orchestration: load features, train, evaluate, ablate, report.

A run is fully determined by (config, seed). Training is plain mini-batch
gradient descent over cross-entropy; batch order comes from a generator
seeded per run, and all accumulation happens in a fixed order, so repeating
a run reproduces the loss trajectory and the checkpoint exactly. The image
and pose branches enter as precomputed matrices and are never updated; the
graph encoder and the classifier head are the only state that learns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import DEFAULT_SAMPLING_INTERVAL_FRAMES, read_manifest
from .errors import ConfigError, MissingFeature, ReportError
from .fusion_model import (
    DEFAULT_HIDDEN_WIDTHS,
    ClassifierParams,
    FusionClassifier,
    MethodVariant,
    backward_batch,
    cross_entropy_batch,
    forward_batch,
    softmax,
)
from .image_embedding import EmbeddingStore
from .metrics import (
    AggregateReport,
    MetricsReport,
    aggregate_from_dict,
    aggregate_seeds,
    aggregate_to_dict,
    compute_metrics,
    relative_improvement_pct,
)
from .pose_features import (
    PoseConfig,
    extract_pose_features,
    feature_length,
    load_detections_file,
    load_pose_file,
)
from .scene_graph import (
    DEFAULT_GRAPH_ENCODING_DIM,
    DEFAULT_NODE_EMBEDDING_DIM,
    GraphBatch,
    GraphEncoderParams,
    SceneGraph,
    Vocabulary,
    encode_batch,
    encode_batch_backward,
    load_scene_graph_file,
)
from .taxonomy import class_index_to_row, row_to_class_index

DEFAULT_SEEDS = (1, 2, 3, 4, 5)
DEFAULT_EPOCHS = 30
DEFAULT_BATCH_SIZE = 32
DEFAULT_LEARNING_RATE = 1e-3


@dataclass
class ExperimentConfig:
    """Everything a run needs; file paths plus hyperparameters."""

    train_manifest: str = ""
    test_manifest: str = ""
    embedding_store: str = ""
    scene_graphs: str = ""
    pose_file: str = ""
    detections_file: str = ""
    variant: MethodVariant = MethodVariant.M3
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    epochs: int = DEFAULT_EPOCHS
    batch_size: int = DEFAULT_BATCH_SIZE
    learning_rate: float = DEFAULT_LEARNING_RATE
    hidden_widths: tuple[int, ...] = DEFAULT_HIDDEN_WIDTHS
    node_embedding_dim: int = DEFAULT_NODE_EMBEDDING_DIM
    graph_encoding_dim: int = DEFAULT_GRAPH_ENCODING_DIM
    sampling_interval_frames: int = DEFAULT_SAMPLING_INTERVAL_FRAMES
    min_triplet_score: float | None = None

    def validate(self) -> None:
        if len(self.seeds) < 1:
            raise ConfigError("at least one seed is required")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")

    def to_dict(self) -> dict:
        return {
            "train_manifest": self.train_manifest,
            "test_manifest": self.test_manifest,
            "embedding_store": self.embedding_store,
            "scene_graphs": self.scene_graphs,
            "pose_file": self.pose_file,
            "detections_file": self.detections_file,
            "variant": self.variant.name,
            "seeds": list(self.seeds),
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "hidden_widths": list(self.hidden_widths),
            "node_embedding_dim": self.node_embedding_dim,
            "graph_encoding_dim": self.graph_encoding_dim,
            "sampling_interval_frames": self.sampling_interval_frames,
            "min_triplet_score": self.min_triplet_score,
        }


@dataclass
class SplitData:
    """One manifest's worth of precomputed branch features, manifest order."""

    frame_ids: list[str]
    class_rows: np.ndarray  # (n,) 0-based
    image: np.ndarray | None = None  # (n, 4096)
    graphs: list[SceneGraph] | None = None
    pose: np.ndarray | None = None  # (n, d_p)

    def __len__(self) -> int:
        return len(self.frame_ids)


def load_split(
    manifest_path,
    config: ExperimentConfig,
    branches: tuple[str, ...],
) -> SplitData:
    """Read a manifest and gather the feature record of every frame for each
    requested branch. A frame absent from a branch's file is an error."""
    samples = read_manifest(manifest_path)
    frame_ids = [s.frame_id for s in samples]
    class_rows = np.array([class_index_to_row(s.class_index) for s in samples], dtype=np.int64)
    data = SplitData(frame_ids=frame_ids, class_rows=class_rows)

    if "image" in branches:
        if not config.embedding_store or not Path(config.embedding_store).is_dir():
            raise MissingFeature(frame_ids[0] if frame_ids else "", "image")
        store = EmbeddingStore(config.embedding_store)
        for fid in frame_ids:
            if fid not in store:
                raise MissingFeature(fid, "image")
        data.image = np.stack([store.get(fid) for fid in frame_ids]).astype(np.float64)

    if "graph" in branches:
        if not config.scene_graphs or not Path(config.scene_graphs).is_file():
            raise MissingFeature(frame_ids[0] if frame_ids else "", "graph")
        graphs = load_scene_graph_file(config.scene_graphs, min_score=config.min_triplet_score)
        missing = [fid for fid in frame_ids if fid not in graphs]
        if missing:
            raise MissingFeature(missing[0], "graph")
        data.graphs = [graphs[fid] for fid in frame_ids]

    if "pose" in branches:
        if not config.pose_file or not Path(config.pose_file).is_file():
            raise MissingFeature(frame_ids[0] if frame_ids else "", "pose")
        pose_config = PoseConfig()
        skeletons = load_pose_file(config.pose_file, aliases=pose_config.keypoint_aliases)
        boxes = (
            load_detections_file(config.detections_file)
            if config.detections_file and Path(config.detections_file).is_file()
            else {}
        )
        vectors = np.zeros((len(samples), feature_length(pose_config)))
        for k, s in enumerate(samples):
            if s.frame_id not in skeletons:
                raise MissingFeature(s.frame_id, "pose")
            fv = extract_pose_features(
                skeletons[s.frame_id],
                boxes.get(s.frame_id, []),
                (s.width_px, s.height_px),
                pose_config,
            )
            vectors[k] = fv.values
        data.pose = vectors

    return data


@dataclass
class TrainingLog:
    variant: str
    seed: int
    initial_loss: float
    epoch_losses: list[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1] if self.epoch_losses else self.initial_loss

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "seed": self.seed,
            "initial_loss": self.initial_loss,
            "epoch_losses": list(self.epoch_losses),
            "final_loss": self.final_loss,
        }


def _assemble(
    data: SplitData,
    variant: MethodVariant,
    graph_params: GraphEncoderParams | None,
    vocab: Vocabulary | None,
) -> np.ndarray:
    """Full-split (n, D) feature matrix, branches in fixed order."""
    parts = []
    if variant.uses("image"):
        parts.append(data.image)
    if variant.uses("graph"):
        batch = GraphBatch.from_graphs(data.graphs, vocab)
        enc, _ = encode_batch(batch, graph_params)
        parts.append(enc)
    if variant.uses("pose"):
        parts.append(data.pose)
    return np.concatenate(parts, axis=1)


def _check_features(data: SplitData, variant: MethodVariant) -> None:
    for branch, attr in (("image", "image"), ("graph", "graphs"), ("pose", "pose")):
        if variant.uses(branch) and getattr(data, attr) is None:
            raise MissingFeature(data.frame_ids[0] if data.frame_ids else "", branch)


def train(
    config: ExperimentConfig,
    seed: int,
    train_data: SplitData | None = None,
) -> tuple[FusionClassifier, TrainingLog]:
    """One seeded training run; returns the trained model and its loss log."""
    config.validate()
    variant = config.variant
    if train_data is None:
        train_data = load_split(config.train_manifest, config, variant.active_branches)
    _check_features(train_data, variant)

    rng = np.random.default_rng(seed)
    n = len(train_data)

    # parameter init draws happen in a fixed order: graph encoder, then head
    vocab = None
    graph_params = None
    train_batch = None
    input_dim = 0
    graph_offset = 0
    if variant.uses("image"):
        input_dim += train_data.image.shape[1]
    if variant.uses("graph"):
        vocab = Vocabulary.from_graphs(train_data.graphs)
        graph_params = GraphEncoderParams.init(
            vocab.size, rng, d_in=config.node_embedding_dim, d_g=config.graph_encoding_dim
        )
        train_batch = GraphBatch.from_graphs(train_data.graphs, vocab)
        graph_offset = input_dim
        input_dim += config.graph_encoding_dim
    if variant.uses("pose"):
        input_dim += train_data.pose.shape[1]
    classifier = ClassifierParams.init(input_dim, rng, hidden_widths=tuple(config.hidden_widths))

    d_g = config.graph_encoding_dim
    lr = config.learning_rate

    x_full = _assemble(train_data, variant, graph_params, vocab)
    logits, _ = forward_batch(x_full, classifier)
    initial_loss = float(cross_entropy_batch(logits, train_data.class_rows).mean())
    log = TrainingLog(variant=variant.name, seed=seed, initial_loss=initial_loss)

    for _ in range(config.epochs):
        perm = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            take = perm[start : start + config.batch_size]
            b = take.size

            parts = []
            cache = None
            sub_batch = None
            if variant.uses("image"):
                parts.append(train_data.image[take])
            if variant.uses("graph"):
                sub_batch = train_batch.take(take)
                enc, cache = encode_batch(sub_batch, graph_params)
                parts.append(enc)
            if variant.uses("pose"):
                parts.append(train_data.pose[take])
            x = np.concatenate(parts, axis=1)

            logits, activations = forward_batch(x, classifier)
            true_rows = train_data.class_rows[take]
            loss_sum += float(cross_entropy_batch(logits, true_rows).sum())

            d_logits = softmax(logits)
            d_logits[np.arange(b), true_rows] -= 1.0
            d_logits /= b
            grads, d_x = backward_batch(classifier, activations, d_logits)

            for w, gw in zip(classifier.weights, grads.weights):
                w -= lr * gw
            for bias, gb in zip(classifier.biases, grads.biases):
                bias -= lr * gb
            if variant.uses("graph"):
                d_enc = d_x[:, graph_offset : graph_offset + d_g]
                ggrads = encode_batch_backward(sub_batch, graph_params, cache, d_enc)
                graph_params.embedding_table -= lr * ggrads.embedding_table
                graph_params.weight -= lr * ggrads.weight
        log.epoch_losses.append(loss_sum / n)

    model = FusionClassifier(
        variant=variant,
        classifier=classifier,
        graph_encoder=graph_params,
        vocabulary=vocab,
        config=config.to_dict(),
        seed=seed,
    )
    return model, log


def evaluate(
    model: FusionClassifier,
    test_data: SplitData,
    seed: int | None = None,
) -> MetricsReport:
    """Run the model over a split and score it."""
    _check_features(test_data, model.variant)
    x = _assemble(test_data, model.variant, model.graph_encoder, model.vocabulary)
    logits, _ = forward_batch(x, model.classifier)
    # argmax of logits = argmax of probabilities; first max is the lowest index
    pred_rows = np.argmax(logits, axis=1)
    true_classes = [row_to_class_index(int(r)) for r in test_data.class_rows]
    pred_classes = [row_to_class_index(int(r)) for r in pred_rows]
    return compute_metrics(
        true_classes,
        pred_classes,
        variant=model.variant.name,
        seed=model.seed if seed is None else seed,
    )


@dataclass
class AblationResult:
    aggregates: list[AggregateReport]  # one per method, request order
    improvement_pct: dict[str, float]  # variant -> % accuracy gain over M1
    logs: list[TrainingLog] = field(default_factory=list)


def run_ablation(
    config: ExperimentConfig,
    methods: tuple[MethodVariant, ...] = (MethodVariant.M1, MethodVariant.M2, MethodVariant.M3),
) -> AblationResult:
    """Train and evaluate every (method, seed) pair on shared data, then
    aggregate per method and compare against the M1 baseline."""
    config.validate()
    branches: tuple[str, ...] = tuple(
        b for b in ("image", "graph", "pose") if any(m.uses(b) for m in methods)
    )
    train_data = load_split(config.train_manifest, config, branches)
    test_data = load_split(config.test_manifest, config, branches)

    aggregates = []
    logs = []
    for method in methods:
        run_config = replace(config, variant=method)
        reports = []
        for seed in config.seeds:
            model, log = train(run_config, seed, train_data=train_data)
            reports.append(evaluate(model, test_data, seed=seed))
            logs.append(log)
        aggregates.append(aggregate_seeds(reports))

    improvements: dict[str, float] = {}
    baseline = next((a for a in aggregates if a.variant == "M1"), None)
    # a 0% baseline makes relative improvement undefined; report without it
    if baseline is not None and baseline.accuracy_mean_pct > 0:
        for agg in aggregates:
            if agg.variant != "M1":
                improvements[agg.variant] = relative_improvement_pct(
                    agg.accuracy_mean_pct, baseline.accuracy_mean_pct
                )
    return AblationResult(aggregates=aggregates, improvement_pct=improvements, logs=logs)


# -- report and plot emission ------------------------------------------------


def report_bytes(aggregates, improvement_pct: dict[str, float] | None = None) -> bytes:
    """Deterministic JSON serialization of one or more aggregated reports."""
    obj = {"reports": [aggregate_to_dict(a) for a in aggregates]}
    if improvement_pct:
        obj["improvement_pct"] = dict(sorted(improvement_pct.items()))
    return (json.dumps(obj, sort_keys=True, indent=2) + "\n").encode("utf-8")


def emit_report(aggregates, path, improvement_pct: dict[str, float] | None = None) -> None:
    Path(path).write_bytes(report_bytes(aggregates, improvement_pct))


def load_report(path) -> tuple[list[AggregateReport], dict[str, float]]:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    aggregates = [aggregate_from_dict(entry) for entry in obj["reports"]]
    return aggregates, obj.get("improvement_pct", {})


def emit_plots(aggregates, path) -> dict:
    """Grouped per-class F1 bar chart across methods, support annotated above
    each class group. Returns a structural summary of what was drawn."""
    aggregates = list(aggregates)
    if not aggregates:
        raise ReportError("no reports to plot")
    for agg in aggregates:
        if not agg.per_class:
            raise ReportError(f"report for {agg.variant} has an empty per-class table")

    from matplotlib.figure import Figure  # deferred: keeps import cheap

    n_classes = len(aggregates[0].per_class)
    n_methods = len(aggregates)
    x = np.arange(n_classes)
    width = 0.8 / n_methods

    fig = Figure(figsize=(15, 5))
    ax = fig.subplots()
    for i, agg in enumerate(aggregates):
        f1s = [m.f1 for m in agg.per_class]
        ax.bar(x + (i - (n_methods - 1) / 2) * width, f1s, width, label=agg.variant)
    supports = [m.support for m in aggregates[0].per_class]
    for j, support in enumerate(supports):
        ax.annotate(
            f"n={support}",
            (x[j], 1.02),
            ha="center",
            fontsize=7,
            annotation_clip=False,
        )
    ax.set_xticks(x)
    ax.set_xticklabels(
        [m.name.replace("_", "\n") for m in aggregates[0].per_class], fontsize=6
    )
    ax.set_ylim(0.0, 1.1)
    ax.set_ylabel("F1")
    ax.set_xlabel("activity class")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    return {"classes": n_classes, "methods": n_methods, "path": str(path)}
