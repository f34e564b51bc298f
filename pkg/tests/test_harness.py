import hashlib
import json
from dataclasses import replace

import numpy as np
import pytest

from drivefuse.errors import ConfigError, MissingFeature, ReportError
from drivefuse.fusion_model import MethodVariant, save_checkpoint, trainable_parameters
from drivefuse.harness import (
    ExperimentConfig,
    emit_plots,
    emit_report,
    evaluate,
    load_report,
    load_split,
    report_bytes,
    run_ablation,
    train,
)
from drivefuse.metrics import aggregate_seeds
from drivefuse.taxonomy import N_CLASSES


def test_config_validation():
    good = ExperimentConfig()
    good.validate()
    for bad in (
        replace(good, seeds=()),
        replace(good, epochs=0),
        replace(good, batch_size=0),
        replace(good, learning_rate=0.0),
    ):
        with pytest.raises(ConfigError):
            bad.validate()


def test_config_dict_is_json_ready(small_config):
    text = json.dumps(small_config.to_dict())
    assert "train_manifest" in text and '"variant": "M3"' in text


def test_load_split_shapes(small_config):
    data = load_split(small_config.train_manifest, small_config, ("image", "graph", "pose"))
    assert len(data) == 90
    assert data.image.shape == (90, 4096)
    assert data.pose.shape == (90, 8)
    assert len(data.graphs) == 90
    assert data.class_rows.min() >= 0 and data.class_rows.max() < N_CLASSES


def test_load_split_missing_branch_files(small_config, tmp_path):
    config = replace(
        small_config,
        embedding_store=str(tmp_path / "nowhere"),
        scene_graphs=str(tmp_path / "missing.jsonl"),
        pose_file="",
    )
    for branch in ("image", "graph", "pose"):
        with pytest.raises(MissingFeature) as exc_info:
            load_split(small_config.train_manifest, config, (branch,))
        assert exc_info.value.branch == branch


def test_load_split_missing_frame_record(small_config, tmp_path):
    # a scene-graph file that lacks every manifest frame
    graphs = tmp_path / "graphs.jsonl"
    graphs.write_text('{"frame_id": "other", "triplets": []}\n', encoding="utf-8")
    config = replace(small_config, scene_graphs=str(graphs))
    with pytest.raises(MissingFeature) as exc_info:
        load_split(small_config.train_manifest, config, ("graph",))
    assert exc_info.value.frame_id.startswith("trainvid")


def test_train_decreases_loss_and_logs(small_config):
    config = replace(small_config, variant=MethodVariant.M1, epochs=3)
    model, log = train(config, seed=1)
    assert log.variant == "M1" and log.seed == 1
    assert len(log.epoch_losses) == 3
    assert log.final_loss < log.initial_loss
    assert log.final_loss == log.epoch_losses[-1]
    assert model.classifier.input_dim == 4096


def test_train_is_deterministic(small_config, tmp_path):
    config = replace(small_config, variant=MethodVariant.M2)
    model_a, log_a = train(config, seed=7)
    model_b, log_b = train(config, seed=7)
    assert log_a.initial_loss == log_b.initial_loss
    assert log_a.epoch_losses == log_b.epoch_losses

    save_checkpoint(model_a, tmp_path / "a.dfck")
    save_checkpoint(model_b, tmp_path / "b.dfck")
    assert (tmp_path / "a.dfck").read_bytes() == (tmp_path / "b.dfck").read_bytes()

    _, log_c = train(config, seed=8)
    assert log_c.epoch_losses != log_a.epoch_losses


def test_frozen_branches_untouched_by_training(small_config):
    config = replace(small_config, variant=MethodVariant.M3, epochs=2)
    data = load_split(config.train_manifest, config, config.variant.active_branches)
    image_before = hashlib.sha256(data.image.tobytes()).hexdigest()
    pose_before = hashlib.sha256(data.pose.tobytes()).hexdigest()

    model, _ = train(config, seed=1, train_data=data)

    assert hashlib.sha256(data.image.tobytes()).hexdigest() == image_before
    assert hashlib.sha256(data.pose.tobytes()).hexdigest() == pose_before
    # the trainable set matches the variant exactly
    assert set(trainable_parameters(model)) == {
        "classifier.weight_0",
        "classifier.bias_0",
        "classifier.weight_1",
        "classifier.bias_1",
        "graph_encoder.embedding_table",
        "graph_encoder.weight",
    }


def test_m1_has_no_graph_state(small_config):
    config = replace(small_config, variant=MethodVariant.M1)
    model, _ = train(config, seed=1)
    assert model.graph_encoder is None
    assert model.vocabulary is None
    assert all(k.startswith("classifier.") for k in trainable_parameters(model))


def test_training_updates_trainable_tensors(small_config):
    config = replace(small_config, variant=MethodVariant.M2, epochs=1)
    data = load_split(config.train_manifest, config, config.variant.active_branches)
    model, _ = train(config, seed=1, train_data=data)

    # re-create the untouched initialization with the same seed
    from drivefuse.fusion_model import ClassifierParams
    from drivefuse.scene_graph import GraphEncoderParams, Vocabulary

    rng = np.random.default_rng(1)
    vocab = Vocabulary.from_graphs(data.graphs)
    init_graph = GraphEncoderParams.init(
        vocab.size, rng, d_in=config.node_embedding_dim, d_g=config.graph_encoding_dim
    )
    init_classifier = ClassifierParams.init(
        4096 + config.graph_encoding_dim, rng, hidden_widths=tuple(config.hidden_widths)
    )
    assert not np.array_equal(model.classifier.weights[0], init_classifier.weights[0])
    assert not np.array_equal(model.graph_encoder.weight, init_graph.weight)
    assert not np.array_equal(model.graph_encoder.embedding_table, init_graph.embedding_table)


def test_evaluate_report_structure(small_config):
    config = replace(small_config, variant=MethodVariant.M1)
    model, _ = train(config, seed=1)
    test_data = load_split(config.test_manifest, config, ("image",))
    report = evaluate(model, test_data, seed=1)
    assert report.variant == "M1" and report.seed == 1
    assert report.n_samples == 36
    assert sum(m.support for m in report.per_class) == 36
    assert 0.0 <= report.accuracy <= 1.0


def test_evaluate_requires_branch_features(small_config):
    config = replace(small_config, variant=MethodVariant.M2)
    model, _ = train(config, seed=1)
    image_only = load_split(config.test_manifest, config, ("image",))
    with pytest.raises(MissingFeature):
        evaluate(model, image_only)


def test_run_ablation_small(small_config):
    result = run_ablation(small_config)
    assert [a.variant for a in result.aggregates] == ["M1", "M2", "M3"]
    assert set(result.improvement_pct) == {"M2", "M3"}
    assert len(result.logs) == 3  # one seed per method
    for agg in result.aggregates:
        assert agg.seeds == (1,)
        assert len(agg.per_class) == N_CLASSES


def test_run_ablation_method_subset(small_config):
    result = run_ablation(small_config, methods=(MethodVariant.M2,))
    assert [a.variant for a in result.aggregates] == ["M2"]
    assert result.improvement_pct == {}  # no M1 baseline requested


def test_report_bytes_deterministic(small_config, tmp_path):
    config = replace(small_config, variant=MethodVariant.M1)
    model, _ = train(config, seed=1)
    test_data = load_split(config.test_manifest, config, ("image",))
    agg = aggregate_seeds([evaluate(model, test_data, seed=1)])

    payload = report_bytes([agg], {"M2": 3.0})
    assert payload == report_bytes([agg], {"M2": 3.0})
    obj = json.loads(payload)
    assert set(obj) == {"reports", "improvement_pct"}
    entry = obj["reports"][0]
    assert set(entry) == {
        "variant",
        "seeds",
        "accuracy_mean_pct",
        "accuracy_std_pct",
        "macro_f1",
        "weighted_f1",
        "per_class",
    }

    emit_report([agg], tmp_path / "report.json", {"M2": 3.0})
    loaded, improvements = load_report(tmp_path / "report.json")
    assert improvements == {"M2": 3.0}
    emit_report(loaded, tmp_path / "again.json", improvements)
    assert (tmp_path / "again.json").read_bytes() == (tmp_path / "report.json").read_bytes()


def test_emit_plots_structure(small_config, tmp_path):
    result = run_ablation(small_config, methods=(MethodVariant.M1, MethodVariant.M2))
    info = emit_plots(result.aggregates, tmp_path / "f1.png")
    assert info == {"classes": 18, "methods": 2, "path": str(tmp_path / "f1.png")}
    header = (tmp_path / "f1.png").read_bytes()[:8]
    assert header == b"\x89PNG\r\n\x1a\n"


def test_emit_plots_rejects_empty(tmp_path):
    with pytest.raises(ReportError):
        emit_plots([], tmp_path / "no.png")

    from drivefuse.metrics import AggregateReport

    hollow = AggregateReport(
        variant="M1",
        seeds=(1,),
        accuracy_mean_pct=50.0,
        accuracy_std_pct=0.0,
        macro_f1=0.5,
        weighted_f1=0.5,
        per_class=(),
    )
    with pytest.raises(ReportError):
        emit_plots([hollow], tmp_path / "no.png")
    assert not (tmp_path / "no.png").exists()
