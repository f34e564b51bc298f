"""Synthetic desk-scale dataset with controlled per-branch signal.

The generator fabricates annotated "videos", samples them through the real
manifest machinery, and writes every feature file the pipeline ingests. The
signal is layered deliberately:

- image embeddings carry a weak class signal (class direction + unit noise),
- scene graphs carry a strong one (class-correlated node labels), except for
  three left/right activity pairs that share identical node sets,
- pose geometry separates exactly those pairs (wrist-to-face distance, gaze
  spread, wrist-to-object distances).

So a vision-only model is mediocre, adding the graph branch helps a lot, and
adding pose resolves what the graph cannot. Signal strengths are verified by
a nearest-centroid probe per branch, read back through the public loaders,
before the fixture is handed to anyone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .dataset import AnnotationRecord, VideoMeta, build_manifest, write_manifest
from .harness import ExperimentConfig, load_split
from .image_embedding import EMBEDDING_DIM, ImageEmbedding, write_embedding_store
from .pose_features import write_detections_file, write_pose_file
from .scene_graph import Triplet, Vocabulary, write_scene_graph_file
from .taxonomy import N_CLASSES, class_by_index

IMAGE_ACTIVE_DIMS = 48  # strongly active embedding units (sparse, fc-style)
IMAGE_SIGNAL_SCALE = 2.7  # class-direction magnitude vs unit noise on them
IMAGE_BACKGROUND_STD = 0.02  # near-zero activity everywhere else
GRAPH_DROP_P = 0.06  # chance a frame loses one informative node
GRAPH_ADD_P = 0.12  # chance a frame gains an uninformative node
POSE_JITTER = 0.005  # keypoint/box jitter, fraction of frame size

FIXTURE_FPS = 30.0
FIXTURE_WIDTH = 1920
FIXTURE_HEIGHT = 1080
_SECONDS_PER_VIDEO = 180

DISTRACTOR_NODES = ("seat", "window", "seatbelt", "dashboard")
_PREDICATES = ("holding", "touching", "near")

# class index -> non-driver node labels; pairs {3,4}, {6,7}, {11,12} collide
# on purpose and are only separable through pose.
CLASS_NODES = {
    1: ("steering_wheel",),
    2: ("bottle",),
    3: ("phone", "ear"),
    4: ("phone", "ear"),
    5: ("food",),
    6: ("phone", "lap"),
    7: ("phone", "lap"),
    8: ("comb", "mirror"),
    9: ("backseat",),
    10: ("control_panel",),
    11: ("floor_object",),
    12: ("floor_object",),
    13: ("passenger",),
    14: ("passenger", "backseat"),
    15: ("mouth",),
    16: ("head",),
    17: ("radio",),
    18: ("radio", "dancing_arms"),
}

# class index -> (hand-face distance, eye-neck angle deg, hand-phone distance
# or None, hand-bottle distance or None), in unit-square coordinates. The
# angle stays small (a large-valued coordinate would dwarf the other inputs)
# but splits each colliding pair by >= 13 degrees: the left and right variant
# of an activity differ in head tilt, and that is what rescues them.
POSE_TARGETS = {
    1: (0.45, 10.0, None, None),
    2: (0.10, 8.0, None, 0.03),
    3: (0.06, 4.0, 0.03, None),
    4: (0.22, 18.0, 0.16, None),
    5: (0.12, 12.0, None, None),
    6: (0.38, 4.0, 0.04, None),
    7: (0.38, 18.0, 0.04, None),
    8: (0.08, 14.0, None, None),
    9: (0.50, 7.0, None, None),
    10: (0.35, 11.0, None, None),
    11: (0.30, 3.0, None, None),
    12: (0.55, 17.0, None, None),
    13: (0.42, 9.0, None, None),
    14: (0.44, 13.0, None, None),
    15: (0.07, 6.0, None, None),
    16: (0.15, 12.0, None, None),
    17: (0.25, 10.0, None, None),
    18: (0.28, 5.0, None, None),
}

# the same pairs are also nearly indistinguishable to the image branch: their
# embedding directions are strongly correlated
PAIRED_CLASSES = ((3, 4), (6, 7), (11, 12))
PAIR_IMAGE_CORRELATION = 0.92


@dataclass(frozen=True)
class FixtureSummary:
    out_dir: str
    n_train: int
    n_test: int
    seed: int
    probe_accuracy: dict[str, float]  # branch -> nearest-centroid accuracy


def _class_sequence(n: int, rng: np.random.Generator) -> list[int]:
    """Balanced 1-based class labels: shuffled full decks, truncated to n."""
    seq: list[int] = []
    while len(seq) < n:
        seq.extend(int(c) + 1 for c in rng.permutation(N_CLASSES))
    return seq[:n]


def _make_videos(prefix: str, n: int, rng: np.random.Generator):
    """One interval (and so one sampled frame) per second, chunked into
    videos of at most _SECONDS_PER_VIDEO seconds."""
    classes = _class_sequence(n, rng)
    videos: list[VideoMeta] = []
    records: list[AnnotationRecord] = []
    for v0 in range(0, n, _SECONDS_PER_VIDEO):
        chunk = classes[v0 : v0 + _SECONDS_PER_VIDEO]
        video_id = f"{prefix}{v0 // _SECONDS_PER_VIDEO:03d}"
        videos.append(
            VideoMeta(
                video_id=video_id,
                fps=FIXTURE_FPS,
                duration_s=float(len(chunk)),
                width_px=FIXTURE_WIDTH,
                height_px=FIXTURE_HEIGHT,
            )
        )
        for t, cls in enumerate(chunk):
            records.append(
                AnnotationRecord(
                    video_id=video_id,
                    start_s=float(t),
                    end_s=float(t + 1),
                    activity=class_by_index(cls),
                )
            )
    return videos, records


def _frame_triplets(cls: int, rng: np.random.Generator) -> list[Triplet]:
    nodes = list(CLASS_NODES[cls])
    if nodes and rng.random() < GRAPH_DROP_P:
        nodes.pop(int(rng.integers(len(nodes))))
    if rng.random() < GRAPH_ADD_P:
        nodes.append(DISTRACTOR_NODES[int(rng.integers(len(DISTRACTOR_NODES)))])
    return [
        Triplet(
            subject="driver",
            predicate=_PREDICATES[int(rng.integers(len(_PREDICATES)))],
            object=node,
            score=round(float(rng.uniform(0.5, 0.99)), 4),
        )
        for node in nodes
    ]


def _frame_pose(cls: int, rng: np.random.Generator):
    """Keypoints (pixel coords) and detection boxes realizing POSE_TARGETS."""
    hfd, ena_deg, hpd, hbd = POSE_TARGETS[cls]

    def jit():
        return rng.normal(0.0, POSE_JITTER, size=2)

    neck = np.array([0.50, 0.45]) + jit()
    nose = np.array([0.50, 0.30]) + jit()
    # long neck-to-eye rays keep the angle readable through keypoint jitter
    half = math.radians(ena_deg) / 2.0
    eye_l = neck + 0.30 * np.array([-math.sin(half), -math.cos(half)]) + jit()
    eye_r = neck + 0.30 * np.array([math.sin(half), -math.cos(half)]) + jit()
    wrist_a = nose + hfd * np.array([0.6, 0.8]) + jit()  # active hand
    wrist_p = np.array([0.08, 0.92]) + jit()  # resting hand, far from face
    points = {
        "neck": neck,
        "nose": nose,
        "left_eye": eye_l,
        "right_eye": eye_r,
        "right_wrist": wrist_a,
        "left_wrist": wrist_p,
        "right_elbow": wrist_a + np.array([0.03, 0.05]) + jit(),
        "left_elbow": wrist_p + np.array([0.06, -0.05]) + jit(),
        "left_shoulder": np.array([0.38, 0.48]) + jit(),
        "right_shoulder": np.array([0.62, 0.48]) + jit(),
        "left_hip": np.array([0.42, 0.80]) + jit(),
        "right_hip": np.array([0.58, 0.80]) + jit(),
    }
    keypoints = {}
    for name, xy in points.items():
        keypoints[name] = (
            round(float(xy[0] * FIXTURE_WIDTH), 2),
            round(float(xy[1] * FIXTURE_HEIGHT), 2),
            round(float(rng.uniform(0.55, 0.95)), 3),
        )

    boxes = []
    for label, dist, half_w, half_h in (
        ("phone", hpd, 0.018, 0.028),
        ("bottle", hbd, 0.015, 0.035),
    ):
        if dist is None:
            continue
        center = wrist_a + dist * np.array([0.8, 0.6]) + jit()
        boxes.append(
            {
                "label": label,
                "x1": round(float((center[0] - half_w) * FIXTURE_WIDTH), 2),
                "y1": round(float((center[1] - half_h) * FIXTURE_HEIGHT), 2),
                "x2": round(float((center[0] + half_w) * FIXTURE_WIDTH), 2),
                "y2": round(float((center[1] + half_h) * FIXTURE_HEIGHT), 2),
                "score": round(float(rng.uniform(0.5, 0.95)), 3),
            }
        )
    return keypoints, boxes


def nearest_centroid_accuracy(
    train_x: np.ndarray,
    train_rows: np.ndarray,
    test_x: np.ndarray,
    test_rows: np.ndarray,
) -> float:
    """Classify each test row by its nearest train class centroid."""
    centroids = np.stack(
        [train_x[train_rows == r].mean(axis=0) for r in range(N_CLASSES)]
    )
    # squared distances without materializing (n, 18, d)
    d2 = (
        (test_x**2).sum(axis=1, keepdims=True)
        - 2.0 * test_x @ centroids.T
        + (centroids**2).sum(axis=1)[None, :]
    )
    return float((d2.argmin(axis=1) == test_rows).mean())


def _node_bag(graphs, vocab: Vocabulary) -> np.ndarray:
    bags = np.zeros((len(graphs), vocab.size))
    for k, g in enumerate(graphs):
        for idx in vocab.indices(g.node_labels):
            bags[k, idx] += 1.0
    return bags


def branch_probe_accuracies(config: ExperimentConfig) -> dict[str, float]:
    """Nearest-centroid accuracy of each branch's raw features, loaded back
    through the same readers the pipeline uses."""
    branches = ("image", "graph", "pose")
    train = load_split(config.train_manifest, config, branches)
    test = load_split(config.test_manifest, config, branches)
    vocab = Vocabulary.from_graphs(train.graphs)
    return {
        "image": nearest_centroid_accuracy(
            train.image, train.class_rows, test.image, test.class_rows
        ),
        "graph": nearest_centroid_accuracy(
            _node_bag(train.graphs, vocab),
            train.class_rows,
            _node_bag(test.graphs, vocab),
            test.class_rows,
        ),
        "pose": nearest_centroid_accuracy(
            train.pose, train.class_rows, test.pose, test.class_rows
        ),
    }


def fixture_experiment_config(out_dir, **overrides) -> ExperimentConfig:
    """ExperimentConfig pointing at a generated fixture directory."""
    out = Path(out_dir)
    config = ExperimentConfig(
        train_manifest=str(out / "train_manifest.jsonl"),
        test_manifest=str(out / "test_manifest.jsonl"),
        embedding_store=str(out / "embeddings"),
        scene_graphs=str(out / "scene_graphs.jsonl"),
        pose_file=str(out / "pose.jsonl"),
        detections_file=str(out / "detections.jsonl"),
    )
    return replace(config, **overrides) if overrides else config


def generate_fixture(out_dir, n_train: int = 1800, n_test: int = 360, seed: int = 0) -> FixtureSummary:
    """Write manifests, embedding store, scene-graph/pose/detection files.

    Deterministic: the same (n_train, n_test, seed) always produces
    byte-identical files.
    """
    if n_train < N_CLASSES or n_test < N_CLASSES:
        raise ValueError(f"need at least {N_CLASSES} train and test frames")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    # class signal lives on a sparse set of active units, like a pooled
    # fully-connected feature map; the rest is near-silent
    active = np.sort(rng.choice(EMBEDDING_DIM, IMAGE_ACTIVE_DIMS, replace=False))
    directions = rng.standard_normal((N_CLASSES, IMAGE_ACTIVE_DIMS))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    rho = PAIR_IMAGE_CORRELATION
    for a, b in PAIRED_CLASSES:
        mixed = rho * directions[a - 1] + np.sqrt(1.0 - rho**2) * directions[b - 1]
        directions[b - 1] = mixed / np.linalg.norm(mixed)

    train_videos, train_records = _make_videos("trainvid", n_train, rng)
    test_videos, test_records = _make_videos("testvid", n_test, rng)
    train_manifest = build_manifest(train_videos, train_records, split="train")
    test_manifest = build_manifest(test_videos, test_records, split="test")
    write_manifest(train_manifest, out / "train_manifest.jsonl")
    write_manifest(test_manifest, out / "test_manifest.jsonl")

    embeddings = []
    triplets: dict[str, list[Triplet]] = {}
    poses: dict[str, dict] = {}
    detections: dict[str, list[dict]] = {}
    for sample in train_manifest.samples + test_manifest.samples:
        row = sample.class_index - 1
        vec = rng.normal(0.0, IMAGE_BACKGROUND_STD, EMBEDDING_DIM)
        vec[active] = IMAGE_SIGNAL_SCALE * directions[row] + rng.standard_normal(
            IMAGE_ACTIVE_DIMS
        )
        embeddings.append(ImageEmbedding(frame_id=sample.frame_id, vector=vec.astype(np.float32)))
        triplets[sample.frame_id] = _frame_triplets(sample.class_index, rng)
        keypoints, boxes = _frame_pose(sample.class_index, rng)
        poses[sample.frame_id] = keypoints
        detections[sample.frame_id] = boxes

    write_embedding_store(embeddings, out / "embeddings")
    write_scene_graph_file(out / "scene_graphs.jsonl", triplets)
    write_pose_file(out / "pose.jsonl", poses)
    write_detections_file(out / "detections.jsonl", detections)

    probes = branch_probe_accuracies(fixture_experiment_config(out))
    if probes["graph"] <= probes["image"]:
        raise RuntimeError(
            f"fixture signal check failed: graph probe {probes['graph']:.3f} "
            f"<= image probe {probes['image']:.3f}"
        )
    return FixtureSummary(
        out_dir=str(out),
        n_train=len(train_manifest.samples),
        n_test=len(test_manifest.samples),
        seed=seed,
        probe_accuracy=probes,
    )
