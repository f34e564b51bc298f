"""Engineered pose/object features: distances, an angle, and presence flags.

Keypoints come from a 2D skeleton tool, boxes from an object detector, both
as per-frame JSON Lines. Coordinates are normalized by the frame size, so
every distance is unit-free and bounded by sqrt(2). Each feature carries a
presence flag; a missing ingredient yields value 0 with flag 0 rather than a
sentinel, keeping downstream inputs bounded. No trainable state lives here,
so this branch is frozen by construction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_CONFIDENCE_THRESHOLD = 0.1
DEFAULT_OBJECT_LABELS = ("phone", "bottle")

KEYPOINT_NAMES = frozenset(
    {
        "nose",
        "neck",
        "left_eye",
        "right_eye",
        "left_ear",
        "right_ear",
        "left_shoulder",
        "right_shoulder",
        "left_elbow",
        "right_elbow",
        "left_wrist",
        "right_wrist",
        "left_hip",
        "right_hip",
        "left_knee",
        "right_knee",
        "left_ankle",
        "right_ankle",
    }
)


@dataclass(frozen=True)
class Keypoint:
    name: str
    x: float
    y: float
    confidence: float


@dataclass(frozen=True)
class PoseSkeleton:
    frame_id: str
    keypoints: dict[str, Keypoint] = field(default_factory=dict)

    def get(self, name: str) -> Keypoint | None:
        return self.keypoints.get(name)


@dataclass(frozen=True)
class DetectionBox:
    label: str
    x1: float
    y1: float
    x2: float
    y2: float
    score: float

    def __post_init__(self):
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise ValueError(f"degenerate box for {self.label!r}")


@dataclass(frozen=True)
class PoseConfig:
    confidence_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD
    box_distance_mode: str = "center"  # or "edge"
    object_labels: tuple[str, ...] = DEFAULT_OBJECT_LABELS
    keypoint_aliases: tuple[tuple[str, str], ...] = ()  # (tool name, canonical name)


@dataclass(frozen=True)
class PoseFeatureVector:
    values: np.ndarray
    feature_names: tuple[str, ...]


def feature_names(config: PoseConfig = PoseConfig()) -> tuple[str, ...]:
    base = ["hand_face_distance", "eye_neck_angle"]
    base += [f"hand_{label}_distance" for label in config.object_labels]
    return tuple(base + [f"{name}_present" for name in base])


def feature_length(config: PoseConfig = PoseConfig()) -> int:
    return 2 * (2 + len(config.object_labels))


def normalize_keypoints(
    skeleton: PoseSkeleton,
    width_px: float,
    height_px: float,
    confidence_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD,
) -> PoseSkeleton:
    """Scale to unit square and drop low-confidence points. Retained
    coordinates are clamped into [0, 1]."""
    if width_px <= 0 or height_px <= 0:
        raise ValueError("frame dimensions must be positive")
    kept = {}
    for name, kp in skeleton.keypoints.items():
        if kp.confidence < confidence_threshold:
            continue
        kept[name] = Keypoint(
            name=name,
            x=min(max(kp.x / width_px, 0.0), 1.0),
            y=min(max(kp.y / height_px, 0.0), 1.0),
            confidence=kp.confidence,
        )
    return PoseSkeleton(frame_id=skeleton.frame_id, keypoints=kept)


def _face_anchor(skeleton: PoseSkeleton) -> tuple[float, float] | None:
    nose = skeleton.get("nose")
    if nose is not None:
        return (nose.x, nose.y)
    eyes = [kp for kp in (skeleton.get("left_eye"), skeleton.get("right_eye")) if kp is not None]
    if eyes:
        return (sum(e.x for e in eyes) / len(eyes), sum(e.y for e in eyes) / len(eyes))
    return None


def _hand_points(skeleton: PoseSkeleton) -> list[tuple[float, float]]:
    hands = []
    for side in ("left", "right"):
        kp = skeleton.get(f"{side}_wrist") or skeleton.get(f"{side}_elbow")
        if kp is not None:
            hands.append((kp.x, kp.y))
    return hands


def hand_face_distance(skeleton: PoseSkeleton) -> tuple[float, int]:
    """Min Euclidean distance from any hand to the face anchor (nose, else
    mid-eyes). Masked when either side is absent."""
    anchor = _face_anchor(skeleton)
    hands = _hand_points(skeleton)
    if anchor is None or not hands:
        return 0.0, 0
    d = min(math.hypot(hx - anchor[0], hy - anchor[1]) for hx, hy in hands)
    return d, 1


def eye_neck_angle(skeleton: PoseSkeleton) -> tuple[float, int]:
    """Angle in degrees at the neck between the rays toward each eye; masked
    when a point is missing or a ray degenerates to zero length."""
    neck = skeleton.get("neck")
    left = skeleton.get("left_eye")
    right = skeleton.get("right_eye")
    if neck is None or left is None or right is None:
        return 0.0, 0
    v1 = (left.x - neck.x, left.y - neck.y)
    v2 = (right.x - neck.x, right.y - neck.y)
    n1 = math.hypot(*v1)
    n2 = math.hypot(*v2)
    if n1 == 0.0 or n2 == 0.0:
        return 0.0, 0
    cos = (v1[0] * v2[0] + v1[1] * v2[1]) / (n1 * n2)
    cos = min(max(cos, -1.0), 1.0)
    return math.degrees(math.acos(cos)), 1


def hand_object_distance(
    skeleton: PoseSkeleton,
    boxes: list[DetectionBox],
    label: str,
    width_px: float,
    height_px: float,
    mode: str = "center",
) -> tuple[float, int]:
    """Min distance from any hand to any box with the given label. Boxes are
    in pixel space and reduced to their center (or nearest edge when
    mode="edge"), normalized by the frame size."""
    hands = _hand_points(skeleton)
    targets = [b for b in boxes if b.label == label]
    if not hands or not targets:
        return 0.0, 0

    best = math.inf
    for box in targets:
        x1, x2 = box.x1 / width_px, box.x2 / width_px
        y1, y2 = box.y1 / height_px, box.y2 / height_px
        x1, x2 = min(max(x1, 0.0), 1.0), min(max(x2, 0.0), 1.0)
        y1, y2 = min(max(y1, 0.0), 1.0), min(max(y2, 0.0), 1.0)
        for hx, hy in hands:
            if mode == "edge":
                dx = max(x1 - hx, 0.0, hx - x2)
                dy = max(y1 - hy, 0.0, hy - y2)
                d = math.hypot(dx, dy)
            else:
                d = math.hypot(hx - (x1 + x2) / 2.0, hy - (y1 + y2) / 2.0)
            best = min(best, d)
    return best, 1


def extract_pose_features(
    skeleton: PoseSkeleton,
    boxes: list[DetectionBox],
    frame_dims: tuple[float, float],
    config: PoseConfig = PoseConfig(),
) -> PoseFeatureVector:
    """Assemble the fixed-layout vector: feature values followed by their
    presence flags."""
    width_px, height_px = frame_dims
    normed = normalize_keypoints(skeleton, width_px, height_px, config.confidence_threshold)

    pairs = [hand_face_distance(normed), eye_neck_angle(normed)]
    for label in config.object_labels:
        pairs.append(
            hand_object_distance(
                normed, boxes, label, width_px, height_px, mode=config.box_distance_mode
            )
        )

    values = np.array(
        [v for v, _ in pairs] + [float(flag) for _, flag in pairs], dtype=np.float64
    )
    return PoseFeatureVector(values=values, feature_names=feature_names(config))


# -- file formats ------------------------------------------------------------


def load_pose_file(path, aliases: tuple[tuple[str, str], ...] = ()) -> dict[str, PoseSkeleton]:
    """Read pose JSON Lines ({"frame_id", "keypoints": {name: [x, y, conf]}})."""
    alias_map = dict(aliases)
    skeletons: dict[str, PoseSkeleton] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            try:
                frame_id = obj["frame_id"]
                raw = obj["keypoints"]
            except KeyError as exc:
                raise ValueError(f"pose line {line_no}: missing key {exc}") from None
            keypoints = {}
            for name, triple in raw.items():
                name = alias_map.get(name, name)
                x, y, conf = (float(v) for v in triple)
                keypoints[name] = Keypoint(name=name, x=x, y=y, confidence=conf)
            skeletons[frame_id] = PoseSkeleton(frame_id=frame_id, keypoints=keypoints)
    return skeletons


def load_detections_file(path) -> dict[str, list[DetectionBox]]:
    """Read detection JSON Lines ({"frame_id", "boxes": [...]})."""
    detections: dict[str, list[DetectionBox]] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            try:
                frame_id = obj["frame_id"]
                boxes = [
                    DetectionBox(
                        label=b["label"],
                        x1=float(b["x1"]),
                        y1=float(b["y1"]),
                        x2=float(b["x2"]),
                        y2=float(b["y2"]),
                        score=float(b["score"]),
                    )
                    for b in obj["boxes"]
                ]
            except KeyError as exc:
                raise ValueError(f"detections line {line_no}: missing key {exc}") from None
            detections[frame_id] = boxes
    return detections


def write_pose_file(path, skeletons: dict[str, dict[str, tuple[float, float, float]]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for frame_id, keypoints in skeletons.items():
            obj = {
                "frame_id": frame_id,
                "keypoints": {name: list(xyc) for name, xyc in keypoints.items()},
            }
            fh.write(json.dumps(obj, separators=(", ", ": ")) + "\n")


def write_detections_file(path, detections: dict[str, list[dict]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for frame_id, boxes in detections.items():
            obj = {"frame_id": frame_id, "boxes": boxes}
            fh.write(json.dumps(obj, separators=(", ", ": ")) + "\n")
