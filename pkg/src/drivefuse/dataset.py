"""Annotation parsing, frame sampling, and dataset manifest construction.

Annotations arrive as CSV intervals per video; frames are drawn at a fixed
frame-index stride and kept only when their timestamp lands inside an
annotated interval (half-open [start, end), so boundary frames are never
double-labeled). The manifest is JSON Lines, deterministically ordered, one
sample per line.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import MalformedRow, UnknownLabel
from .taxonomy import ActivityClass, N_CLASSES, normalize_label

DEFAULT_FPS = 30.0
DEFAULT_SAMPLING_INTERVAL_FRAMES = 30
DEFAULT_FRAME_WIDTH = 1920
DEFAULT_FRAME_HEIGHT = 1080

REQUIRED_COLUMNS = ("video_id", "start_s", "end_s", "label")

_MANIFEST_KEYS = (
    "frame_id",
    "video_id",
    "timestamp_s",
    "image_ref",
    "class_index",
    "height_px",
    "width_px",
)


@dataclass(frozen=True)
class AnnotationRecord:
    video_id: str
    start_s: float
    end_s: float
    activity: ActivityClass

    def contains(self, t: float) -> bool:
        return self.start_s <= t < self.end_s


@dataclass(frozen=True)
class FrameSample:
    frame_id: str
    video_id: str
    timestamp_s: float
    image_ref: str
    class_index: int
    height_px: int
    width_px: int


@dataclass(frozen=True)
class VideoMeta:
    video_id: str
    fps: float
    duration_s: float
    width_px: int = DEFAULT_FRAME_WIDTH
    height_px: int = DEFAULT_FRAME_HEIGHT


@dataclass
class DatasetManifest:
    samples: list[FrameSample] = field(default_factory=list)
    split: str = "train"
    sampling_interval_frames: int = DEFAULT_SAMPLING_INTERVAL_FRAMES
    fps: float = DEFAULT_FPS


def parse_annotations(path) -> list[AnnotationRecord]:
    """Parse an annotation CSV into records sorted by (video_id, start_s).

    Row numbers in errors are 1-based and count the header as row 1.
    Overlapping intervals within one video are rejected.
    """
    records: list[tuple[int, AnnotationRecord]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise MalformedRow(1, f"missing column(s): {', '.join(missing)}")
        for row_no, row in enumerate(reader, start=2):
            records.append((row_no, _parse_row(row, row_no)))

    records.sort(key=lambda item: (item[1].video_id, item[1].start_s, item[0]))
    _reject_overlaps(records)
    return [rec for _, rec in records]


def _parse_row(row: dict, row_no: int) -> AnnotationRecord:
    video_id = (row.get("video_id") or "").strip()
    if not video_id:
        raise MalformedRow(row_no, "empty video_id")
    try:
        start_s = float(row["start_s"])
        end_s = float(row["end_s"])
    except (TypeError, ValueError, KeyError):
        raise MalformedRow(row_no, "non-numeric start_s/end_s") from None
    if not (math.isfinite(start_s) and math.isfinite(end_s)):
        raise MalformedRow(row_no, "non-finite start_s/end_s")
    if start_s < 0:
        raise MalformedRow(row_no, "negative start_s")
    if end_s <= start_s:
        raise MalformedRow(row_no, "end_s must be greater than start_s")
    activity = normalize_label(row.get("label") or "", row=row_no)
    return AnnotationRecord(video_id=video_id, start_s=start_s, end_s=end_s, activity=activity)


def _reject_overlaps(records: list[tuple[int, AnnotationRecord]]) -> None:
    prev: AnnotationRecord | None = None
    for row_no, rec in records:
        if prev is not None and rec.video_id == prev.video_id and rec.start_s < prev.end_s:
            raise MalformedRow(
                row_no,
                f"interval [{rec.start_s}, {rec.end_s}) overlaps "
                f"[{prev.start_s}, {prev.end_s}) in video {rec.video_id!r}",
            )
        prev = rec


def sample_frames(
    video_meta: VideoMeta,
    records: list[AnnotationRecord],
    interval_frames: int = DEFAULT_SAMPLING_INTERVAL_FRAMES,
) -> list[FrameSample]:
    """Emit one FrameSample at frame indices 0, k, 2k, ... whose timestamp
    falls inside an annotated interval of this video. Gaps are skipped."""
    if interval_frames < 1:
        raise ValueError("interval_frames must be >= 1")
    if video_meta.fps <= 0:
        raise ValueError("fps must be positive")

    own = sorted(
        (r for r in records if r.video_id == video_meta.video_id),
        key=lambda r: r.start_s,
    )
    samples: list[FrameSample] = []
    idx = 0
    while idx / video_meta.fps < video_meta.duration_s:
        t = idx / video_meta.fps
        rec = _interval_at(own, t)
        if rec is not None:
            samples.append(
                FrameSample(
                    frame_id=f"{video_meta.video_id}_f{idx:06d}",
                    video_id=video_meta.video_id,
                    timestamp_s=t,
                    image_ref=f"{video_meta.video_id}/f{idx:06d}.jpg",
                    class_index=rec.activity.index,
                    height_px=video_meta.height_px,
                    width_px=video_meta.width_px,
                )
            )
        idx += interval_frames
    return samples


def _interval_at(sorted_records: list[AnnotationRecord], t: float) -> AnnotationRecord | None:
    for rec in sorted_records:
        if rec.contains(t):
            return rec
        if rec.start_s > t:
            break
    return None


def build_manifest(
    videos: list[VideoMeta],
    records: list[AnnotationRecord],
    split: str,
    interval_frames: int = DEFAULT_SAMPLING_INTERVAL_FRAMES,
) -> DatasetManifest:
    """Sample every video and assemble a deterministic, sorted manifest."""
    samples: list[FrameSample] = []
    for meta in videos:
        samples.extend(sample_frames(meta, records, interval_frames))
    samples.sort(key=lambda s: (s.video_id, s.timestamp_s))

    seen: set[str] = set()
    for s in samples:
        if s.frame_id in seen:
            raise ValueError(f"duplicate frame_id {s.frame_id!r} in manifest")
        seen.add(s.frame_id)
        if not 1 <= s.class_index <= N_CLASSES:
            raise ValueError(f"class_index {s.class_index} out of range for {s.frame_id!r}")

    fps = videos[0].fps if videos else DEFAULT_FPS
    return DatasetManifest(
        samples=samples, split=split, sampling_interval_frames=interval_frames, fps=fps
    )


def manifest_line(sample: FrameSample) -> str:
    obj = {
        "frame_id": sample.frame_id,
        "video_id": sample.video_id,
        "timestamp_s": sample.timestamp_s,
        "image_ref": sample.image_ref,
        "class_index": sample.class_index,
        "height_px": sample.height_px,
        "width_px": sample.width_px,
    }
    return json.dumps(obj, separators=(", ", ": "))


def write_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for sample in manifest.samples:
            fh.write(manifest_line(sample) + "\n")


def read_manifest(path) -> list[FrameSample]:
    samples: list[FrameSample] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            missing = [k for k in _MANIFEST_KEYS if k not in obj]
            if missing:
                raise ValueError(f"manifest line {line_no} missing keys: {missing}")
            samples.append(
                FrameSample(
                    frame_id=obj["frame_id"],
                    video_id=obj["video_id"],
                    timestamp_s=float(obj["timestamp_s"]),
                    image_ref=obj["image_ref"],
                    class_index=int(obj["class_index"]),
                    height_px=int(obj["height_px"]),
                    width_px=int(obj["width_px"]),
                )
            )
    return samples
