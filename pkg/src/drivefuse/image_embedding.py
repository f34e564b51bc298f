"""The 4096-dim image-embedding branch behind a pluggable backbone contract.

Three backends satisfy the contract: "recorded" reads vectors from an
on-disk store (JSON index + flat little-endian float32 rows), "synthetic"
expands a seeded hash of the frame id into a deterministic vector, and
"external" shells out to a user-supplied command that prints one JSON array
per frame. Nothing in this repo runs a CNN; fine-tuned backbones plug in
through the external contract and their outputs get recorded.
"""

from __future__ import annotations

import hashlib
import json
import shlex
import subprocess
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DuplicateFrameId, MissingEmbedding, PluginFailure

EMBEDDING_DIM = 4096

INDEX_FILENAME = "index.json"
VECTORS_FILENAME = "vectors.f32"


@dataclass(frozen=True)
class ImageEmbedding:
    frame_id: str
    vector: np.ndarray  # float32, shape (EMBEDDING_DIM,)


@dataclass(frozen=True)
class BackboneSpec:
    kind: str  # "recorded" | "synthetic" | "external"
    source: str = ""  # store directory or plugin command
    seed: int = 0  # synthetic backend only


def synthetic_embedding(frame_id: str, seed: int = 0, dim: int = EMBEDDING_DIM) -> np.ndarray:
    """Deterministic stand-in vector: a seeded hash of the frame id expanded
    to uniform values in [-1, 1]."""
    digest = hashlib.blake2b(f"{seed}:{frame_id}".encode("utf-8"), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    return rng.uniform(-1.0, 1.0, size=dim).astype(np.float32)


def write_embedding_store(embeddings, store_dir) -> None:
    """Persist embeddings as an index file plus a flat binary of little-endian
    float32 rows. Round-trips bit-exactly."""
    store_dir = Path(store_dir)
    store_dir.mkdir(parents=True, exist_ok=True)

    index: dict[str, int] = {}
    rows = []
    for emb in embeddings:
        if emb.frame_id in index:
            raise DuplicateFrameId(f"duplicate frame_id {emb.frame_id!r} in store")
        vec = np.asarray(emb.vector, dtype="<f4")
        if vec.shape != (EMBEDDING_DIM,):
            raise ValueError(
                f"embedding for {emb.frame_id!r} has shape {vec.shape}, "
                f"expected ({EMBEDDING_DIM},)"
            )
        index[emb.frame_id] = len(rows)
        rows.append(vec)

    data = np.concatenate(rows) if rows else np.zeros(0, dtype="<f4")
    (store_dir / VECTORS_FILENAME).write_bytes(data.tobytes())
    (store_dir / INDEX_FILENAME).write_text(
        json.dumps(index, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


class EmbeddingStore:
    """Read access to a recorded store; safe for concurrent readers."""

    def __init__(self, store_dir):
        store_dir = Path(store_dir)
        index_path = store_dir / INDEX_FILENAME
        vectors_path = store_dir / VECTORS_FILENAME
        if not index_path.is_file() or not vectors_path.is_file():
            raise FileNotFoundError(f"no embedding store at {store_dir}")
        self._index: dict[str, int] = json.loads(index_path.read_text(encoding="utf-8"))
        raw = np.fromfile(vectors_path, dtype="<f4")
        if raw.size != len(self._index) * EMBEDDING_DIM:
            raise ValueError(
                f"store at {store_dir} holds {raw.size} floats, expected "
                f"{len(self._index) * EMBEDDING_DIM}"
            )
        self._vectors = raw.reshape(-1, EMBEDDING_DIM)

    def __len__(self) -> int:
        return len(self._index)

    def __contains__(self, frame_id: str) -> bool:
        return frame_id in self._index

    def frame_ids(self):
        return self._index.keys()

    def get(self, frame_id: str) -> np.ndarray:
        row = self._index.get(frame_id)
        if row is None:
            raise MissingEmbedding(frame_id)
        return self._vectors[row].copy()


class Backbone:
    """Resolved backend; embed() is deterministic per (frame_id, spec)."""

    def __init__(self, spec: BackboneSpec):
        self.spec = spec
        if spec.kind == "recorded":
            self._store = EmbeddingStore(spec.source)
        elif spec.kind == "synthetic":
            self._store = None
        elif spec.kind == "external":
            if not spec.source:
                raise ValueError("external backbone needs a command in spec.source")
            self._store = None
        else:
            raise ValueError(f"unknown backbone kind {spec.kind!r}")

    def embed(self, frame_id: str, image_ref: str = "") -> np.ndarray:
        if self.spec.kind == "recorded":
            return self._store.get(frame_id)
        if self.spec.kind == "synthetic":
            return synthetic_embedding(frame_id, seed=self.spec.seed)
        return self._run_plugin(frame_id, image_ref)

    def _run_plugin(self, frame_id: str, image_ref: str) -> np.ndarray:
        cmd = shlex.split(self.spec.source) + [image_ref]
        try:
            proc = subprocess.run(cmd, capture_output=True, timeout=120, check=False)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise PluginFailure(frame_id, str(exc)) from exc
        if proc.returncode != 0:
            raise PluginFailure(
                frame_id, f"exit {proc.returncode}: {proc.stderr.decode(errors='replace')[:200]}"
            )
        try:
            values = json.loads(proc.stdout)
        except json.JSONDecodeError as exc:
            raise PluginFailure(frame_id, f"plugin output is not JSON: {exc}") from exc
        vec = np.asarray(values, dtype=np.float32)
        if vec.shape != (EMBEDDING_DIM,):
            raise PluginFailure(frame_id, f"plugin returned shape {vec.shape}")
        if not np.all(np.isfinite(vec)):
            raise PluginFailure(frame_id, "plugin output contains non-finite values")
        return vec


def embed_frame(frame, backbone: BackboneSpec) -> ImageEmbedding:
    """Contract entry point: one frame in, one 4096-dim embedding out.
    `frame` needs frame_id and image_ref attributes (a FrameSample works)."""
    vec = Backbone(backbone).embed(frame.frame_id, getattr(frame, "image_ref", ""))
    return ImageEmbedding(frame_id=frame.frame_id, vector=vec)
