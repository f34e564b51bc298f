"""Scene-graph construction and its trainable graph-convolution encoder.

Detected (subject, predicate, object) triplets become an undirected graph
over label-deduplicated nodes; predicates only contribute edges, not graph
structure of their own. The encoder is a single graph-convolution layer
(symmetric degree renormalization with self-loops), tanh activation, and
mean pooling over nodes, yielding one fixed-width vector per frame. The
empty graph encodes to the zero vector so fused dimensionality never varies.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyGraph

DEFAULT_NODE_EMBEDDING_DIM = 64
DEFAULT_GRAPH_ENCODING_DIM = 128


@dataclass(frozen=True)
class Triplet:
    subject: str
    predicate: str
    object: str
    score: float | None = None


@dataclass(frozen=True)
class SceneGraph:
    node_labels: tuple[str, ...]
    edges: tuple[tuple[int, int], ...]

    @property
    def n_nodes(self) -> int:
        return len(self.node_labels)


class Vocabulary:
    """Frozen label -> index mapping; index 0 is reserved for unknowns."""

    UNK_INDEX = 0

    def __init__(self, labels):
        ordered = list(labels)
        if len(set(ordered)) != len(ordered):
            raise ValueError("duplicate labels in vocabulary")
        self._index = {label: i + 1 for i, label in enumerate(ordered)}

    @classmethod
    def from_graphs(cls, graphs) -> "Vocabulary":
        """Build from the training split only; order is sorted for determinism."""
        labels = sorted({label for g in graphs for label in g.node_labels})
        return cls(labels)

    @property
    def size(self) -> int:
        # known labels + the UNK slot
        return len(self._index) + 1

    def index_of(self, label: str) -> int:
        return self._index.get(label, self.UNK_INDEX)

    def indices(self, labels) -> np.ndarray:
        return np.array([self.index_of(l) for l in labels], dtype=np.int64)

    def to_dict(self) -> dict:
        return {"unk_index": self.UNK_INDEX, "labels": dict(sorted(self._index.items()))}

    @classmethod
    def from_dict(cls, obj: dict) -> "Vocabulary":
        labels = sorted(obj["labels"], key=lambda l: obj["labels"][l])
        vocab = cls(labels)
        if vocab.to_dict()["labels"] != obj["labels"]:
            raise ValueError("vocabulary mapping is not contiguous from index 1")
        return vocab

    def save(self, path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class GraphEncoderParams:
    embedding_table: np.ndarray  # (vocab_size, d_in)
    weight: np.ndarray  # (d_in, d_g)

    @classmethod
    def init(
        cls,
        vocab_size: int,
        rng: np.random.Generator,
        d_in: int = DEFAULT_NODE_EMBEDDING_DIM,
        d_g: int = DEFAULT_GRAPH_ENCODING_DIM,
    ) -> "GraphEncoderParams":
        table_bound = 0.1
        table = rng.uniform(-table_bound, table_bound, size=(vocab_size, d_in))
        # variance-scaled for the small table init: keeps pre-tanh values
        # near unit scale instead of vanishing
        w_bound = 3.0 / (table_bound * np.sqrt(d_in))
        weight = rng.uniform(-w_bound, w_bound, size=(d_in, d_g))
        return cls(embedding_table=table, weight=weight)

    @property
    def d_in(self) -> int:
        return self.embedding_table.shape[1]

    @property
    def d_g(self) -> int:
        return self.weight.shape[1]


@dataclass
class GraphEncoderGrads:
    embedding_table: np.ndarray
    weight: np.ndarray


def triplets_to_graph(triplets, min_score: float | None = None) -> SceneGraph:
    """Collapse triplets into a graph. Nodes are deduplicated by label within
    the frame; repeated (subject, object) pairs yield a single edge; predicate
    labels are dropped."""
    labels: list[str] = []
    index: dict[str, int] = {}
    edges: list[tuple[int, int]] = []
    edge_set: set[tuple[int, int]] = set()

    for t in triplets:
        if min_score is not None and t.score is not None and t.score < min_score:
            continue
        subject = t.subject.strip()
        obj = t.object.strip()
        if not subject or not obj:
            raise ValueError(f"triplet has empty node label: {t!r}")
        for label in (subject, obj):
            if label not in index:
                index[label] = len(labels)
                labels.append(label)
        edge = (index[subject], index[obj])
        if edge not in edge_set:
            edge_set.add(edge)
            edges.append(edge)

    return SceneGraph(node_labels=tuple(labels), edges=tuple(edges))


def normalized_adjacency(graph: SceneGraph) -> np.ndarray:
    """Symmetrically renormalized adjacency with self-loops:
    D^{-1/2} (A + I) D^{-1/2} with A undirected and binary."""
    n = graph.n_nodes
    if n == 0:
        raise EmptyGraph("cannot build adjacency for an empty graph")
    a = np.zeros((n, n))
    for i, j in graph.edges:
        a[i, j] = 1.0
        a[j, i] = 1.0
    a_tilde = a + np.eye(n)
    d_inv_sqrt = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    return d_inv_sqrt[:, None] * a_tilde * d_inv_sqrt[None, :]


def gcn_forward(
    graph: SceneGraph, params: GraphEncoderParams, vocab: Vocabulary
) -> np.ndarray:
    """Per-node representations tanh(A_hat X W); unknown labels use the UNK
    embedding row."""
    a_hat = normalized_adjacency(graph)
    x = params.embedding_table[vocab.indices(graph.node_labels)]
    return np.tanh(a_hat @ x @ params.weight)


def graph_encode(
    graph: SceneGraph, params: GraphEncoderParams, vocab: Vocabulary
) -> np.ndarray:
    """Graph-level vector: mean of node representations; zeros for the empty
    graph."""
    if graph.n_nodes == 0:
        return np.zeros(params.d_g)
    return gcn_forward(graph, params, vocab).mean(axis=0)


def graph_encode_backward(
    graph: SceneGraph,
    params: GraphEncoderParams,
    vocab: Vocabulary,
    upstream: np.ndarray,
) -> GraphEncoderGrads:
    """Exact gradients of upstream . graph_encode(graph) w.r.t. params."""
    grads = GraphEncoderGrads(
        embedding_table=np.zeros_like(params.embedding_table),
        weight=np.zeros_like(params.weight),
    )
    n = graph.n_nodes
    if n == 0:
        return grads

    a_hat = normalized_adjacency(graph)
    idx = vocab.indices(graph.node_labels)
    x = params.embedding_table[idx]
    ax = a_hat @ x
    h = np.tanh(ax @ params.weight)

    d_h = np.repeat(upstream[None, :] / n, n, axis=0)
    d_pre = d_h * (1.0 - h * h)
    grads.weight += ax.T @ d_pre
    d_x = a_hat.T @ d_pre @ params.weight.T
    np.add.at(grads.embedding_table, idx, d_x)
    return grads


# -- batched training path -------------------------------------------------
#
# Training touches every graph in every epoch; the per-graph functions above
# are the contract, these padded-batch versions are the fast path. Both are
# required to agree (tested), and all summations run in fixed order so runs
# are reproducible.


@dataclass
class GraphBatch:
    """Padded, precomputed static structure for a list of graphs."""

    a_hat: np.ndarray  # (B, m, m), zero-padded
    node_idx: np.ndarray  # (B, m) vocab indices, padding rows point at UNK
    mask: np.ndarray  # (B, m) 1.0 for real nodes
    inv_n: np.ndarray  # (B,) 1/n_nodes, 0.0 for empty graphs

    @classmethod
    def from_graphs(cls, graphs, vocab: Vocabulary) -> "GraphBatch":
        b = len(graphs)
        m = max((g.n_nodes for g in graphs), default=0)
        m = max(m, 1)
        a_hat = np.zeros((b, m, m))
        node_idx = np.zeros((b, m), dtype=np.int64)
        mask = np.zeros((b, m))
        inv_n = np.zeros(b)
        for k, g in enumerate(graphs):
            n = g.n_nodes
            if n == 0:
                continue
            a_hat[k, :n, :n] = normalized_adjacency(g)
            node_idx[k, :n] = vocab.indices(g.node_labels)
            mask[k, :n] = 1.0
            inv_n[k] = 1.0 / n
        return cls(a_hat=a_hat, node_idx=node_idx, mask=mask, inv_n=inv_n)

    def take(self, rows: np.ndarray) -> "GraphBatch":
        return GraphBatch(
            a_hat=self.a_hat[rows],
            node_idx=self.node_idx[rows],
            mask=self.mask[rows],
            inv_n=self.inv_n[rows],
        )


def encode_batch(batch: GraphBatch, params: GraphEncoderParams) -> tuple[np.ndarray, dict]:
    """Encode a padded batch; returns (B, d_g) plus a cache for the backward
    pass. Matches graph_encode per row (empty graphs give zero rows)."""
    x = params.embedding_table[batch.node_idx] * batch.mask[:, :, None]
    ax = batch.a_hat @ x
    h = np.tanh(ax @ params.weight)
    h = h * batch.mask[:, :, None]
    enc = h.sum(axis=1) * batch.inv_n[:, None]
    return enc, {"ax": ax, "h": h}


def encode_batch_backward(
    batch: GraphBatch,
    params: GraphEncoderParams,
    cache: dict,
    upstream: np.ndarray,
) -> GraphEncoderGrads:
    """Gradients of sum_k upstream[k] . encode(graph_k) w.r.t. params."""
    ax, h = cache["ax"], cache["h"]
    d_h = upstream[:, None, :] * (batch.inv_n[:, None] * batch.mask)[:, :, None]
    d_pre = d_h * (1.0 - h * h)
    weight_grad = np.einsum("bmi,bmj->ij", ax, d_pre)
    d_x = np.einsum("bnm,bmj->bnj", np.transpose(batch.a_hat, (0, 2, 1)), d_pre)
    d_x = d_x @ params.weight.T
    d_x = d_x * batch.mask[:, :, None]
    table_grad = np.zeros_like(params.embedding_table)
    np.add.at(table_grad, batch.node_idx.reshape(-1), d_x.reshape(-1, params.d_in))
    return GraphEncoderGrads(embedding_table=table_grad, weight=weight_grad)


# -- file format -------------------------------------------------------------


def load_scene_graph_file(path, min_score: float | None = None) -> dict[str, SceneGraph]:
    """Read scene-graph JSON Lines ({"frame_id", "triplets": [...]}) into
    per-frame graphs."""
    graphs: dict[str, SceneGraph] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            try:
                frame_id = obj["frame_id"]
                triplets = [
                    Triplet(
                        subject=t["subject"],
                        predicate=t["predicate"],
                        object=t["object"],
                        score=t.get("score"),
                    )
                    for t in obj["triplets"]
                ]
            except KeyError as exc:
                raise ValueError(f"scene-graph line {line_no}: missing key {exc}") from None
            graphs[frame_id] = triplets_to_graph(triplets, min_score=min_score)
    return graphs


def write_scene_graph_file(path, frame_triplets: dict[str, list[Triplet]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for frame_id, triplets in frame_triplets.items():
            obj = {
                "frame_id": frame_id,
                "triplets": [
                    {
                        "subject": t.subject,
                        "predicate": t.predicate,
                        "object": t.object,
                        **({"score": t.score} if t.score is not None else {}),
                    }
                    for t in triplets
                ],
            }
            fh.write(json.dumps(obj, separators=(", ", ": ")) + "\n")
