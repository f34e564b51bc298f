"""Late-fusion classifier: branch concatenation, MLP head, loss, gradients.

Branch vectors concatenate in fixed order image | graph | pose (subset per
method variant) and feed a feed-forward head ending in an 18-unit layer.
Probabilities always go through max-subtracted softmax and losses through
log-sum-exp, so nothing overflows. The image and pose branches are frozen by
contract; only the head and the graph encoder ever receive updates.

Checkpoints are a single versioned file: a JSON header (config echo, seed,
vocabulary, section table) followed by the parameter tensors as little-endian
float32. Saving a loaded checkpoint reproduces it byte for byte.
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import BranchMismatch, DimensionMismatch
from .scene_graph import GraphEncoderParams, Vocabulary
from .taxonomy import N_CLASSES, class_index_to_row, row_to_class_index

DEFAULT_HIDDEN_WIDTHS = (512,)

_CHECKPOINT_MAGIC = b"DFCKPT01"

BRANCH_ORDER = ("image", "graph", "pose")


class MethodVariant(enum.Enum):
    M1 = ("image",)
    M2 = ("image", "graph")
    M3 = ("image", "graph", "pose")

    @property
    def active_branches(self) -> tuple[str, ...]:
        return self.value

    def uses(self, branch: str) -> bool:
        return branch in self.value

    @classmethod
    def parse(cls, name: str) -> "MethodVariant":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown method variant {name!r} (expected M1, M2, or M3)") from None


@dataclass(frozen=True)
class FusedRepresentation:
    vector: np.ndarray
    branch_slices: dict[str, tuple[int, int]]  # branch -> (offset, length)


@dataclass(frozen=True)
class ProbabilityVector:
    p: np.ndarray  # shape (18,)
    logits: np.ndarray | None = None


@dataclass(frozen=True)
class Prediction:
    class_index: int  # 1-based
    probabilities: ProbabilityVector


def fuse(
    image: np.ndarray | None,
    graph: np.ndarray | None,
    pose: np.ndarray | None,
    variant: MethodVariant,
) -> FusedRepresentation:
    """Concatenate exactly the branches the variant requires, in fixed order."""
    provided = {"image": image, "graph": graph, "pose": pose}
    parts = []
    slices = {}
    offset = 0
    for branch in BRANCH_ORDER:
        vec = provided[branch]
        if variant.uses(branch):
            if vec is None:
                raise BranchMismatch(f"variant {variant.name} requires the {branch} branch")
            vec = np.asarray(vec, dtype=np.float64).ravel()
            slices[branch] = (offset, vec.size)
            offset += vec.size
            parts.append(vec)
        elif vec is not None:
            raise BranchMismatch(f"variant {variant.name} does not take a {branch} branch")
    return FusedRepresentation(vector=np.concatenate(parts), branch_slices=slices)


@dataclass
class ClassifierParams:
    weights: list[np.ndarray]  # layer l: (d_l, d_{l+1})
    biases: list[np.ndarray]

    @classmethod
    def init(
        cls,
        input_dim: int,
        rng: np.random.Generator,
        hidden_widths: tuple[int, ...] = DEFAULT_HIDDEN_WIDTHS,
        n_classes: int = N_CLASSES,
    ) -> "ClassifierParams":
        """Uniform fan-in initialization: W ~ U[-1/sqrt(d_in), 1/sqrt(d_in)],
        zero biases."""
        dims = [input_dim, *hidden_widths, n_classes]
        weights, biases = [], []
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / np.sqrt(d_in)
            weights.append(rng.uniform(-bound, bound, size=(d_in, d_out)))
            biases.append(np.zeros(d_out))
        return cls(weights=weights, biases=biases)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_layers(self) -> int:
        return len(self.weights)


@dataclass
class ClassifierGrads:
    weights: list[np.ndarray]
    biases: list[np.ndarray]


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax along the last axis."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def forward_batch(x: np.ndarray, params: ClassifierParams) -> tuple[np.ndarray, list[np.ndarray]]:
    """Logits for a (B, D) batch plus the per-layer activations needed by the
    backward pass. Hidden layers use tanh; the final layer is linear."""
    if x.shape[-1] != params.input_dim:
        raise DimensionMismatch(
            f"input dim {x.shape[-1]} does not match classifier input {params.input_dim}"
        )
    activations = [x]
    h = x
    for layer, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if layer < params.n_layers - 1:
            h = np.tanh(h)
        activations.append(h)
    return h, activations


def forward(x, params: ClassifierParams) -> ProbabilityVector:
    """Class distribution for a single fused representation."""
    vec = x.vector if isinstance(x, FusedRepresentation) else np.asarray(x, dtype=np.float64)
    logits, _ = forward_batch(vec[None, :], params)
    logits = logits[0]
    return ProbabilityVector(p=softmax(logits), logits=logits)


def predict(pv: ProbabilityVector) -> Prediction:
    """1-based argmax; ties resolve to the lowest class index."""
    row = int(np.argmax(pv.p))
    return Prediction(class_index=row_to_class_index(row), probabilities=pv)


def cross_entropy(pv: ProbabilityVector, true_class: int) -> float:
    """-log p_true. Computed from logits via log-sum-exp whenever the
    distribution still carries them."""
    row = class_index_to_row(true_class)
    if pv.logits is not None:
        z = pv.logits
        m = z.max()
        return float(m + np.log(np.exp(z - m).sum()) - z[row])
    return float(-np.log(pv.p[row]))


def cross_entropy_batch(logits: np.ndarray, true_rows: np.ndarray) -> np.ndarray:
    """Per-sample losses from a (B, 18) logit matrix, log-sum-exp form."""
    m = logits.max(axis=1)
    lse = m + np.log(np.exp(logits - m[:, None]).sum(axis=1))
    return lse - logits[np.arange(logits.shape[0]), true_rows]


def backward_batch(
    params: ClassifierParams,
    activations: list[np.ndarray],
    d_logits: np.ndarray,
) -> tuple[ClassifierGrads, np.ndarray]:
    """Backprop given d(loss)/d(logits); returns parameter grads and
    d(loss)/d(input)."""
    w_grads = [np.zeros_like(w) for w in params.weights]
    b_grads = [np.zeros_like(b) for b in params.biases]
    delta = d_logits
    for layer in range(params.n_layers - 1, -1, -1):
        w_grads[layer] = activations[layer].T @ delta
        b_grads[layer] = delta.sum(axis=0)
        delta = delta @ params.weights[layer].T
        if layer > 0:
            # activations[layer] is the tanh output feeding this layer
            delta = delta * (1.0 - activations[layer] ** 2)
    return ClassifierGrads(weights=w_grads, biases=b_grads), delta


def backward(
    x, params: ClassifierParams, true_class: int
) -> tuple[ClassifierGrads, np.ndarray]:
    """Exact gradients of cross_entropy(forward(x), true_class) w.r.t. all
    classifier parameters and the input vector. Callers slice the input
    gradient with branch_slices to chain into the graph encoder; image and
    pose slices are produced but never applied to anything trainable."""
    vec = x.vector if isinstance(x, FusedRepresentation) else np.asarray(x, dtype=np.float64)
    logits, activations = forward_batch(vec[None, :], params)
    d_logits = softmax(logits)
    d_logits[0, class_index_to_row(true_class)] -= 1.0
    grads, d_x = backward_batch(params, activations, d_logits)
    return grads, d_x[0]


@dataclass
class FusionClassifier:
    """The assembled pipeline model for one method variant."""

    variant: MethodVariant
    classifier: ClassifierParams
    graph_encoder: GraphEncoderParams | None = None
    vocabulary: Vocabulary | None = None
    config: dict = field(default_factory=dict)
    seed: int = 0

    def input_dim(self) -> int:
        return self.classifier.input_dim


def trainable_parameters(model: FusionClassifier) -> dict[str, np.ndarray]:
    """Exactly the classifier head plus, when the variant has a graph branch,
    the graph-encoder parameters. Frozen branch state never appears here."""
    out: dict[str, np.ndarray] = {}
    for layer, (w, b) in enumerate(zip(model.classifier.weights, model.classifier.biases)):
        out[f"classifier.weight_{layer}"] = w
        out[f"classifier.bias_{layer}"] = b
    if model.variant.uses("graph"):
        if model.graph_encoder is None:
            raise BranchMismatch(f"variant {model.variant.name} requires a graph encoder")
        out["graph_encoder.embedding_table"] = model.graph_encoder.embedding_table
        out["graph_encoder.weight"] = model.graph_encoder.weight
    return out


# -- checkpoint format -------------------------------------------------------


def save_checkpoint(model: FusionClassifier, path) -> None:
    sections = []
    payload = bytearray()
    for name, tensor in trainable_parameters(model).items():
        data = np.ascontiguousarray(tensor, dtype="<f4")
        sections.append({"name": name, "shape": list(data.shape)})
        payload.extend(data.tobytes())

    header = {
        "format_version": 1,
        "variant": model.variant.name,
        "seed": model.seed,
        "config": model.config,
        "vocabulary": model.vocabulary.to_dict() if model.vocabulary else None,
        "sections": sections,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(bytes(payload))


def load_checkpoint(path) -> FusionClassifier:
    with open(path, "rb") as fh:
        magic = fh.read(len(_CHECKPOINT_MAGIC))
        if magic != _CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if header.get("format_version") != 1:
            raise ValueError(f"unsupported checkpoint version {header.get('format_version')}")
        tensors = {}
        for section in header["sections"]:
            shape = tuple(section["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(count * 4), dtype="<f4").reshape(shape)
            tensors[section["name"]] = data.astype(np.float64)

    n_layers = sum(1 for name in tensors if name.startswith("classifier.weight_"))
    classifier = ClassifierParams(
        weights=[tensors[f"classifier.weight_{i}"] for i in range(n_layers)],
        biases=[tensors[f"classifier.bias_{i}"] for i in range(n_layers)],
    )
    graph_encoder = None
    if "graph_encoder.weight" in tensors:
        graph_encoder = GraphEncoderParams(
            embedding_table=tensors["graph_encoder.embedding_table"],
            weight=tensors["graph_encoder.weight"],
        )
    vocabulary = Vocabulary.from_dict(header["vocabulary"]) if header["vocabulary"] else None
    return FusionClassifier(
        variant=MethodVariant.parse(header["variant"]),
        classifier=classifier,
        graph_encoder=graph_encoder,
        vocabulary=vocabulary,
        config=header["config"],
        seed=header["seed"],
    )
