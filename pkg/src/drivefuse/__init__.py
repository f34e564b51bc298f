"""Knowledge-infused distracted-driver frame classification.

Fuses a precomputed image embedding, a GCN-encoded scene graph, and
engineered pose features into an 18-way activity classifier, with an
ablation harness comparing the three fusion stages (M1 image only, M2
image+graph, M3 image+graph+pose).
"""

from .fusion_model import MethodVariant
from .taxonomy import CLASSES, N_CLASSES, normalize_label

__all__ = ["CLASSES", "MethodVariant", "N_CLASSES", "normalize_label"]
__version__ = "0.1.0"
