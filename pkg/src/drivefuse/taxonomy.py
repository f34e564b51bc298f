"""The 18-class driver-activity taxonomy and label normalization.

Annotation files spell the same activity many ways (case, stray spaces,
punctuation, alternate phrasings). Every label is reduced to a canonical
snake_case key; a shipped synonym table covers phrasing variants. Unknown
labels always raise instead of fuzzy-matching.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources

from .errors import UnknownLabel

N_CLASSES = 18


@dataclass(frozen=True)
class ActivityClass:
    index: int  # 1-based
    canonical_name: str


# Display name, canonical key. Order defines class indices 1..18.
_CLASS_TABLE = (
    ("Normal forward driving", "normal_forward_driving"),
    ("Drinking", "drinking"),
    ("Phone call (right)", "phone_call_right"),
    ("Phone call (left)", "phone_call_left"),
    ("Eating", "eating"),
    ("Texting (right)", "texting_right"),
    ("Texting (left)", "texting_left"),
    ("Hair / makeup", "hair_makeup"),
    ("Reaching behind", "reaching_behind"),
    ("Adjusting control panel", "adjusting_control_panel"),
    ("Picking up from floor (driver)", "picking_up_from_floor_driver"),
    ("Picking up from floor (passenger)", "picking_up_from_floor_passenger"),
    ("Talking to passenger at the right", "talking_to_passenger_at_the_right"),
    ("Talking to passenger at backseat", "talking_to_passenger_at_backseat"),
    ("Yawning", "yawning"),
    ("Hand on head", "hand_on_head"),
    ("Singing with music", "singing_with_music"),
    ("Shaking or dancing with music", "shaking_or_dancing_with_music"),
)

CLASSES: tuple[ActivityClass, ...] = tuple(
    ActivityClass(index=i + 1, canonical_name=key) for i, (_, key) in enumerate(_CLASS_TABLE)
)

DISPLAY_NAMES: dict[int, str] = {
    i + 1: display for i, (display, _) in enumerate(_CLASS_TABLE)
}

_BY_NAME = {c.canonical_name: c for c in CLASSES}
_BY_INDEX = {c.index: c for c in CLASSES}


def class_by_index(index: int) -> ActivityClass:
    return _BY_INDEX[index]


def class_index_to_row(index: int) -> int:
    """External 1-based class index -> internal 0-based row. The only place
    this conversion happens."""
    return index - 1


def row_to_class_index(row: int) -> int:
    """Inverse of class_index_to_row."""
    return row + 1


def _canonical_key(raw: str) -> str:
    """Reduce a raw label to its lookup key: lowercase, trimmed, punctuation
    stripped (parenthesized qualifiers keep their content as a suffix word),
    whitespace collapsed, words joined by underscores."""
    s = raw.lower().strip()
    s = s.replace("(", " ").replace(")", " ")
    s = re.sub(r"[^a-z0-9]+", " ", s)
    s = re.sub(r"\s+", " ", s).strip()
    return s.replace(" ", "_")


def _load_synonyms() -> dict[str, str]:
    text = resources.files("drivefuse.data").joinpath("label_synonyms.json").read_text("utf-8")
    table = json.loads(text)
    out = {}
    for variant, canonical in table.items():
        if canonical not in _BY_NAME:
            raise ValueError(f"synonym table maps {variant!r} to unknown class {canonical!r}")
        out[_canonical_key(variant)] = canonical
    return out


_SYNONYMS = _load_synonyms()


def normalize_label(raw: str, row: int | None = None) -> ActivityClass:
    """Map a raw annotation label to its ActivityClass.

    Raises UnknownLabel (carrying the optional row number) when the label
    does not resolve; corrupt rows are reported, never silently dropped.
    """
    if not raw or not raw.strip():
        raise UnknownLabel(raw, row=row)
    key = _canonical_key(raw)
    if key in _BY_NAME:
        return _BY_NAME[key]
    if key in _SYNONYMS:
        return _BY_NAME[_SYNONYMS[key]]
    raise UnknownLabel(raw, row=row)
