"""Condition and baseline labels for recorded segments."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Union


class Modality(str, Enum):
    ORIGINAL_ARTWORK = "OriginalArtwork"
    IMMERSIVE_PROJECTION = "ImmersiveProjection"
    DISPLAY_VIDEO = "DisplayVideo"


class Posture(str, Enum):
    STANDING = "standing"
    SEATED = "seated"


class Baseline(str, Enum):
    EO = "EO"
    EC = "EC"


def posture_for(modality: Modality) -> Posture:
    """Original-artwork viewing happens standing; interpretive content seated."""
    if modality is Modality.ORIGINAL_ARTWORK:
        return Posture.STANDING
    return Posture.SEATED


@dataclass(frozen=True)
class ConditionLabel:
    modality: Modality
    block: int = 1
    posture: Posture = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.block not in (1, 2, 3):
            raise ValueError(f"block must be 1, 2 or 3, got {self.block}")
        expected = posture_for(self.modality)
        if self.posture is None:
            object.__setattr__(self, "posture", expected)
        elif self.posture is not expected:
            raise ValueError(
                f"{self.modality.value} requires posture {expected.value}, "
                f"got {self.posture.value}"
            )

    def __str__(self) -> str:
        return f"{self.modality.value}/{self.block}"


Label = Union[ConditionLabel, Baseline]


def parse_label(text: str) -> Label:
    """Parse the string form used in event rows and CSV exports.

    Condition labels read "Modality/block" (e.g. "ImmersiveProjection/2");
    baselines are plain "EO" / "EC".
    """
    if text in (Baseline.EO.value, Baseline.EC.value):
        return Baseline(text)
    if "/" in text:
        name, _, block = text.partition("/")
        return ConditionLabel(Modality(name), int(block))
    return ConditionLabel(Modality(text))


def label_to_str(label: Label) -> str:
    if isinstance(label, Baseline):
        return label.value
    return str(label)
