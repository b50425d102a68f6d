"""Experiment protocol model: groups, condition orders, counterbalancing.

Every participant views the original artwork plus exactly one interpretive
modality (immersive projection or display video) determined by their group;
the two possible presentation orders are balanced within and across groups.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Sequence

from .labels import ConditionLabel, Modality

GROUP_IMMERSIVE = "ImmersiveGroup"
GROUP_DISPLAY = "DisplayGroup"

GROUP_MODALITY = {
    GROUP_IMMERSIVE: Modality.IMMERSIVE_PROJECTION,
    GROUP_DISPLAY: Modality.DISPLAY_VIDEO,
}


@dataclass(frozen=True)
class GroupAssignment:
    participant_id: str
    group: str
    order: tuple[Modality, Modality]  # presentation order

    @property
    def interpretive_modality(self) -> Modality:
        return GROUP_MODALITY[self.group]


@dataclass
class CounterbalanceResult:
    assignments: list[GroupAssignment]
    order_counts: dict[str, list[int]]  # group -> [count(artwork first), count(interpretive first)]
    balanced: bool


def counterbalance(participants: Sequence[str], seed: int) -> CounterbalanceResult:
    """Assign groups and alternate the two presentation orders.

    Deterministic for a given seed. Groups alternate over the shuffled
    participant list; order alternation starts on opposite phases in the
    two groups so the order totals balance across the whole cohort. Odd
    counts leave a ±1 imbalance, flagged in the result.
    """
    ids = list(participants)
    rng = random.Random(seed)
    rng.shuffle(ids)
    groups = (GROUP_IMMERSIVE, GROUP_DISPLAY)
    assignments = []
    counts = {g: [0, 0] for g in groups}
    per_group_seen = {g: 0 for g in groups}
    for i, pid in enumerate(ids):
        group = groups[i % 2]
        order_index = (per_group_seen[group] + (i % 2)) % 2
        per_group_seen[group] += 1
        interp = GROUP_MODALITY[group]
        order = (
            (Modality.ORIGINAL_ARTWORK, interp)
            if order_index == 0
            else (interp, Modality.ORIGINAL_ARTWORK)
        )
        counts[group][order_index] += 1
        assignments.append(GroupAssignment(pid, group, order))
    balanced = all(c[0] == c[1] for c in counts.values())
    return CounterbalanceResult(
        assignments=assignments, order_counts=counts, balanced=balanced
    )


def condition_plan_for(assignment: GroupAssignment, blocks: int = 1) -> list:
    """The ordered condition labels one participant runs through."""
    plan = []
    for modality in assignment.order:
        for b in range(1, blocks + 1):
            plan.append(ConditionLabel(modality, b))
    return plan
