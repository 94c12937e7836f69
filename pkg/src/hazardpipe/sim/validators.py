"""Synthetic validator population and vote behavior.

Vote correctness uses common random numbers: the uniform draw for a
(detection, slot) pair is independent of the accuracy values, so raising the
population accuracy can only flip votes from wrong to right.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..consensus import ValidatorProfile, Verdict
from .scenario import ScenarioParams


@dataclass
class PlannedVote:
    validator_id: str
    correct: bool
    adjust: bool
    delay_h: float


class ValidatorPool:
    def __init__(self, params: ScenarioParams):
        self.params = params
        rng = np.random.default_rng((params.seed, 0xC0FFEE))
        self.accuracy: dict[str, float] = {}
        self.profiles: list[ValidatorProfile] = []
        for i in range(params.n_validators):
            vid = f"val-{i:04d}"
            acc = float(np.clip(rng.normal(params.accuracy_mean, params.accuracy_sd), 0.02, 0.995))
            self.accuracy[vid] = acc
            self.profiles.append(ValidatorProfile(id=vid))
        self.experts = [
            ValidatorProfile(id=f"exp-{i:02d}", expert=True) for i in range(params.n_experts)
        ]
        self._vote_rng = np.random.default_rng((params.seed, 0x507E5))
        self._cursor = 0
        self._expert_cursor = 0

    def panel_for(
        self, detection_id: str, exclude: set[str], size: int = 3
    ) -> list[str]:
        """Next `size` eligible validators in rotation; never the submitter."""
        panel: list[str] = []
        n = len(self.profiles)
        scanned = 0
        while len(panel) < size and scanned < 2 * n:
            profile = self.profiles[self._cursor % n]
            self._cursor += 1
            scanned += 1
            if profile.id in exclude or profile.id in panel:
                continue
            panel.append(profile.id)
        return panel

    def next_expert(self) -> str:
        expert = self.experts[self._expert_cursor % len(self.experts)]
        self._expert_cursor += 1
        return expert.id

    def plan_votes(self, panel: list[str], is_true_positive: bool) -> list[PlannedVote]:
        """One vote per panel member; correct with that member's accuracy."""
        votes = []
        for vid in panel:
            u = float(self._vote_rng.random())
            correct = u < self.accuracy[vid]
            adjust = (
                is_true_positive
                and correct
                and float(self._vote_rng.random()) < self.params.adjust_probability
            )
            delay = float(self._vote_rng.exponential(self.params.vote_delay_mean_h))
            votes.append(PlannedVote(validator_id=vid, correct=correct, adjust=adjust, delay_h=delay))
        return votes

    def expert_delay_h(self) -> float:
        return float(self._vote_rng.exponential(self.params.expert_delay_mean_h))

    @staticmethod
    def verdict_for(vote: PlannedVote, is_true_positive: bool) -> Verdict:
        if vote.correct:
            if is_true_positive:
                return Verdict.ADJUST if vote.adjust else Verdict.CONFIRM
            return Verdict.REJECT
        return Verdict.REJECT if is_true_positive else Verdict.CONFIRM
