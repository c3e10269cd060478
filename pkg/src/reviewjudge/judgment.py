"""Scoring rubric, binarization and the multi-strategy ensemble rule."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

from .provider import Usage
from .strategies import StrategyKind

MIN_SCORE = 0
MAX_SCORE = 4
DEFAULT_THRESHOLD = 1

# Rubric labels, indexed by alignment score.
SCORE_LABELS = (
    "Fully aligned",
    "Mostly aligned",
    "Partially aligned",
    "Mostly misaligned",
    "Completely misaligned",
)


class InvalidThreshold(ValueError):
    pass


class InvalidScore(ValueError):
    pass


class TooFewMembers(ValueError):
    pass


def check_score(score: int) -> int:
    if isinstance(score, bool) or not isinstance(score, int) or not MIN_SCORE <= score <= MAX_SCORE:
        raise InvalidScore(f"alignment score must be an integer in [0, 4], got {score!r}")
    return score


def check_threshold(threshold: int) -> int:
    if isinstance(threshold, bool) or not isinstance(threshold, int) or not 1 <= threshold <= MAX_SCORE:
        raise InvalidThreshold(f"threshold must be an integer in [1, 4], got {threshold!r}")
    return threshold


@dataclass(frozen=True)
class Claim:
    """A claim as reported by the judge's evidence mapping; never inferred locally."""

    text: str
    mapped_evidence: str | None = None
    supported: bool | None = None


@dataclass(frozen=True)
class Assessment:
    score: int
    explanation: str
    strategy: StrategyKind
    model: str
    usage: Usage
    raw_response: str
    extras: Mapping[str, str] = field(default_factory=dict)
    claims: tuple[Claim, ...] = ()
    attempts: int = 1

    def __post_init__(self):
        check_score(self.score)
        if not self.explanation.strip():
            raise ValueError("assessment explanation must be non-empty")


@dataclass(frozen=True)
class Verdict:
    hallucinated: bool
    score: int
    threshold: int


@dataclass(frozen=True)
class EnsembleVerdict:
    members: tuple[Verdict, ...]
    mean_indicator: Fraction
    hallucinated: bool

    @property
    def score(self) -> int:
        """Highest member score, used where a single number is displayed."""
        return max(v.score for v in self.members)

    @property
    def threshold(self) -> int:
        return self.members[0].threshold


def binarize(score: int, threshold: int = DEFAULT_THRESHOLD) -> Verdict:
    check_score(score)
    check_threshold(threshold)
    return Verdict(hallucinated=score >= threshold, score=score, threshold=threshold)


def ensemble(
    assessments: Sequence[Assessment | int], threshold: int = DEFAULT_THRESHOLD
) -> EnsembleVerdict:
    """Majority vote over per-strategy verdicts.

    A comment is hallucinated when at least half of the members flag it,
    so two of four strategies suffice.  Members may be given as
    :class:`Assessment` objects or bare scores.
    """
    if len(assessments) < 2:
        raise TooFewMembers(f"ensemble needs at least 2 members, got {len(assessments)}")
    scores = [a.score if isinstance(a, Assessment) else a for a in assessments]
    members = tuple(binarize(s, threshold) for s in scores)
    flagged = sum(v.hallucinated for v in members)
    mean = Fraction(flagged, len(members))
    return EnsembleVerdict(members=members, mean_indicator=mean, hallucinated=2 * flagged >= len(members))
