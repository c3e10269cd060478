"""Gating decisions for comments on their way to developers."""
from __future__ import annotations

import enum
from dataclasses import dataclass

from .cost import CostRecord, format_usd
from .diff import CodeDiff, ReviewComment
from .judgment import EnsembleVerdict, Verdict, check_threshold
from .pipeline import Judge, Judgement
from .provider import ModelSpec
from .strategies import ALL_STRATEGIES, StrategyKind


class GateMode(enum.Enum):
    BLOCK = "block"
    ANNOTATE = "annotate"
    DRY_RUN = "dry-run"


def parse_strategy_set(name: str) -> tuple[StrategyKind, ...]:
    if name.strip().lower() == "ensemble":
        return ALL_STRATEGIES
    return (StrategyKind.parse(name),)


@dataclass(frozen=True)
class GateConfig:
    strategy_set: tuple[StrategyKind, ...]
    model: ModelSpec
    threshold: int = 1
    mode: GateMode = GateMode.BLOCK

    def __post_init__(self):
        check_threshold(self.threshold)
        if not self.strategy_set:
            raise ValueError("strategy_set must not be empty")


@dataclass(frozen=True)
class GateDecision:
    allow: bool
    verdict: Verdict | EnsembleVerdict
    explanation: str
    cost: CostRecord
    judgement: Judgement
    mode: GateMode

    def to_dict(self) -> dict:
        j = self.judgement
        body = {
            "score": self.verdict.score,
            "hallucinated": self.verdict.hallucinated,
            "allow": self.allow,
            "explanation": self.explanation,
            "usage": {"input_tokens": j.usage.input_tokens, "output_tokens": j.usage.output_tokens},
            "cost_usd": float(self.cost.cost_usd),
            "cost_usd_exact": format_usd(self.cost.cost_usd),
            "mode": self.mode.value,
            "threshold": self.verdict.threshold,
            "strategies": [a.strategy.value for a in j.assessments],
        }
        if isinstance(self.verdict, EnsembleVerdict):
            body["scores"] = {a.strategy.value: a.score for a in j.assessments}
            body["mean_indicator"] = float(self.verdict.mean_indicator)
        return body


def decide(judgement: Judgement, mode: GateMode) -> GateDecision:
    # Only Block ever suppresses; Annotate and DryRun pass everything with the verdict attached.
    allow = not judgement.hallucinated if mode is GateMode.BLOCK else True
    return GateDecision(allow, judgement.verdict, judgement.explanation, judgement.cost, judgement, mode)


def gate(
    judge: Judge,
    config: GateConfig,
    diff: CodeDiff,
    comment: ReviewComment,
    strategy_set: tuple[StrategyKind, ...] | None = None,
    threshold: int | None = None,
) -> GateDecision:
    judgement = judge.judge(
        diff,
        comment,
        strategy_set or config.strategy_set,
        config.threshold if threshold is None else threshold,
    )
    return decide(judgement, config.mode)
