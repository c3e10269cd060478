"""Judge one (diff, comment) pair: prompt, complete, extract, binarize."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

from .cost import CostRecord, PricingTable, estimate_cost
from .diff import CodeDiff, ReviewComment
from .extraction import ExtractionError, extract_assessment
from .judgment import Assessment, Claim, EnsembleVerdict, Verdict, binarize, ensemble
from .provider import CompletionRequest, Gateway, ModelSpec, Usage
from .strategies import (
    REASK_REMINDER,
    FewShotCatalog,
    StrategyKind,
    build_system_prompt,
    build_user_prompt,
    expected_response_schema,
)


class Unjudgeable(Exception):
    """The judge's output stayed unparseable after the re-ask."""

    def __init__(self, reason: str, raw_response: str = ""):
        self.reason = reason
        self.raw_response = raw_response
        super().__init__(reason)


@dataclass(frozen=True)
class Judgement:
    assessments: tuple[Assessment, ...]
    verdict: Verdict | EnsembleVerdict
    cost: CostRecord

    @property
    def hallucinated(self) -> bool:
        return self.verdict.hallucinated

    @property
    def usage(self) -> Usage:
        return self.cost.usage

    @property
    def explanation(self) -> str:
        if len(self.assessments) == 1:
            return self.assessments[0].explanation
        return "\n".join(f"[{a.strategy.value}] {a.explanation}" for a in self.assessments)


def _stringify(value) -> str:
    return value if isinstance(value, str) else json.dumps(value, ensure_ascii=False, sort_keys=True)


def _claims(extras: dict) -> tuple[Claim, ...]:
    mapping = extras.get("evidence_map")
    if not isinstance(mapping, list):
        return ()
    claims = []
    for item in mapping:
        if isinstance(item, dict) and isinstance(item.get("claim"), str):
            supported = item.get("supported")
            evidence = item.get("evidence")
            claims.append(
                Claim(
                    item["claim"],
                    _stringify(evidence) if evidence is not None else None,
                    supported if isinstance(supported, bool) else None,
                )
            )
    return tuple(claims)


class Judge:
    def __init__(
        self,
        gateway: Gateway,
        model: ModelSpec,
        pricing: PricingTable | None = None,
        catalog: FewShotCatalog | None = None,
        temperature: float = 0.0,
        max_output_tokens: int = 4096,
    ):
        self.gateway = gateway
        self.model = model
        self.pricing = pricing or PricingTable.default()
        self.catalog = catalog
        self.temperature = temperature
        self.max_output_tokens = max_output_tokens
        # Fail early on an unpriced model rather than after spending tokens.
        self.pricing[model.pricing_key]

    def assess(self, diff: CodeDiff, comment: ReviewComment, kind: StrategyKind) -> Assessment:
        system = build_system_prompt(kind, self.catalog)
        user = build_user_prompt(diff, comment)
        schema = expected_response_schema(kind)
        usage: Usage | None = None
        last_error: ExtractionError | None = None
        text = ""
        for attempt in (1, 2):
            prompt = user if attempt == 1 else f"{user}\n\n{REASK_REMINDER}"
            resp = self.gateway.complete(
                self.model, CompletionRequest(system, prompt, self.temperature, self.max_output_tokens)
            )
            usage = resp.usage if usage is None else usage + resp.usage
            text = resp.text
            try:
                got = extract_assessment(text, schema)
            except ExtractionError as exc:
                last_error = exc
                continue
            return Assessment(
                score=got.answer,
                explanation=got.explanation,
                strategy=kind,
                model=self.model.model_name,
                usage=usage,
                raw_response=text,
                extras={k: _stringify(v) for k, v in got.extras.items()},
                claims=_claims(got.extras),
                attempts=attempt,
            )
        raise Unjudgeable(f"{type(last_error).__name__}: {last_error}", text)

    def judge(
        self,
        diff: CodeDiff,
        comment: ReviewComment,
        strategies: Sequence[StrategyKind],
        threshold: int = 1,
    ) -> Judgement:
        if not strategies:
            raise ValueError("at least one strategy is required")
        assessments = tuple(self.assess(diff, comment, k) for k in strategies)
        if len(assessments) == 1:
            verdict: Verdict | EnsembleVerdict = binarize(assessments[0].score, threshold)
        else:
            verdict = ensemble(assessments, threshold)
        usage = assessments[0].usage
        for a in assessments[1:]:
            usage = usage + a.usage
        strategy_name = "ensemble" if len(strategies) > 1 else strategies[0].value
        cost = estimate_cost(
            usage, self.model.pricing_key, self.pricing, strategy=strategy_name, model=self.model.model_name
        )
        return Judgement(assessments, verdict, cost)

