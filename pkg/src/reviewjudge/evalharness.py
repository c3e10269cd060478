"""Datasets, metrics and the evaluation runner.

All metrics are exact rationals (``fractions.Fraction``).  A metric whose
denominator is zero is ``None`` and is reported as ``"undefined"``.
"""
from __future__ import annotations

import enum
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .cost import aggregate_cost, format_usd
from .diff import ChangeType, CodeDiff, LanguageTag, MalformedDiff, ReviewComment, parse_unified_diff
from .judgment import check_threshold
from .pipeline import Judge, Judgement, Unjudgeable
from .provider import ProviderError
from .strategies import StrategyKind

logger = logging.getLogger(__name__)

UNDEFINED = "undefined"


class KeyMismatch(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class EmptyInput(ValueError):
    pass


class DatasetError(ValueError):
    def __init__(self, message: str, line_number: int | None = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


# -- Metrics ------------------------------------------------------------------


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


def compute_confusion(verdicts: Mapping[str, bool], labels: Mapping[str, bool]) -> ConfusionMatrix:
    if set(verdicts) != set(labels):
        missing = sorted(set(verdicts) ^ set(labels))
        raise KeyMismatch(f"verdict and label ids differ: {missing[:5]}")
    tp = fp = fn = tn = 0
    for key, predicted in verdicts.items():
        actual = labels[key]
        if predicted and actual:
            tp += 1
        elif predicted:
            fp += 1
        elif actual:
            fn += 1
        else:
            tn += 1
    return ConfusionMatrix(tp, fp, fn, tn)


def _ratio(num: int, den: int) -> Fraction | None:
    return Fraction(num, den) if den else None


def f1_score(precision: Fraction | None, recall: Fraction | None) -> Fraction | None:
    if precision is None or recall is None or precision + recall == 0:
        return None
    return 2 * precision * recall / (precision + recall)


def precision_recall_f1(cm: ConfusionMatrix) -> tuple[Fraction | None, Fraction | None, Fraction | None]:
    p = _ratio(cm.tp, cm.tp + cm.fp)
    r = _ratio(cm.tp, cm.tp + cm.fn)
    return p, r, f1_score(p, r)


@dataclass(frozen=True)
class AlignmentSets:
    non_hallucinated: frozenset[str]
    preferred: frozenset[str]

    def __init__(self, non_hallucinated: Iterable[str], preferred: Iterable[str]):
        object.__setattr__(self, "non_hallucinated", frozenset(non_hallucinated))
        object.__setattr__(self, "preferred", frozenset(preferred))

    @property
    def overlap(self) -> int:
        return len(self.non_hallucinated & self.preferred)


def consistency(sets: AlignmentSets) -> Fraction | None:
    return _ratio(sets.overlap, len(sets.non_hallucinated))


def coverage(sets: AlignmentSets) -> Fraction | None:
    return _ratio(sets.overlap, len(sets.preferred))


def cohen_kappa(labels_a: Sequence[bool], labels_b: Sequence[bool]) -> Fraction | None:
    """Two-rater agreement on binary labels; ``None`` when chance agreement is 1."""
    n = len(labels_a)
    if n != len(labels_b):
        raise LengthMismatch(f"{n} vs {len(labels_b)} labels")
    if n == 0:
        raise EmptyInput("no labels")
    agree = sum(bool(a) == bool(b) for a, b in zip(labels_a, labels_b))
    pos_a = sum(bool(a) for a in labels_a)
    pos_b = sum(bool(b) for b in labels_b)
    p_o = Fraction(agree, n)
    p_e = Fraction(pos_a * pos_b + (n - pos_a) * (n - pos_b), n * n)
    if p_e == 1:
        return None
    return (p_o - p_e) / (1 - p_e)


def metric_json(value: Fraction | None) -> dict | str:
    if value is None:
        return UNDEFINED
    return {"fraction": f"{value.numerator}/{value.denominator}", "value": round(float(value), 6)}


# -- Datasets -----------------------------------------------------------------


class Reaction(enum.Enum):
    THUMBS_UP = "up"
    THUMBS_DOWN = "down"


@dataclass(frozen=True)
class AnnotatedCase:
    case_id: str
    diff: CodeDiff
    comment: ReviewComment
    label_hallucinated: bool
    strata: tuple[LanguageTag, ChangeType]


@dataclass(frozen=True)
class PreferenceCase:
    case_id: str
    diff: CodeDiff
    comment: ReviewComment
    reaction: Reaction


Case = AnnotatedCase | PreferenceCase


@dataclass
class Dataset:
    cases: list[Case]
    excluded_no_signal: int = 0


def _parse_case(record: dict) -> Case | None:
    if not isinstance(record, dict):
        raise ValueError("each line must be a JSON object")
    for key in ("case_id", "diff", "comment"):
        if not isinstance(record.get(key), str) or not record[key].strip():
            raise ValueError(f"field {key!r} must be a non-empty string")
    case_id = record["case_id"]
    try:
        diff = parse_unified_diff(record["diff"])
    except MalformedDiff as exc:
        raise ValueError(f"field 'diff': {exc}") from exc
    comment = ReviewComment(case_id, record["comment"], generator=record.get("generator"))

    if "label" in record and record["label"] is not None:
        label = record["label"]
        if label not in ("hallucinated", "ok"):
            raise ValueError(f"field 'label' must be 'hallucinated' or 'ok', got {label!r}")
        language = LanguageTag.parse(record["language"]) if record.get("language") else diff.language
        if record.get("change_type"):
            try:
                change_type = ChangeType(str(record["change_type"]).capitalize())
            except ValueError:
                raise ValueError("field 'change_type' must be 'Add' or 'Modify'") from None
        else:
            change_type = diff.change_type
        return AnnotatedCase(case_id, diff, comment, label == "hallucinated", (language, change_type))
    if record.get("reaction") is not None:
        try:
            reaction = Reaction(record["reaction"])
        except ValueError:
            raise ValueError(f"field 'reaction' must be 'up' or 'down', got {record['reaction']!r}") from None
        return PreferenceCase(case_id, diff, comment, reaction)
    # No developer signal: excluded from analysis.
    return None


def parse_dataset(lines: Iterable[str]) -> Dataset:
    cases: list[Case] = []
    seen: set[str] = set()
    excluded = 0
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            case = _parse_case(json.loads(line))
        except (json.JSONDecodeError, ValueError) as exc:
            raise DatasetError(str(exc), number) from exc
        if case is None:
            excluded += 1
            continue
        if case.case_id in seen:
            raise DatasetError(f"duplicate case_id {case.case_id!r}", number)
        seen.add(case.case_id)
        cases.append(case)
    if not cases:
        raise DatasetError("no cases")
    return Dataset(cases, excluded)


def load_dataset(path: str | Path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return parse_dataset(fh)


# -- Runner -------------------------------------------------------------------


@dataclass(frozen=True)
class CaseResult:
    case: Case
    judgement: Judgement | None = None
    error: str | None = None


def _stratum_block(cm: ConfusionMatrix) -> dict:
    p, r, f = precision_recall_f1(cm)
    return {
        "confusion": cm.to_dict(),
        "precision": metric_json(p),
        "recall": metric_json(r),
        "f1": metric_json(f),
    }


@dataclass
class EvalReport:
    strategies: tuple[StrategyKind, ...]
    model: str
    threshold: int
    results: list[CaseResult]
    excluded_no_signal: int = 0
    confusion: ConfusionMatrix | None = None
    by_language: dict[str, ConfusionMatrix] = field(default_factory=dict)
    by_change_type: dict[str, ConfusionMatrix] = field(default_factory=dict)
    alignment: AlignmentSets | None = None
    pricing_key: str | None = None

    @property
    def evaluated(self) -> list[CaseResult]:
        return [r for r in self.results if r.judgement is not None]

    @property
    def unjudgeable(self) -> list[CaseResult]:
        return [r for r in self.results if r.judgement is None]

    @property
    def precision_recall_f1(self):
        if self.confusion is None:
            return None, None, None
        return precision_recall_f1(self.confusion)

    @property
    def consistency(self) -> Fraction | None:
        return consistency(self.alignment) if self.alignment is not None else None

    @property
    def coverage(self) -> Fraction | None:
        return coverage(self.alignment) if self.alignment is not None else None

    def to_dict(self) -> dict:
        annotated = sum(isinstance(r.case, AnnotatedCase) for r in self.results)
        report: dict = {
            "config": {
                "strategies": [k.value for k in self.strategies],
                "model": self.model,
                "threshold": self.threshold,
                "pricing_key": self.pricing_key,
            },
            "counts": {
                "dataset": len(self.results),
                "evaluated": len(self.evaluated),
                "unjudgeable": len(self.unjudgeable),
                "annotated": annotated,
                "preference": len(self.results) - annotated,
                "excluded_no_signal": self.excluded_no_signal,
            },
        }
        if self.confusion is not None:
            report["effectiveness"] = _stratum_block(self.confusion)
            report["strata"] = {
                "language": {k: _stratum_block(v) for k, v in sorted(self.by_language.items())},
                "change_type": {k: _stratum_block(v) for k, v in sorted(self.by_change_type.items())},
            }
        else:
            report["effectiveness"] = None
        if self.alignment is not None:
            report["alignment"] = {
                "judged_non_hallucinated": len(self.alignment.non_hallucinated),
                "thumbs_up": len(self.alignment.preferred),
                "both": self.alignment.overlap,
                "consistency": metric_json(self.consistency),
                "coverage": metric_json(self.coverage),
            }
        else:
            report["alignment"] = None
        report["cost"] = aggregate_cost(r.judgement.cost for r in self.evaluated).to_dict()
        report["unjudgeable"] = [{"case_id": r.case.case_id, "reason": r.error} for r in self.unjudgeable]
        report["cases"] = [_case_trace(r) for r in self.results]
        return report

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"

    def render_table(self) -> str:
        def fmt(v: Fraction | None) -> str:
            return UNDEFINED if v is None else f"{float(v):.3f}"

        strategy = "+".join(k.value for k in self.strategies)
        rows = [
            f"strategy={strategy}  model={self.model}  threshold={self.threshold}",
            f"cases={len(self.results)}  evaluated={len(self.evaluated)}  unjudgeable={len(self.unjudgeable)}",
        ]
        if self.confusion is not None:
            p, r, f = self.precision_recall_f1
            cm = self.confusion
            rows.append(f"{'':<14}{'precision':>10}{'recall':>10}{'f1':>10}{'tp':>5}{'fp':>5}{'fn':>5}{'tn':>5}")
            entries = [("all", cm)] + sorted(self.by_language.items()) + sorted(self.by_change_type.items())
            for name, m in entries:
                p, r, f = precision_recall_f1(m)
                rows.append(
                    f"{name:<14}{fmt(p):>10}{fmt(r):>10}{fmt(f):>10}{m.tp:>5}{m.fp:>5}{m.fn:>5}{m.tn:>5}"
                )
        if self.alignment is not None:
            rows.append(f"consistency={fmt(self.consistency)}  coverage={fmt(self.coverage)}")
        summary = aggregate_cost(r.judgement.cost for r in self.evaluated)
        mean = "n/a" if summary.mean is None else f"${float(summary.mean):.6f}"
        rows.append(
            f"cost total=${format_usd(summary.total)}  mean={mean}  "
            f"tokens in={summary.input_tokens} out={summary.output_tokens}"
        )
        return "\n".join(rows)


def _case_trace(result: CaseResult) -> dict:
    case = result.case
    trace: dict = {"case_id": case.case_id}
    if isinstance(case, AnnotatedCase):
        trace["label"] = "hallucinated" if case.label_hallucinated else "ok"
        trace["language"] = str(case.strata[0])
        trace["change_type"] = case.strata[1].value
    else:
        trace["reaction"] = case.reaction.value
    j = result.judgement
    if j is None:
        trace["status"] = "unjudgeable"
        trace["error"] = result.error
        return trace
    trace["status"] = "judged"
    trace["scores"] = {a.strategy.value: a.score for a in j.assessments}
    trace["hallucinated"] = j.hallucinated
    trace["usage"] = j.usage.to_dict()
    trace["cost_usd"] = format_usd(j.cost.cost_usd)
    return trace


def _judge_case(judge: Judge, case: Case, strategies, threshold) -> CaseResult:
    try:
        return CaseResult(case, judge.judge(case.diff, case.comment, strategies, threshold))
    except Unjudgeable as exc:
        return CaseResult(case, error=f"Unjudgeable: {exc.reason}")
    except ProviderError as exc:
        return CaseResult(case, error=f"{type(exc).__name__}: {exc}")


def run_evaluation(
    dataset: Dataset | Sequence[Case],
    strategies: Sequence[StrategyKind],
    judge: Judge,
    threshold: int = 1,
    concurrency: int = 4,
) -> EvalReport:
    if isinstance(dataset, Dataset):
        cases, excluded = list(dataset.cases), dataset.excluded_no_signal
    else:
        cases, excluded = list(dataset), 0
    if not cases:
        raise EmptyInput("dataset has no cases")
    check_threshold(threshold)
    strategies = tuple(strategies)
    cases.sort(key=lambda c: c.case_id)

    if concurrency <= 1:
        results = [_judge_case(judge, c, strategies, threshold) for c in cases]
    else:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            results = list(pool.map(lambda c: _judge_case(judge, c, strategies, threshold), cases))

    report = EvalReport(
        strategies, judge.model.model_name, threshold, results, excluded, pricing_key=judge.model.pricing_key
    )
    annotated = [r for r in report.evaluated if isinstance(r.case, AnnotatedCase)]
    if any(isinstance(r.case, AnnotatedCase) for r in results):
        verdicts = {r.case.case_id: r.judgement.hallucinated for r in annotated}
        labels = {r.case.case_id: r.case.label_hallucinated for r in annotated}
        report.confusion = compute_confusion(verdicts, labels)
        for index, target in ((0, report.by_language), (1, report.by_change_type)):
            groups: dict[str, list[str]] = {}
            for r in annotated:
                stratum = r.case.strata[index]
                groups.setdefault(str(stratum) if index == 0 else stratum.value, []).append(r.case.case_id)
            for name, ids in groups.items():
                target[name] = compute_confusion({i: verdicts[i] for i in ids}, {i: labels[i] for i in ids})
    prefs = [r for r in report.evaluated if isinstance(r.case, PreferenceCase)]
    if any(isinstance(r.case, PreferenceCase) for r in results):
        report.alignment = AlignmentSets(
            (r.case.case_id for r in prefs if not r.judgement.hallucinated),
            (r.case.case_id for r in prefs if r.case.reaction is Reaction.THUMBS_UP),
        )
    return report
