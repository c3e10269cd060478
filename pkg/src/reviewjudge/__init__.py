"""Reference-free detection of code review comments that are not grounded in their diff."""
from .diff import CodeDiff, MalformedDiff, ReviewComment, parse_unified_diff
from .judgment import Assessment, EnsembleVerdict, Verdict, binarize, ensemble
from .pipeline import Judge, Judgement, Unjudgeable
from .provider import Gateway, MockProvider, ModelSpec, Usage, estimate_tokens
from .strategies import StrategyKind, build_system_prompt, build_user_prompt

__version__ = "0.1.0"

__all__ = [
    "Assessment",
    "CodeDiff",
    "EnsembleVerdict",
    "Gateway",
    "Judge",
    "Judgement",
    "MalformedDiff",
    "MockProvider",
    "ModelSpec",
    "ReviewComment",
    "StrategyKind",
    "Unjudgeable",
    "Usage",
    "Verdict",
    "binarize",
    "build_system_prompt",
    "build_user_prompt",
    "ensemble",
    "estimate_tokens",
    "parse_unified_diff",
]
