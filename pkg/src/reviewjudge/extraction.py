"""Pull the judge's JSON verdict out of free-form model output."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

from .strategies import ResponseSchema, expected_response_schema, StrategyKind

_decoder = json.JSONDecoder()


class ExtractionError(ValueError):
    """The response did not contain a usable verdict."""


class NoJsonFound(ExtractionError):
    pass


class MissingRequiredKey(ExtractionError):
    def __init__(self, key: str):
        self.key = key
        super().__init__(f"missing or empty required key {key!r}")


class AnswerOutOfRange(ExtractionError):
    def __init__(self, value: Any):
        self.value = value
        super().__init__(f"answer must be an integer in [0, 4], got {value!r}")


@dataclass(frozen=True)
class Extracted:
    answer: int
    explanation: str
    extras: dict[str, Any] = field(default_factory=dict)


def first_json_object(text: str) -> dict | None:
    """Return the first complete JSON object in ``text``, scanning left to right."""
    idx = text.find("{")
    while idx != -1:
        try:
            obj, _ = _decoder.raw_decode(text, idx)
        except json.JSONDecodeError:
            pass
        else:
            if isinstance(obj, dict):
                return obj
        idx = text.find("{", idx + 1)
    return None


def _lookup(obj: dict, key: str) -> tuple[str | None, Any]:
    if key in obj:
        return key, obj[key]
    for k, v in obj.items():
        if isinstance(k, str) and k.strip().lower() == key:
            return k, v
    return None, None


def coerce_answer(value: Any) -> int:
    if isinstance(value, bool):
        raise AnswerOutOfRange(value)
    if isinstance(value, str):
        try:
            value = float(value.strip())
        except ValueError:
            raise AnswerOutOfRange(value) from None
    if isinstance(value, float):
        if not math.isfinite(value) or not value.is_integer():
            raise AnswerOutOfRange(value)
        value = int(value)
    if not isinstance(value, int) or not 0 <= value <= 4:
        raise AnswerOutOfRange(value)
    return value


def extract_assessment(text: str, schema: ResponseSchema | StrategyKind | None = None) -> Extracted:
    if schema is None:
        schema = expected_response_schema(StrategyKind.DIRECT)
    elif isinstance(schema, StrategyKind):
        schema = expected_response_schema(schema)
    obj = first_json_object(text if isinstance(text, str) else "")
    if obj is None:
        raise NoJsonFound("no JSON object in response")

    used: set[str] = set()
    values: dict[str, Any] = {}
    for key in schema.required:
        actual, value = _lookup(obj, key)
        if actual is None or value is None:
            raise MissingRequiredKey(key)
        used.add(actual)
        values[key] = value

    answer = coerce_answer(values["answer"])
    explanation = values["explanation"]
    if not isinstance(explanation, str) or not explanation.strip():
        raise MissingRequiredKey("explanation")
    extras = {k: v for k, v in obj.items() if k not in used}
    return Extracted(answer, explanation, extras)
