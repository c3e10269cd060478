"""Linear per-inference cost model in exact decimal arithmetic.

cost = input_rate * input_tokens + output_rate * output_tokens, with rates
quoted in USD per million tokens as providers publish them.
"""
from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from decimal import Decimal, localcontext
from pathlib import Path
from typing import Iterable, Mapping

from .provider import Usage

MILLION = Decimal(1_000_000)


class UnknownPricingKey(KeyError):
    pass


@dataclass(frozen=True)
class Rate:
    input_per_million: Decimal
    output_per_million: Decimal

    def __post_init__(self):
        if self.input_per_million < 0 or self.output_per_million < 0:
            raise ValueError("rates must be non-negative")

    @property
    def c_in(self) -> Decimal:
        return self.input_per_million / MILLION

    @property
    def c_out(self) -> Decimal:
        return self.output_per_million / MILLION


@dataclass(frozen=True)
class PricingTable:
    entries: Mapping[str, Rate]

    def __getitem__(self, key: str) -> Rate:
        try:
            return self.entries[key]
        except KeyError:
            raise UnknownPricingKey(key) from None

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    @classmethod
    def default(cls) -> "PricingTable":
        return cls(dict(DEFAULT_RATES))

    @classmethod
    def from_mapping(cls, data: Mapping[str, Mapping]) -> "PricingTable":
        entries = {}
        for key, rec in data.items():
            entries[key] = Rate(
                Decimal(str(rec["input_per_million_usd"])), Decimal(str(rec["output_per_million_usd"]))
            )
        return cls(entries)

    @classmethod
    def load(cls, path: str | Path, base: "PricingTable | None" = None) -> "PricingTable":
        """Load a pricing file; entries override ``base`` (the defaults if omitted)."""
        loaded = cls.from_mapping(json.loads(Path(path).read_text(encoding="utf-8")))
        merged = dict((base or cls.default()).entries)
        merged.update(loaded.entries)
        return cls(merged)


DEFAULT_RATES = {
    "gemini-3": Rate(Decimal("2.00"), Decimal("12.00")),
    "gpt-5.1": Rate(Decimal("1.25"), Decimal("10.00")),
}


@dataclass(frozen=True)
class CostRecord:
    usage: Usage
    pricing_key: str
    cost_usd: Decimal
    strategy: str | None = None
    model: str | None = None


def estimate_cost(
    usage: Usage,
    key: str,
    table: PricingTable | None = None,
    *,
    strategy: str | None = None,
    model: str | None = None,
) -> CostRecord:
    rate = (table or PricingTable.default())[key]
    # Products of short decimals by integers never exceed default precision here.
    cost = (rate.input_per_million * usage.input_tokens + rate.output_per_million * usage.output_tokens) / MILLION
    return CostRecord(usage, key, cost, strategy, model)


def format_usd(value: Decimal) -> str:
    """Plain decimal string without exponent or trailing zeros."""
    return format(value.normalize(), "f")


@dataclass
class CostGroup:
    count: int = 0
    total: Decimal = Decimal(0)

    @property
    def mean(self) -> Decimal | None:
        if not self.count:
            return None
        with localcontext() as ctx:
            ctx.prec = 28
            return self.total / self.count


@dataclass
class CostSummary:
    count: int = 0
    total: Decimal = Decimal(0)
    mean: Decimal | None = None
    input_tokens: int = 0
    output_tokens: int = 0
    groups: dict[tuple[str | None, str | None], CostGroup] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "total_usd": format_usd(self.total),
            "mean_usd": None if self.mean is None else format_usd(self.mean),
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "groups": [
                {
                    "strategy": s,
                    "model": m,
                    "count": g.count,
                    "total_usd": format_usd(g.total),
                    "mean_usd": format_usd(g.mean),
                }
                for (s, m), g in sorted(self.groups.items(), key=lambda kv: (str(kv[0][0]), str(kv[0][1])))
            ],
        }


def aggregate_cost(records: Iterable[CostRecord]) -> CostSummary:
    summary = CostSummary()
    groups: dict = defaultdict(CostGroup)
    for rec in records:
        summary.count += 1
        summary.total += rec.cost_usd
        summary.input_tokens += rec.usage.input_tokens
        summary.output_tokens += rec.usage.output_tokens
        g = groups[(rec.strategy, rec.model)]
        g.count += 1
        g.total += rec.cost_usd
    if summary.count:
        with localcontext() as ctx:
            ctx.prec = 28
            summary.mean = summary.total / summary.count
    summary.groups = dict(groups)
    return summary
