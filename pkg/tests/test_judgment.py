import itertools
import time
from fractions import Fraction

import pytest

from reviewjudge.judgment import (
    Assessment,
    InvalidScore,
    InvalidThreshold,
    TooFewMembers,
    binarize,
    ensemble,
)
from reviewjudge.provider import Usage, UsageSource
from reviewjudge.strategies import StrategyKind

# Rows are scores 0..4, columns thresholds 1..4; True means hallucinated.
DECISION_TABLE = [
    [False, False, False, False],
    [True, False, False, False],
    [True, True, False, False],
    [True, True, True, False],
    [True, True, True, True],
]


def test_binarize_matches_hand_table():
    for score, row in enumerate(DECISION_TABLE):
        for threshold, expected in zip(range(1, 5), row):
            v = binarize(score, threshold)
            assert v.hallucinated is expected, (score, threshold)
            assert (v.score, v.threshold) == (score, threshold)


def test_default_threshold_is_one():
    assert binarize(0).hallucinated is False
    assert binarize(1).hallucinated is True


@pytest.mark.parametrize("bad", [0, 5, -1, True, 1.0, "2"])
def test_bad_threshold_rejected(bad):
    with pytest.raises(InvalidThreshold):
        binarize(2, bad)


@pytest.mark.parametrize("bad", [-1, 5, False, 2.0, None])
def test_bad_score_rejected(bad):
    with pytest.raises(InvalidScore):
        binarize(bad, 1)


def _brute_force_majority(scores, threshold=1):
    flagged = 0
    for s in scores:
        if s >= threshold:
            flagged += 1
    return flagged * 2 >= len(scores), Fraction(flagged, len(scores))


def test_ensemble_matches_brute_force_over_all_625_tuples():
    start = time.perf_counter()
    mismatches = 0
    for scores in itertools.product(range(5), repeat=4):
        v = ensemble(list(scores), 1)
        expected, mean = _brute_force_majority(scores)
        mismatches += (v.hallucinated != expected) or (v.mean_indicator != mean)
    assert mismatches == 0
    assert time.perf_counter() - start < 1.0


def test_ensemble_tie_counts_as_hallucinated():
    assert ensemble([0, 0, 3, 4]).hallucinated is True
    assert ensemble([0, 0, 0, 4]).hallucinated is False
    assert ensemble([0, 0, 0, 0]).mean_indicator == 0


def test_ensemble_monotone_in_each_member():
    for scores in itertools.product(range(5), repeat=4):
        base = ensemble(list(scores)).hallucinated
        for i in range(4):
            if scores[i] < 4:
                bumped = list(scores)
                bumped[i] += 1
                assert ensemble(bumped).hallucinated >= base


def test_ensemble_permutation_invariant():
    for scores in itertools.combinations_with_replacement(range(5), 4):
        results = {ensemble(list(p)).hallucinated for p in itertools.permutations(scores)}
        assert len(results) == 1


def test_raising_threshold_never_adds_flags():
    for scores in itertools.product(range(5), repeat=3):
        flags = [ensemble(list(scores), t).hallucinated for t in range(1, 5)]
        assert flags == sorted(flags, reverse=True)


def test_ensemble_needs_two_members():
    with pytest.raises(TooFewMembers):
        ensemble([3])


def test_ensemble_accepts_assessments():
    usage = Usage(10, 2, UsageSource.PROVIDER_REPORTED)
    members = [
        Assessment(s, "why", kind, "mock", usage, "{}")
        for s, kind in zip([4, 0, 0, 2], StrategyKind)
    ]
    v = ensemble(members, 2)
    assert v.hallucinated is True
    assert v.mean_indicator == Fraction(1, 2)
    assert v.score == 4
    assert v.threshold == 2


def test_assessment_validates_fields():
    with pytest.raises(InvalidScore):
        Assessment(7, "why", StrategyKind.DIRECT, "m", Usage(0, 0, UsageSource.ESTIMATED), "")
    with pytest.raises(ValueError):
        Assessment(1, "  ", StrategyKind.DIRECT, "m", Usage(0, 0, UsageSource.ESTIMATED), "")


def test_two_of_four_nonzero_is_hallucinated():
    v = ensemble([1, 2, 0, 0], 1)
    assert v.hallucinated is True
    assert v.mean_indicator == Fraction(1, 2)
