import json
import threading

import httpx
import pytest
from hypothesis import given, settings, strategies as st

from reviewjudge.diff import ReviewComment, parse_unified_diff
from reviewjudge.pipeline import Unjudgeable
from reviewjudge.provider import (
    BUILTIN_MODELS,
    AuditLog,
    AuthFailure,
    CompletionRequest,
    ContextOverflow,
    Gateway,
    GeminiProvider,
    MockProvider,
    ModelSpec,
    OpenAIProvider,
    ProviderError,
    ProviderUnavailable,
    RateLimited,
    RetriesExhausted,
    RetryPolicy,
    ScriptExhausted,
    ScriptedResponse,
    Timeout,
    Usage,
    UsageSource,
    estimate_tokens,
)
from reviewjudge.strategies import StrategyKind

from conftest import ASYNC_COMMENT, ASYNC_DIFF, AUTH_HEADER_COMMENT, AUTH_HEADER_DIFF, AUTH_HEADER_DIRECT_RESPONSE, make_judge, scripted

MOCK = BUILTIN_MODELS["mock"]
REQ = CompletionRequest("system", "user")


def _gateway(mock, **kw):
    sleeps = []
    kw.setdefault("policy", RetryPolicy(max_attempts=3, backoff_base=0.5))
    return Gateway({"mock": mock}, sleep=sleeps.append, **kw), sleeps


def test_single_scripted_success_then_exhausted():
    mock = MockProvider(script=[{"text": "fixed", "input_tokens": 12, "output_tokens": 3}])
    gw, _ = _gateway(mock)
    resp = gw.complete(MOCK, REQ)
    assert resp.text == "fixed"
    assert resp.usage == Usage(12, 3, UsageSource.PROVIDER_REPORTED)
    with pytest.raises(ScriptExhausted):
        gw.complete(MOCK, REQ)


def test_sequential_replay_then_exhausted():
    mock = MockProvider(script=["a", "b"])
    gw, _ = _gateway(mock)
    assert [gw.complete(MOCK, REQ).text for _ in range(2)] == ["a", "b"]
    with pytest.raises(ScriptExhausted):
        gw.complete(MOCK, REQ)


def test_keyed_mode_is_deterministic_and_unordered():
    mock = MockProvider(keyed=[
        {"contains": "alpha", "text": "A"},
        {"system_contains": "strict", "text": "S"},
        {"fingerprint": CompletionRequest("s", "z").fingerprint(), "text": "Z"},
    ])
    gw, _ = _gateway(mock)
    order = ["z", "alpha", "z", "alpha"]
    assert [gw.complete(MOCK, CompletionRequest("s", u)).text for u in order] == ["Z", "A", "Z", "A"]
    assert gw.complete(MOCK, CompletionRequest("be strict", "u")).text == "S"
    with pytest.raises(ScriptExhausted):
        gw.complete(MOCK, CompletionRequest("s", "unmatched"))


def test_keyed_mapping_form():
    req = CompletionRequest("s", "u")
    mock = MockProvider(keyed={req.fingerprint(): "hit"})
    assert _gateway(mock)[0].complete(MOCK, req).text == "hit"


def test_scripted_response_rejects_unknown_fields():
    with pytest.raises(ValueError):
        ScriptedResponse.from_dict({"txt": "typo"})
    with pytest.raises(ValueError):
        ScriptedResponse.from_dict({"error": "Kaboom"})
    with pytest.raises(ValueError):
        MockProvider()


def test_retry_twice_on_rate_limit_then_succeed():
    mock = MockProvider(script=[{"error": "RateLimited"}, {"error": "RateLimited"}, "ok"])
    gw, sleeps = _gateway(mock)
    resp = gw.complete(MOCK, REQ)
    assert resp.text == "ok"
    assert resp.attempts == 3
    assert sleeps == [0.5, 1.0]


def test_retries_exhausted_wraps_last_error():
    mock = MockProvider(script=[{"error": "Timeout"}, {"error": "ProviderUnavailable"}, {"error": "RateLimited"}])
    gw, sleeps = _gateway(mock)
    with pytest.raises(RetriesExhausted) as info:
        gw.complete(MOCK, REQ)
    assert isinstance(info.value.last_error, RateLimited)
    assert info.value.attempts == 3
    assert len(sleeps) == 2


def test_non_retryable_errors_propagate_immediately():
    mock = MockProvider(script=[{"error": "AuthFailure"}, "never"])
    gw, sleeps = _gateway(mock)
    with pytest.raises(AuthFailure):
        gw.complete(MOCK, REQ)
    assert sleeps == [] and len(mock.requests) == 1


def test_backoff_non_decreasing():
    policy = RetryPolicy(max_attempts=8, backoff_base=0.25, backoff_multiplier=1.7)
    delays = [policy.delay(k) for k in range(1, 8)]
    assert delays == sorted(delays)
    assert delays[0] == 0.25
    with pytest.raises(ValueError):
        RetryPolicy(backoff_multiplier=0.5)


def test_context_overflow_before_any_send():
    mock = MockProvider(script=["never"])
    tiny = ModelSpec("mock", "tiny", 10, "gpt-5.1")
    gw, _ = _gateway(mock)
    with pytest.raises(ContextOverflow):
        gw.complete(tiny, CompletionRequest("x" * 40, "y" * 4))
    assert mock.requests == []
    # 40 bytes + 1 byte -> 10 + 1 tokens; 36 + 4 bytes fits exactly.
    assert gw.complete(tiny, CompletionRequest("x" * 36, "y" * 4)).text == "never"


def test_estimate_tokens_uses_utf8_bytes():
    assert estimate_tokens("") == 0
    assert estimate_tokens("abcd") == 1
    assert estimate_tokens("abcde") == 2
    assert estimate_tokens("ü" * 2) == 1
    assert estimate_tokens("x" * 400) == 100


@settings(max_examples=200)
@given(st.text())
def test_estimate_tokens_monotone(t):
    assert estimate_tokens("a" + t) >= estimate_tokens(t)


def test_usage_provenance():
    gw, _ = _gateway(MockProvider(script=[{"text": "hi", "input_tokens": 7, "output_tokens": 3}, "abcdefgh"]))
    assert gw.complete(MOCK, REQ).usage == Usage(7, 3, UsageSource.PROVIDER_REPORTED)
    est = gw.complete(MOCK, REQ).usage
    assert est == Usage(estimate_tokens("system") + estimate_tokens("user"), 2, UsageSource.ESTIMATED)
    assert (Usage(1, 1, UsageSource.PROVIDER_REPORTED) + est).source is UsageSource.ESTIMATED


def test_concurrency_cap_respected():
    in_flight, peak = 0, 0
    lock = threading.Lock()
    gate = threading.Event()

    class Slow:
        provider_id = "mock"

        def healthy(self):
            return True

        def send(self, spec, req):
            nonlocal in_flight, peak
            with lock:
                in_flight += 1
                peak = max(peak, in_flight)
            gate.wait(0.05)
            with lock:
                in_flight -= 1
            from reviewjudge.provider import RawCompletion
            return RawCompletion("ok", 1, 1)

    gw = Gateway([Slow()], max_in_flight=2)
    threads = [threading.Thread(target=gw.complete, args=(MOCK, REQ)) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert peak <= 2


def test_audit_log_appends_jsonl(tmp_path):
    path = tmp_path / "audit.jsonl"
    gw, _ = _gateway(MockProvider(script=["one", "two"]), audit=AuditLog(path))
    gw.complete(MOCK, REQ)
    gw.complete(MOCK, REQ)
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert [r["response"] for r in rows] == ["one", "two"]
    assert rows[0]["fingerprint"] == REQ.fingerprint()
    assert rows[0]["usage"]["source"] == "Estimated"


def test_unknown_provider():
    gw = Gateway({})
    with pytest.raises(ProviderError):
        gw.complete(BUILTIN_MODELS["gpt-5.1"], REQ)
    assert gw.healthy(BUILTIN_MODELS["gpt-5.1"]) is False


# -- HTTP providers over a mock transport ------------------------------------


def _client(handler, base):
    return httpx.Client(base_url=base, transport=httpx.MockTransport(handler))


def test_openai_request_and_usage():
    seen = {}

    def handler(request):
        seen["url"] = str(request.url)
        seen["auth"] = request.headers["authorization"]
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={
            "choices": [{"message": {"content": '{"answer": 1, "explanation": "e"}'}}],
            "usage": {"prompt_tokens": 2784, "completion_tokens": 81},
        })

    p = OpenAIProvider(api_key="sk-test", client=_client(handler, OpenAIProvider.base_url))
    resp = Gateway([p]).complete(BUILTIN_MODELS["gpt-5.1"], REQ)
    assert seen["url"] == "https://api.openai.com/v1/chat/completions"
    assert seen["auth"] == "Bearer sk-test"
    assert seen["body"]["model"] == "gpt-5.1-2025-11-13"
    assert [m["role"] for m in seen["body"]["messages"]] == ["system", "user"]
    assert resp.usage == Usage(2784, 81, UsageSource.PROVIDER_REPORTED)


def test_gemini_request_and_usage():
    seen = {}

    def handler(request):
        seen["url"] = str(request.url)
        seen["key"] = request.headers["x-goog-api-key"]
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={
            "candidates": [{"content": {"parts": [{"text": "{\"answer\": 0,"}, {"text": " \"explanation\": \"e\"}"}]}}],
            "usageMetadata": {"promptTokenCount": 3315, "candidatesTokenCount": 89},
        })

    p = GeminiProvider(api_key="g-test", client=_client(handler, GeminiProvider.base_url))
    resp = Gateway([p]).complete(BUILTIN_MODELS["gemini-3"], REQ)
    assert seen["url"].endswith("/v1beta/models/gemini-3-pro-preview:generateContent")
    assert seen["key"] == "g-test"
    assert seen["body"]["systemInstruction"]["parts"][0]["text"] == "system"
    assert resp.text == '{"answer": 0, "explanation": "e"}'
    assert resp.usage == Usage(3315, 89, UsageSource.PROVIDER_REPORTED)


@pytest.mark.parametrize(
    "status, body, exc",
    [(401, "", AuthFailure), (429, "", RateLimited), (408, "", Timeout), (503, "", ProviderUnavailable),
     (400, "maximum context length exceeded", ContextOverflow), (400, "bad request", ProviderError)],
)
def test_http_status_mapping(status, body, exc):
    p = OpenAIProvider(api_key="k", client=_client(lambda r: httpx.Response(status, text=body), OpenAIProvider.base_url))
    with pytest.raises(exc):
        p.send(BUILTIN_MODELS["gpt-5.1"], REQ)


def test_missing_key_is_auth_failure(monkeypatch):
    monkeypatch.delenv("OPENAI_API_KEY", raising=False)
    p = OpenAIProvider(client=_client(lambda r: httpx.Response(200), OpenAIProvider.base_url))
    assert p.healthy() is False
    with pytest.raises(AuthFailure):
        p.send(BUILTIN_MODELS["gpt-5.1"], REQ)
    monkeypatch.setenv("OPENAI_API_KEY", "from-env")
    assert p.healthy() is True


def test_transport_error_is_retryable():
    def boom(request):
        raise httpx.ConnectError("refused")

    p = OpenAIProvider(api_key="k", client=_client(boom, OpenAIProvider.base_url))
    gw = Gateway([p], RetryPolicy(max_attempts=2, backoff_base=0), sleep=lambda s: None)
    with pytest.raises(RetriesExhausted) as info:
        gw.complete(BUILTIN_MODELS["gpt-5.1"], REQ)
    assert isinstance(info.value.last_error, ProviderUnavailable)


# -- assessment pipeline -------------------------------------------------------


def test_score_three_end_to_end_is_hallucinated():
    judge = make_judge(MockProvider(script=[scripted(3, "invented SQL")]))
    j = judge.judge(parse_unified_diff(ASYNC_DIFF), ReviewComment("c", ASYNC_COMMENT), [StrategyKind.DIRECT])
    assert j.hallucinated is True
    assert j.verdict.score == 3
    assert j.explanation == "invented SQL"


def test_auth_header_direct_response():
    mock = MockProvider(script=[{"text": AUTH_HEADER_DIRECT_RESPONSE, "input_tokens": 100, "output_tokens": 20}])
    j = make_judge(mock).judge(parse_unified_diff(AUTH_HEADER_DIFF), ReviewComment("c", AUTH_HEADER_COMMENT),
                               [StrategyKind.DIRECT])
    assert j.verdict.score == 4 and j.hallucinated
    assert "String" in j.explanation


def test_reask_once_then_succeed():
    mock = MockProvider(script=["I think it is fine.", scripted(0, "fine", 10, 5)])
    a = make_judge(mock).assess(parse_unified_diff(ASYNC_DIFF), ReviewComment("c", "ok"), StrategyKind.DIRECT)
    assert a.attempts == 2 and a.score == 0
    assert mock.requests[1].user_text.endswith("Return only the JSON object, with no other text.")
    assert a.usage.source is UsageSource.ESTIMATED  # first reply carried no usage


def test_unjudgeable_after_reask():
    mock = MockProvider(script=["nope", '{"answer": 9, "explanation": "x"}'])
    with pytest.raises(Unjudgeable) as info:
        make_judge(mock).assess(parse_unified_diff(ASYNC_DIFF), ReviewComment("c", "ok"), StrategyKind.DIRECT)
    assert "AnswerOutOfRange" in info.value.reason
    assert len(mock.requests) == 2


def test_tot_claims_from_evidence_map():
    text = json.dumps({"answer": 2, "explanation": "mixed", "evidence_map": [
        {"claim": "adds logging", "evidence": "+ logger.info(", "supported": True},
        {"claim": "uses Optional", "evidence": None, "supported": False}]})
    a = make_judge(MockProvider(script=[text])).assess(
        parse_unified_diff(AUTH_HEADER_DIFF), ReviewComment("c", "x"), StrategyKind.TREE_OF_THOUGHTS)
    assert [(c.text, c.supported) for c in a.claims] == [("adds logging", True), ("uses Optional", False)]
    assert json.loads(a.extras["evidence_map"])[0]["claim"] == "adds logging"


def test_ensemble_cost_sums_members():
    mock = MockProvider(script=[scripted(s, "e", 1000, 50) for s in (0, 0, 3, 4)])
    j = make_judge(mock).judge(parse_unified_diff(ASYNC_DIFF), ReviewComment("c", "x"), list(StrategyKind))
    assert j.hallucinated is True
    assert j.usage == Usage(4000, 200, UsageSource.PROVIDER_REPORTED)
    assert j.cost.strategy == "ensemble"
    assert str(j.cost.cost_usd) == "0.007"
