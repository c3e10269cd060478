from __future__ import annotations

import random

import pytest

from reviewjudge.cost import PricingTable
from reviewjudge.pipeline import Judge
from reviewjudge.provider import BUILTIN_MODELS, Gateway, MockProvider, RetryPolicy

# Sync -> async service call; the comment invents an SQL injection risk.
ASYNC_DIFF = """\
--- a/src/main/java/com/example/UserHandler.java
+++ b/src/main/java/com/example/UserHandler.java
@@ -42,3 +42,4 @@ public Result handle(Request req) {
-    User u = userService.getUser(req.getUserId());
-    return ok(render(u));
+    CompletableFuture<User> f = userService.getUserAsync(req.getUserId());
+    return f.thenApply(u -> ok(render(u)))
+            .exceptionally(e -> internalServerError());
 }
"""
ASYNC_COMMENT = (
    "This change looks vulnerable to SQL injection since getUserId() is used directly. "
    "You should switch to prepared statements or sanitize inputs before constructing the query."
)

# Added null-checked logging of a String header; the comment assumes Optional.
AUTH_HEADER_DIFF = """\
--- a/src/main/java/com/example/ExampleContext.java
+++ b/src/main/java/com/example/ExampleContext.java
@@ -42,1 +42,6 @@ public final class ExampleContext {}
     private Optional<String> getAuthorizationToken() {
+        logger.info(
+            (requestContext.getHeader(AUTH_HEADER) != null)
+                ? "auth-header-length = " + requestContext.getHeader(AUTH_HEADER).length()
+                : "auth-header not found"
+        );
"""
AUTH_HEADER_COMMENT = (
    "Consider using isPresent() on the Optional returned by getHeader instead of checking for null "
    "to maintain consistency with Optional usage patterns."
)
AUTH_HEADER_DIRECT_RESPONSE = (
    '{"answer": 4, "explanation": "Completely misaligned because it incorrectly assumes that '
    "requestContext.getHeader() returns an Optional. The code diff shows .length() being called directly "
    "on the return value, which indicates the return type is a String. Consequently, the suggestion to use "
    'isPresent() is technically invalid for the actual data type."}'
)


def scripted(score: int, explanation: str = "scripted", input_tokens: int = 1000, output_tokens: int = 50):
    import json

    return {
        "text": json.dumps({"answer": score, "explanation": explanation}),
        "input_tokens": input_tokens,
        "output_tokens": output_tokens,
    }


def make_judge(mock: MockProvider, model: str = "mock", **gateway_kw) -> Judge:
    gateway_kw.setdefault("policy", RetryPolicy(max_attempts=3, backoff_base=0.0))
    gateway = Gateway({"mock": mock}, sleep=lambda s: None, **gateway_kw)
    return Judge(gateway, BUILTIN_MODELS[model], PricingTable.default())


@pytest.fixture
def rng():
    return random.Random(20260114)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in module.RESULTS:
        terminalreporter.write_line(line)
