from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from cdmgen.errors import AuthFailure, NoStructuredPayload, ProviderUnavailable, Timeout
from cdmgen.gateway import (
    CompletionResult,
    HttpProvider,
    MockEmbeddingProvider,
    HttpEmbeddingProvider,
    MockProvider,
    PromptBundle,
    ProviderConfig,
    complete,
    extract_structured,
    prompt_hash,
    synthesize_description,
)

BUNDLE = PromptBundle(system_text="system words", user_text="user words")


# ---------------------------------------------------------------------------
# mock provider


def test_mock_returns_scripted_text():
    mock = MockProvider({prompt_hash(BUNDLE): "scripted reply"})
    result = mock.complete(BUNDLE)
    assert result == CompletionResult(text="scripted reply", finish_reason="stop")


def test_mock_scripted_truncation():
    mock = MockProvider({prompt_hash(BUNDLE): {"text": "partial", "finish_reason": "length"}})
    assert mock.complete(BUNDLE).finish_reason == "length"


def test_mock_is_deterministic():
    mock = MockProvider({prompt_hash(BUNDLE): "same"})
    assert mock.complete(BUNDLE) == mock.complete(BUNDLE)


def test_mock_missing_entry_fails_loudly():
    with pytest.raises(ProviderUnavailable):
        MockProvider({}).complete(BUNDLE)


def test_mock_script_file_roundtrip(tmp_path):
    script = {prompt_hash(BUNDLE): {"text": "from file", "finish_reason": "stop"}}
    path = tmp_path / "script.json"
    path.write_text(json.dumps(script), encoding="utf-8")
    assert MockProvider.from_file(path).complete(BUNDLE).text == "from file"


def test_prompt_hash_distinguishes_system_and_user():
    a = PromptBundle(system_text="ab", user_text="c")
    b = PromptBundle(system_text="a", user_text="bc")
    assert prompt_hash(a) != prompt_hash(b)
    assert prompt_hash(a) == prompt_hash(PromptBundle(system_text="ab", user_text="c"))


# ---------------------------------------------------------------------------
# HTTP provider against a local server


class _Handler(BaseHTTPRequestHandler):
    captured: list = []
    behavior = "ok"
    fail_times = 0

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        payload = json.loads(self.rfile.read(length))
        _Handler.captured.append({"payload": payload, "auth": self.headers.get("Authorization")})
        if _Handler.behavior == "slow":
            time.sleep(0.5)
        if _Handler.behavior == "unauthorized":
            self.send_response(401)
            self.end_headers()
            return
        if _Handler.behavior == "flaky" and _Handler.fail_times > 0:
            _Handler.fail_times -= 1
            self.send_response(502)
            self.end_headers()
            self.wfile.write(b"bad gateway")
            return
        body = {
            "choices": [{"message": {"content": '{"echo": true}'}, "finish_reason": "stop"}],
            "usage": {"prompt_tokens": 5, "completion_tokens": 3},
        }
        raw = json.dumps(body).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)

    def log_message(self, *args):
        pass


@pytest.fixture()
def local_server():
    server = HTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _Handler.captured = []
    _Handler.behavior = "ok"
    _Handler.fail_times = 0
    yield f"http://127.0.0.1:{server.server_port}/v1/chat/completions"
    server.shutdown()


def test_http_provider_transmits_prompt_bit_exactly(local_server, monkeypatch):
    monkeypatch.setenv("TEST_TOKEN", "secret-token")
    cfg = ProviderConfig(
        endpoint=local_server, model_name="test-model", credential_ref="TEST_TOKEN"
    )
    bundle = PromptBundle(
        system_text="sys åtext", user_text="user\ntext", max_output_tokens=77, temperature=0.0
    )
    result = HttpProvider(cfg).complete(bundle)
    assert result.text == '{"echo": true}'
    assert result.finish_reason == "stop"
    sent = _Handler.captured[-1]
    assert sent["auth"] == "Bearer secret-token"
    assert sent["payload"]["model"] == "test-model"
    assert sent["payload"]["messages"][0] == {"role": "system", "content": "sys åtext"}
    assert sent["payload"]["messages"][1] == {"role": "user", "content": "user\ntext"}
    assert sent["payload"]["max_tokens"] == 77
    assert sent["payload"]["temperature"] == 0.0


def test_http_provider_recovers_from_transient_5xx(local_server):
    _Handler.behavior = "flaky"
    _Handler.fail_times = 2
    cfg = ProviderConfig(endpoint=local_server, model_name="m", retry_limit=3)
    provider = HttpProvider(cfg)
    provider._sleep = lambda _: None
    assert provider.complete(BUNDLE).text == '{"echo": true}'


def test_http_provider_auth_failure_no_retry(local_server):
    _Handler.behavior = "unauthorized"
    cfg = ProviderConfig(endpoint=local_server, model_name="m", retry_limit=3)
    with pytest.raises(AuthFailure):
        HttpProvider(cfg).complete(BUNDLE)
    assert len(_Handler.captured) == 1


def test_http_provider_missing_credential(local_server):
    cfg = ProviderConfig(endpoint=local_server, model_name="m", credential_ref="NO_SUCH_VAR")
    with pytest.raises(AuthFailure):
        HttpProvider(cfg).complete(BUNDLE)


def test_http_provider_timeout(local_server):
    _Handler.behavior = "slow"
    cfg = ProviderConfig(endpoint=local_server, model_name="m", timeout=0.1, retry_limit=0)
    with pytest.raises(Timeout):
        HttpProvider(cfg).complete(BUNDLE)


def test_unreachable_endpoint_zero_retries():
    cfg = ProviderConfig(
        endpoint="http://127.0.0.1:9/v1/chat/completions", model_name="m", retry_limit=0, timeout=1.0
    )
    with pytest.raises(ProviderUnavailable):
        HttpProvider(cfg).complete(BUNDLE)


def test_complete_accepts_config_or_provider(local_server):
    cfg = ProviderConfig(endpoint=local_server, model_name="m")
    assert complete(cfg, BUNDLE).text == '{"echo": true}'
    mock = MockProvider({prompt_hash(BUNDLE): "via provider"})
    assert complete(mock, BUNDLE).text == "via provider"


def test_endpoint_override_env(local_server, monkeypatch):
    monkeypatch.setenv("CDMGEN_ENDPOINT", local_server)
    cfg = ProviderConfig(endpoint="http://127.0.0.1:9/unused", model_name="m")
    assert HttpProvider(cfg).complete(BUNDLE).text == '{"echo": true}'


def test_provider_config_validation():
    with pytest.raises(ValueError):
        ProviderConfig(endpoint="http://x", model_name="m", retry_limit=-1)
    with pytest.raises(ValueError):
        ProviderConfig(endpoint="http://x", model_name="m", timeout=0)


# ---------------------------------------------------------------------------
# embeddings over HTTP


class _EmbedHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers["Content-Length"])
        payload = json.loads(self.rfile.read(length))
        body = {"data": [{"embedding": [float(len(t)), 1.0]} for t in payload["input"]]}
        raw = json.dumps(body).encode()
        self.send_response(200)
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)

    def log_message(self, *args):
        pass


def test_http_embedding_provider():
    server = HTTPServer(("127.0.0.1", 0), _EmbedHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        cfg = ProviderConfig(
            endpoint=f"http://127.0.0.1:{server.server_port}/v1/embeddings", model_name="m"
        )
        vectors = HttpEmbeddingProvider(cfg).embed(["ab", "abcd"])
        assert vectors == [[2.0, 1.0], [4.0, 1.0]]
    finally:
        server.shutdown()


def test_mock_embedder_deterministic():
    provider = MockEmbeddingProvider(dim=6)
    assert provider.embed(["x"]) == provider.embed(["x"])
    assert provider.embed(["x"]) != provider.embed(["y"])


# ---------------------------------------------------------------------------
# structured extraction


def test_extract_from_code_fence():
    assert extract_structured('```json\n{"a": 1}\n```') == {"a": 1}


def test_extract_from_prose():
    text = 'Here is the result: {"a": {"b": "x"}} hope this helps'
    expected = json.loads(oracles.first_balanced_object(text))
    assert extract_structured(text) == expected == {"a": {"b": "x"}}


def test_extract_no_payload():
    with pytest.raises(NoStructuredPayload):
        extract_structured("no braces here")
    with pytest.raises(NoStructuredPayload):
        extract_structured("broken { \"a\": } object")
    with pytest.raises(NoStructuredPayload):
        extract_structured("")


def test_extract_ignores_braces_inside_strings():
    text = 'note: "{" is a brace. {"key": "va{lue}"} done'
    assert extract_structured(text) == {"key": "va{lue}"}


FIXTURE_VALUES = [
    {"a": 1},
    {"a": {"b": "x"}, "c": [1, 2, {"d": False}]},
    {"text": 'quoted "brace {" inside'},
    {"empty": {}, "list": []},
]


@settings(max_examples=60, deadline=None)
@given(
    value=st.sampled_from(FIXTURE_VALUES),
    prefix=st.sampled_from(["", "Sure! ", "Result:\n", "```json\n", "Text { broken\n\n"]),
    suffix=st.sampled_from(["", " hope this helps", "\n```", "\n\nDone."]),
)
def test_extract_roundtrip_under_wrapping(value, prefix, suffix):
    text = prefix + json.dumps(value) + suffix
    assert extract_structured(text) == value


# ---------------------------------------------------------------------------
# synthesis


def test_synthesize_with_mock():
    example = {"trade": {"tradeDate": "2024-03-11"}}
    references = ["Reference sheet one."]
    # Reconstruct the exact prompt the function will send, then script it.
    from cdmgen import prompts

    sections = [
        prompts.load("synthesize_instructions.txt"),
        "Reference term sheet 1:\nReference sheet one.",
        "Structured contract data:\n" + json.dumps(example, indent=2, ensure_ascii=False),
    ]
    bundle = PromptBundle(
        system_text=prompts.load("synthesize_system.txt"), user_text="\n\n".join(sections)
    )
    mock = MockProvider({prompt_hash(bundle): "A contract description."})
    assert synthesize_description(mock, example, references) == "A contract description."


def test_synthesize_rejects_empty_example():
    with pytest.raises(ValueError):
        synthesize_description(MockProvider({}), {}, [])
