import json

import httpx
import pytest

from reposearch.backends import ChatCompletionsBackend, ModelBackend, ScriptedBackend, to_chat_messages
from reposearch.errors import BackendUnavailable

MESSAGES = [
    {"role": "system", "content": "sys"},
    {"role": "user", "content": "issue"},
    {"role": "assistant", "content": "call"},
    {"role": "tool", "content": "obs"},
]


def _ok(content="hello"):
    return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": content}}]})


def _backend(handler, **kw):
    sleeps = []
    backend = ChatCompletionsBackend(
        "http://model.test/v1", "m", client=httpx.Client(transport=httpx.MockTransport(handler)),
        sleep=sleeps.append, **kw,
    )
    return backend, sleeps


def test_protocol():
    assert isinstance(ScriptedBackend([]), ModelBackend)
    assert isinstance(_backend(lambda r: _ok())[0], ModelBackend)


def test_scripted_by_turn_and_mapping():
    backend = ScriptedBackend({"issue": ["one", "two"], "*": ["fallback"]}, exhausted="done")
    assert backend.complete(MESSAGES[:2]) == "one"
    assert backend.complete(MESSAGES) == "two"
    assert backend.complete(MESSAGES + [{"role": "assistant", "content": "x"}]) == "done"
    assert backend.complete([{"role": "user", "content": "other"}]) == "fallback"


def test_chat_message_roles():
    out = to_chat_messages(MESSAGES)
    assert out[3] == {"role": "user", "content": "Observation:\nobs"}


def test_request_shape(monkeypatch):
    monkeypatch.setenv("TEST_KEY", "sekrit")
    seen = {}

    def handler(request):
        seen["url"] = str(request.url)
        seen["auth"] = request.headers.get("authorization")
        seen["body"] = json.loads(request.content)
        return _ok("reply")

    backend, _ = _backend(handler, api_key_env="TEST_KEY", temperature=0.3)
    assert backend.complete(MESSAGES, seed=11) == "reply"
    assert seen["url"] == "http://model.test/v1/chat/completions"
    assert seen["auth"] == "Bearer sekrit"
    assert seen["body"]["seed"] == 11
    assert seen["body"]["temperature"] == 0.3
    assert seen["body"]["model"] == "m"


def test_retries_then_succeeds():
    codes = iter([503, 429, 200])

    def handler(request):
        code = next(codes)
        return _ok() if code == 200 else httpx.Response(code, text="busy")

    backend, sleeps = _backend(handler, backoff=0.5)
    assert backend.complete(MESSAGES) == "hello"
    assert sleeps == [0.5, 1.0]


def test_transport_errors_exhaust_retries():
    def handler(request):
        raise httpx.ConnectError("refused", request=request)

    backend, sleeps = _backend(handler, max_attempts=3)
    with pytest.raises(BackendUnavailable, match="3 attempts"):
        backend.complete(MESSAGES)
    assert len(sleeps) == 2


def test_client_error_fails_fast():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(400, text="bad request")

    backend, sleeps = _backend(handler)
    with pytest.raises(BackendUnavailable, match="400"):
        backend.complete(MESSAGES)
    assert calls == [1] and sleeps == []


def test_malformed_response():
    backend, _ = _backend(lambda r: httpx.Response(200, json={"nope": 1}))
    with pytest.raises(BackendUnavailable, match="malformed"):
        backend.complete(MESSAGES)


def test_episode_over_http(tiny_index):
    from helpers import answer, call
    from reposearch.agent_loop import run_episode

    turns = iter([call("SearchFunction", file="a.py", function="f"), call("Exit"), answer(["a.py::f"])])
    backend, _ = _backend(lambda r: _ok(next(turns)))
    traj = run_episode("f is broken", tiny_index, backend)
    assert traj.termination == "exit_tool"
    assert traj.backend == "chat:m"
