"""Language-model backends for the agent loop.

A backend only has to turn a transcript (list of ``{"role", "content"}``
dicts) into the next assistant message. Backends never see the index.
"""

from __future__ import annotations

import logging
import os
import time
from typing import Callable, Mapping, Protocol, Sequence, runtime_checkable

import httpx

from .errors import BackendUnavailable

log = logging.getLogger(__name__)


@runtime_checkable
class ModelBackend(Protocol):
    name: str

    def complete(self, messages: list[dict], seed: int | None = None) -> str: ...


class ScriptedBackend:
    """Replays canned assistant turns, keyed by turn number.

    ``scripts`` is either one list of turns used for every episode or a
    mapping from issue text to its list; the key ``"*"`` is the fallback.
    The turn number is the count of assistant messages already in the
    transcript, so one instance can serve many concurrent episodes. An
    exception instance in a script is raised instead of returned.
    """

    name = "scripted"

    def __init__(self, scripts: Sequence[str] | Mapping[str, Sequence[str]], exhausted: str = ""):
        self.scripts = scripts
        self.exhausted = exhausted

    def _script_for(self, messages: list[dict]) -> Sequence:
        if not isinstance(self.scripts, Mapping):
            return self.scripts
        issue = next((m["content"] for m in messages if m["role"] == "user"), "")
        if issue in self.scripts:
            return self.scripts[issue]
        return self.scripts.get("*", ())

    def complete(self, messages: list[dict], seed: int | None = None) -> str:
        script = self._script_for(messages)
        turn = sum(1 for m in messages if m["role"] == "assistant")
        if turn >= len(script):
            return self.exhausted
        reply = script[turn]
        if isinstance(reply, BaseException):
            raise reply
        return reply


def to_chat_messages(messages: list[dict]) -> list[dict]:
    """Map the loop's transcript roles onto the chat-completions wire roles."""
    out = []
    for m in messages:
        if m["role"] == "tool":
            out.append({"role": "user", "content": "Observation:\n" + m["content"]})
        else:
            out.append({"role": m["role"], "content": m["content"]})
    return out


class ChatCompletionsBackend:
    """Client for any server speaking the OpenAI-style ``/chat/completions`` shape.

    Transport errors, 429 and 5xx responses are retried with exponential
    backoff; other 4xx responses fail at once. Exhausted retries raise
    BackendUnavailable. The API key is read from the environment only.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        temperature: float = 0.0,
        api_key_env: str = "OPENAI_API_KEY",
        max_tokens: int | None = None,
        timeout: float = 120.0,
        max_attempts: int = 3,
        backoff: float = 1.0,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.temperature = temperature
        self.api_key_env = api_key_env
        self.max_tokens = max_tokens
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.sleep = sleep
        self.client = client or httpx.Client(timeout=timeout)
        self.name = f"chat:{model}"

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, messages: list[dict], seed: int | None = None) -> str:
        payload = {
            "model": self.model,
            "messages": to_chat_messages(messages),
            "temperature": self.temperature,
        }
        if self.max_tokens is not None:
            payload["max_tokens"] = self.max_tokens
        if seed is not None:
            payload["seed"] = seed

        url = f"{self.base_url}/chat/completions"
        last_error = "no attempts made"
        for attempt in range(1, self.max_attempts + 1):
            try:
                resp = self.client.post(url, json=payload, headers=self._headers())
            except httpx.HTTPError as exc:
                last_error = f"{type(exc).__name__}: {exc}"
            else:
                if resp.status_code == 200:
                    try:
                        content = resp.json()["choices"][0]["message"]["content"]
                    except (ValueError, KeyError, IndexError, TypeError) as exc:
                        raise BackendUnavailable(f"malformed completion response: {exc}") from exc
                    return content or ""
                last_error = f"HTTP {resp.status_code}: {resp.text[:200]}"
                if resp.status_code != 429 and resp.status_code < 500:
                    raise BackendUnavailable(last_error)
            if attempt < self.max_attempts:
                delay = self.backoff * 2 ** (attempt - 1)
                log.warning("completion attempt %d failed (%s); retrying in %.1fs", attempt, last_error, delay)
                self.sleep(delay)
        raise BackendUnavailable(f"{url} failed after {self.max_attempts} attempts: {last_error}")
