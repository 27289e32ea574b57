"""Chat-completion client for guide/base/judge models, plus a scriptable mock.

Requests use the ubiquitous chat-completion wire shape: a POST of
``{model, messages: [{role, content}], temperature}`` with a single user
message per call.  Deterministic (temperature 0) responses are cached
content-addressed on disk so pipeline re-runs issue zero network calls.

Configuration env vars: ``EERDKIT_API_BASE``, ``EERDKIT_API_KEY``,
``EERDKIT_MODEL_GUIDE``, ``EERDKIT_MODEL_BASE``.
"""
from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import httpx

from .prompts import PromptTemplate, TemplateError


class GatewayError(Exception):
    def __init__(self, message: str, status: int | None = None, attempts: int = 0):
        super().__init__(message)
        self.status = status
        self.attempts = attempts


class MalformedOutput(Exception):
    def __init__(self, payloads: list[str]):
        super().__init__("model output is not valid minified JSON after one repair attempt")
        self.payloads = payloads


class ScriptExhausted(Exception):
    pass


class TokenBucket:
    """Requests-per-minute limiter shared across threads."""

    def __init__(self, rpm: int):
        self.capacity = max(1, rpm)
        self.tokens = float(self.capacity)
        self.updated = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = time.monotonic()
                self.tokens = min(
                    self.capacity, self.tokens + (now - self.updated) * self.capacity / 60.0
                )
                self.updated = now
                if self.tokens >= 1:
                    self.tokens -= 1
                    return
                wait = (1 - self.tokens) * 60.0 / self.capacity
            time.sleep(wait)


class ResponseCache:
    """Content-addressed on-disk cache; hits return byte-identical text."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    @staticmethod
    def key(template_id: str, prompt: str, model_id: str, temperature: float) -> str:
        blob = json.dumps(
            [template_id, prompt, model_id, temperature], ensure_ascii=False
        ).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def get(self, key: str) -> str | None:
        path = self.directory / f"{key}.json"
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))["response"]

    def put(self, key: str, response: str) -> None:
        path = self.directory / f"{key}.json"
        with self._lock:
            tmp = path.with_suffix(".tmp")
            tmp.write_text(
                json.dumps({"response": response, "timestamp": time.time()}, ensure_ascii=False),
                encoding="utf-8",
            )
            tmp.replace(path)


@dataclass
class ModelHandle:
    """One endpoint+model binding over HTTPS."""

    endpoint: str
    model_id: str
    temperature: float = 0.0
    max_retries: int = 3
    timeout: float = 60.0
    api_key: str = ""
    rate_limit: TokenBucket | None = None
    backoff: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be in [0, 2]")

    def send(self, prompt: str, template_id: str) -> str:
        if self.rate_limit is not None:
            self.rate_limit.acquire()
        payload = {
            "model": self.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_status = None
        for attempt in range(1, self.max_retries + 1):
            try:
                resp = httpx.post(
                    self.endpoint, json=payload, headers=headers, timeout=self.timeout
                )
                last_status = resp.status_code
                if resp.status_code == 200:
                    return resp.json()["choices"][0]["message"]["content"]
            except httpx.HTTPError:
                pass
            if attempt < self.max_retries:
                time.sleep(self.backoff * 2 ** (attempt - 1))
        raise GatewayError(
            f"request to {self.endpoint} failed after {self.max_retries} attempts",
            status=last_status,
            attempts=self.max_retries,
        )


def handle_from_env(role: str = "guide", **overrides) -> ModelHandle:
    """Build a handle for the ``guide`` or ``base`` role from EERDKIT_* env vars."""
    base = os.environ.get("EERDKIT_API_BASE", "")
    if not base:
        raise GatewayError("EERDKIT_API_BASE is not set")
    model_var = "EERDKIT_MODEL_GUIDE" if role == "guide" else "EERDKIT_MODEL_BASE"
    kwargs = {
        "endpoint": base.rstrip("/") + "/chat/completions",
        "model_id": os.environ.get(model_var, ""),
        "api_key": os.environ.get("EERDKIT_API_KEY", ""),
    }
    kwargs.update(overrides)
    return ModelHandle(**kwargs)


@dataclass
class MockHandle(ModelHandle):
    """Replays scripted responses and records a full call transcript."""

    script: list[tuple[Callable[[str, str], bool], str | Callable[[str, str], str]]] = field(
        default_factory=list
    )
    transcript: list[dict] = field(default_factory=list)

    def send(self, prompt: str, template_id: str) -> str:
        for i, (matcher, response) in enumerate(self.script):
            if matcher(template_id, prompt):
                del self.script[i]
                text = response(template_id, prompt) if callable(response) else response
                self.transcript.append(
                    {"template_id": template_id, "prompt": prompt, "response": text}
                )
                return text
        raise ScriptExhausted(
            f"no scripted response left for template {template_id!r} "
            f"({len(self.transcript)} calls made)"
        )


def mock_script(
    script: list[tuple[str | Callable[[str, str], bool], str | Callable[[str, str], str]]],
) -> MockHandle:
    """Build a mock handle from (matcher, response) pairs.

    A string matcher matches on template id; a callable receives
    (template_id, prompt).  Entries are consumed in order; running out of
    matching entries raises ScriptExhausted.
    """
    compiled = []
    for matcher, response in script:
        if isinstance(matcher, str):
            tid = matcher
            compiled.append((lambda t, p, tid=tid: t == tid, response))
        else:
            compiled.append((matcher, response))
    return MockHandle(endpoint="mock://", model_id="mock", script=compiled)


def complete(
    handle: ModelHandle,
    template: PromptTemplate,
    fills: dict[str, str],
    cache: ResponseCache | None = None,
) -> str:
    """Fill the template and obtain the model's text for it.

    Responses are served from and written to the cache only at temperature 0,
    where the exchange is reproducible.
    """
    prompt = template.fill(fills)
    key = None
    if cache is not None and handle.temperature == 0:
        key = ResponseCache.key(template.id, prompt, handle.model_id, handle.temperature)
        hit = cache.get(key)
        if hit is not None:
            return hit
    text = handle.send(prompt, template.id)
    if key is not None:
        cache.put(key, text)
    return text


_STRUCTURED_REQUIRED_KEYS = {
    "judge_report": ("mistake_evaluation", "false_positives", "summary_metrics"),
    "mistaken_erds": ("mistaken_erds",),
    "relevant_statements": ("relevant-statements",),
}

_REPAIR_REMINDER = (
    "\n\nYour previous output was not valid minified JSON. "
    "Reply again with ONLY the strictly minified JSON object, no prose."
)


def _try_parse(text: str, schema_id: str) -> dict | None:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        return None
    if not isinstance(doc, dict):
        return None
    required = _STRUCTURED_REQUIRED_KEYS.get(schema_id, ())
    if any(k not in doc for k in required):
        return None
    return doc


def complete_structured(
    handle: ModelHandle,
    template: PromptTemplate,
    fills: dict[str, str],
    schema_id: str,
    cache: ResponseCache | None = None,
) -> dict:
    """Like :func:`complete` but parses the reply as a named document schema.

    One repair re-prompt with a format reminder is attempted on parse failure;
    a second failure raises with both raw payloads retained.
    """
    first = complete(handle, template, fills, cache=cache)
    doc = _try_parse(first, schema_id)
    if doc is not None:
        return doc
    repair_prompt = template.fill(fills) + _REPAIR_REMINDER
    second = handle.send(repair_prompt, template.id)
    doc = _try_parse(second, schema_id)
    if doc is not None:
        return doc
    raise MalformedOutput([first, second])


__all__ = [
    "ModelHandle", "MockHandle", "ResponseCache", "TokenBucket",
    "GatewayError", "MalformedOutput", "ScriptExhausted", "TemplateError",
    "handle_from_env", "mock_script", "complete", "complete_structured",
]
