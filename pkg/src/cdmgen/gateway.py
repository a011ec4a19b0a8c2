"""Uniform access to chat-completion and embedding providers.

Two completion providers are included: an HTTP client speaking the
OpenAI-compatible chat wire shape (covering both hosted and locally served
models) and a fully deterministic mock that replays scripted responses
keyed by a stable hash of the prompt, so every downstream module is
testable offline. Embedding access follows the same pattern.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import requests

from . import prompts
from .errors import AuthFailure, NoStructuredPayload, ProviderUnavailable, Timeout

logger = logging.getLogger(__name__)

ENDPOINT_OVERRIDE_VAR = "CDMGEN_ENDPOINT"

DEFAULT_MAX_OUTPUT_TOKENS = 2048


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    user_text: str
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    temperature: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be within [0, 2]")


@dataclass(frozen=True)
class ProviderConfig:
    endpoint: str
    model_name: str
    credential_ref: str = ""
    timeout: float = 30.0
    retry_limit: int = 2

    def __post_init__(self):
        if self.retry_limit < 0:
            raise ValueError("retry_limit must be >= 0")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


@dataclass(frozen=True)
class CompletionResult:
    text: str
    finish_reason: str  # "stop" | "length" | "error"
    usage: Mapping[str, int] = field(default_factory=dict)


def prompt_hash(prompt: PromptBundle) -> str:
    """Stable identity of a prompt: sha256 over system and user text."""
    digest = hashlib.sha256()
    digest.update(prompt.system_text.encode("utf-8"))
    digest.update(b"\x00")
    digest.update(prompt.user_text.encode("utf-8"))
    return digest.hexdigest()


class MockProvider:
    """Replays scripted responses keyed by prompt hash.

    Script entries map a prompt hash to either a plain string (finish reason
    ``stop``) or ``{"text": ..., "finish_reason": ...}``. An unscripted
    prompt raises :class:`ProviderUnavailable` carrying the missing hash, so
    incomplete scripts fail loudly instead of fabricating output.
    """

    def __init__(self, script: Mapping[str, object]):
        self.script = dict(script)

    @classmethod
    def from_file(cls, path) -> "MockProvider":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def complete(self, prompt: PromptBundle) -> CompletionResult:
        key = prompt_hash(prompt)
        entry = self.script.get(key)
        if entry is None:
            raise ProviderUnavailable(f"mock script has no entry for prompt hash {key}")
        if isinstance(entry, str):
            return CompletionResult(text=entry, finish_reason="stop")
        return CompletionResult(
            text=str(entry.get("text", "")),
            finish_reason=str(entry.get("finish_reason", "stop")),
            usage=dict(entry.get("usage", {})),
        )


class HttpProvider:
    """OpenAI-compatible chat-completion client with retry and backoff.

    Transient transport failures (connection errors, timeouts, 5xx) retry up
    to ``cfg.retry_limit`` times with exponential backoff; authentication
    failures never retry. The endpoint can be overridden through the
    ``CDMGEN_ENDPOINT`` environment variable.
    """

    def __init__(self, cfg: ProviderConfig, session: Optional[requests.Session] = None):
        self.cfg = cfg
        self.session = session or requests.Session()
        self._sleep = time.sleep

    @property
    def endpoint(self) -> str:
        return os.environ.get(ENDPOINT_OVERRIDE_VAR) or self.cfg.endpoint

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.cfg.credential_ref:
            token = os.environ.get(self.cfg.credential_ref)
            if not token:
                raise AuthFailure(
                    f"credential variable {self.cfg.credential_ref} is not set"
                )
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def complete(self, prompt: PromptBundle) -> CompletionResult:
        payload = {
            "model": self.cfg.model_name,
            "messages": [
                {"role": "system", "content": prompt.system_text},
                {"role": "user", "content": prompt.user_text},
            ],
            "max_tokens": prompt.max_output_tokens,
            "temperature": prompt.temperature,
        }
        headers = self._headers()
        last_error: Exception | None = None
        for attempt in range(self.cfg.retry_limit + 1):
            if attempt:
                self._sleep(min(0.5 * 2 ** (attempt - 1), 8.0))
            try:
                response = self.session.post(
                    self.endpoint, json=payload, headers=headers, timeout=self.cfg.timeout
                )
            except requests.Timeout:
                last_error = Timeout(f"provider call timed out after {self.cfg.timeout}s")
                logger.warning("provider timeout attempt=%d", attempt + 1)
                continue
            except requests.RequestException as exc:
                last_error = ProviderUnavailable(f"provider unreachable: {exc}")
                logger.warning("provider unreachable attempt=%d", attempt + 1)
                continue
            if response.status_code in (401, 403):
                raise AuthFailure(f"provider rejected credentials ({response.status_code})")
            if response.status_code >= 500:
                last_error = ProviderUnavailable(
                    f"provider error {response.status_code}: {response.text[:200]}"
                )
                continue
            if response.status_code != 200:
                raise ProviderUnavailable(
                    f"provider error {response.status_code}: {response.text[:200]}"
                )
            return self._parse(response.json())
        raise last_error if last_error else ProviderUnavailable("provider call failed")

    @staticmethod
    def _parse(body: dict) -> CompletionResult:
        try:
            choice = body["choices"][0]
            text = choice["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderUnavailable(f"malformed provider response: {exc}") from exc
        finish = choice.get("finish_reason") or "stop"
        if finish not in ("stop", "length"):
            finish = "stop"
        return CompletionResult(
            text=text, finish_reason=finish, usage=dict(body.get("usage", {}))
        )


Provider = Union[MockProvider, HttpProvider]


def complete(provider, prompt: PromptBundle) -> CompletionResult:
    """Run one completion. Accepts a provider object or a ProviderConfig."""
    if isinstance(provider, ProviderConfig):
        provider = HttpProvider(provider)
    return provider.complete(prompt)


# ---------------------------------------------------------------------------
# embedding providers


class MockEmbeddingProvider:
    """Deterministic embeddings: explicit per-text vectors or hash-derived."""

    def __init__(self, vectors: Optional[Mapping[str, Sequence[float]]] = None, dim: int = 8):
        self.vectors = dict(vectors or {})
        self.dim = dim

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        out = []
        for text in texts:
            if text in self.vectors:
                out.append([float(v) for v in self.vectors[text]])
                continue
            digest = hashlib.sha256(text.encode("utf-8")).digest()
            out.append([digest[i % len(digest)] / 255.0 for i in range(self.dim)])
        return out


class HttpEmbeddingProvider:
    """OpenAI-compatible embeddings client (``input`` batch in, vectors out)."""

    def __init__(self, cfg: ProviderConfig, session: Optional[requests.Session] = None):
        self.cfg = cfg
        self.session = session or requests.Session()

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        headers = {"Content-Type": "application/json"}
        if self.cfg.credential_ref:
            token = os.environ.get(self.cfg.credential_ref)
            if not token:
                raise AuthFailure(
                    f"credential variable {self.cfg.credential_ref} is not set"
                )
            headers["Authorization"] = f"Bearer {token}"
        try:
            response = self.session.post(
                self.cfg.endpoint,
                json={"model": self.cfg.model_name, "input": list(texts)},
                headers=headers,
                timeout=self.cfg.timeout,
            )
        except requests.RequestException as exc:
            raise ProviderUnavailable(f"embedding provider unreachable: {exc}") from exc
        if response.status_code in (401, 403):
            raise AuthFailure(f"provider rejected credentials ({response.status_code})")
        if response.status_code != 200:
            raise ProviderUnavailable(
                f"embedding provider error {response.status_code}: {response.text[:200]}"
            )
        body = response.json()
        return [row["embedding"] for row in body["data"]]


# ---------------------------------------------------------------------------
# structured output extraction


def extract_structured(text: str) -> dict:
    """First balanced JSON object found in model output.

    Fenced code blocks are tried first, then a brace scan over the raw text
    that respects string literals and escapes. Raises
    :class:`NoStructuredPayload` when nothing parses.
    """
    if text:
        for candidate in _fenced_blocks(text):
            parsed = _try_parse(candidate)
            if parsed is not None:
                return parsed
        for candidate in _balanced_objects(text):
            parsed = _try_parse(candidate)
            if parsed is not None:
                return parsed
    raise NoStructuredPayload("no balanced JSON object found in model output")


def _try_parse(candidate: str) -> Optional[dict]:
    try:
        parsed = json.loads(candidate)
    except json.JSONDecodeError:
        return None
    return parsed if isinstance(parsed, dict) else None


def _fenced_blocks(text: str):
    pieces = text.split("```")
    # Fence contents are the odd-numbered pieces; strip a leading language tag.
    for i in range(1, len(pieces), 2):
        block = pieces[i]
        first_newline = block.find("\n")
        if first_newline != -1 and block[:first_newline].strip().isalpha():
            block = block[first_newline + 1 :]
        yield block.strip()


def _balanced_objects(text: str):
    start = text.find("{")
    while start != -1:
        end = _scan_balanced(text, start)
        if end is not None:
            yield text[start : end + 1]
        start = text.find("{", start + 1)


def _scan_balanced(text: str, start: int) -> Optional[int]:
    depth = 0
    in_string = False
    escaped = False
    for i in range(start, len(text)):
        char = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif char == "\\":
                escaped = True
            elif char == '"':
                in_string = False
            continue
        if char == '"':
            in_string = True
        elif char == "{":
            depth += 1
        elif char == "}":
            depth -= 1
            if depth == 0:
                return i
    return None


# ---------------------------------------------------------------------------
# synthetic contract descriptions


def synthesize_description(provider, cdm_example: dict, reference_texts: Sequence[str]) -> str:
    """Generate a natural-language contract description from a CDM instance.

    The prompt embeds the structured example plus any reference term sheets
    as style guides. ``provider`` may be a provider object or a
    :class:`ProviderConfig`.
    """
    if not cdm_example:
        raise ValueError("cdm_example must be a non-empty structured value")
    sections = [prompts.load("synthesize_instructions.txt")]
    for i, reference in enumerate(reference_texts, start=1):
        sections.append(f"Reference term sheet {i}:\n{reference}")
    sections.append(
        "Structured contract data:\n" + json.dumps(cdm_example, indent=2, ensure_ascii=False)
    )
    bundle = PromptBundle(
        system_text=prompts.load("synthesize_system.txt"),
        user_text="\n\n".join(sections),
    )
    return complete(provider, bundle).text
