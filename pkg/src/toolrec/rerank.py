"""Constrained list-wise re-ranking of a fixed candidate pool.

A backend (offline heuristic, test callable, or external HTTP model) receives
a deterministic prompt holding the task, ranking criteria and one card per
candidate, and must return a structured object naming exactly K pool ids.
Validation is strict: wrong length, foreign or duplicated ids, altered
identifiers, or more than two substitutions against the pre-rerank top-K all
discard the output in favor of the fused-order prefix. Backend failures are
absorbed the same way; the caller never sees an exception.
"""

from __future__ import annotations

import abc
import json
import logging
import os
from dataclasses import dataclass, field

import requests

from .lexical import tokenize

logger = logging.getLogger(__name__)

MAX_SUBSTITUTIONS = 2


class BackendConfigError(ValueError):
    """Raised at construction time; per-request failures never surface."""


@dataclass(frozen=True)
class CandidateCard:
    """Compact, deterministic serialization of one server for the prompt."""

    id: str
    name: str
    description: str
    tools: tuple[str, ...] = ()
    category: str = ""
    subcategory: str = ""
    language: str = ""
    system: str = "any"
    license: str = ""
    official: bool = False

    @classmethod
    def from_record(cls, record) -> "CandidateCard":
        return cls(
            id=record.id,
            name=record.name,
            description=record.description,
            tools=tuple(record.tools),
            category=record.category,
            subcategory=record.subcategory,
            language=record.language,
            system=record.system,
            license=record.license,
            official=record.official,
        )

    def render(self) -> str:
        lines = [f"- id: {self.id}",
                 f"  name: {self.name}",
                 f"  description: {self.description}"]
        if self.tools:
            lines.append(f"  tools: {', '.join(self.tools)}")
        meta = (f"category={self.category}/{self.subcategory} "
                f"language={self.language or 'unspecified'} system={self.system} "
                f"license={self.license or 'unspecified'} "
                f"official={'yes' if self.official else 'no'}")
        lines.append(f"  metadata: {meta}")
        return "\n".join(lines)

    def text(self) -> str:
        return " ".join(filter(None, [
            self.name, self.description, " ".join(self.tools), self.category,
            self.subcategory, self.language, self.system]))


@dataclass(frozen=True)
class RerankRequest:
    """Everything a backend may see: task, constraints, pool cards, K."""

    task_text: str
    constraints: dict
    cards: tuple[CandidateCard, ...]
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("K must be >= 1")
        if self.k > len(self.cards):
            raise ValueError(f"K={self.k} exceeds pool size {len(self.cards)}")
        ids = [c.id for c in self.cards]
        if len(set(ids)) != len(ids):
            raise ValueError("candidate pool contains duplicate ids")

    def pool_ids(self) -> tuple[str, ...]:
        return tuple(c.id for c in self.cards)


@dataclass(frozen=True)
class RerankResult:
    ids: tuple[str, ...]
    explanation: str = ""
    status: str = "accepted"            # accepted | fallback
    reason: str | None = None           # set when status == fallback
    substitutions: int = 0
    warnings: tuple[str, ...] = field(default_factory=tuple)


def build_prompt(request: RerankRequest) -> str:
    """Deterministic prompt: Role, Task Data, Ranking Criteria, Candidate
    Cards (pool order), Rules, Output schema."""
    constraint_lines = [f"  {key}: {value}"
                        for key, value in sorted(request.constraints.items())
                        if value]
    constraints = "\n".join(constraint_lines) if constraint_lines else "  none stated"
    cards = "\n".join(card.render() for card in request.cards)
    k = request.k
    return f"""## Role
You rank tool servers for a developer task. You may only reorder the given candidates; you never invent new ones.

## Task Data
Task: {request.task_text}
Constraints:
{constraints}

## Ranking Criteria
1. Semantic fit between the task and the server's description and tools.
2. Compatibility with the stated constraints (language, system, theme).
3. Maturity signals: official status and license clarity.

## Candidate Cards
{cards}

## Rules
1. Return exactly {k} MCP server identifiers.
2. Every identifier must come from the Candidate Cards above.
3. No identifier may appear twice.
4. Preserve each identifier exactly as given.
5. At most {MAX_SUBSTITUTIONS} positions may differ from the first {k} candidates as listed.
6. Reply with a single JSON object and nothing else.

## Output
{{"Task": "<restate the task>", "MCP_servers": ["<id1>", "...", "<id{k}>"], "Explanation": "<one short paragraph>"}}
"""


def _extract_object(raw: str):
    """Parse the response as JSON, tolerating surrounding prose or fences."""
    try:
        return json.loads(raw)
    except (json.JSONDecodeError, TypeError):
        pass
    if not isinstance(raw, str):
        return None
    start = raw.find("{")
    while start != -1:
        depth = 0
        for i in range(start, len(raw)):
            if raw[i] == "{":
                depth += 1
            elif raw[i] == "}":
                depth -= 1
                if depth == 0:
                    try:
                        return json.loads(raw[start:i + 1])
                    except json.JSONDecodeError:
                        break
        start = raw.find("{", start + 1)
    return None


def _fallback(pre_order, k: int, reason: str) -> RerankResult:
    return RerankResult(ids=tuple(pre_order[:k]), status="fallback", reason=reason)


def validate(raw_output: str, pool, pre_order, k: int) -> RerankResult:
    """Strictly check a backend response; all failures become fallback.

    Checks, in order: parseable object, MCP_servers list present, exact
    identifier fidelity, membership in the pool, uniqueness, length == K,
    and at most two substitutions against the pre-rerank top-K. A missing
    Explanation is only a warning.
    """
    pool = set(pool)
    pre_order = list(pre_order)
    obj = _extract_object(raw_output)
    if not isinstance(obj, dict):
        return _fallback(pre_order, k, "format")
    ids = obj.get("MCP_servers")
    if not isinstance(ids, list):
        return _fallback(pre_order, k, "format")
    exact: list[str] = []
    for item in ids:
        if not isinstance(item, str):
            return _fallback(pre_order, k, "format")
        if item not in pool:
            if item.strip() in pool or item.strip().casefold() in {
                    p.casefold() for p in pool}:
                return _fallback(pre_order, k, "identifier")
            return _fallback(pre_order, k, "membership")
        exact.append(item)
    if len(set(exact)) != len(exact):
        return _fallback(pre_order, k, "uniqueness")
    if len(exact) != k:
        return _fallback(pre_order, k, "length")
    substitutions = len(set(exact) - set(pre_order[:k]))
    if substitutions > MAX_SUBSTITUTIONS:
        return _fallback(pre_order, k, "substitution")
    warnings = ()
    explanation = obj.get("Explanation")
    if not isinstance(explanation, str) or not explanation.strip():
        warnings = ("missing explanation",)
        explanation = ""
    return RerankResult(ids=tuple(exact), explanation=explanation,
                        status="accepted", substitutions=substitutions,
                        warnings=warnings)


class RerankBackend(abc.ABC):
    """Synchronous text-in/text-out re-ranking backend."""

    name = "backend"

    @abc.abstractmethod
    def generate(self, request: RerankRequest, prompt: str) -> str:
        """Return the raw model output for one prompt."""


def builtin_heuristic_rerank(request: RerankRequest) -> list[str]:
    """Deterministic offline reordering by lexical overlap with the task.

    Only the pre-rank top-K plus the two strongest newcomers compete, so the
    result can never exceed the substitution budget; ties keep pool order.
    """
    task_tokens = set(tokenize(request.task_text))
    pool = request.pool_ids()
    position = {server_id: i for i, server_id in enumerate(pool)}
    overlap = {
        card.id: len(task_tokens & set(tokenize(card.text())))
        for card in request.cards
    }

    def sort_key(server_id):
        return (-overlap[server_id], position[server_id])

    top_k = set(pool[:request.k])
    newcomers = sorted((i for i in pool if i not in top_k), key=sort_key)
    eligible = sorted(top_k | set(newcomers[:MAX_SUBSTITUTIONS]), key=sort_key)
    return eligible[:request.k]


class BuiltinHeuristicBackend(RerankBackend):
    """Offline backend: overlap-ranked ids wrapped in the output schema."""

    name = "builtin"

    def generate(self, request: RerankRequest, prompt: str) -> str:
        ids = builtin_heuristic_rerank(request)
        return json.dumps({
            "Task": request.task_text,
            "MCP_servers": ids,
            "Explanation": "Ranked by token overlap between the task and each "
                           "candidate's name, description and tools.",
        })


class CallableBackend(RerankBackend):
    """Adapter for tests: any prompt -> text function."""

    name = "callable"

    def __init__(self, fn):
        self._fn = fn

    def generate(self, request: RerankRequest, prompt: str) -> str:
        return self._fn(request, prompt)


class ExternalHTTPBackend(RerankBackend):
    """Chat-completions style HTTP backend with deterministic decoding.

    Credentials come from an environment variable; a missing endpoint or
    credential fails construction, not individual requests.
    """

    name = "external"

    def __init__(self, endpoint: str, model: str, api_key_env: str = "RERANK_API_KEY",
                 timeout: float = 30.0, debug: bool = False):
        if not endpoint:
            raise BackendConfigError("external backend needs an endpoint URL")
        if not model:
            raise BackendConfigError("external backend needs a model name")
        api_key = os.environ.get(api_key_env, "")
        if not api_key:
            raise BackendConfigError(
                f"environment variable {api_key_env} is not set")
        self.endpoint = endpoint
        self.model = model
        self.timeout = timeout
        self.debug = debug
        self._headers = {"Authorization": f"Bearer {api_key}",
                         "Content-Type": "application/json"}

    def generate(self, request: RerankRequest, prompt: str) -> str:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        }
        if self.debug:
            logger.debug("rerank prompt:\n%s", prompt)
        response = requests.post(self.endpoint, json=payload,
                                 headers=self._headers, timeout=self.timeout)
        response.raise_for_status()
        text = response.json()["choices"][0]["message"]["content"]
        if self.debug:
            logger.debug("rerank response:\n%s", text)
        return text


def rerank(request: RerankRequest, backend: RerankBackend | None) -> RerankResult:
    """One backend call, strict validation, fallback on any failure.

    backend=None is the identity path: the fused-order prefix is returned as
    accepted without any call.
    """
    pre_order = request.pool_ids()
    if backend is None:
        return RerankResult(ids=pre_order[:request.k], status="accepted")
    prompt = build_prompt(request)
    try:
        raw = backend.generate(request, prompt)
    except Exception as exc:
        logger.warning("rerank backend %s failed: %s", backend.name, exc)
        return _fallback(pre_order, request.k, "backend_error")
    return validate(raw, pre_order, pre_order, request.k)
