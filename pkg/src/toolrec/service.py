"""HTTP recommendation service.

A request flows through four stages: rule-based parsing of the free-text task
into a structured spec (with clarification questions when the intent is too
thin to embed), recommendation through the engine, evidence bundling from
corpus fields and engine scores, and reliability checks (format, correctness,
truthfulness) with a single stricter regeneration before falling back to a
bare metadata bundle. Sessions are in-memory; each one is mutated under its
own lock.
"""

from __future__ import annotations

import logging
import re
import threading
import uuid
from dataclasses import dataclass, field

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .corpus import TaskRecord
from .lexical import tokenize
from .recommender import Engine, RankedList, RecommendConfig

logger = logging.getLogger(__name__)

TOP_K = 5

# Constraint extraction vocabulary. Languages map surface forms to canonical
# names; systems cover the server metadata enum.
LANGUAGE_PATTERNS = {
    "python": "python", "py": "python",
    "go": "go", "golang": "go",
    "javascript": "javascript", "js": "javascript", "node": "javascript",
    "nodejs": "javascript",
    "typescript": "typescript", "ts": "typescript",
    "rust": "rust",
    "java": "java",
    "kotlin": "kotlin",
    "swift": "swift",
    "ruby": "ruby",
    "php": "php",
    "csharp": "csharp", "c#": "csharp", "dotnet": "csharp",
    "cpp": "cpp", "c++": "cpp",
}
SYSTEM_PATTERNS = {"windows": "windows", "linux": "linux", "ios": "ios"}
MIN_INTENT_TOKENS = 2

# Words that signal a constraint tweak rather than a new task ("actually make
# it Go"); a message reduced to these keeps the session's previous intent.
FILLER_TOKENS = frozenset(
    "actually make it use instead please switch change prefer rather just "
    "now the a an to in on for with and or but my this that".split())


@dataclass(frozen=True)
class StructuredTaskSpec:
    """What the parser produces: intent plus optional constraints."""

    intent: str
    constraints: dict = field(default_factory=dict)
    clarifications: tuple[str, ...] = ()

    @property
    def complete(self) -> bool:
        return not self.clarifications

    def to_task_record(self) -> TaskRecord:
        return TaskRecord(
            id="session-task",
            name="",
            description=self.intent,
            language=self.constraints.get("language", ""),
            category=self.constraints.get("category", ""),
            subcategory=self.constraints.get("subcategory", ""),
            theme=self.constraints.get("theme", ""),
        )


@dataclass
class SessionState:
    session_id: str
    intent: str = ""
    constraints: dict = field(default_factory=dict)
    history: list = field(default_factory=list)
    last_pool: tuple[str, ...] = ()
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)


def parse_request(user_text: str, session: SessionState | None = None,
                  overrides: dict | None = None,
                  clear_constraints: bool = False) -> StructuredTaskSpec:
    """Deterministic rule-based extraction of constraints from free text.

    Session constraints carry over (most recent wins) unless explicitly
    cleared; explicit overrides beat extracted values. Constraints are
    optional, but an intent too short to embed yields a clarification
    question instead of a spec.
    """
    text = (user_text or "").strip()
    constraints: dict = {}
    if session is not None and not clear_constraints:
        constraints.update(session.constraints)

    lowered = " " + text.lower() + " "
    matched_surfaces = set()
    for surface, canonical in LANGUAGE_PATTERNS.items():
        if re.search(rf"(?<![0-9a-z+#]){re.escape(surface)}(?![0-9a-z])", lowered):
            constraints["language"] = canonical
            matched_surfaces.add(surface)
            break
    for surface, canonical in SYSTEM_PATTERNS.items():
        if re.search(rf"\b{re.escape(surface)}\b", lowered):
            constraints["system"] = canonical
            matched_surfaces.add(surface)
            break
    if overrides:
        constraints.update({k: v for k, v in overrides.items() if v})
        constraints = {k: v for k, v in constraints.items() if v}

    # A message that is nothing but constraint words and filler refines the
    # previous turn's task instead of replacing it.
    substantive = [t for t in tokenize(text)
                   if t not in FILLER_TOKENS and t not in matched_surfaces]
    prior_intent = session.intent if session else ""
    if text and (substantive or not prior_intent):
        intent = text
    else:
        intent = prior_intent

    clarifications = []
    if len(tokenize(intent)) < MIN_INTENT_TOKENS:
        clarifications.append(
            "Could you describe the task in more detail? A sentence about "
            "what the tool should do is enough.")
    return StructuredTaskSpec(intent=intent, constraints=constraints,
                              clarifications=tuple(clarifications))


def _matched_capabilities(task_text: str, record) -> list[str]:
    """Tokens shared by the task and the server's own text, for evidence."""
    task_tokens = set(tokenize(task_text))
    server_tokens = []
    seen = set()
    for source in ([record.name, record.description] + list(record.tools)):
        for token in tokenize(source):
            if token in task_tokens and token not in seen:
                seen.add(token)
                server_tokens.append(token)
    return server_tokens[:8]


def _guidance(record) -> str:
    """Adoption guidance templated purely from corpus fields."""
    bits = [f"{record.name or record.id} serves the "
            f"{record.category or 'general'} category"]
    if record.language:
        bits.append(f"implemented in {record.language}")
    if record.system and record.system != "any":
        bits.append(f"targets {record.system}")
    if record.official:
        bits.append("officially maintained")
    if record.license:
        bits.append(f"licensed under {record.license}")
    return "; ".join(bits) + "."


def build_draft(ranked: RankedList, spec: StructuredTaskSpec, engine: Engine,
                k: int) -> dict:
    """Assemble the response payload with per-server evidence bundles."""
    recommendations = []
    for item in ranked.items[:k]:
        record = engine.servers[item.id]
        evidence = {
            "metadata": {
                "category": record.category,
                "subcategory": record.subcategory,
                "language": record.language,
                "system": record.system,
                "license": record.license,
                "official": record.official,
            },
            "repo_url": record.repo_url,
            "matched_capabilities": _matched_capabilities(spec.intent, record),
            "guidance": _guidance(record),
            "provenance": item.provenance,
        }
        if ranked.status == "accepted" and ranked.explanation:
            evidence["explanation"] = ranked.explanation
        recommendations.append({
            "id": item.id,
            "name": record.name,
            "rank": item.rank,
            "scores": {
                "semantic": item.scores.semantic,
                "structural": item.scores.structural,
                "fused": item.scores.fused,
            },
            "evidence": evidence,
        })
    return {"recommendations": recommendations, "status": ranked.status,
            "reason": ranked.reason}


def build_fallback_bundle(ranked: RankedList, engine: Engine, k: int) -> dict:
    """Bare-metadata bundle used when a draft fails its checks twice."""
    recommendations = []
    for item in ranked.items[:k]:
        record = engine.servers[item.id]
        recommendations.append({
            "id": item.id,
            "name": record.name,
            "rank": item.rank,
            "scores": {
                "semantic": item.scores.semantic,
                "structural": item.scores.structural,
                "fused": item.scores.fused,
            },
            "evidence": {
                "metadata": {
                    "category": record.category,
                    "subcategory": record.subcategory,
                    "language": record.language,
                    "system": record.system,
                    "license": record.license,
                    "official": record.official,
                },
                "repo_url": record.repo_url,
                "matched_capabilities": [],
                "guidance": "",
                "provenance": item.provenance,
            },
        })
    return {"recommendations": recommendations, "status": "fallback",
            "reason": "reliability"}


def reliability_check(draft: dict, pool, engine: Engine, k: int,
                      task_text: str) -> str:
    """Format, correctness and truthfulness checks, in that order.

    Returns "pass" or the name of the first failed check. Truthfulness means
    every evidence claim is a verbatim corpus field or an engine score.
    """
    recs = draft.get("recommendations")
    if not isinstance(recs, list) or "status" not in draft:
        return "format"
    for rec in recs:
        if not isinstance(rec, dict):
            return "format"
        if not {"id", "name", "rank", "scores", "evidence"} <= set(rec):
            return "format"

    pool = set(pool)
    if len(recs) > k:
        return "correctness"
    ids = [rec["id"] for rec in recs]
    if len(set(ids)) != len(ids):
        return "correctness"
    for i, rec in enumerate(recs, start=1):
        if rec["id"] not in pool or rec["rank"] != i:
            return "correctness"

    task_tokens = set(tokenize(task_text))
    for rec in recs:
        record = engine.servers[rec["id"]]
        evidence = rec["evidence"]
        meta = evidence.get("metadata", {})
        expected = {
            "category": record.category, "subcategory": record.subcategory,
            "language": record.language, "system": record.system,
            "license": record.license, "official": record.official,
        }
        if meta != expected:
            return "truthfulness"
        if evidence.get("repo_url", "") != record.repo_url:
            return "truthfulness"
        server_tokens = set(tokenize(" ".join(
            [record.name, record.description] + list(record.tools))))
        for token in evidence.get("matched_capabilities", []):
            if token not in server_tokens or token not in task_tokens:
                return "truthfulness"
    return "pass"


class RecommendBody(BaseModel):
    task_text: str = ""
    session_id: str | None = None
    constraints: dict | None = None
    clear_constraints: bool = False
    k: int | None = None


def create_app(engine: Engine | None = None,
               recommend_config: RecommendConfig | None = None,
               backend=None, draft_builder=None) -> FastAPI:
    """Build the service; `engine` may be attached later via app.state.

    `draft_builder` lets a richer (possibly generative) response assembler
    replace the default; whatever it produces still has to survive the
    reliability checks, with one strict regeneration before the bare fallback.
    """
    app = FastAPI(title="tool server recommendation service")
    app.state.engine = engine
    app.state.recommend_config = recommend_config or RecommendConfig()
    app.state.backend = backend
    app.state.draft_builder = draft_builder or build_draft
    app.state.sessions = {}
    app.state.sessions_lock = threading.Lock()

    def _get_engine() -> Engine:
        if app.state.engine is None:
            raise HTTPException(status_code=503, detail="engine not ready")
        return app.state.engine

    def _new_session() -> SessionState:
        session = SessionState(session_id=uuid.uuid4().hex)
        with app.state.sessions_lock:
            app.state.sessions[session.session_id] = session
        return session

    @app.get("/health")
    def health():
        ready = app.state.engine is not None
        payload = {"status": "ok" if ready else "loading"}
        if ready:
            payload["servers"] = len(app.state.engine.index)
            payload["snapshot"] = app.state.engine.index.snapshot_id
        return payload

    @app.post("/sessions")
    def create_session():
        session = _new_session()
        return {"session_id": session.session_id}

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        with app.state.sessions_lock:
            session = app.state.sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail="unknown session")
        with session.lock:
            return {
                "session_id": session.session_id,
                "intent": session.intent,
                "constraints": dict(session.constraints),
                "turns": len(session.history),
                "history": list(session.history),
            }

    @app.post("/recommend")
    def recommend(body: RecommendBody):
        engine = _get_engine()
        if not body.task_text.strip() and not body.session_id:
            raise HTTPException(status_code=400, detail="task_text is required")

        session = None
        if body.session_id:
            with app.state.sessions_lock:
                session = app.state.sessions.get(body.session_id)
        if session is None:
            session = _new_session()

        with session.lock:
            spec = parse_request(body.task_text, session, body.constraints,
                                 body.clear_constraints)
            if not spec.intent:
                raise HTTPException(status_code=400, detail="task_text is required")
            request_record = {
                "task_text": body.task_text,
                "constraints": dict(body.constraints or {}),
                "clear_constraints": body.clear_constraints,
            }
            if not spec.complete:
                response = {
                    "session_id": session.session_id,
                    "recommendations": [],
                    "status": "clarification",
                    "clarifications": list(spec.clarifications),
                }
                session.history.append(
                    {"request": request_record, "response": response})
                return response

            session.intent = spec.intent
            session.constraints = dict(spec.constraints)

            base = app.state.recommend_config
            k = body.k if body.k is not None else TOP_K
            if k < 1 or k > base.k:
                raise HTTPException(status_code=400,
                                    detail=f"k must be in [1, {base.k}]")
            ranked = engine.recommend(spec.to_task_record(), base,
                                      app.state.backend)
            pool_ids = ranked.pool.members() if ranked.pool else ()

            draft = app.state.draft_builder(ranked, spec, engine, k)
            verdict = reliability_check(draft, pool_ids, engine, k, spec.intent)
            if verdict != "pass":
                logger.warning("draft failed %s check; regenerating strictly",
                               verdict)
                draft = build_draft(ranked, spec, engine, k)
                verdict = reliability_check(draft, pool_ids, engine, k,
                                            spec.intent)
                if verdict != "pass":
                    logger.warning("regenerated draft failed %s check; "
                                   "falling back to bare metadata", verdict)
                    draft = build_fallback_bundle(ranked, engine, k)

            response = {
                "session_id": session.session_id,
                "recommendations": draft["recommendations"],
                "status": draft["status"],
                "reason": draft.get("reason"),
                "constraints": dict(spec.constraints),
            }
            session.last_pool = pool_ids
            session.history.append({"request": request_record,
                                    "response": response})
            return response

    return app
