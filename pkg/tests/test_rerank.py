import json
import random

import pytest

from conftest import make_server
from toolrec.corpus import McpRecord
from toolrec.rerank import (MAX_SUBSTITUTIONS, BackendConfigError,
                            BuiltinHeuristicBackend, CallableBackend,
                            CandidateCard, ExternalHTTPBackend, RerankRequest,
                            build_prompt, builtin_heuristic_rerank, rerank,
                            validate)


def cards_for(n, task_text="query the database", k=3, descriptions=None):
    cards = []
    for i in range(n):
        rec = McpRecord.from_dict(make_server(i))
        if descriptions:
            rec = McpRecord(**{**rec.__dict__, "description": descriptions[i]})
        cards.append(CandidateCard.from_record(rec))
    return RerankRequest(task_text=task_text, constraints={},
                         cards=tuple(cards), k=k)


def good_output(ids, explanation="because"):
    return json.dumps({"Task": "t", "MCP_servers": list(ids),
                       "Explanation": explanation})


# ---------------------------------------------------------------- cards


def test_card_from_record_round_trip():
    rec = McpRecord.from_dict(make_server(1))
    card = CandidateCard.from_record(rec)
    assert card.id == rec.id
    assert card.tools == rec.tools
    rendered = card.render()
    assert f"- id: {rec.id}" in rendered
    assert rec.description in rendered
    assert "metadata:" in rendered


def test_request_validation():
    req = cards_for(5, k=3)
    with pytest.raises(ValueError, match="K must be"):
        RerankRequest("t", {}, req.cards, 0)
    with pytest.raises(ValueError, match="exceeds pool"):
        RerankRequest("t", {}, req.cards, 6)
    with pytest.raises(ValueError, match="duplicate"):
        RerankRequest("t", {}, req.cards + (req.cards[0],), 3)


# ---------------------------------------------------------------- prompt


def test_prompt_is_deterministic_and_complete():
    req = cards_for(4, k=2)
    p1 = build_prompt(req)
    p2 = build_prompt(req)
    assert p1 == p2
    assert "Return exactly 2 MCP server identifiers" in p1
    assert f"At most {MAX_SUBSTITUTIONS} positions" in p1
    for card in req.cards:
        assert f"- id: {card.id}" in p1
    for section in ("## Role", "## Task Data", "## Ranking Criteria",
                    "## Candidate Cards", "## Rules", "## Output"):
        assert section in p1
    assert '"MCP_servers"' in p1
    assert "none stated" in p1  # no constraints given


def test_prompt_constraints_sorted():
    req = cards_for(3, k=2)
    req = RerankRequest(req.task_text, {"language": "python", "system": "linux",
                                        "empty": ""}, req.cards, 2)
    prompt = build_prompt(req)
    assert "language: python" in prompt
    assert "system: linux" in prompt
    assert "empty" not in prompt
    assert prompt.index("language: python") < prompt.index("system: linux")


def test_prompt_cards_in_pool_order():
    req = cards_for(4, k=2)
    prompt = build_prompt(req)
    positions = [prompt.index(f"- id: {c.id}") for c in req.cards]
    assert positions == sorted(positions)


# ---------------------------------------------------------------- validate


@pytest.fixture
def pool5():
    req = cards_for(5, k=3)
    return req.pool_ids()


def test_validate_accepts_clean_output(pool5):
    result = validate(good_output(pool5[:3]), pool5, pool5, 3)
    assert result.status == "accepted"
    assert result.ids == pool5[:3]
    assert result.substitutions == 0
    assert result.explanation == "because"
    assert result.warnings == ()


def test_validate_tolerates_surrounding_prose(pool5):
    wrapped = "Sure! Here you go:\n```json\n" + good_output(pool5[:3]) + "\n```"
    result = validate(wrapped, pool5, pool5, 3)
    assert result.status == "accepted"
    assert result.ids == pool5[:3]


def test_validate_format_failures(pool5):
    for raw in ("not json at all", "[1,2,3]", '{"MCP_servers": "m000"}',
                '{"other": []}', json.dumps({"MCP_servers": [1, 2, 3]})):
        result = validate(raw, pool5, pool5, 3)
        assert result.status == "fallback"
        assert result.reason == "format"
        assert result.ids == pool5[:3]


def test_validate_identifier_mangling(pool5):
    mangled = [pool5[0].upper(), pool5[1], pool5[2]]
    result = validate(good_output(mangled), pool5, pool5, 3)
    assert result.reason == "identifier"
    padded = [" " + pool5[0], pool5[1], pool5[2]]
    result = validate(good_output(padded), pool5, pool5, 3)
    assert result.reason == "identifier"


def test_validate_membership(pool5):
    result = validate(good_output(["ghost", pool5[0], pool5[1]]),
                      pool5, pool5, 3)
    assert result.reason == "membership"


def test_validate_uniqueness(pool5):
    result = validate(good_output([pool5[0], pool5[0], pool5[1]]),
                      pool5, pool5, 3)
    assert result.reason == "uniqueness"


def test_validate_length(pool5):
    result = validate(good_output(pool5[:2]), pool5, pool5, 3)
    assert result.reason == "length"
    result = validate(good_output(pool5[:4]), pool5, pool5, 3)
    assert result.reason == "length"


def test_validate_substitution_budget(pool5):
    # Swapping in two newcomers is allowed...
    two_subs = [pool5[0], pool5[3], pool5[4]]
    result = validate(good_output(two_subs), pool5, pool5, 3)
    assert result.status == "accepted"
    assert result.substitutions == 2
    # ...three is not (k=3 against a pool of 6).
    req = cards_for(6, k=3)
    pool6 = req.pool_ids()
    three_subs = [pool6[3], pool6[4], pool6[5]]
    result = validate(good_output(three_subs), pool6, pool6, 3)
    assert result.reason == "substitution"
    assert result.ids == pool6[:3]


def test_validate_reordering_within_topk_is_free(pool5):
    # Permuting the original top-K costs no substitutions.
    result = validate(good_output([pool5[2], pool5[0], pool5[1]]),
                      pool5, pool5, 3)
    assert result.status == "accepted"
    assert result.substitutions == 0


def test_validate_missing_explanation_is_warning(pool5):
    raw = json.dumps({"Task": "t", "MCP_servers": list(pool5[:3])})
    result = validate(raw, pool5, pool5, 3)
    assert result.status == "accepted"
    assert result.warnings == ("missing explanation",)
    assert result.explanation == ""


def test_validate_fallback_is_prefix(pool5):
    result = validate("garbage", pool5, pool5, 2)
    assert result.ids == pool5[:2]
    assert result.status == "fallback"


# ---------------------------------------------------------------- builtin


def test_builtin_promotes_overlapping_newcomer():
    descriptions = ["nothing here", "also nothing", "still nothing",
                    "query the database now", "irrelevant"]
    req = cards_for(5, task_text="query the database", k=2,
                    descriptions=descriptions)
    ids = builtin_heuristic_rerank(req)
    assert len(ids) == 2
    assert req.pool_ids()[3] in ids  # the matching newcomer got in


def test_builtin_limits_newcomers():
    descriptions = ["x", "x", "query database match", "query database match",
                    "query database match"]
    req = cards_for(5, task_text="query database match", k=2,
                    descriptions=descriptions)
    ids = builtin_heuristic_rerank(req)
    result = validate(good_output(ids), req.pool_ids(), req.pool_ids(), 2)
    assert result.status == "accepted"
    assert result.substitutions <= MAX_SUBSTITUTIONS


def test_builtin_ties_keep_pool_order():
    req = cards_for(4, task_text="zzz nothing matches", k=3)
    ids = builtin_heuristic_rerank(req)
    assert ids == list(req.pool_ids()[:3])


def test_builtin_always_valid_property():
    rng = random.Random(7)
    words = ["query", "database", "files", "search", "email", "chat", "build"]
    for trial in range(100):
        n = rng.randint(1, 8)
        k = rng.randint(1, n)
        descriptions = [" ".join(rng.choices(words, k=rng.randint(1, 5)))
                        for _ in range(n)]
        task = " ".join(rng.choices(words, k=rng.randint(1, 4)))
        req = cards_for(n, task_text=task, k=k, descriptions=descriptions)
        ids = builtin_heuristic_rerank(req)
        result = validate(good_output(ids), req.pool_ids(), req.pool_ids(), k)
        assert result.status == "accepted", (trial, result.reason)


def test_builtin_backend_output_parses():
    req = cards_for(4, k=2)
    backend = BuiltinHeuristicBackend()
    raw = backend.generate(req, build_prompt(req))
    obj = json.loads(raw)
    assert set(obj) == {"Task", "MCP_servers", "Explanation"}
    result = rerank(req, backend)
    assert result.status == "accepted"
    assert result.explanation


# ---------------------------------------------------------------- rerank flow


def test_rerank_none_backend_is_identity_prefix():
    req = cards_for(5, k=3)
    result = rerank(req, None)
    assert result.status == "accepted"
    assert result.ids == req.pool_ids()[:3]
    assert result.explanation == ""


def test_rerank_calls_backend_exactly_once():
    req = cards_for(4, k=2)
    calls = []

    def fn(request, prompt):
        calls.append(prompt)
        return good_output(request.pool_ids()[:2])

    result = rerank(req, CallableBackend(fn))
    assert len(calls) == 1
    assert "## Rules" in calls[0]
    assert result.status == "accepted"


def test_rerank_backend_exception_falls_back(caplog):
    req = cards_for(4, k=2)

    def boom(request, prompt):
        raise RuntimeError("socket closed")

    with caplog.at_level("WARNING"):
        result = rerank(req, CallableBackend(boom))
    assert result.status == "fallback"
    assert result.reason == "backend_error"
    assert result.ids == req.pool_ids()[:2]
    assert "socket closed" in caplog.text


def test_rerank_invalid_output_falls_back():
    req = cards_for(4, k=2)
    result = rerank(req, CallableBackend(lambda r, p: "no json here"))
    assert result.status == "fallback"
    assert result.reason == "format"
    assert result.ids == req.pool_ids()[:2]


# ---------------------------------------------------------------- external


def test_external_backend_construction_errors(monkeypatch):
    monkeypatch.delenv("RERANK_API_KEY", raising=False)
    with pytest.raises(BackendConfigError, match="endpoint"):
        ExternalHTTPBackend(endpoint="", model="m")
    with pytest.raises(BackendConfigError, match="model"):
        ExternalHTTPBackend(endpoint="http://x", model="")
    with pytest.raises(BackendConfigError, match="RERANK_API_KEY"):
        ExternalHTTPBackend(endpoint="http://x", model="m")


def test_external_backend_posts_deterministic_payload(monkeypatch):
    monkeypatch.setenv("RERANK_API_KEY", "secret")
    backend = ExternalHTTPBackend(endpoint="http://llm.test/v1", model="mini")
    req = cards_for(3, k=2)
    seen = {}

    class FakeResponse:
        def raise_for_status(self):
            pass

        def json(self):
            return {"choices": [{"message": {
                "content": good_output(req.pool_ids()[:2])}}]}

    def fake_post(url, json=None, headers=None, timeout=None):
        seen.update(url=url, payload=json, headers=headers, timeout=timeout)
        return FakeResponse()

    import importlib
    rerank_mod = importlib.import_module("toolrec.rerank")
    monkeypatch.setattr(rerank_mod.requests, "post", fake_post)
    result = rerank(req, backend)
    assert result.status == "accepted"
    assert seen["url"] == "http://llm.test/v1"
    assert seen["payload"]["temperature"] == 0
    assert seen["payload"]["model"] == "mini"
    assert seen["headers"]["Authorization"] == "Bearer secret"
    assert "## Candidate Cards" in seen["payload"]["messages"][0]["content"]


# ---------------------------------------------------------------- fuzzing


def test_rerank_never_emits_invalid_lists_under_fuzzing():
    # Whatever the backend emits, the result is a K-length unique subset of
    # the pool within the substitution budget (or the fallback prefix).
    rng = random.Random(99)
    req = cards_for(8, k=4)
    pool = req.pool_ids()

    def random_raw():
        roll = rng.random()
        if roll < 0.25:
            return "".join(rng.choices("{}[]\"abc123,: ", k=rng.randint(0, 40)))
        ids = [rng.choice(pool + ("ghost", "m000 ", "M000"))
               for _ in range(rng.randint(0, 6))]
        obj = {"MCP_servers": ids}
        if roll < 0.5:
            obj["Explanation"] = "e"
        if roll < 0.35:
            return "prefix " + json.dumps(obj) + " suffix"
        return json.dumps(obj)

    accepted = fallback = 0
    for _ in range(2000):
        result = rerank(req, CallableBackend(lambda r, p: random_raw()))
        assert len(result.ids) == 4
        assert len(set(result.ids)) == 4
        assert set(result.ids) <= set(pool)
        if result.status == "accepted":
            accepted += 1
            assert len(set(result.ids) - set(pool[:4])) <= MAX_SUBSTITUTIONS
        else:
            fallback += 1
            assert result.ids == pool[:4]
    assert accepted > 0 and fallback > 0
