"""Shared builders: tiny corpora, a separable synthetic dataset, and the
acceptance-criteria summary printed at the end of the run."""

from __future__ import annotations

import json

import pytest

from toolrec.corpus import InteractionSet, McpRecord, TaskRecord
from toolrec.structural import Taxonomy

ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, status, detail in ACCEPTANCE_RESULTS:
        suffix = f" ({detail})" if detail else ""
        terminalreporter.write_line(f"[{status}] {name}{suffix}")


@pytest.fixture
def record_criterion():
    def _record(name: str, passed: bool, detail: str = ""):
        ACCEPTANCE_RESULTS.append((name, "PASS" if passed else "FAIL", detail))

    return _record


@pytest.fixture
def skip_criterion():
    def _skip(name: str, detail: str = ""):
        ACCEPTANCE_RESULTS.append((name, "SKIP", detail))

    return _skip


def make_server(i: int, category="data access", subcategory="databases",
                language="python", system="any", theme_tokens="",
                description=None, tools=()) -> dict:
    return {
        "id": f"m{i:03d}",
        "name": f"server {i}",
        "description": description or f"tool server number {i} {theme_tokens}",
        "tools": list(tools),
        "category": category,
        "subcategory": subcategory,
        "language": language,
        "system": system,
        "license": "mit",
        "official": i % 2 == 0,
        "repo_url": f"https://example.org/repos/server-{i}",
    }


def make_task(i: int, description=None, category="data access",
              subcategory="databases", language="python", theme="analytics") -> dict:
    return {
        "id": f"t{i:03d}",
        "name": f"task {i}",
        "description": description or f"do the thing number {i}",
        "language": language,
        "category": category,
        "subcategory": subcategory,
        "theme": theme,
    }


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return path


DEFAULT_TAXONOMY = {
    "data access": ["databases", "files", "search"],
    "developer tools": ["testing", "code analysis", "build"],
    "communication": ["email", "chat"],
}


@pytest.fixture
def taxonomy():
    return Taxonomy.from_dict(DEFAULT_TAXONOMY)


def write_corpus(tmp_path, servers, tasks, interactions, taxonomy=None):
    """Write the three corpora (+ taxonomy) under tmp_path; returns the paths."""
    paths = {
        "mcp": write_jsonl(tmp_path / "mcp.jsonl", servers),
        "tasks": write_jsonl(tmp_path / "tasks.jsonl", tasks),
        "interactions": write_jsonl(
            tmp_path / "interactions.jsonl",
            [{"task_id": t, "mcp_ids": list(ids)}
             for t, ids in interactions.items()]),
    }
    tax = taxonomy if taxonomy is not None else DEFAULT_TAXONOMY
    tax_path = tmp_path / "taxonomy.json"
    tax_path.write_text(json.dumps(tax), encoding="utf-8")
    paths["taxonomy"] = tax_path
    return paths


# Synthetic separable corpus: disjoint token clusters; every task names the
# signature tokens of its positives, so a working encoder must recover them.

CLUSTER_CATEGORIES = [
    ("data access", "databases"), ("data access", "files"),
    ("data access", "search"), ("developer tools", "testing"),
    ("developer tools", "code analysis"), ("developer tools", "build"),
    ("communication", "email"), ("communication", "chat"),
]


def build_synthetic_corpus(n_clusters=8, tasks_per=40, servers_per=40,
                           positives_per_task=3):
    """Returns (servers, tasks, interactions) as record dicts + positives map."""
    assert n_clusters <= len(CLUSTER_CATEGORIES)
    servers, tasks, positives = [], [], {}
    for c in range(n_clusters):
        category, subcategory = CLUSTER_CATEGORIES[c]
        base = [f"cluster{c}base{j}" for j in range(3)]
        signatures = {}
        for s in range(servers_per):
            sig = [f"c{c}srv{s}sig{j}" for j in range(2)]
            signatures[s] = sig
            idx = c * servers_per + s
            servers.append({
                "id": f"m{idx:04d}",
                # No name text: names would either leak tokens across
                # clusters or add singleton noise dimensions.
                "name": "",
                "description": " ".join(base + sig),
                "tools": sig,
                "category": category,
                "subcategory": subcategory,
                "language": "python",
                "system": "any",
                "license": "mit",
                "official": False,
                "repo_url": f"https://example.org/r/{c}/{s}",
            })
        for t in range(tasks_per):
            pos = [(t + j) % servers_per for j in range(positives_per_task)]
            sig_tokens = [tok for p in pos for tok in signatures[p]]
            idx = c * tasks_per + t
            task_id = f"t{idx:04d}"
            tasks.append({
                "id": task_id,
                "name": "",
                "description": " ".join(base + sig_tokens),
                "language": "python",
                "category": category,
                "subcategory": subcategory,
                "theme": "analytics",
            })
            positives[task_id] = [f"m{c * servers_per + p:04d}" for p in pos]
    return servers, tasks, positives


def load_records(servers, tasks, positives):
    """Record dicts -> domain objects (the loader's normalization applied)."""
    server_map = {s["id"]: McpRecord.from_dict(s) for s in servers}
    task_map = {t["id"]: TaskRecord.from_dict(t) for t in tasks}
    inter = InteractionSet({t: tuple(ids) for t, ids in positives.items()})
    return server_map, task_map, inter
