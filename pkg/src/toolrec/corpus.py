"""Loading, validation and normalization of the tool-server corpus, task corpus
and task->server interaction labels.

All corpora are line-delimited JSON (one record per line). Loaded records are
immutable; normalization trims whitespace, NFC-normalizes and case-folds
categorical fields so that downstream matching rules can compare verbatim.
"""

from __future__ import annotations

import json
import logging
import random
import unicodedata
from dataclasses import dataclass, field

logger = logging.getLogger(__name__)

# Operating systems a server may declare. Anything else degrades to "any" so a
# drifting ecosystem cannot crash recommendation.
SYSTEM_VALUES = ("windows", "ios", "linux", "any")

MCP_FIELDS = ("id", "name", "description", "tools", "category", "subcategory",
              "language", "system", "license", "official", "repo_url")
TASK_FIELDS = ("id", "name", "description", "language", "category",
               "subcategory", "theme")


class CorpusError(ValueError):
    """Fatal data problem: parse failure, duplicate key or dangling reference."""


def _norm_text(value) -> str:
    if value is None:
        return ""
    return unicodedata.normalize("NFC", str(value)).strip()


def _norm_categorical(value) -> str:
    return _norm_text(value).casefold()


@dataclass(frozen=True)
class McpRecord:
    """One tool server: free-text fields plus structured attributes."""

    id: str
    name: str = ""
    description: str = ""
    tools: tuple[str, ...] = ()
    category: str = ""
    subcategory: str = ""
    language: str = ""
    system: str = "any"
    license: str = ""
    official: bool = False
    repo_url: str = ""

    @classmethod
    def from_dict(cls, raw: dict) -> "McpRecord":
        rec_id = _norm_text(raw.get("id"))
        if not rec_id:
            raise CorpusError("server record is missing a non-empty 'id'")
        system = _norm_categorical(raw.get("system"))
        if system not in SYSTEM_VALUES:
            system = "any"
        tools = tuple(t for t in (_norm_text(x) for x in raw.get("tools") or ()) if t)
        return cls(
            id=rec_id,
            name=_norm_text(raw.get("name")),
            description=_norm_text(raw.get("description")),
            tools=tools,
            category=_norm_categorical(raw.get("category")),
            subcategory=_norm_categorical(raw.get("subcategory")),
            language=_norm_categorical(raw.get("language")),
            system=system,
            license=_norm_categorical(raw.get("license")),
            official=bool(raw.get("official", False)),
            repo_url=_norm_text(raw.get("repo_url")),
        )

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "description": self.description,
            "tools": list(self.tools),
            "category": self.category,
            "subcategory": self.subcategory,
            "language": self.language,
            "system": self.system,
            "license": self.license,
            "official": self.official,
            "repo_url": self.repo_url,
        }


@dataclass(frozen=True)
class TaskRecord:
    """One development task with its structured attributes."""

    id: str
    name: str = ""
    description: str = ""
    language: str = ""
    category: str = ""
    subcategory: str = ""
    theme: str = ""

    @classmethod
    def from_dict(cls, raw: dict) -> "TaskRecord":
        rec_id = _norm_text(raw.get("id"))
        if not rec_id:
            raise CorpusError("task record is missing a non-empty 'id'")
        description = _norm_text(raw.get("description"))
        if not description:
            raise CorpusError(f"task {rec_id!r} has an empty description")
        return cls(
            id=rec_id,
            name=_norm_text(raw.get("name")),
            description=description,
            language=_norm_categorical(raw.get("language")),
            category=_norm_categorical(raw.get("category")),
            subcategory=_norm_categorical(raw.get("subcategory")),
            theme=_norm_categorical(raw.get("theme")),
        )

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "description": self.description,
            "language": self.language,
            "category": self.category,
            "subcategory": self.subcategory,
            "theme": self.theme,
        }


@dataclass(frozen=True)
class InteractionSet:
    """Curated positives: task id -> ordered, duplicate-free list of server ids."""

    positives: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def for_task(self, task_id: str) -> tuple[str, ...]:
        return self.positives.get(task_id, ())

    def task_ids(self) -> tuple[str, ...]:
        return tuple(self.positives)

    def __len__(self) -> int:
        return len(self.positives)

    def to_records(self) -> list[dict]:
        return [{"task_id": t, "mcp_ids": list(ids)} for t, ids in self.positives.items()]


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint train/valid/test partition of the labeled task ids."""

    train: tuple[str, ...]
    valid: tuple[str, ...]
    test: tuple[str, ...]
    seed: int

    def all_ids(self) -> tuple[str, ...]:
        return self.train + self.valid + self.test


def _read_jsonl(path) -> list[tuple[int, dict]]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(raw, dict):
                raise CorpusError(f"{path}:{lineno}: record is not an object")
            rows.append((lineno, raw))
    return rows


def load_mcp_corpus(path) -> dict[str, McpRecord]:
    """Load server records, rejecting duplicate ids and duplicate repo_urls."""
    records: dict[str, McpRecord] = {}
    repo_urls: dict[str, str] = {}
    for lineno, raw in _read_jsonl(path):
        try:
            rec = McpRecord.from_dict(raw)
        except CorpusError as exc:
            raise CorpusError(f"{path}:{lineno}: {exc}") from exc
        if rec.id in records:
            raise CorpusError(f"{path}:{lineno}: duplicate server id {rec.id!r}")
        if rec.repo_url:
            if rec.repo_url in repo_urls:
                raise CorpusError(
                    f"{path}:{lineno}: duplicate repo_url {rec.repo_url!r} "
                    f"(already used by server {repo_urls[rec.repo_url]!r})"
                )
            repo_urls[rec.repo_url] = rec.id
        records[rec.id] = rec
    return records


def load_task_corpus(path) -> dict[str, TaskRecord]:
    records: dict[str, TaskRecord] = {}
    for lineno, raw in _read_jsonl(path):
        try:
            rec = TaskRecord.from_dict(raw)
        except CorpusError as exc:
            raise CorpusError(f"{path}:{lineno}: {exc}") from exc
        if rec.id in records:
            raise CorpusError(f"{path}:{lineno}: duplicate task id {rec.id!r}")
        records[rec.id] = rec
    return records


def load_interactions(path) -> InteractionSet:
    positives: dict[str, tuple[str, ...]] = {}
    for lineno, raw in _read_jsonl(path):
        task_id = _norm_text(raw.get("task_id"))
        if not task_id:
            raise CorpusError(f"{path}:{lineno}: interaction record missing 'task_id'")
        if task_id in positives:
            raise CorpusError(f"{path}:{lineno}: duplicate interaction entry for task {task_id!r}")
        ids = [_norm_text(x) for x in raw.get("mcp_ids") or ()]
        ids = [x for x in ids if x]
        if not ids:
            raise CorpusError(f"{path}:{lineno}: empty positive list for task {task_id!r}")
        if len(set(ids)) != len(ids):
            dupes = sorted({x for x in ids if ids.count(x) > 1})
            raise CorpusError(f"{path}:{lineno}: duplicate server ids {dupes} for task {task_id!r}")
        positives[task_id] = tuple(ids)
    return InteractionSet(positives)


def load_corpus(mcp_path, task_path, interactions_path):
    """Load and cross-validate all three corpora.

    Returns (servers, tasks, interactions). Any dangling reference in the
    interaction set is fatal and the error names every offender.
    """
    servers = load_mcp_corpus(mcp_path)
    tasks = load_task_corpus(task_path)
    interactions = load_interactions(interactions_path)

    missing_tasks = sorted(t for t in interactions.positives if t not in tasks)
    missing_servers = sorted({
        m for ids in interactions.positives.values() for m in ids if m not in servers
    })
    problems = []
    if missing_tasks:
        problems.append(f"unknown task ids referenced by interactions: {missing_tasks}")
    if missing_servers:
        problems.append(f"unknown server ids referenced by interactions: {missing_servers}")
    if problems:
        raise CorpusError("; ".join(problems))
    return servers, tasks, interactions


def save_jsonl(records, path) -> None:
    """Write records (anything with to_dict, or plain dicts) one per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            payload = rec.to_dict() if hasattr(rec, "to_dict") else rec
            fh.write(json.dumps(payload, ensure_ascii=False))
            fh.write("\n")


def concat_text(record) -> str:
    """Unified text field for a record, fields joined by single spaces.

    Task order: name, description, language, category, theme.
    Server order: name, description, language, system, tools, category,
    subcategory. Missing fields are skipped so the result never contains
    empty segments.
    """
    if isinstance(record, TaskRecord):
        parts = [record.name, record.description, record.language,
                 record.category, record.theme]
    elif isinstance(record, McpRecord):
        parts = [record.name, record.description, record.language,
                 record.system, " ".join(record.tools), record.category,
                 record.subcategory]
    else:
        raise TypeError(f"cannot build text for {type(record).__name__}")
    return " ".join(p for p in parts if p)


def split_dataset(task_ids, seed: int) -> DatasetSplit:
    """Seeded 60/20/20 shuffle-and-slice partition of the labeled tasks."""
    ids = sorted(set(task_ids))
    n = len(ids)
    if n < 5:
        raise CorpusError(f"need at least 5 labeled tasks to split, got {n}")
    rng = random.Random(seed)
    rng.shuffle(ids)
    n_train = int(round(0.6 * n))
    n_valid = int(round(0.2 * n))
    train = tuple(sorted(ids[:n_train]))
    valid = tuple(sorted(ids[n_train:n_train + n_valid]))
    test = tuple(sorted(ids[n_train + n_valid:]))
    return DatasetSplit(train=train, valid=valid, test=test, seed=seed)


def check_taxonomy_coverage(records, taxonomy) -> list[str]:
    """Ids of records whose (category, subcategory) is absent from the taxonomy."""
    offenders = []
    for rec in records:
        if not taxonomy.has_node(rec.category, rec.subcategory):
            offenders.append(rec.id)
    if offenders:
        logger.warning("%d record(s) outside the taxonomy: %s", len(offenders), offenders[:10])
    return offenders
