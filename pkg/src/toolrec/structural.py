"""Structural compatibility between a task and a server.

A rooted two-level taxonomy (root -> categories -> subcategories) gives a
tree distance in {0, 2, 4} via the lowest common ancestor, mapped to a bounded
proximity score. Language and theme/system compatibility are binary
indicators. The three signals combine with positive weights summing to one,
and the result fuses with semantic cosine similarity as a convex mix.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

logger = logging.getLogger(__name__)


class TaxonomyError(ValueError):
    pass


@dataclass(frozen=True)
class Taxonomy:
    """Rooted two-level tree: lookup is by (category, subcategory) leaf."""

    children: dict[str, tuple[str, ...]]

    @classmethod
    def from_dict(cls, raw: dict) -> "Taxonomy":
        children: dict[str, tuple[str, ...]] = {}
        for category, subs in raw.items():
            cat = str(category).strip().casefold()
            if cat in children:
                raise TaxonomyError(f"duplicate category {cat!r}")
            normed = [str(s).strip().casefold() for s in subs]
            if len(set(normed)) != len(normed):
                raise TaxonomyError(f"duplicate subcategory under {cat!r}")
            children[cat] = tuple(normed)
        return cls(children=children)

    @classmethod
    def load(cls, path) -> "Taxonomy":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise TaxonomyError(f"{path}: taxonomy root must be an object")
        return cls.from_dict(raw)

    def has_node(self, category: str, subcategory: str) -> bool:
        return subcategory in self.children.get(category, ())

    def leaves(self) -> list[tuple[str, str]]:
        return [(c, s) for c, subs in sorted(self.children.items()) for s in subs]


def taxonomy_distance(node_m: tuple[str, str], node_t: tuple[str, str],
                      taxonomy: Taxonomy) -> int:
    """Tree distance between two subcategory leaves: depth_m + depth_t - 2*depth(LCA)."""
    for node in (node_m, node_t):
        if not taxonomy.has_node(*node):
            raise TaxonomyError(f"unknown taxonomy node {node!r}")
    if node_m == node_t:
        return 0
    if node_m[0] == node_t[0]:
        return 2
    return 4


def category_feature(d: int) -> float:
    """Bounded proximity: 1 - d/4, so {0,2,4} -> {1.0, 0.5, 0.0}."""
    if d not in (0, 2, 4):
        raise ValueError(f"taxonomy distance must be in {{0,2,4}}, got {d}")
    return 1.0 - d / 4.0


def language_feature(task_lang: str, server_lang: str) -> int:
    """1 iff languages match case-insensitively, or either side is a wildcard."""
    t = (task_lang or "").casefold()
    m = (server_lang or "").casefold()
    if not t or t == "any" or not m or m == "any":
        return 1
    return int(t == m)


@dataclass(frozen=True)
class ThemeSystemRules:
    """Theme -> allowed server systems. Unlisted themes are compatible with all."""

    allowed: dict[str, tuple[str, ...]]

    @classmethod
    def load(cls, path) -> "ThemeSystemRules":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        allowed = {
            str(theme).strip().casefold():
                tuple(str(s).strip().casefold() for s in systems)
            for theme, systems in raw.items()
        }
        return cls(allowed=allowed)

    @classmethod
    def empty(cls) -> "ThemeSystemRules":
        return cls(allowed={})


def theme_feature(task_theme: str, server_system: str,
                  rules: ThemeSystemRules | None = None) -> int:
    """1 iff the server's system serves the task's theme.

    A server with system "any" (or missing) is always compatible; a theme with
    no rule entry is compatible with every system. The feature is advisory, so
    unknowns fail open.
    """
    system = (server_system or "any").casefold()
    if system == "any":
        return 1
    theme = (task_theme or "").casefold()
    if not theme or rules is None:
        return 1
    systems = rules.allowed.get(theme)
    if systems is None:
        return 1
    return int(system in systems)


@dataclass(frozen=True)
class FusionWeights:
    """Structural signal weights plus the semantic/structural mix."""

    w_cat: float = 1.0 / 3.0
    w_lan: float = 1.0 / 3.0
    w_the: float = 1.0 / 3.0
    alpha_sem: float = 0.9
    alpha_str: float = 0.1

    def __post_init__(self):
        for name in ("w_cat", "w_lan", "w_the"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if abs(self.w_cat + self.w_lan + self.w_the - 1.0) > 1e-9:
            raise ValueError("structural weights must sum to 1")
        if self.alpha_sem < 0 or self.alpha_str < 0:
            raise ValueError("fusion weights must be non-negative")
        if abs(self.alpha_sem + self.alpha_str - 1.0) > 1e-9:
            raise ValueError("fusion weights must sum to 1")


@dataclass(frozen=True)
class CompatFeatures:
    phi_cat: float
    phi_lan: int
    phi_the: int


def compat_features(task, server, taxonomy: Taxonomy,
                    rules: ThemeSystemRules | None = None) -> CompatFeatures:
    """All three compatibility features for one (task, server) pair.

    A record whose (category, subcategory) is missing from the taxonomy gets
    the maximal-distance score with a warning instead of an error; inference
    must not die on a stray label.
    """
    node_t = (task.category, task.subcategory)
    node_m = (server.category, server.subcategory)
    if taxonomy.has_node(*node_t) and taxonomy.has_node(*node_m):
        phi_cat = category_feature(taxonomy_distance(node_m, node_t, taxonomy))
    else:
        missing = [n for n in (node_t, node_m) if not taxonomy.has_node(*n)]
        logger.warning("taxonomy node(s) %s not found; scoring category proximity 0",
                       missing)
        phi_cat = 0.0
    return CompatFeatures(
        phi_cat=phi_cat,
        phi_lan=language_feature(task.language, server.language),
        phi_the=theme_feature(task.theme, server.system, rules),
    )


def structural_score(features: CompatFeatures,
                     weights: FusionWeights | None = None) -> float:
    weights = weights or FusionWeights()
    return (weights.w_cat * features.phi_cat
            + weights.w_lan * features.phi_lan
            + weights.w_the * features.phi_the)


def fuse(s_sem: float, s_str: float, weights: FusionWeights | None = None) -> float:
    weights = weights or FusionWeights()
    return weights.alpha_sem * s_sem + weights.alpha_str * s_str
