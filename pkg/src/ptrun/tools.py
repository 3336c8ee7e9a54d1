"""Tool registry and built-in deterministic tools.

The built-ins emulate a search/lookup pair against an offline knowledge base
(a single JSON file of {title, body, links} articles) plus a literal
arithmetic calculator. Every tool is a pure function of (params, state, kb);
repeated invocation with identical inputs yields identical outcomes.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

from . import ruledsl
from .core import SlotSpec, ToolSpec

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class DuplicateToolError(ValueError):
    pass


@dataclass(frozen=True)
class ToolOutcome:
    """Success with a serializable value, or a classified failure."""

    ok: bool
    value: object = None
    output_size: int = 0  # whitespace tokens of the serialized success value
    error_class: str | None = None
    message: str | None = None

    @classmethod
    def success(cls, value) -> "ToolOutcome":
        size = len(json.dumps(value, sort_keys=True).split())
        return cls(ok=True, value=value, output_size=size)

    @classmethod
    def failure(cls, error_class: str, message: str) -> "ToolOutcome":
        return cls(ok=False, error_class=error_class, message=message)

    def to_dict(self) -> dict:
        if self.ok:
            return {"ok": True, "value": self.value, "output_size": self.output_size}
        return {"ok": False, "error_class": self.error_class, "message": self.message}


@dataclass(frozen=True)
class Article:
    title: str
    body: str
    links: tuple[str, ...] = ()


class KnowledgeBase:
    """Read-only titled-article store with case-insensitive exact lookup."""

    def __init__(self, articles: list[dict]):
        self.articles: dict[str, Article] = {}
        self._by_folded: dict[str, str] = {}
        for raw in articles:
            article = Article(
                title=raw["title"],
                body=raw.get("body", ""),
                links=tuple(raw.get("links", ())),
            )
            if article.title in self.articles:
                raise ValueError(f"duplicate article title {article.title!r}")
            self.articles[article.title] = article
            self._by_folded[article.title.casefold()] = article.title

    @classmethod
    def load(cls, path: str | Path) -> "KnowledgeBase":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def titles(self) -> list[str]:
        return sorted(self.articles)

    def get(self, title: str) -> Article | None:
        exact = self._by_folded.get(title.casefold())
        return self.articles[exact] if exact else None

    def to_list(self) -> list[dict]:
        return [
            {"title": a.title, "body": a.body, "links": list(a.links)}
            for a in (self.articles[t] for t in self.titles())
        ]


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class ToolRegistry:
    """Maps tool ids to (spec, transition). Immutable after setup by convention."""

    def __init__(self):
        self._tools: dict[str, tuple[ToolSpec, object]] = {}

    def register(self, spec: ToolSpec, transition) -> "ToolRegistry":
        if spec.id in self._tools:
            raise DuplicateToolError(f"tool {spec.id!r} already registered")
        self._tools[spec.id] = (spec, transition)
        return self

    def has(self, tool_id: str) -> bool:
        return tool_id in self._tools

    def spec(self, tool_id: str) -> ToolSpec:
        return self._tools[tool_id][0]

    def specs(self) -> list[ToolSpec]:
        return [entry[0] for entry in self._tools.values()]

    def invoke(self, tool_id: str, params: dict, state) -> ToolOutcome:
        entry = self._tools.get(tool_id)
        if entry is None:
            return ToolOutcome.failure("not_found", f"no tool registered under id {tool_id!r}")
        return entry[1](params, state)


# --- built-in tools -----------------------------------------------------------


KB_SEARCH_SPEC = ToolSpec(
    id="kb_search",
    param_schema={
        "query": SlotSpec(type="string", required=True, auto_resolvable=True),
        "limit": SlotSpec(type="number", required=False),
    },
    output_kind="search_results",
)

KB_LOOKUP_SPEC = ToolSpec(
    id="kb_lookup",
    param_schema={"title": SlotSpec(type="string", required=True, auto_resolvable=True)},
    output_kind="article",
)

CALC_SPEC = ToolSpec(
    id="calc",
    param_schema={"expression": SlotSpec(type="string", required=True, auto_resolvable=True)},
    output_kind="number",
)

DEFAULT_SEARCH_LIMIT = 3


def _reject_unknown_slots(params: dict, spec: ToolSpec) -> ToolOutcome | None:
    for slot in params:
        if slot not in spec.param_schema:
            return ToolOutcome.failure("invalid_params", f"unknown slot {slot!r}")
    return None


def make_kb_search(kb: KnowledgeBase):
    def kb_search(params: dict, state) -> ToolOutcome:
        bad = _reject_unknown_slots(params, KB_SEARCH_SPEC)
        if bad:
            return bad
        query = params.get("query")
        if not isinstance(query, str) or not query.strip():
            return ToolOutcome.failure("invalid_params", "query must be a non-empty string")
        limit = params.get("limit", DEFAULT_SEARCH_LIMIT)
        if isinstance(limit, bool) or not isinstance(limit, (int, float)) or limit < 1 or limit != int(limit):
            return ToolOutcome.failure("invalid_params", "limit must be an integer >= 1")
        limit = int(limit)
        query_tokens = set(tokenize(query))
        scored = []
        for title in kb.titles():
            article = kb.articles[title]
            overlap = len(query_tokens & set(tokenize(f"{article.title} {article.body}")))
            if overlap > 0:
                scored.append((-overlap, title))
        if not scored:
            return ToolOutcome.failure("empty_result", f"no article shares a token with {query!r}")
        scored.sort()
        titles = [title for _, title in scored[:limit]]
        return ToolOutcome.success({"count": len(titles), "top_title": titles[0], "titles": titles})

    return kb_search


def make_kb_lookup(kb: KnowledgeBase):
    def kb_lookup(params: dict, state) -> ToolOutcome:
        bad = _reject_unknown_slots(params, KB_LOOKUP_SPEC)
        if bad:
            return bad
        title = params.get("title")
        if not isinstance(title, str) or not title.strip():
            return ToolOutcome.failure("invalid_params", "title must be a non-empty string")
        article = kb.get(title)
        if article is None:
            return ToolOutcome.failure("not_found", f"no article titled {title!r}")
        return ToolOutcome.success({"body": article.body, "links": list(article.links)})

    return kb_lookup


def calc(params: dict, state) -> ToolOutcome:
    bad = _reject_unknown_slots(params, CALC_SPEC)
    if bad:
        return bad
    expression = params.get("expression")
    if not isinstance(expression, str) or not expression.strip():
        return ToolOutcome.failure("invalid_params", "expression must be a non-empty string")
    try:
        ast = ruledsl.parse_arith(expression)
        value = ruledsl.eval_expr(ast, {}, None)
    except ruledsl.DslError as exc:
        return ToolOutcome.failure("invalid_params", str(exc))
    if isinstance(value, float) and value.is_integer() and abs(value) <= ruledsl.MAX_EXACT_INT:
        value = int(value)
    return ToolOutcome.success({"value": value})


def make_fault_injector(inner, script: list):
    """Wrap a transition with a finite outcome script, then delegate to it.

    Script entries: "ok" delegates one call to the inner transition; an error
    class string (or {"fail": class, "message": text}) produces that failure.
    """
    if not script:
        raise ValueError("fault script must be non-empty")
    normalized = []
    for entry in script:
        if entry == "ok":
            normalized.append(("ok", None))
        elif isinstance(entry, str):
            normalized.append((entry, f"injected {entry}"))
        elif isinstance(entry, dict) and "fail" in entry:
            normalized.append((entry["fail"], entry.get("message", f"injected {entry['fail']}")))
        else:
            raise ValueError(f"bad fault script entry: {entry!r}")
    calls = {"n": 0}

    def wrapped(params: dict, state) -> ToolOutcome:
        position = calls["n"]
        calls["n"] += 1
        if position < len(normalized):
            kind, message = normalized[position]
            if kind != "ok":
                return ToolOutcome.failure(kind, message)
        return inner(params, state)

    return wrapped


def builtin_registry(kb: KnowledgeBase, fault_scripts: dict[str, list] | None = None) -> ToolRegistry:
    """Registry with the three built-ins, optionally fault-wrapped per tool id.

    A registry with fault wrappers is stateful across calls and therefore
    belongs to exactly one run; build a fresh one per run.
    """
    fault_scripts = fault_scripts or {}
    registry = ToolRegistry()
    for spec, transition in (
        (KB_SEARCH_SPEC, make_kb_search(kb)),
        (KB_LOOKUP_SPEC, make_kb_lookup(kb)),
        (CALC_SPEC, calc),
    ):
        script = fault_scripts.get(spec.id)
        if script:
            transition = make_fault_injector(transition, script)
        registry.register(spec, transition)
    return registry
