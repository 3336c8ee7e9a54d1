"""Everything that touches the language model.

Holds the provider abstraction (scripted deterministic model for desk-scale
testing, plus an HTTP chat-endpoint adapter), the prompt builders and output
parsers for the three semantic stages, and the budget ledger. Costs are held
as integer micro-dollars so ledger arithmetic is exact; price tables live in
configuration, never in code.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .core import Metadata, Profile, Task

ROLES = ("profile", "repair", "reason", "react")

REPAIR_PROHIBITION = "You are prohibited from generating a final answer."
NO_EVIDENCE_SENTENCE = "No evidence is available from tool execution."

PROFILE_SCHEMA_TEXT = """\
{
  "workflow": {"steps": [{"tool_id": "<catalog id>",
                          "params": {"<slot>": <literal>
                                     | {"auto": "<rule id>"}
                                     | {"placeholder": "result.<key>.<field>"}},
                          "annotation": {}}]},
  "confidence": <number in [0,1]>,
  "assumptions": ["<text>"],
  "fragile_points": ["<text>"],
  "replan_conditions": ["<state predicate>"],
  "branch_rules": [{"predicate": "<state predicate>",
                    "modifier": "set <slot> = <expr>",
                    "target_step": <1-based step index>}],
  "aux_annotations": {}
}"""


class SemanticError(Exception):
    pass


class BudgetExceededError(SemanticError):
    def __init__(self, total_micros: int, limit_micros: int):
        super().__init__(f"budget exceeded: {total_micros} micro-dollars against limit {limit_micros}")
        self.total_micros = total_micros
        self.limit_micros = limit_micros


class ScriptExhaustedError(SemanticError):
    pass


class RoleMismatchError(SemanticError):
    """A call arrived out of the scripted order: a pipeline-sequencing bug."""


class ProfileParseError(SemanticError):
    def __init__(self, diagnostic: str):
        super().__init__(f"profile response unusable: {diagnostic}")
        self.diagnostic = diagnostic


class MissingCredentialsError(SemanticError):
    pass


@dataclass(frozen=True)
class ModelRequest:
    role: str
    prompt: str
    temperature: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown model role {self.role!r}")


@dataclass(frozen=True)
class Usage:
    input_tokens: int
    output_tokens: int

    def __post_init__(self):
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ValueError("token counts must be non-negative")

    def to_dict(self) -> dict:
        return {"input_tokens": self.input_tokens, "output_tokens": self.output_tokens}


@dataclass(frozen=True)
class ModelResponse:
    text: str
    usage: Usage
    cost_micros: int = 0


@dataclass(frozen=True)
class PriceEntry:
    """Micro-dollars per 1000 input/output tokens."""

    input_micros_per_1k: int = 0
    output_micros_per_1k: int = 0

    def cost_micros(self, usage: Usage) -> int:
        return (usage.input_tokens * self.input_micros_per_1k
                + usage.output_tokens * self.output_micros_per_1k) // 1000

    def to_dict(self) -> dict:
        return {"input_micros_per_1k": self.input_micros_per_1k,
                "output_micros_per_1k": self.output_micros_per_1k}

    @classmethod
    def from_dict(cls, data: dict) -> "PriceEntry":
        return cls(input_micros_per_1k=int(data.get("input_micros_per_1k", 0)),
                   output_micros_per_1k=int(data.get("output_micros_per_1k", 0)))


@dataclass
class LedgerEntry:
    role: str
    usage: Usage
    cost_micros: int

    def to_dict(self) -> dict:
        return {"role": self.role, "usage": self.usage.to_dict(), "cost_micros": self.cost_micros}


@dataclass
class BudgetLedger:
    """Append-only per-run cost ledger with a hard limit check after each call."""

    limit_micros: int
    entries: list[LedgerEntry] = field(default_factory=list)
    stage_counts: dict[str, int] = field(default_factory=dict)

    @property
    def total_micros(self) -> int:
        return sum(entry.cost_micros for entry in self.entries)

    def call_count_by_role(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for entry in self.entries:
            counts[entry.role] = counts.get(entry.role, 0) + 1
        return counts

    def count_stage(self, role: str) -> None:
        self.stage_counts[role] = self.stage_counts.get(role, 0) + 1

    def record_and_check(self, role: str, response: ModelResponse) -> None:
        self.entries.append(LedgerEntry(role=role, usage=response.usage,
                                        cost_micros=response.cost_micros))
        total = self.total_micros
        if total > self.limit_micros:
            raise BudgetExceededError(total, self.limit_micros)

    def summary(self) -> dict:
        return {
            "limit_micros": self.limit_micros,
            "total_micros": self.total_micros,
            "input_tokens": sum(entry.usage.input_tokens for entry in self.entries),
            "output_tokens": sum(entry.usage.output_tokens for entry in self.entries),
            "raw_calls_by_role": self.call_count_by_role(),
            "stage_counts": dict(self.stage_counts),
        }


def record_and_check(ledger: BudgetLedger, role: str, response: ModelResponse) -> BudgetLedger:
    ledger.record_and_check(role, response)
    return ledger


@dataclass(frozen=True)
class ScriptEntry:
    role: str
    text: str


class ScriptedModel:
    """Deterministic test double: canned responses consumed strictly in order."""

    def __init__(self, script: list[ScriptEntry] | list[dict], price: PriceEntry | None = None):
        self.script = [
            entry if isinstance(entry, ScriptEntry) else ScriptEntry(role=entry["role"], text=entry["text"])
            for entry in script
        ]
        self.price = price or PriceEntry()
        self.position = 0
        self.calls = 0

    def complete(self, request: ModelRequest) -> ModelResponse:
        if self.position >= len(self.script):
            raise ScriptExhaustedError(
                f"script exhausted after {len(self.script)} entries (requested role {request.role!r})")
        entry = self.script[self.position]
        if entry.role != request.role:
            raise RoleMismatchError(
                f"script expects role {entry.role!r} next but {request.role!r} was requested")
        self.position += 1
        self.calls += 1
        usage = Usage(input_tokens=len(request.prompt.split()),
                      output_tokens=len(entry.text.split()))
        return ModelResponse(text=entry.text, usage=usage,
                             cost_micros=self.price.cost_micros(usage))


class HttpProviderModel:
    """Chat-endpoint adapter behind the same interface as the scripted model.

    Credentials come from an environment variable and are never logged or
    written to traces. Excluded from the acceptance suite: it is not
    deterministic at desk scale.
    """

    def __init__(self, endpoint: str, model: str, price: PriceEntry | None = None,
                 api_key_env: str = "PTRUN_API_KEY", transport=None, timeout: float = 60.0):
        self.endpoint = endpoint
        self.model = model
        self.price = price or PriceEntry()
        self.api_key_env = api_key_env
        self.timeout = timeout
        self._transport = transport or self._requests_transport
        self.calls = 0

    def _requests_transport(self, payload: dict, headers: dict) -> dict:
        import requests

        response = requests.post(self.endpoint, json=payload, headers=headers, timeout=self.timeout)
        response.raise_for_status()
        return response.json()

    def build_payload(self, request: ModelRequest) -> dict:
        return {
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "seed": request.seed,
        }

    def complete(self, request: ModelRequest) -> ModelResponse:
        api_key = os.environ.get(self.api_key_env)
        if not api_key:
            raise MissingCredentialsError(f"set {self.api_key_env} to use the HTTP provider")
        headers = {"Authorization": f"Bearer {api_key}", "Content-Type": "application/json"}
        data = self._transport(self.build_payload(request), headers)
        self.calls += 1
        text = data["choices"][0]["message"]["content"]
        usage_raw = data.get("usage", {})
        usage = Usage(input_tokens=int(usage_raw.get("prompt_tokens", 0)),
                      output_tokens=int(usage_raw.get("completion_tokens", 0)))
        return ModelResponse(text=text, usage=usage, cost_micros=self.price.cost_micros(usage))


# --- prompt builders -------------------------------------------------------------


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)


def _tool_lines(metadata: Metadata) -> list[str]:
    lines = []
    for spec in metadata.tool_catalog:
        slots = ", ".join(
            f"{name} ({slot.type}{', required' if slot.required else ''}"
            f"{', auto-resolvable' if slot.auto_resolvable else ''})"
            for name, slot in spec.param_schema.items()
        )
        lines.append(f"- {spec.id}: slots: {slots or 'none'} -> {spec.output_kind}")
    return lines


def build_profile_prompt(task: Task, metadata: Metadata) -> str:
    """Planning prompt: task, schema, catalog, constraints, optional history,
    and the profile JSON contract."""
    parts = [
        "You are the planning stage of a bounded tool-execution runtime.",
        "Plan a complete workflow now; no further planning happens during execution.",
        "",
        "## Objective",
        task.objective,
    ]
    if task.data_ref:
        parts += ["", "## Data reference", task.data_ref]
    if task.context:
        parts += ["", "## Context", _dump(task.context)]
    parts += ["", "## Schema descriptor", _dump(metadata.schema)]
    parts += ["", "## Tool catalog"] + _tool_lines(metadata)
    constraints = metadata.constraints
    parts += ["", "## Constraints"]
    if constraints.auto_rules or constraints.recovery_rules or constraints.constraint_predicates:
        for rule in constraints.auto_rules:
            parts.append(f"- auto rule {rule.id}: {rule.expr}")
        for rule in constraints.recovery_rules:
            parts.append(f"- recovery on {rule.error_class}: {rule.modifier}")
        for source in constraints.constraint_predicates:
            parts.append(f"- constraint: {source}")
    else:
        parts.append("none")
    if metadata.history is not None:
        parts += ["", "## History",
                  f"prior runs: {metadata.history.prior_run_count}, "
                  f"failure rate: {metadata.history.prior_failure_rate}"]
    parts += [
        "",
        "## Output format",
        "Respond with exactly one JSON object and nothing else, matching:",
        PROFILE_SCHEMA_TEXT,
    ]
    return "\n".join(parts)


def build_profile_retry_prompt(base_prompt: str, diagnostic: str) -> str:
    return (
        f"{base_prompt}\n\n## Correction required\n"
        f"Your previous reply was rejected: {diagnostic}\n"
        "Respond again with exactly one JSON object matching the schema above."
    )


def _trace_lines(state) -> list[str]:
    lines = []
    for event in state.trace:
        if event.outcome == "success":
            lines.append(f"- step {event.index} {event.tool_id}: success, stored as {event.stored_key}")
        elif event.outcome == "skipped":
            lines.append(f"- step {event.index} {event.tool_id}: skipped")
        else:
            lines.append(
                f"- step {event.index} {event.tool_id}: failure ({event.error_class}), "
                f"{len(event.attempts)} attempt(s)")
    return lines


def build_repair_prompt(task: Task, metadata: Metadata, profile: Profile, state, z) -> str:
    """Repair prompt: task, original profile, trace, diagnostics; patched profile only."""
    parts = [
        "You are the repair stage of a bounded tool-execution runtime.",
        "The executed workflow was judged unreliable. Emit a patched profile only.",
        REPAIR_PROHIBITION,
        "",
        "## Objective",
        task.objective,
        "",
        "## Original profile",
        _dump(profile.to_dict()),
        "",
        "## Execution trace",
    ]
    parts += _trace_lines(state)
    parts += [
        "",
        "## Verification diagnostics",
        _dump(z.to_dict()),
        "",
        "## Tool catalog",
    ]
    parts += _tool_lines(metadata)
    parts += [
        "",
        "## Output format",
        "Respond with exactly one JSON object and nothing else, matching:",
        PROFILE_SCHEMA_TEXT,
    ]
    return "\n".join(parts)


def build_reason_prompt(task: Task, metadata: Metadata, state, z) -> str:
    """Interpretation prompt over the realized evidence and verification flags."""
    parts = [
        "You are the reasoning stage of a bounded tool-execution runtime.",
        "Answer the objective using only the stored evidence below.",
        "Every substantive claim must reference a stored result; do not invent data.",
        "Propagate every caveat listed under flags into your answer where relevant.",
        "",
        "## Objective",
        task.objective,
        "",
        "## Stored evidence",
    ]
    if state.result_store:
        parts.append(_dump(state.result_store))
    else:
        parts.append(NO_EVIDENCE_SENTENCE)
    parts += ["", "## Verification"]
    parts.append(f"trust: {z.trust}, status: {z.status.value}")
    if z.flags:
        parts += ["flags:"] + [f"- {flag}" for flag in z.flags]
    else:
        parts.append("flags: none")
    parts += ["", "## Output format", "Reply with the final answer text only."]
    return "\n".join(parts)


# --- response parsing --------------------------------------------------------------


def extract_first_json_object(text: str) -> dict:
    """First JSON object in the text, tolerating surrounding prose and fences."""
    decoder = json.JSONDecoder()
    for start, ch in enumerate(text):
        if ch != "{":
            continue
        try:
            obj, _ = decoder.raw_decode(text[start:])
        except ValueError:
            continue
        if isinstance(obj, dict):
            return obj
    raise ProfileParseError("no JSON object found in the response")


def parse_profile_response(text: str) -> Profile:
    obj = extract_first_json_object(text)
    try:
        return Profile.from_dict(obj)
    except (ValueError, TypeError) as exc:
        raise ProfileParseError(str(exc)) from None
