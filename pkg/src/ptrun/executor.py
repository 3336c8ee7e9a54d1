"""Deterministic workflow execution over the five-part state.

Each step runs the fixed sub-stage order resolve -> branch -> invoke ->
recover -> store, with at most ``recovery_retries`` deterministic retries per
step. Nothing here raises for execution failures: every failure is recorded
in the state, classified soft (execution continues with degraded evidence) or
hard (the workflow is structurally inexecutable and remaining steps are
skipped). No model call ever happens inside this module.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from . import ruledsl
from .core import AutoParam, Metadata, PlaceholderParam, Profile, Workflow, store_keys
from .router import RouteMode
from .tools import ToolOutcome, ToolRegistry

# Hard failures make the workflow structurally inexecutable; soft failures
# leave deterministic completion possible with degraded evidence.
HARD_ERROR_CLASSES = ("unresolved_auto", "missing_placeholder", "unknown_tool",
                      "invalid_params", "modifier_error")
SOFT_ERROR_CLASSES = ("timeout", "not_found", "empty_result", "rate_limited")


class _StepAbort(Exception):
    """Internal: step could not reach the invoke sub-stage."""

    def __init__(self, error_class: str, message: str):
        super().__init__(message)
        self.error_class = error_class
        self.message = message


@dataclass(frozen=True)
class Attempt:
    params: dict
    outcome: ToolOutcome

    def to_dict(self) -> dict:
        return {"params": dict(self.params), "outcome": self.outcome.to_dict()}


@dataclass
class StepEvent:
    """Trace record for one workflow step, appended regardless of outcome."""

    index: int
    tool_id: str
    key: str
    resolved_params: dict | None
    branched_params: dict | None  # only set when different from resolved
    attempts: list[Attempt]
    outcome: str  # success | failure | skipped
    error_class: str | None
    stored_key: str | None
    wall_time: float

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "tool_id": self.tool_id,
            "key": self.key,
            "resolved_params": self.resolved_params,
            "branched_params": self.branched_params,
            "attempts": [a.to_dict() for a in self.attempts],
            "outcome": self.outcome,
            "error_class": self.error_class,
            "stored_key": self.stored_key,
            "wall_time": self.wall_time,
        }


@dataclass
class BranchFiring:
    step: int
    rule_index: int
    before: dict
    after: dict

    def to_dict(self) -> dict:
        return {"step": self.step, "rule_index": self.rule_index,
                "before": dict(self.before), "after": dict(self.after)}


@dataclass
class FailureEntry:
    step: int
    error_class: str
    attempt: int
    classified: str  # soft | hard

    def to_dict(self) -> dict:
        return {"step": self.step, "error_class": self.error_class,
                "attempt": self.attempt, "classified": self.classified}


@dataclass
class ExecutionState:
    """Five-part run state: result store, trace, branch log, failure log, env.

    Owned by exactly one run at a time; the trace is append-only and stored
    values are never overwritten.
    """

    result_store: dict[str, object] = field(default_factory=dict)
    trace: list[StepEvent] = field(default_factory=list)
    branch_log: list[BranchFiring] = field(default_factory=list)
    failure_log: list[FailureEntry] = field(default_factory=list)
    env: dict = field(default_factory=dict)

    def store(self, key: str, value) -> None:
        if key in self.result_store:
            raise RuntimeError(f"result store key {key!r} would be overwritten")
        self.result_store[key] = value

    def step_failed(self, key: str) -> bool:
        return any(event.key == key and event.outcome == "failure" for event in self.trace)

    def resolve_path(self, parts: tuple[str, ...]) -> tuple[bool, object]:
        root, rest = parts[0], parts[1:]
        if root == "result":
            node: object = self.result_store
        elif root == "env":
            node = self.env
        elif root == "trace":
            node = [event.to_dict() for event in self.trace]
        elif root == "failure":
            node = [entry.to_dict() for entry in self.failure_log]
        elif root == "branch":
            node = [entry.to_dict() for entry in self.branch_log]
        else:
            return (False, None)
        for segment in rest:
            if isinstance(node, dict):
                if segment not in node:
                    return (False, None)
                node = node[segment]
            elif isinstance(node, (list, tuple)) and segment.isdigit():
                i = int(segment)
                if i >= len(node):
                    return (False, None)
                node = node[i]
            else:
                return (False, None)
        return (True, node)

    def hard_failure(self) -> bool:
        return any(entry.classified == "hard" for entry in self.failure_log)

    def to_dict(self) -> dict:
        return {
            "result_store": dict(self.result_store),
            "trace": [event.to_dict() for event in self.trace],
            "branch_log": [entry.to_dict() for entry in self.branch_log],
            "failure_log": [entry.to_dict() for entry in self.failure_log],
            "env": dict(self.env),
        }


@dataclass(frozen=True)
class ExecutionConfig:
    recovery_retries: int = 2
    thin_output_threshold: int = 5
    mode: RouteMode = RouteMode.PURE

    def __post_init__(self):
        if self.recovery_retries < 0:
            raise ValueError("recovery_retries must be non-negative")


@dataclass(frozen=True)
class CompiledBranchRule:
    rule_index: int  # position in the profile's branch_rules list
    predicate: object
    modifier: ruledsl.ModifierAst
    target_step: int


@dataclass(frozen=True)
class RuleBundle:
    """Parsed rules a run executes with: auto, recovery, and branch rules."""

    auto_rules: dict[str, ruledsl.AutoRule] = field(default_factory=dict)
    recovery_rules: tuple[tuple[str, ruledsl.ModifierAst], ...] = ()
    branch_rules: tuple[CompiledBranchRule, ...] = ()

    def branch_rules_for(self, step_index: int) -> list[CompiledBranchRule]:
        return [rule for rule in self.branch_rules if rule.target_step == step_index]

    def first_recovery_for(self, error_class: str) -> ruledsl.ModifierAst | None:
        for matcher, modifier in self.recovery_rules:
            if matcher == error_class or matcher == "any":
                return modifier
        return None


def compile_rules(metadata: Metadata, profile: Profile) -> RuleBundle:
    """Parse every rule source once; call only after admissibility passed."""
    autos = {
        rule.id: ruledsl.AutoRule(id=rule.id, expr=ruledsl.parse_auto_expr(rule.expr))
        for rule in metadata.constraints.auto_rules
    }
    recoveries = tuple(
        (rule.error_class, ruledsl.parse_modifier(rule.modifier))
        for rule in metadata.constraints.recovery_rules
    )
    branches = tuple(
        CompiledBranchRule(
            rule_index=i,
            predicate=ruledsl.parse_predicate(rule.predicate),
            modifier=ruledsl.parse_modifier(rule.modifier),
            target_step=rule.target_step,
        )
        for i, rule in enumerate(profile.branch_rules)
    )
    return RuleBundle(auto_rules=autos, recovery_rules=recoveries, branch_rules=branches)


def resolve_step(params: dict, auto_rules: dict[str, ruledsl.AutoRule], state: ExecutionState) -> dict:
    """Replace auto markers and placeholders with concrete values."""
    resolved = {}
    for slot, value in params.items():
        if isinstance(value, AutoParam):
            rule = auto_rules.get(value.rule_id)
            if rule is None:
                raise _StepAbort("unresolved_auto", f"auto rule {value.rule_id!r} is not defined")
            try:
                resolved[slot] = ruledsl.eval_auto_rule(rule, state)
            except ruledsl.UnresolvedAutoError as exc:
                raise _StepAbort("unresolved_auto", str(exc)) from None
        elif isinstance(value, PlaceholderParam):
            found, stored = state.resolve_path(value.parts())
            if not found:
                raise _StepAbort("missing_placeholder", f"placeholder {value.path!r} has no stored value")
            resolved[slot] = stored
        else:
            resolved[slot] = value
    return resolved


def branch_step(params: dict, rules: list[CompiledBranchRule], mode: RouteMode,
                state: ExecutionState) -> tuple[dict, list[BranchFiring]]:
    """Apply every firing branch rule in listed order; identity in pure mode.

    Predicates are all evaluated against the pre-step state; modifiers chain
    on the params.
    """
    if mode == RouteMode.PURE:
        return params, []
    current = params
    firings = []
    for rule in rules:
        if ruledsl.eval_predicate(rule.predicate, state):
            try:
                updated = ruledsl.apply_modifier(rule.modifier, current, state)
            except ruledsl.ModifierEvalError as exc:
                raise _StepAbort("modifier_error", str(exc)) from None
            firings.append(BranchFiring(step=0, rule_index=rule.rule_index,
                                        before=dict(current), after=dict(updated)))
            current = updated
    return current, firings


def _classify_final(error_class: str) -> str:
    return "hard" if error_class in HARD_ERROR_CLASSES else "soft"


def execute_step(step, index: int, key: str, config: ExecutionConfig, registry: ToolRegistry,
                 rules: RuleBundle, state: ExecutionState) -> str:
    """Run one step through resolve -> branch -> invoke -> recover -> store.

    Returns "success", "soft", or "hard"; the StepEvent is appended either way.
    """
    started = time.perf_counter()

    def finish_aborted(abort: _StepAbort, resolved: dict | None) -> str:
        state.trace.append(StepEvent(
            index=index, tool_id=step.tool_id, key=key, resolved_params=resolved,
            branched_params=None, attempts=[], outcome="failure",
            error_class=abort.error_class, stored_key=None,
            wall_time=time.perf_counter() - started,
        ))
        state.failure_log.append(FailureEntry(
            step=index, error_class=abort.error_class, attempt=0, classified="hard"))
        return "hard"

    try:
        resolved = resolve_step(step.params, rules.auto_rules, state)
    except _StepAbort as abort:
        return finish_aborted(abort, None)

    try:
        branched, firings = branch_step(resolved, rules.branch_rules_for(index), config.mode, state)
    except _StepAbort as abort:
        return finish_aborted(abort, resolved)
    for firing in firings:
        firing.step = index
        state.branch_log.append(firing)

    attempts: list[Attempt] = []
    if not registry.has(step.tool_id):
        outcome = ToolOutcome.failure("not_found", f"no tool registered under id {step.tool_id!r}")
        attempts.append(Attempt(params=branched, outcome=outcome))
        final_class, classification = "unknown_tool", "hard"
        state.failure_log.append(FailureEntry(step=index, error_class="unknown_tool",
                                              attempt=1, classified="hard"))
        stored_key = None
        result = "hard"
    else:
        outcome = registry.invoke(step.tool_id, branched, state)
        attempts.append(Attempt(params=branched, outcome=outcome))
        if not outcome.ok:
            # The recovery rule is selected by the first error and reused for
            # every retry; retry params derive from the branched params.
            recovery = rules.first_recovery_for(outcome.error_class)
            while not outcome.ok and recovery is not None and len(attempts) <= config.recovery_retries:
                state.failure_log.append(FailureEntry(
                    step=index, error_class=outcome.error_class,
                    attempt=len(attempts), classified="soft"))
                try:
                    retry_params = ruledsl.apply_modifier(recovery, branched, state)
                except ruledsl.ModifierEvalError as exc:
                    abort = _StepAbort("modifier_error", str(exc))
                    state.trace.append(StepEvent(
                        index=index, tool_id=step.tool_id, key=key, resolved_params=resolved,
                        branched_params=branched if branched != resolved else None,
                        attempts=attempts, outcome="failure", error_class="modifier_error",
                        stored_key=None, wall_time=time.perf_counter() - started,
                    ))
                    state.failure_log.append(FailureEntry(
                        step=index, error_class="modifier_error",
                        attempt=len(attempts), classified="hard"))
                    return "hard"
                outcome = registry.invoke(step.tool_id, retry_params, state)
                attempts.append(Attempt(params=retry_params, outcome=outcome))
        if outcome.ok:
            state.store(key, outcome.value)
            stored_key = key
            final_class, classification, result = None, None, "success"
        else:
            final_class = outcome.error_class
            classification = _classify_final(final_class)
            state.failure_log.append(FailureEntry(
                step=index, error_class=final_class,
                attempt=len(attempts), classified=classification))
            stored_key = None
            result = classification

    state.trace.append(StepEvent(
        index=index, tool_id=step.tool_id, key=key, resolved_params=resolved,
        branched_params=branched if branched != resolved else None,
        attempts=attempts, outcome="success" if result == "success" else "failure",
        error_class=final_class, stored_key=stored_key,
        wall_time=time.perf_counter() - started,
    ))
    return result


def run_workflow(workflow: Workflow, config: ExecutionConfig, registry: ToolRegistry,
                 state: ExecutionState, rules: RuleBundle | None = None) -> ExecutionState:
    """Fold execute_step over all steps; halt early only on hard failure."""
    rules = rules or RuleBundle()
    keys = store_keys(workflow)
    halted_at = None
    for position, step in enumerate(workflow.steps):
        index = position + 1
        result = execute_step(step, index, keys[position], config, registry, rules, state)
        if result == "hard":
            halted_at = index
            break
    if halted_at is not None:
        for position in range(halted_at, len(workflow.steps)):
            state.trace.append(StepEvent(
                index=position + 1, tool_id=workflow.steps[position].tool_id,
                key=keys[position], resolved_params=None, branched_params=None,
                attempts=[], outcome="skipped", error_class=None,
                stored_key=None, wall_time=0.0,
            ))
    return state


def initial_state(context: dict | None = None) -> ExecutionState:
    """Fresh run state; env seeded from the task context."""
    return ExecutionState(env=dict(context or {}))
