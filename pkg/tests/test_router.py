import random

import pytest
from hypothesis import given, settings, strategies as st

from ptrun.core import (HistorySummary, Metadata, PlaceholderParam, Profile, RuleSet,
                        SlotSpec, ToolSpec, Workflow, WorkflowStep, BranchRule)
from ptrun.router import (RiskWeights, RouteMode, RouteThresholds, compute_components,
                          compute_risk, decide_route, route)

TOOLS = (
    ToolSpec(id="search", param_schema={"query": SlotSpec(type="string"),
                                        "limit": SlotSpec(type="number", required=False)},
             output_kind="results"),
    ToolSpec(id="lookup", param_schema={"title": SlotSpec(type="string")}, output_kind="doc"),
)


def metadata_with(history=None):
    return Metadata(schema={}, tool_catalog=TOOLS, constraints=RuleSet(), history=history)


def profile_with(steps=None, confidence=1.0, fragile=0, replan=0, branch_targets=()):
    steps = steps or [WorkflowStep(tool_id="search", params={"query": "x"})]
    length = len(steps)
    return Profile(
        workflow=Workflow(steps=tuple(steps)),
        confidence=confidence,
        fragile_points=tuple(f"fragile {i}" for i in range(fragile)),
        replan_conditions=tuple("result.search_1.count == 0" for _ in range(replan)),
        branch_rules=tuple(
            BranchRule(predicate="env.a == 1", modifier="set query = \"y\"", target_step=t)
            for t in branch_targets if t <= length
        ),
    )


class TestComponents:
    def test_full_confidence_no_descriptors_gives_zero_planning_risk(self):
        c = compute_components(metadata_with(), profile_with(confidence=1.0))
        assert c[1] == 0.0

    def test_zero_confidence_saturated_descriptors(self):
        # 0.6*(1-0) + 0.2*min(5,5)/5 + 0.2*min(5,5)/5 = 1.0
        c = compute_components(metadata_with(), profile_with(confidence=0.0, fragile=5, replan=5))
        assert c[1] == 1.0

    def test_no_history_neutral_prior(self):
        c = compute_components(metadata_with(), profile_with())
        assert c[4] == 0.5

    def test_history_passthrough(self):
        metadata = metadata_with(HistorySummary(prior_run_count=4, prior_failure_rate=0.3))
        c = compute_components(metadata, profile_with())
        assert c[4] == 0.3

    def test_schema_risk_fraction_of_deferred_slots(self):
        steps = [
            WorkflowStep(tool_id="search", params={"query": "x", "limit": 3}),
            WorkflowStep(tool_id="lookup",
                         params={"title": PlaceholderParam("result.search_1.top")}),
        ]
        c = compute_components(metadata_with(), profile_with(steps=steps))
        assert c[0] == pytest.approx(1 / 3)

    def test_method_risk_fraction_of_branched_steps(self):
        steps = [WorkflowStep(tool_id="search", params={"query": "x"}) for _ in range(4)]
        profile = profile_with(steps=steps, branch_targets=(2, 2, 3))
        c = compute_components(metadata_with(), profile)
        assert c[2] == pytest.approx(2 / 4)

    def test_scale_risk_caps_at_ten(self):
        steps = [WorkflowStep(tool_id="search", params={"query": "x"}) for _ in range(12)]
        c = compute_components(metadata_with(), profile_with(steps=steps))
        assert c[3] == 1.0

    def test_all_components_in_unit_interval(self):
        rng = random.Random(11)
        for _ in range(100):
            n = rng.randint(1, 8)
            steps = [WorkflowStep(tool_id="search", params={"query": "x"}) for _ in range(n)]
            profile = profile_with(steps=steps, confidence=rng.random(),
                                   fragile=rng.randint(0, 8), replan=rng.randint(0, 8),
                                   branch_targets=tuple(rng.randint(1, n) for _ in range(2)))
            for c in compute_components(metadata_with(), profile):
                assert 0.0 <= c <= 1.0


class TestRisk:
    def test_zero_vector(self):
        assert compute_risk((0, 0, 0, 0, 0), RiskWeights()) == 0.0

    def test_convexity_endpoint(self):
        for weights in (RiskWeights(),
                        RiskWeights(schema=0.5, planning=0.2, method=0.1, scale=0.1, history=0.1)):
            assert compute_risk((1, 1, 1, 1, 1), weights) == pytest.approx(1.0, abs=1e-12)

    def test_hand_computed_equal_weights(self):
        # 0.2 * (0.4 + 0.1 + 0.0 + 0.2 + 0.3) = 0.2 * 1.0 = 0.20
        risk = compute_risk((0.4, 0.1, 0.0, 0.2, 0.3), RiskWeights())
        assert risk == pytest.approx(0.20, abs=1e-12)

    @given(st.lists(st.floats(min_value=0, max_value=1), min_size=5, max_size=5),
           st.integers(min_value=0, max_value=4),
           st.floats(min_value=-1, max_value=1))
    @settings(max_examples=300, deadline=None)
    def test_partial_derivative_is_weight(self, components, index, delta):
        weights = RiskWeights(schema=0.3, planning=0.25, method=0.2, scale=0.15, history=0.1)
        perturbed = list(components)
        perturbed[index] = min(1.0, max(0.0, perturbed[index] + delta))
        actual_delta = perturbed[index] - components[index]
        change = compute_risk(tuple(perturbed), weights) - compute_risk(tuple(components), weights)
        assert abs(change - weights.as_tuple()[index] * actual_delta) <= 1e-9

    def test_weight_validation(self):
        with pytest.raises(ValueError):
            RiskWeights(schema=0.5, planning=0.5, method=0.5, scale=0.5, history=0.5)
        with pytest.raises(ValueError):
            RiskWeights(schema=0.0, planning=0.4, method=0.2, scale=0.2, history=0.2)


class TestRouting:
    def test_zero_risk_pure(self):
        assert route(0.0, RouteThresholds()) == RouteMode.PURE

    def test_lower_boundary_is_guarded(self):
        assert route(0.35, RouteThresholds()) == RouteMode.GUARDED

    def test_upper_boundary_is_repair_eligible(self):
        assert route(0.70, RouteThresholds()) == RouteMode.REPAIR_ELIGIBLE

    def test_just_below_boundaries(self):
        t = RouteThresholds()
        assert route(0.35 - 1e-12, t) == RouteMode.PURE
        assert route(0.70 - 1e-12, t) == RouteMode.GUARDED

    def test_threshold_validation(self):
        with pytest.raises(ValueError):
            RouteThresholds(lower=0.7, upper=0.35)
        with pytest.raises(ValueError):
            RouteThresholds(lower=0.0, upper=0.5)

    @given(st.floats(min_value=0, max_value=1), st.floats(min_value=0, max_value=1))
    @settings(max_examples=200, deadline=None)
    def test_mode_monotone_in_risk(self, r1, r2):
        order = {RouteMode.PURE: 0, RouteMode.GUARDED: 1, RouteMode.REPAIR_ELIGIBLE: 2}
        lo, hi = min(r1, r2), max(r1, r2)
        t = RouteThresholds()
        assert order[route(lo, t)] <= order[route(hi, t)]

    def test_decide_route_deterministic(self):
        metadata = metadata_with()
        profile = profile_with(confidence=0.3, fragile=2, replan=1)
        first = decide_route(metadata, profile, RiskWeights(), RouteThresholds())
        second = decide_route(metadata, profile, RiskWeights(), RouteThresholds())
        assert first == second
        assert first.breakdown.total == sum(
            w * c for w, c in zip(RiskWeights().as_tuple(), first.breakdown.components()))
