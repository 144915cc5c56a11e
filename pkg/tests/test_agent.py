import json
import math

import numpy as np
import pytest

from treelab.agent import (
    TOOLS,
    AgentStep,
    AgentTrace,
    ArtifactStore,
    Observation,
    ParsedFinal,
    ParsedStep,
    PlotSpec,
    ToolContext,
    dispatch_tool,
    format_result,
    gaussian_fit,
    parse_step,
    render_planning_prompt,
    run_session,
    serialize_step,
    stats_rmse,
)
from treelab.errors import AgentParseError, NotFoundError, ServiceError
from treelab.gateway.clients import ScriptedLlm
from treelab.geometry import Bbox, box_to_mask
from treelab.knowledge import KnowledgeBase
from treelab.factors import TreeFactors
from treelab.store import StructuredQuery, TreeRecord, TreeStore
from treelab.viz import gaussian_pdf


def make_record(tree_id, height, project="p"):
    x0 = float(tree_id * 5 % 30)
    y0 = float(tree_id * 9 % 30)
    bbox = Bbox(x0, y0, x0 + 6, y0 + 6)
    return TreeRecord(
        tree_id=tree_id, project_id=project,
        pos_col=(bbox.x_min + bbox.x_max) / 2, pos_row=(bbox.y_min + bbox.y_max) / 2,
        bbox=bbox, contour=box_to_mask(bbox, 40, 40),
        factors=TreeFactors(height, 2.0, height / 4, 5.0, 50),
        fallback=False,
    )


@pytest.fixture
def ctx(tmp_path):
    store = TreeStore(tmp_path / "t.db")
    store.upsert_trees("p", [make_record(1, 5.0), make_record(2, 10.0),
                             make_record(3, 7.0)])
    return ToolContext(
        store=store,
        project_id="p",
        artifacts=ArtifactStore(tmp_path / "artifacts"),
    )


TALLEST_STEP = (
    "Thought: the tallest tree is the height_m argmax\n"
    "Action: db_query\n"
    'Action Input: {"columns": ["tree_id", "height_m"], '
    '"order_by": ["height_m", "desc"], "limit": 1}'
)


class TestParseStep:
    def test_valid_step(self):
        parsed = parse_step(TALLEST_STEP)
        assert isinstance(parsed, ParsedStep)
        assert parsed.action == "db_query"
        assert parsed.action_input["limit"] == 1
        assert parsed.thought == "the tallest tree is the height_m argmax"

    def test_final_result(self):
        parsed = parse_step("Final Result: The tallest tree is #7.")
        assert parsed == ParsedFinal("The tallest tree is #7.")

    def test_final_takes_precedence(self):
        parsed = parse_step("Thought: done\nFinal Result: 42")
        assert isinstance(parsed, ParsedFinal)

    def test_missing_sections_rejected(self):
        with pytest.raises(AgentParseError) as exc:
            parse_step("Answer: 42")
        assert exc.value.raw_output == "Answer: 42"

    def test_out_of_order_sections_rejected(self):
        bad = "Action: db_query\nThought: hm\nAction Input: {}"
        with pytest.raises(AgentParseError):
            parse_step(bad)

    def test_invalid_json_input_rejected(self):
        bad = "Thought: t\nAction: db_query\nAction Input: {not json"
        with pytest.raises(AgentParseError, match="JSON"):
            parse_step(bad)

    def test_non_object_input_rejected(self):
        bad = "Thought: t\nAction: db_query\nAction Input: [1,2]"
        with pytest.raises(AgentParseError):
            parse_step(bad)

    def test_parse_inverts_serialization(self):
        steps = [
            AgentStep("find max", "db_query", {"limit": 1, "columns": ["tree_id"]}, "2 rows"),
            AgentStep("plot it", "visualize", {"kind": "scatter", "x": "a", "y": "b"}, "done"),
            AgentStep("", "stats", {}, "x"),
        ]
        for step in steps:
            parsed = parse_step(serialize_step(step))
            assert parsed == ParsedStep(step.thought, step.action, step.action_input)


class TestPromptRendering:
    def test_empty_history_has_no_observations(self):
        prompt = render_planning_prompt("find trees", list(TOOLS.values()), [])
        assert prompt.count("Observation:") == 0
        assert "Instruction: find trees" in prompt
        for name in TOOLS:
            assert f"- {name}:" in prompt

    def test_one_step_has_one_verbatim_observation(self):
        step = AgentStep("t", "db_query", {}, "tree_id | height_m\n2 | 10")
        prompt = render_planning_prompt("q", list(TOOLS.values()), [step])
        assert prompt.count("Observation:") == 1
        assert "Observation: tree_id | height_m\n2 | 10" in prompt

    def test_byte_identical_across_runs(self):
        step = AgentStep("t", "stats", {"op": "rmse", "a": [1], "b": [1]}, "0")
        args = ("the instruction", list(TOOLS.values()), [step])
        assert render_planning_prompt(*args) == render_planning_prompt(*args)

    def test_needs_a_tool(self):
        with pytest.raises(ValueError):
            render_planning_prompt("q", [], [])


class TestStats:
    def test_rmse_identical(self):
        assert stats_rmse([1, 2], [1, 2]) == 0.0

    def test_rmse_hand_case(self):
        assert stats_rmse([0, 0], [3, 4]) == pytest.approx(math.sqrt(12.5), abs=1e-9)

    def test_rmse_shape_mismatch(self):
        with pytest.raises(ValueError):
            stats_rmse([1], [1, 2])

    def test_gaussian_fit_two_points(self):
        mean, std, _ = gaussian_fit([2, 4])
        assert mean == pytest.approx(3.0, abs=1e-9)
        assert std == pytest.approx(1.0, abs=1e-9)

    def test_gaussian_fit_constant_data(self):
        mean, std, rmse = gaussian_fit([5.0, 5.0, 5.0])
        assert (mean, std, rmse) == (5.0, 0.0, 0.0)

    def test_histogram_rmse_self_consistency(self):
        # the confidence oracle: identical histogram and pdf values -> 0
        centers = np.linspace(-2, 2, 10)
        pdf = gaussian_pdf(centers, 0.0, 1.0)
        assert stats_rmse(pdf, pdf) == 0.0

    def test_gaussian_fit_rmse_matches_manual_oracle(self):
        rng = np.random.default_rng(5)
        values = rng.normal(10, 2, size=200)
        mean, std, rmse = gaussian_fit(values)
        density, edges = np.histogram(values, bins=10, density=True)
        centers = (edges[:-1] + edges[1:]) / 2
        expect = float(np.sqrt(np.mean((density - gaussian_pdf(centers, mean, std)) ** 2)))
        assert rmse == pytest.approx(expect, abs=1e-12)


class TestDispatch:
    def test_db_query_matches_store_byte_for_byte(self, ctx):
        args = {"columns": ["tree_id", "height_m"], "order_by": ["height_m", "desc"]}
        obs = dispatch_tool("db_query", args, ctx)
        expect = format_result(ctx.store.query("p", StructuredQuery.from_json(args)))
        assert obs.text == expect
        assert not obs.is_error

    def test_db_query_truncation_note(self, ctx):
        ctx.store.upsert_trees("p", [make_record(i, float(i)) for i in range(1, 61)])
        obs = dispatch_tool("db_query", {"columns": ["tree_id"]}, ctx)
        assert "(10 more rows truncated)" in obs.text
        assert len(obs.text.splitlines()) == 52  # header + 50 rows + note

    def test_unknown_tool_is_error_observation(self, ctx):
        obs = dispatch_tool("run_code", {}, ctx)
        assert obs.is_error
        assert "unknown tool" in obs.text

    def test_schema_violation_is_error_observation(self, ctx):
        obs = dispatch_tool("stats", {"op": "nope"}, ctx)
        assert obs.is_error
        assert obs.text.startswith("error:")

    def test_stats_rmse_tool(self, ctx):
        obs = dispatch_tool("stats", {"op": "rmse", "a": [1, 2], "b": [1, 2]}, ctx)
        assert "rmse = 0.0" in obs.text

    def test_stats_gaussian_tool(self, ctx):
        obs = dispatch_tool("stats", {"op": "gaussian_fit", "column": "height_m"}, ctx)
        assert "mean = " in obs.text and "std = " in obs.text

    def test_visualize_box_grouped_artifact(self, ctx):
        args = {"kind": "box_grouped", "x": "height_m", "y": "height_m", "bin_width": 5}
        obs = dispatch_tool("visualize", args, ctx)
        assert len(obs.artifacts) == 1
        aid = obs.artifacts[0]
        meta = ctx.artifacts.meta(aid)
        # oracle: store group_by count on heights {5,10,7} with bin 5 -> 2 bins
        oracle = ctx.store.query("p", StructuredQuery(
            columns=("height_m",), group_by=("height_m", 5.0), aggregate="count"))
        assert meta["groups"] == len(oracle.rows) == 2
        svg = ctx.artifacts.read(aid)
        assert svg.count('class="box-group"') == 2

    def test_visualize_scatter(self, ctx):
        obs = dispatch_tool("visualize",
                            {"kind": "scatter", "x": "pos_col", "y": "pos_row"}, ctx)
        svg = ctx.artifacts.read(obs.artifacts[0])
        assert svg.count('class="point"') == 3

    def test_visualize_crown_map(self, ctx):
        obs = dispatch_tool("visualize", {"kind": "crown_map"}, ctx)
        svg = ctx.artifacts.read(obs.artifacts[0])
        assert svg.count('class="crown"') == 3

    def test_visualize_histogram_fit(self, ctx):
        obs = dispatch_tool("visualize", {"kind": "histogram_fit", "x": "height_m"}, ctx)
        meta = ctx.artifacts.meta(obs.artifacts[0])
        assert meta["mean"] == pytest.approx((5 + 10 + 7) / 3)
        svg = ctx.artifacts.read(obs.artifacts[0])
        assert 'class="fit"' in svg and 'class="bar"' in svg

    def test_kb_lookup_without_kb_is_error(self, ctx):
        obs = dispatch_tool("kb_lookup", {"query": "crown"}, ctx)
        assert obs.is_error

    def test_kb_lookup_with_kb(self, ctx):
        ctx.kb = KnowledgeBase()
        ctx.kb.ingest("Crown width is the horizontal crown extent.")
        ctx.llm = ScriptedLlm(["It means the horizontal extent."])
        obs = dispatch_tool(
            "kb_lookup", {"query": "Crown width is the horizontal crown extent."}, ctx)
        assert obs.text == "It means the horizontal extent."


class TestPlotSpec:
    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            PlotSpec(kind="pie")

    def test_box_grouped_needs_bin_width(self):
        with pytest.raises(ValueError):
            PlotSpec(kind="box_grouped", x="a", y="b")

    def test_scatter_needs_axes(self):
        with pytest.raises(ValueError):
            PlotSpec(kind="scatter", x="a")


class TestRunSession:
    def test_tallest_tree_fixture(self, ctx):
        llm = ScriptedLlm([
            TALLEST_STEP,
            "Final Result: The tallest tree is tree 2 with height 10 m.",
        ])
        trace = run_session("which tree is the tallest?", llm, ctx)
        assert trace.status == "final"
        assert "tree 2" in trace.final
        assert len(trace.steps) == 1
        assert "2 | 10" in trace.steps[0].observation

    def test_immediate_final(self, ctx):
        llm = ScriptedLlm(["Final Result: forty-two"])
        trace = run_session("say something", llm, ctx)
        assert trace.final == "forty-two"
        assert trace.steps == []

    def test_box_plot_fixture_produces_grouped_artifact(self, ctx):
        llm = ScriptedLlm([
            "Thought: group heights into 5 m bins\n"
            "Action: visualize\n"
            'Action Input: {"kind": "box_grouped", "x": "height_m", '
            '"y": "height_m", "bin_width": 5}',
            "Final Result: see the box plot.",
        ])
        trace = run_session("box plot of trees grouped by height", llm, ctx)
        assert trace.status == "final"
        assert len(trace.artifacts) == 1
        assert ctx.artifacts.meta(trace.artifacts[0])["groups"] == 2

    def test_parse_error_aborts_with_raw_output(self, ctx):
        llm = ScriptedLlm(["I refuse to follow formats"])
        trace = run_session("q", llm, ctx)
        assert trace.status == "parse_error"
        assert trace.final is None
        assert "I refuse to follow formats" in trace.error

    def test_single_tool_error_lets_model_retry(self, ctx):
        llm = ScriptedLlm([
            "Thought: t\nAction: db_query\nAction Input: {\"columns\": [\"no_such\"]}",
            TALLEST_STEP,
            "Final Result: done",
        ])
        trace = run_session("q", llm, ctx)
        assert trace.status == "final"
        assert len(trace.steps) == 2
        assert trace.steps[0].observation.startswith("error:")

    def test_two_consecutive_tool_errors_abort(self, ctx):
        bad = "Thought: t\nAction: nope\nAction Input: {}"
        llm = ScriptedLlm([bad, bad, "Final Result: unreachable"])
        trace = run_session("q", llm, ctx)
        assert trace.status == "tool_error"
        assert trace.final is None
        assert len(trace.steps) == 2

    def test_budget_exhausted(self, ctx):
        step = TALLEST_STEP
        llm = ScriptedLlm([step] * 10)
        trace = run_session("q", llm, ctx, max_steps=3)
        assert trace.status == "budget_exhausted"
        assert len(trace.steps) == 3
        assert trace.final is None

    def test_steps_match_script_until_final(self, ctx):
        for n_steps in (0, 1, 2, 4):
            llm = ScriptedLlm([TALLEST_STEP] * n_steps + ["Final Result: ok"])
            trace = run_session("q", llm, ctx)
            assert len(trace.steps) == n_steps
            assert trace.status == "final"

    def test_knowledge_question_bypasses_loop(self, ctx):
        ctx.kb = KnowledgeBase()
        ctx.kb.ingest("Support height marks the base of the live crown.")
        llm = ScriptedLlm(["The support height is where the live crown starts."])
        trace = run_session("Support height marks the base of the live crown.",
                            llm, ctx)
        assert trace.status == "final"
        assert trace.steps == []
        assert "live crown" in trace.final

    def test_service_error_carries_partial_trace(self, ctx):
        llm = ScriptedLlm([TALLEST_STEP])  # exhausted on second call
        with pytest.raises(ServiceError) as exc:
            run_session("q", llm, ctx)
        assert len(exc.value.trace.steps) == 1

    def test_trace_serialization_roundtrip(self, ctx):
        llm = ScriptedLlm([TALLEST_STEP, "Final Result: tree 2"])
        trace = run_session("q", llm, ctx)
        assert AgentTrace.from_json(trace.to_json()) == trace
        assert AgentTrace.from_json(json.loads(json.dumps(trace.to_json()))) == trace


class TestArtifactStore:
    def test_save_read_meta(self, tmp_path):
        store = ArtifactStore(tmp_path / "a")
        aid = store.save("<svg/>", {"kind": "scatter"})
        assert aid == "art-0001"
        assert store.read(aid) == "<svg/>"
        assert store.meta(aid) == {"kind": "scatter"}
        assert store.save("<svg/>", {}) == "art-0002"

    def test_unknown_artifact(self, tmp_path):
        store = ArtifactStore(tmp_path / "a")
        with pytest.raises(NotFoundError):
            store.read("art-9999")
        with pytest.raises(NotFoundError):
            store.read("../../etc/passwd")

    def test_observation_is_frozen_value(self):
        obs = Observation(text="x")
        assert obs.artifacts == () and not obs.is_error
