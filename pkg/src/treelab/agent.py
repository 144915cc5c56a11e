"""Instruction-execution agent: planning prompt, step grammar, tool dispatch.

The agent runs a bounded loop: render the planning prompt (instruction +
tool descriptions + prior steps), ask the LLM client for a completion,
parse it as either a ``Final Result:`` or a ``Thought: / Action: /
Action Input:`` step, dispatch the named tool, and feed the observation
back. Instead of executing model-generated code, the agent exposes a
closed tool vocabulary covering the supported analysis tasks:

* ``db_query``     — structured read query against the tree table
* ``visualize``    — render a plot specification to an SVG artifact
* ``stats``        — Gaussian fit of a column / RMSE of two series
* ``kb_lookup``    — retrieve knowledge chunks and answer with context

A schema-invalid tool call produces a structured error observation so
the model can correct itself once; two consecutive tool errors abort the
session. Knowledge-question instructions bypass the loop entirely and
are answered from the knowledge base.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .errors import AgentParseError, NotFoundError, ServiceError
from .knowledge import KNOWLEDGE_QUESTION, KnowledgeBase, answer_with_context
from .store import QueryResult, StructuredQuery, TreeStore
from . import viz

MAX_STEPS_DEFAULT = 8
MAX_OBSERVATION_ROWS = 50

STATUS_FINAL = "final"
STATUS_BUDGET_EXHAUSTED = "budget_exhausted"
STATUS_PARSE_ERROR = "parse_error"
STATUS_TOOL_ERROR = "tool_error"


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str
    schema: dict


@dataclass(frozen=True)
class AgentStep:
    thought: str
    action: str
    action_input: dict
    observation: str

    def to_json(self) -> dict:
        return {"thought": self.thought, "action": self.action,
                "action_input": self.action_input, "observation": self.observation}

    @classmethod
    def from_json(cls, obj: dict) -> "AgentStep":
        return cls(obj["thought"], obj["action"], obj["action_input"], obj["observation"])


@dataclass
class AgentTrace:
    instruction: str
    steps: list[AgentStep] = field(default_factory=list)
    final: str | None = None
    artifacts: list[str] = field(default_factory=list)
    status: str = STATUS_FINAL
    error: str | None = None

    def to_json(self) -> dict:
        return {
            "instruction": self.instruction,
            "steps": [s.to_json() for s in self.steps],
            "final": self.final,
            "artifacts": list(self.artifacts),
            "status": self.status,
            "error": self.error,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AgentTrace":
        return cls(
            instruction=obj["instruction"],
            steps=[AgentStep.from_json(s) for s in obj["steps"]],
            final=obj.get("final"),
            artifacts=list(obj.get("artifacts", [])),
            status=obj.get("status", STATUS_FINAL),
            error=obj.get("error"),
        )


@dataclass(frozen=True)
class ParsedFinal:
    text: str


@dataclass(frozen=True)
class ParsedStep:
    thought: str
    action: str
    action_input: dict


PLOT_KINDS = ("scatter", "box_grouped", "crown_map", "histogram_fit")


@dataclass(frozen=True)
class PlotSpec:
    """Declarative figure request resolved against the tree table."""

    kind: str
    query: StructuredQuery | None = None
    x: str | None = None
    y: str | None = None
    bin_width: float | None = None
    bins: int = 10

    def __post_init__(self):
        if self.kind not in PLOT_KINDS:
            raise ValueError(f"unknown plot kind {self.kind!r}")
        if self.kind == "scatter" and not (self.x and self.y):
            raise ValueError("scatter needs x and y columns")
        if self.kind == "box_grouped":
            if not (self.x and self.y):
                raise ValueError("box_grouped needs x (grouping) and y (value) columns")
            if not self.bin_width or self.bin_width <= 0:
                raise ValueError("box_grouped needs a positive bin_width")
        if self.kind == "histogram_fit" and not self.x:
            raise ValueError("histogram_fit needs an x column")

    @classmethod
    def from_json(cls, obj: dict) -> "PlotSpec":
        return cls(
            kind=obj["kind"],
            query=StructuredQuery.from_json(obj["query"]) if obj.get("query") else None,
            x=obj.get("x"),
            y=obj.get("y"),
            bin_width=obj.get("bin_width"),
            bins=obj.get("bins", 10),
        )


class ArtifactStore:
    """Directory of SVG artifacts with JSON metadata sidecars."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _next_id(self) -> str:
        existing = [int(p.stem.split("-")[1]) for p in self.directory.glob("art-*.svg")]
        return f"art-{max(existing, default=0) + 1:04d}"

    def save(self, svg: str, meta: dict) -> str:
        artifact_id = self._next_id()
        (self.directory / f"{artifact_id}.svg").write_text(svg)
        (self.directory / f"{artifact_id}.json").write_text(json.dumps(meta, indent=1))
        return artifact_id

    def read(self, artifact_id: str) -> str:
        path = self.directory / f"{artifact_id}.svg"
        if not re.fullmatch(r"art-\d{4}", artifact_id) or not path.exists():
            raise NotFoundError(f"unknown artifact {artifact_id!r}")
        return path.read_text()

    def meta(self, artifact_id: str) -> dict:
        path = self.directory / f"{artifact_id}.json"
        if not re.fullmatch(r"art-\d{4}", artifact_id) or not path.exists():
            raise NotFoundError(f"unknown artifact {artifact_id!r}")
        return json.loads(path.read_text())


# -- statistics ----------------------------------------------------------

def stats_rmse(a, b) -> float:
    """Root-mean-square error between two equal-length series."""
    xa = np.asarray(list(a), dtype=float)
    xb = np.asarray(list(b), dtype=float)
    if xa.shape != xb.shape or xa.size == 0:
        raise ValueError("rmse needs two equal-length non-empty series")
    return float(np.sqrt(np.mean((xa - xb) ** 2)))


def gaussian_fit(values, bins: int = 10) -> tuple[float, float, float]:
    """Maximum-likelihood normal fit of a sample: mean, population standard
    deviation, and a histogram-RMSE confidence — the RMSE between the
    ``bins``-bin density histogram and the fitted pdf at bin centers
    (0 for a degenerate zero-variance sample)."""
    arr = np.asarray(list(values), dtype=float)
    if arr.size == 0:
        raise ValueError("gaussian fit needs data")
    mean = float(arr.mean())
    std = float(arr.std())  # population MLE
    if std == 0.0:
        return mean, std, 0.0
    density, edges = np.histogram(arr, bins=bins, density=True)
    centers = (edges[:-1] + edges[1:]) / 2.0
    pdf = viz.gaussian_pdf(centers, mean, std)
    return mean, std, stats_rmse(density, pdf)


# -- tool dispatch ---------------------------------------------------------

@dataclass
class ToolContext:
    """Everything tools may touch: the tree store, the knowledge base, the
    LLM client for knowledge answers, and the artifact sink."""

    store: TreeStore
    project_id: str
    artifacts: ArtifactStore
    kb: KnowledgeBase | None = None
    llm: object | None = None
    pixel_size: float = 1.0


_QUERY_SCHEMA = {
    "type": "object",
    "properties": {
        "columns": {"type": "array", "items": {"type": "string"}},
        "filters": {"type": "array", "items": {
            "type": "array", "minItems": 3, "maxItems": 3}},
        "order_by": {"type": "array", "minItems": 2, "maxItems": 2,
                     "items": {"type": "string"}},
        "limit": {"type": "integer", "minimum": 1},
        "group_by": {"type": "array", "minItems": 2, "maxItems": 2},
        "aggregate": {"enum": ["count", "mean", "min", "max", "std"]},
    },
    "additionalProperties": False,
}

TOOLS: dict[str, ToolSpec] = {
    "db_query": ToolSpec(
        name="db_query",
        description=("Run a structured read query against the tree table. "
                     "Columns: tree_id, pos_col, pos_row, height_m, crown_width_m, "
                     "support_height_m, crown_area_m2, fallback."),
        schema=_QUERY_SCHEMA,
    ),
    "visualize": ToolSpec(
        name="visualize",
        description=("Render a figure to an SVG artifact. Kinds: scatter (x, y), "
                     "box_grouped (x binned by bin_width, y values), crown_map "
                     "(circles at tree positions sized by crown width), "
                     "histogram_fit (histogram of x with fitted normal curve)."),
        schema={
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": list(PLOT_KINDS)},
                "query": _QUERY_SCHEMA,
                "x": {"type": "string"},
                "y": {"type": "string"},
                "bin_width": {"type": "number", "exclusiveMinimum": 0},
                "bins": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
    ),
    "stats": ToolSpec(
        name="stats",
        description=("Statistics helpers. op=gaussian_fit fits a normal "
                     "distribution to a column (mean, population std, histogram-RMSE "
                     "confidence); op=rmse computes the root-mean-square error "
                     "between series a and b."),
        schema={
            "type": "object",
            "required": ["op"],
            "properties": {
                "op": {"enum": ["gaussian_fit", "rmse"]},
                "column": {"type": "string"},
                "bins": {"type": "integer", "minimum": 1},
                "a": {"type": "array", "items": {"type": "number"}},
                "b": {"type": "array", "items": {"type": "number"}},
            },
            "additionalProperties": False,
        },
    ),
    "kb_lookup": ToolSpec(
        name="kb_lookup",
        description="Look up domain knowledge and answer the query with retrieved context.",
        schema={
            "type": "object",
            "required": ["query"],
            "properties": {
                "query": {"type": "string"},
                "k": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
    ),
}


def format_result(result: QueryResult, max_rows: int = MAX_OBSERVATION_ROWS) -> str:
    """Compact fixed-format table; truncation beyond ``max_rows`` is noted."""
    lines = [" | ".join(result.columns)]
    for row in result.rows[:max_rows]:
        lines.append(" | ".join(_cell(v) for v in row))
    extra = len(result.rows) - max_rows
    if extra > 0:
        lines.append(f"... ({extra} more rows truncated)")
    return "\n".join(lines)


def _cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


@dataclass(frozen=True)
class Observation:
    text: str
    artifacts: tuple[str, ...] = ()
    is_error: bool = False


def dispatch_tool(name: str, args: dict, ctx: ToolContext) -> Observation:
    """Run one tool call; schema violations and tool failures come back as
    structured error observations rather than exceptions."""
    spec = TOOLS.get(name)
    if spec is None:
        return Observation(
            text=f"error: unknown tool {name!r}; available: {', '.join(sorted(TOOLS))}",
            is_error=True)
    try:
        jsonschema.validate(args, spec.schema)
    except jsonschema.ValidationError as exc:
        return Observation(text=f"error: invalid input for {name}: {exc.message}",
                           is_error=True)
    try:
        if name == "db_query":
            return _tool_db_query(args, ctx)
        if name == "visualize":
            return _tool_visualize(args, ctx)
        if name == "stats":
            return _tool_stats(args, ctx)
        return _tool_kb_lookup(args, ctx)
    except ServiceError:
        raise
    except Exception as exc:  # surfaced to the model as a correctable error
        return Observation(text=f"error: {name} failed: {exc}", is_error=True)


def _tool_db_query(args: dict, ctx: ToolContext) -> Observation:
    q = StructuredQuery.from_json(args)
    result = ctx.store.query(ctx.project_id, q)
    return Observation(text=format_result(result))


def _column_values(ctx: ToolContext, columns: tuple[str, ...],
                   query: StructuredQuery | None) -> list[tuple]:
    base = query or StructuredQuery()
    q = StructuredQuery(columns=columns, filters=base.filters,
                        order_by=base.order_by, limit=base.limit)
    return list(ctx.store.query(ctx.project_id, q).rows)


def _tool_visualize(args: dict, ctx: ToolContext) -> Observation:
    spec = PlotSpec.from_json(args)
    if spec.kind == "scatter":
        rows = _column_values(ctx, (spec.x, spec.y), spec.query)
        svg = viz.render_scatter([r[0] for r in rows], [r[1] for r in rows],
                                 spec.x, spec.y)
        meta = {"kind": "scatter", "points": len(rows)}
        summary = f"scatter of {spec.y} vs {spec.x} with {len(rows)} points"
    elif spec.kind == "box_grouped":
        rows = _column_values(ctx, (spec.x, spec.y), spec.query)
        bins: dict[int, list[float]] = {}
        for gval, v in rows:
            bins.setdefault(math.floor(float(gval) / spec.bin_width), []).append(float(v))
        groups = [(k * spec.bin_width, vals) for k, vals in sorted(bins.items())]
        svg = viz.render_box_grouped(groups, spec.bin_width, spec.x, spec.y)
        meta = {"kind": "box_grouped", "groups": len(groups),
                "bin_width": spec.bin_width}
        summary = (f"box plot of {spec.y} grouped by {spec.x} "
                   f"(bin {spec.bin_width:g}) with {len(groups)} groups")
    elif spec.kind == "crown_map":
        rows = _column_values(ctx, ("pos_col", "pos_row", "crown_width_m"), spec.query)
        svg = viz.render_crown_map([r[0] for r in rows], [r[1] for r in rows],
                                   [r[2] for r in rows], ctx.pixel_size)
        meta = {"kind": "crown_map", "trees": len(rows)}
        summary = f"crown map of {len(rows)} trees"
    else:  # histogram_fit
        rows = _column_values(ctx, (spec.x,), spec.query)
        values = [r[0] for r in rows]
        mean, std, rmse = gaussian_fit(values, bins=spec.bins)
        svg = viz.render_histogram_fit(values, mean, std, bins=spec.bins)
        meta = {"kind": "histogram_fit", "mean": mean, "std": std,
                "rmse": rmse, "bins": spec.bins}
        summary = (f"histogram of {spec.x} with normal fit: mean {mean:.6g}, "
                   f"std {std:.6g}, histogram rmse {rmse:.6g}")
    artifact_id = ctx.artifacts.save(svg, meta)
    return Observation(text=f"artifact {artifact_id}: {summary}",
                       artifacts=(artifact_id,))


def _tool_stats(args: dict, ctx: ToolContext) -> Observation:
    if args["op"] == "rmse":
        if "a" not in args or "b" not in args:
            return Observation(text="error: rmse needs series a and b", is_error=True)
        value = stats_rmse(args["a"], args["b"])
        return Observation(text=f"rmse = {value!r}")
    if "column" not in args:
        return Observation(text="error: gaussian_fit needs a column", is_error=True)
    rows = _column_values(ctx, (args["column"],), None)
    mean, std, rmse = gaussian_fit([r[0] for r in rows], bins=args.get("bins", 10))
    return Observation(
        text=f"gaussian_fit({args['column']}): mean = {mean!r}, std = {std!r}, "
             f"histogram_rmse = {rmse!r}")


def _tool_kb_lookup(args: dict, ctx: ToolContext) -> Observation:
    if ctx.kb is None or len(ctx.kb) == 0:
        return Observation(text="error: no knowledge base available", is_error=True)
    result = ctx.kb.retrieve(args["query"], k=args.get("k", 5))
    if not result.hits:
        return Observation(text="no knowledge found above the similarity threshold")
    _, answer = answer_with_context(args["query"], result, ctx.kb, ctx.llm)
    return Observation(text=answer)


# -- prompt rendering and parsing ----------------------------------------------

_PROMPT_HEADER = """\
You are an assistant analyzing a database of trees measured from remote
sensing data. Work strictly in the following format. To call a tool, reply:

Thought: <your reasoning>
Action: <tool name>
Action Input: <JSON arguments>

After every Action you receive an Observation with the tool result. When
you can answer the instruction, reply:

Final Result: <your answer>

Available tools:
"""


def serialize_step(step: AgentStep) -> str:
    return (f"Thought: {step.thought}\n"
            f"Action: {step.action}\n"
            f"Action Input: {json.dumps(step.action_input, sort_keys=True)}\n"
            f"Observation: {step.observation}")


def render_planning_prompt(instruction: str, tools: list[ToolSpec],
                           history: list[AgentStep]) -> str:
    """Deterministic planning prompt: byte-identical for identical inputs."""
    if not tools:
        raise ValueError("at least one tool must be registered")
    parts = [_PROMPT_HEADER]
    for t in tools:
        parts.append(f"- {t.name}: {t.description}\n"
                     f"  arguments schema: {json.dumps(t.schema, sort_keys=True)}\n")
    parts.append(f"\nInstruction: {instruction}\n")
    for step in history:
        parts.append("\n" + serialize_step(step) + "\n")
    return "".join(parts)


_SECTIONS = ("Thought:", "Action:", "Action Input:")
FINAL_MARKER = "Final Result:"


def parse_step(llm_output: str) -> ParsedFinal | ParsedStep:
    """Parse one completion: the first ``Final Result:`` wins; otherwise the
    output must contain Thought, Action and Action Input sections in order,
    with the action input a JSON object literal."""
    final_pos = llm_output.find(FINAL_MARKER)
    if final_pos != -1:
        return ParsedFinal(text=llm_output[final_pos + len(FINAL_MARKER):].strip())

    positions = []
    cursor = 0
    for marker in _SECTIONS:
        pos = llm_output.find(marker, cursor)
        if pos == -1:
            raise AgentParseError(
                f"missing or out-of-order section {marker!r} in completion",
                raw_output=llm_output)
        positions.append(pos)
        cursor = pos + len(marker)

    thought = llm_output[positions[0] + len("Thought:"):positions[1]].strip()
    action = llm_output[positions[1] + len("Action:"):positions[2]].strip()
    input_text = llm_output[positions[2] + len("Action Input:"):]
    obs_pos = input_text.find("Observation:")
    if obs_pos != -1:
        input_text = input_text[:obs_pos]
    input_text = input_text.strip()
    try:
        action_input = json.loads(input_text) if input_text else {}
    except json.JSONDecodeError as exc:
        raise AgentParseError(
            f"action input is not valid JSON: {exc}", raw_output=llm_output) from exc
    if not isinstance(action_input, dict):
        raise AgentParseError("action input must be a JSON object",
                              raw_output=llm_output)
    if "\n" in action:
        raise AgentParseError("action must be a single tool name on one line",
                              raw_output=llm_output)
    return ParsedStep(thought=thought, action=action, action_input=action_input)


# -- the loop ---------------------------------------------------------------

def run_session(
    instruction: str,
    llm,
    ctx: ToolContext,
    max_steps: int = MAX_STEPS_DEFAULT,
    tools: list[ToolSpec] | None = None,
) -> AgentTrace:
    """Execute one instruction to completion, a step budget, or an abort.

    Knowledge routing comes first: instructions the knowledge base claims
    (best similarity at or above its threshold) are answered from
    retrieved context without entering the loop.
    """
    tool_list = tools if tools is not None else list(TOOLS.values())
    trace = AgentTrace(instruction=instruction, status=STATUS_BUDGET_EXHAUSTED)

    if ctx.kb is not None and len(ctx.kb) > 0:
        route = ctx.kb.route(instruction)
        if route.kind == KNOWLEDGE_QUESTION:
            result = ctx.kb.retrieve(instruction)
            if result.hits:
                _, answer = answer_with_context(instruction, result, ctx.kb, llm)
                trace.final = answer
                trace.status = STATUS_FINAL
                return trace

    consecutive_errors = 0
    for _ in range(max_steps):
        prompt = render_planning_prompt(instruction, tool_list, trace.steps)
        try:
            completion = llm.complete([{"role": "user", "content": prompt}])
        except ServiceError as exc:
            exc.trace = trace
            raise
        try:
            parsed = parse_step(completion)
        except AgentParseError as exc:
            trace.status = STATUS_PARSE_ERROR
            trace.error = f"{exc} | raw output: {exc.raw_output}"
            return trace
        if isinstance(parsed, ParsedFinal):
            trace.final = parsed.text
            trace.status = STATUS_FINAL
            return trace
        obs = dispatch_tool(parsed.action, parsed.action_input, ctx)
        trace.steps.append(AgentStep(
            thought=parsed.thought,
            action=parsed.action,
            action_input=parsed.action_input,
            observation=obs.text,
        ))
        trace.artifacts.extend(obs.artifacts)
        if obs.is_error:
            consecutive_errors += 1
            if consecutive_errors >= 2:
                trace.status = STATUS_TOOL_ERROR
                trace.error = "two consecutive tool errors"
                return trace
        else:
            consecutive_errors = 0
    return trace
