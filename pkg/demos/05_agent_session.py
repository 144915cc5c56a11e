"""One agent session, step by step, with a scripted LLM.

The scripted client stands in for a live model: it replays the exact
Thought/Action/Action Input completions a model would produce for the
"tallest tree" task plus a grouped box plot, so the whole loop runs
offline and deterministically. Artifacts land in demos/output/.
"""

from pathlib import Path

from treelab.agent import ArtifactStore, ToolContext, run_session
from treelab.errors import TreelabError
from treelab.factors import TreeFactors
from treelab.gateway.clients import ScriptedLlm
from treelab.geometry import Bbox, box_to_mask
from treelab.store import TreeRecord, TreeStore

store = TreeStore(":memory:")
records = []
for tree_id, height in ((1, 5.0), (2, 10.0), (3, 7.0), (4, 12.5), (5, 6.25)):
    x0 = tree_id * 6.0
    bbox = Bbox(x0, x0, x0 + 5, x0 + 5)
    records.append(TreeRecord(
        tree_id=tree_id, project_id="demo",
        pos_col=(bbox.x_min + bbox.x_max) / 2, pos_row=(bbox.y_min + bbox.y_max) / 2,
        bbox=bbox, contour=box_to_mask(bbox, 64, 64),
        factors=TreeFactors(height, 2.0, height / 4, 6.0, 120), fallback=False,
    ))
store.upsert_trees("demo", records)

out_dir = Path(__file__).parent / "output"
ctx = ToolContext(store=store, project_id="demo", artifacts=ArtifactStore(out_dir))

script = ScriptedLlm([
    "Thought: the tallest tree is the one with maximum height_m\n"
    "Action: db_query\n"
    'Action Input: {"columns": ["tree_id", "height_m"], '
    '"order_by": ["height_m", "desc"], "limit": 1}',

    "Thought: also show the height distribution grouped into 5 m bins\n"
    "Action: visualize\n"
    'Action Input: {"kind": "box_grouped", "x": "height_m", "y": "height_m", '
    '"bin_width": 5}',

    "Final Result: Tree 4 is the tallest at 12.5 m; see the grouped box plot.",
])

trace = run_session("find the tallest tree and plot heights by 5 m class",
                    script, ctx)

for i, step in enumerate(trace.steps, start=1):
    print(f"Step {i}")
    print(f"  Thought:      {step.thought}")
    print(f"  Action:       {step.action}")
    print(f"  Action Input: {step.action_input}")
    obs = step.observation.replace("\n", "\n                ")
    print(f"  Observation:  {obs}")
print(f"\nFinal Result: {trace.final}")
print(f"status: {trace.status}; artifacts: {trace.artifacts}")
for artifact_id in trace.artifacts:
    print(f"  wrote {out_dir / (artifact_id + '.svg')}")
