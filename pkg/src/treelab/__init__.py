"""treelab: forest remote-sensing analysis toolkit.

Individual-tree mask selection via GIoU-cost assignment, structural
factor estimation from point clouds, a relational tree store, a
retrieval knowledge base, and a tool-dispatch analysis agent — with all
heavy model services (segmenter, detector, LLM, embedder) behind
pluggable clients and deterministic offline mocks.
"""

from .errors import TreelabError
from .geometry import Bbox, RleMask, giou, iou, mask_area, mask_bbox, mask_iou
from .selection import select_masks, solve_assignment
from .factors import GeoTransform, TreeFactors, compute_factors, label_points
from .store import StructuredQuery, TreeRecord, TreeStore
from .knowledge import KnowledgeBase, chunk_text
from .agent import AgentTrace, run_session
from .synthetic import generate_scene, make_decoys

__version__ = "0.1.0"

__all__ = [
    "TreelabError",
    "Bbox", "RleMask", "giou", "iou", "mask_area", "mask_bbox", "mask_iou",
    "select_masks", "solve_assignment",
    "GeoTransform", "TreeFactors", "compute_factors", "label_points",
    "StructuredQuery", "TreeRecord", "TreeStore",
    "KnowledgeBase", "chunk_text",
    "AgentTrace", "run_session",
    "generate_scene", "make_decoys",
    "__version__",
]
