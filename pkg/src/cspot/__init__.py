"""Segmentation-free keyword spotting by character counting."""

from .estimator import KeywordSpotter, PageIndex, index_page
from .integral import IntegralStack, build_integrals, count_histogram, rect_sum
from .maps import (
    Alphabet,
    Box,
    Detection,
    PageMaps,
    Query,
    Stage,
    load_page_maps,
    normalize_query,
    scaled_prob_at,
    write_page_maps,
)
from .metrics import GtWord, average_precision, evaluate, iou, iow, x_iou
from .proposal import SpotConfig, build_height_map, propose
from .scoring import ctc_forced_score, nms, spot

__version__ = "0.1.0"

__all__ = [
    "Alphabet", "Box", "Detection", "GtWord", "IntegralStack", "KeywordSpotter",
    "PageIndex", "PageMaps", "Query", "SpotConfig", "Stage", "average_precision",
    "build_height_map", "build_integrals", "count_histogram", "ctc_forced_score",
    "evaluate", "index_page", "iou", "iow", "load_page_maps", "nms",
    "normalize_query", "propose", "rect_sum", "scaled_prob_at", "spot",
    "write_page_maps", "x_iou",
]
