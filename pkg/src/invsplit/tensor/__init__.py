"""Dense (n, h, w, c) float64 tensors and a small reverse-mode layer engine."""

from .gradcheck import gradient_check, half_sum_squares, weighted_sum
from .graph import Graph, GraphError, LayerSpec, graph_backward, graph_forward
from .ops import pixel_shuffle, pixel_unshuffle

__all__ = [
    "Graph",
    "GraphError",
    "LayerSpec",
    "graph_forward",
    "graph_backward",
    "gradient_check",
    "half_sum_squares",
    "weighted_sum",
    "pixel_shuffle",
    "pixel_unshuffle",
]
