"""Label-transport losses for training graph neural networks."""

from .graph import Graph, NodeMask, build_graph, incidence
from .ot import partial_w1_flow, w1_flow
from .qw import QWConfig
from .models import ModelSpec
from .experiment import train, predict, evaluate, split_nodes

__version__ = "0.1.0"

__all__ = [
    "Graph", "NodeMask", "build_graph", "incidence", "w1_flow", "partial_w1_flow",
    "QWConfig", "ModelSpec", "train", "predict", "evaluate", "split_nodes",
]
