from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Graph, NodeMask


@dataclass
class Dataset:
    """Graph, node features and label matrix with train/val/test masks.

    ``labels`` is |V| x C: one-hot rows for classification, real rows for
    regression.  ``classes`` holds the integer class per node (classification
    only).
    """

    graph: Graph
    features: object  # ndarray or scipy sparse, |V| x D
    labels: np.ndarray
    train: NodeMask
    val: NodeMask
    test: NodeMask
    task: str = "classification"
    classes: np.ndarray | None = None
    class_names: list | None = None
    node_ids: list | None = None

    def __post_init__(self):
        n = self.graph.num_nodes
        if self.features.shape[0] != n or self.labels.shape[0] != n:
            raise ValueError("features and labels need one row per node")
        sets = [set(self.train.members.tolist()), set(self.val.members.tolist()), set(self.test.members.tolist())]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise ValueError("split masks overlap")
        if self.task == "classification" and self.classes is None:
            self.classes = np.argmax(self.labels, axis=1)

    @property
    def num_classes(self) -> int:
        return int(self.labels.shape[1])

    @property
    def num_features(self) -> int:
        return int(self.features.shape[1])

    def with_split(self, train, val, test) -> "Dataset":
        return Dataset(
            self.graph, self.features, self.labels, train, val, test,
            self.task, self.classes, self.class_names, self.node_ids,
        )


def one_hot(classes, num_classes=None) -> np.ndarray:
    classes = np.asarray(classes, dtype=np.int64)
    if num_classes is None:
        num_classes = int(classes.max()) + 1 if classes.size else 0
    out = np.zeros((classes.shape[0], num_classes))
    out[np.arange(classes.shape[0]), classes] = 1.0
    return out
