"""Dataset loaders, model files and JSON-lines run records.

Edge-list format (a directory):
    edges.tsv     u<TAB>v[<TAB>w]
    features.csv  node_id,f1,...,fD
    labels.csv    node_id,class   or   node_id,y1,...,yC (regression)
    split.tsv     node_id<TAB>train|val|test   (optional)

Citation-style format (a directory holding ``*.content`` and ``*.cites``):
    content  <id> <f1 ... fD> <label>   whitespace separated
    cites    <id> <id>

External node ids are remapped to 0..N-1 in first-seen order (the feature
or content file defines the order).
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .data import Dataset, one_hot
from .graph import NodeMask, build_graph
from .models import ModelSpec
from .qw import QWConfig

logger = logging.getLogger(__name__)

FORMATS = ("edge-list", "citation-style")


class DatasetError(ValueError):
    pass


class DatasetNotFound(DatasetError, FileNotFoundError):
    pass


def _require(path: Path) -> Path:
    if not path.exists():
        raise DatasetNotFound(f"dataset not found: {path}")
    return path


def _rows(path: Path, delimiter):
    """Yield (line number, fields) for non-blank, non-comment lines."""
    with open(path, encoding="utf-8", newline="") as fh:
        if delimiter is None:
            for lineno, line in enumerate(fh, 1):
                s = line.strip()
                if s and not s.startswith("#"):
                    yield lineno, s.split()
        else:
            for lineno, row in enumerate(csv.reader(fh, delimiter=delimiter), 1):
                if not row or not "".join(row).strip() or row[0].startswith("#"):
                    continue
                yield lineno, [c.strip() for c in row]


def _float(text, path, lineno, what="value"):
    try:
        return float(text)
    except ValueError:
        raise DatasetError(f"{path.name}: bad {what} {text!r}, line {lineno}") from None


def read_edges(path, index: dict, allow_new=False):
    """Parse ``u v [w]`` rows into (pairs, weights).  ``index`` maps external ids."""
    path = Path(path)
    pairs, weights = [], []
    for lineno, row in _rows(path, "\t" if path.suffix == ".tsv" else None):
        if len(row) == 1 and path.suffix == ".tsv":
            row = row[0].split()
        if len(row) not in (2, 3):
            raise DatasetError(f"{path.name}: expected 2 or 3 fields, got {len(row)}, line {lineno}")
        ids = []
        for tok in row[:2]:
            if tok not in index:
                if not allow_new:
                    raise DatasetError(f"{path.name}: unknown node id {tok!r}, line {lineno}")
                index[tok] = len(index)
            ids.append(index[tok])
        w = 1.0
        if len(row) == 3:
            w = _float(row[2], path, lineno, "weight")
            if not (w > 0 and np.isfinite(w)):
                raise DatasetError(f"{path.name}: non-positive weight, line {lineno}")
        pairs.append(ids)
        weights.append(w)
    return np.array(pairs, dtype=np.int64).reshape(-1, 2), np.array(weights)


def _read_features(path: Path):
    index, rows = {}, []
    width = None
    for lineno, row in _rows(path, ","):
        node, vals = row[0], row[1:]
        if node in index:
            raise DatasetError(f"{path.name}: node {node!r} listed twice, line {lineno}")
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise DatasetError(f"{path.name}: feature dimension {len(vals)} != {width}, line {lineno}")
        index[node] = len(index)
        rows.append([_float(v, path, lineno, "feature") for v in vals])
    if not rows:
        raise DatasetError(f"{path.name}: no nodes")
    return index, np.array(rows, dtype=np.float64)


def _class_index(tokens):
    """Integer class per token: numeric order when every token is an integer, else first-seen order."""
    try:
        order = sorted(set(tokens), key=int)
    except ValueError:
        order = list(dict.fromkeys(tokens))
    names = {t: i for i, t in enumerate(order)}
    return np.array([names[t] for t in tokens], dtype=np.int64), order


def _read_labels(path: Path, index: dict):
    n = len(index)
    raw = {}
    for lineno, row in _rows(path, ","):
        if row[0] not in index:
            raise DatasetError(f"{path.name}: unknown node id {row[0]!r}, line {lineno}")
        raw[index[row[0]]] = (lineno, row[1:])
    missing = n - len(raw)
    if missing:
        raise DatasetError(f"{path.name}: {missing} nodes have no label")
    widths = {len(v) for _, v in raw.values()}
    if len(widths) != 1:
        raise DatasetError(f"{path.name}: rows have differing widths {sorted(widths)}")
    width = widths.pop()
    if width == 1:
        # a single column is a class label (names allowed)
        classes, names = _class_index([raw[i][1][0] for i in range(n)])
        return "classification", one_hot(classes, len(names)), classes, names
    Y = np.zeros((n, width))
    for i, (lineno, vals) in raw.items():
        Y[i] = [_float(v, path, lineno, "label") for v in vals]
    return "regression", Y, None, None


def _read_split(path: Path, index: dict):
    parts = {"train": [], "val": [], "test": []}
    for lineno, row in _rows(path, "\t"):
        if len(row) == 1:
            row = row[0].split()
        if len(row) != 2 or row[1] not in parts:
            raise DatasetError(f"{path.name}: expected 'node<TAB>train|val|test', line {lineno}")
        if row[0] not in index:
            raise DatasetError(f"{path.name}: unknown node id {row[0]!r}, line {lineno}")
        parts[row[1]].append(index[row[0]])
    n = len(index)
    return tuple(NodeMask(parts[k], n) for k in ("train", "val", "test"))


def _load_edge_list(root: Path, directed: bool) -> Dataset:
    feats = _require(root / "features.csv")
    index, X = _read_features(feats)
    pairs, w = read_edges(_require(root / "edges.tsv"), index)
    graph = build_graph(len(index), pairs, w, directed=directed)
    task, Y, classes, names = _read_labels(_require(root / "labels.csv"), index)
    empty = NodeMask([], len(index))
    split = (empty, empty, empty)
    if (root / "split.tsv").exists():
        split = _read_split(root / "split.tsv", index)
    ids = list(index)
    return Dataset(graph, X, Y, *split, task=task, classes=classes, class_names=names, node_ids=ids)


def _one(root: Path, pattern: str) -> Path:
    found = sorted(root.glob(pattern))
    if not found:
        raise DatasetNotFound(f"dataset not found: no {pattern} file in {root}")
    if len(found) > 1:
        raise DatasetError(f"several {pattern} files in {root}: {[p.name for p in found]}")
    return found[0]


def _load_citation(root: Path, directed: bool) -> Dataset:
    content = _one(root, "*.content")
    index, rows, labels = {}, [], []
    width = None
    for lineno, row in _rows(content, None):
        if len(row) < 2:
            raise DatasetError(f"{content.name}: expected id, features and label, line {lineno}")
        vals = row[1:-1]
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise DatasetError(f"{content.name}: feature dimension {len(vals)} != {width}, line {lineno}")
        if row[0] in index:
            raise DatasetError(f"{content.name}: node {row[0]!r} listed twice, line {lineno}")
        index[row[0]] = len(index)
        rows.append([_float(v, content, lineno, "feature") for v in vals])
        labels.append(row[-1])
    X = sp.csr_matrix(np.array(rows, dtype=np.float64))
    classes, names = _class_index(labels)
    pairs, w = read_edges(_one(root, "*.cites"), index)
    graph = build_graph(len(index), pairs, w, directed=directed)
    empty = NodeMask([], len(index))
    return Dataset(graph, X, one_hot(classes, len(names)), empty, empty, empty,
                   task="classification", classes=classes, class_names=names, node_ids=list(index))


def load_dataset(path, format="edge-list", directed=False) -> Dataset:
    root = Path(path)
    if format not in FORMATS:
        raise DatasetError(f"unknown format {format!r}; choose from {FORMATS}")
    if not root.is_dir():
        raise DatasetNotFound(f"dataset not found: {root}")
    if format == "edge-list":
        return _load_edge_list(root, directed)
    return _load_citation(root, directed)


def save_edge_list(dataset: Dataset, path):
    """Write a dataset in the edge-list layout (used for synthetic benchmarks)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    g = dataset.graph
    ids = dataset.node_ids or [str(i) for i in range(g.num_nodes)]
    with open(root / "edges.tsv", "w", encoding="utf-8") as fh:
        for h, t, w in zip(g.heads, g.tails, g.weights):
            fh.write(f"{ids[h]}\t{ids[t]}\t{float(w)!r}\n")
    X = dataset.features.toarray() if sp.issparse(dataset.features) else np.asarray(dataset.features)
    with open(root / "features.csv", "w", encoding="utf-8") as fh:
        for i, row in enumerate(X):
            fh.write(",".join([ids[i]] + [repr(float(v)) for v in row]) + "\n")
    with open(root / "labels.csv", "w", encoding="utf-8") as fh:
        for i in range(g.num_nodes):
            if dataset.task == "classification":
                c = int(dataset.classes[i])
                fh.write(f"{ids[i]},{dataset.class_names[c] if dataset.class_names else c}\n")
            else:
                fh.write(",".join([ids[i]] + [repr(float(v)) for v in dataset.labels[i]]) + "\n")
    if len(dataset.train) + len(dataset.val) + len(dataset.test):
        with open(root / "split.tsv", "w", encoding="utf-8") as fh:
            for name, mask in (("train", dataset.train), ("val", dataset.val), ("test", dataset.test)):
                for i in mask.members:
                    fh.write(f"{ids[i]}\t{name}\n")


# -- measures for the ot subcommand ---------------------------------------------

def read_measure(path, index: dict, allow_new=True) -> dict:
    """``node<TAB>mass`` (or whitespace separated) rows into {dense id: mass}."""
    path = Path(path)
    out = {}
    for lineno, row in _rows(_require(path), None):
        if len(row) != 2:
            raise DatasetError(f"{path.name}: expected 'node mass', line {lineno}")
        if row[0] not in index:
            if not allow_new:
                raise DatasetError(f"{path.name}: unknown node id {row[0]!r}, line {lineno}")
            index[row[0]] = len(index)
        out[index[row[0]]] = out.get(index[row[0]], 0.0) + _float(row[1], path, lineno, "mass")
    return out


def read_node_list(path, index: dict) -> list:
    path = Path(path)
    ids = []
    for lineno, row in _rows(_require(path), None):
        for tok in row:
            if tok not in index:
                raise DatasetError(f"{path.name}: unknown node id {tok!r}, line {lineno}")
            ids.append(index[tok])
    return ids


# -- trained models -------------------------------------------------------------

def save_model(trained, path, split=None):
    """One .npz holding parameters, flow, dual, the split masks and a JSON header."""
    arrays = {f"theta_{i}": v for i, v in enumerate(trained.theta)}
    if trained.F is not None:
        arrays["F"] = trained.F
    if trained.Z is not None:
        arrays["Z"] = trained.Z
    for i, v in enumerate(trained.edge_state or []):
        arrays[f"xi_{i}"] = v
    if split is not None:
        for name, mask in zip(("train", "val", "test"), split):
            arrays[f"split_{name}"] = np.asarray(mask.members, dtype=np.int64)
    header = {
        "spec": asdict(trained.spec),
        "config": asdict(trained.config),
        "loss_kind": trained.loss_kind,
        "seed": trained.seed,
        "n_theta": len(trained.theta),
        "n_xi": len(trained.edge_state or []),
    }
    arrays["header"] = np.array(json.dumps(header))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path):
    from .experiment import TrainedModel

    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model not found: {path}")
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        theta = [z[f"theta_{i}"] for i in range(header["n_theta"])]
        F = z["F"] if "F" in z.files else None
        Z = z["Z"] if "Z" in z.files else None
        xi = [z[f"xi_{i}"] for i in range(header["n_xi"])] or None
        split = None
        if "split_train" in z.files:
            split = tuple(z[f"split_{k}"] for k in ("train", "val", "test"))
    return TrainedModel(
        ModelSpec(**header["spec"]), QWConfig(**header["config"]), header["loss_kind"],
        header["seed"], theta, F, Z, xi, record={"split": split},
    )


# -- run records ------------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and not np.isfinite(x):
        # JSON has no NaN/inf; keep them recoverable as strings
        return repr(x)
    return x


def _restore(x):
    if isinstance(x, dict):
        return {k: _restore(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_restore(v) for v in x]
    if x in ("nan", "inf", "-inf"):
        return float(x)
    return x


def append_record(path, record: dict):
    """Append one JSON line; the file is opened in append mode so earlier runs are never touched."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    line = json.dumps(_jsonable(record), sort_keys=True, allow_nan=False)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(line + "\n")


def read_records(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(_restore(json.loads(line)))
    return out
