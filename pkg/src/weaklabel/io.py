"""File formats.  Task and source ids are 1-based in every file.

Task graph JSON::

    {"cardinalities": [2, 2], "edges": [[1, 2]], "na_rules": {"2": [2]},
     "names": [...], "labels": [[...], ...], "feasible": [[1, 1], ...]}

Source graph JSON::

    {"m": 4, "coverage": [[1], [1, 2], ...], "edges": [[1, 2]],
     "abstain": true, "emits": [null, [[1, 0]], ...]}

Label CSV: one column ``source_i_task_s`` per source and task; cells hold
task values, ``0`` for abstain or uncovered, ``-1`` for N/A.

Binary labels: little-endian ``u32`` n, m, t, then ``n*m*t`` ``u8`` cells
(``255`` encodes N/A).
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .errors import InputError, InvalidCell
from .graph import SourceGraph
from .statistics import LabelMatrix
from .tasks import NA, TaskGraph

MODEL_SCHEMA = "weaklabel.model/1"
NA_BYTE = 255


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: malformed JSON ({exc.msg} at line {exc.lineno})") from None
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False)
        fh.write("\n")


# ---------------------------------------------------------------- graphs


def task_graph_from_dict(d: dict) -> TaskGraph:
    try:
        card = d["cardinalities"]
        edges = [(int(p) - 1, int(c) - 1) for p, c in d.get("edges", [])]
        rules = {int(c) - 1: v for c, v in d.get("na_rules", {}).items()}
        explicit = d.get("feasible")
        return TaskGraph(tuple(card), tuple(edges), rules, tuple(d.get("names", ())),
                         tuple(tuple(x) for x in d.get("labels", ())), explicit)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"bad task graph: {exc}") from None


def task_graph_to_dict(g: TaskGraph) -> dict:
    d = {
        "cardinalities": list(g.cardinalities),
        "edges": [[p + 1, c + 1] for p, c in g.edges],
        "na_rules": {str(c + 1): sorted(v) for c, v in g.na_rules.items()},
        "names": list(g.names),
    }
    if g.labels:
        d["labels"] = [list(x) for x in g.labels]
    if g.explicit is not None:
        d["feasible"] = [list(v) for v in g.explicit]
    return d


def source_graph_from_dict(d: dict) -> SourceGraph:
    try:
        m = int(d["m"])
        cov = tuple(tuple(int(s) - 1 for s in c) for c in d.get("coverage", [[1]] * m))
        edges = frozenset((int(i) - 1, int(j) - 1) for i, j in d.get("edges", []))
        ab = d.get("abstain", False)
        ab = tuple(bool(a) for a in ab) if isinstance(ab, list) else bool(ab)
        emits = tuple(d.get("emits", [None] * m))
        return SourceGraph(m, cov, edges, ab, emits)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"bad source graph: {exc}") from None


def source_graph_to_dict(g: SourceGraph) -> dict:
    d = {
        "m": g.m,
        "coverage": [[s + 1 for s in c] for c in g.coverage],
        "edges": sorted([i + 1, j + 1] for i, j in g.edges),
        "abstain": list(g.abstain),
    }
    if any(e is not None for e in g.emits):
        d["emits"] = [None if e is None else [list(v) for v in e] for e in g.emits]
    return d


def read_task_graph(path) -> TaskGraph:
    return task_graph_from_dict(_read_json(path))


def read_source_graph(path) -> SourceGraph:
    return source_graph_from_dict(_read_json(path))


# ---------------------------------------------------------------- labels


def label_columns(m: int, t: int) -> list:
    return [f"source_{i + 1}_task_{s + 1}" for i in range(m) for s in range(t)]


def _vectors_to_matrix(cells: np.ndarray, spaces) -> LabelMatrix:
    # cells: n x m x t integer array
    n, m, _ = cells.shape
    codes = np.empty((n, m), dtype=np.int16)
    for i, sp in enumerate(spaces):
        lookup = {sp.vector(c): c for c in range(sp.arity)}
        col = cells[:, i, :]
        uniq, inv = np.unique(col, axis=0, return_inverse=True)
        mapped = np.empty(len(uniq), dtype=np.int16)
        for u, v in enumerate(uniq):
            key = tuple(int(x) for x in v)
            if key not in lookup:
                raise InvalidCell(f"source {i + 1} cannot emit {list(key)}")
            mapped[u] = lookup[key]
        codes[:, i] = mapped[np.ravel(inv)]
    return LabelMatrix(codes, tuple(spaces))


def read_labels_csv(path, spaces, t: int) -> LabelMatrix:
    m = len(spaces)
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [r for r in reader if r]
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    except StopIteration:
        raise InputError(f"{path}: empty file") from None
    pos = {name.strip(): k for k, name in enumerate(header)}
    cells = np.zeros((len(rows), m, t), dtype=np.int64)
    for i in range(m):
        for s in range(t):
            k = pos.get(f"source_{i + 1}_task_{s + 1}")
            if k is None:
                continue
            try:
                cells[:, i, s] = [int(r[k]) for r in rows]
            except (ValueError, IndexError):
                raise InputError(f"{path}: non-integer cell in column source_{i + 1}_task_{s + 1}") from None
    for i in range(m):
        if not any(f"source_{i + 1}_task_{s + 1}" in pos for s in range(t)):
            raise InputError(f"{path}: no columns for source {i + 1}")
    return _vectors_to_matrix(cells, spaces)


def write_labels_csv(path, lm: LabelMatrix, t: int):
    cells = label_cells(lm, t)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(label_columns(lm.m, t))
        w.writerows(cells.reshape(lm.n, -1).tolist())


def label_cells(lm: LabelMatrix, t: int) -> np.ndarray:
    """``n x m x t`` array of task values."""
    out = np.zeros((lm.n, lm.m, t), dtype=np.int64)
    for i, sp in enumerate(lm.spaces):
        table = np.array([sp.vector(c) for c in range(sp.arity)], dtype=np.int64)
        out[:, i, :] = table[lm.codes[:, i]]
    return out


def read_labels_binary(path, spaces, t: int) -> LabelMatrix:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    if len(raw) < 12:
        raise InputError(f"{path}: truncated header")
    n, m, tt = struct.unpack("<III", raw[:12])
    if m != len(spaces) or tt != t:
        raise InputError(f"{path}: dims m={m}, t={tt} do not match the graphs (m={len(spaces)}, t={t})")
    body = np.frombuffer(raw, dtype=np.uint8, offset=12)
    if body.size != n * m * t:
        raise InputError(f"{path}: expected {n * m * t} cells, found {body.size}")
    cells = body.astype(np.int64).reshape(n, m, t)
    cells[cells == NA_BYTE] = NA
    return _vectors_to_matrix(cells, spaces)


def write_labels_binary(path, lm: LabelMatrix, t: int):
    cells = label_cells(lm, t)
    cells[cells == NA] = NA_BYTE
    with open(path, "wb") as fh:
        fh.write(struct.pack("<III", lm.n, lm.m, t))
        fh.write(cells.astype("<u1").tobytes())


def read_labels(path, spaces, t: int, fmt: str = "csv") -> LabelMatrix:
    if fmt == "binary":
        return read_labels_binary(path, spaces, t)
    return read_labels_csv(path, spaces, t)


def read_gold_csv(path, fs) -> np.ndarray:
    """Class indices from a CSV of task columns ``task_1..task_t``."""
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            rows = list(reader)
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    out = []
    for r in rows:
        try:
            v = tuple(int(r[f"task_{s + 1}"]) for s in range(fs.t))
            out.append(fs.index(v))
        except (KeyError, ValueError):
            raise InputError(f"{path}: row {len(out) + 1} is not a feasible label vector") from None
    return np.array(out, dtype=int)


def write_gold_csv(path, y, fs):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"task_{s + 1}" for s in range(fs.t)])
        w.writerows(list(fs[int(k)]) for k in y)


# ----------------------------------------------------------------- model


def model_to_dict(model, config: dict | None = None) -> dict:
    """JSON-ready description of a fitted :class:`LabelModel`."""
    p = model.params
    subs = []
    for f in model.fits:
        sp = f.subproblem
        subs.append({
            "label": sp.label,
            "block": [y + 1 for y in sp.block],
            "layout": [e.label() for e in sp.layout.entries],
            "z": f.z.values.tolist(),
            "residual": float(f.z.objective_residual),
            "converged": bool(f.z.converged),
            "c": float(f.estimate.c),
            "ridge": float(f.moments.ridge),
        })
    return {
        "schema": MODEL_SCHEMA,
        "task_graph": task_graph_to_dict(model.task_graph),
        "source_graph": source_graph_to_dict(model.graph),
        "feasible_set": [list(v) for v in model.fs],
        "class_balance": model.balance.tolist(),
        "cliques": [[s + 1 for s in c] for c in p.cliques],
        "tables": [p.tables[c].tolist() for c in p.cliques],
        "subproblems": subs,
        "config": config or {},
    }


def model_from_dict(d: dict):
    from .labelmodel import LabelModel, LabelModelParams

    if d.get("schema") != MODEL_SCHEMA:
        raise InputError(f"unsupported model schema {d.get('schema')!r}")
    tg = task_graph_from_dict(d["task_graph"])
    sg = source_graph_from_dict(d["source_graph"])
    model = LabelModel(tg, sg)
    cliques = tuple(tuple(s - 1 for s in c) for c in d["cliques"])
    if set(cliques) != set(model.cliques.maximal):
        raise InputError("model cliques do not match its source graph")
    tables = {c: np.asarray(t, dtype=float) for c, t in zip(cliques, d["tables"])}
    model.params = LabelModelParams(model.fs, model.spaces, model.cliques.maximal, tables)
    model.balance = np.asarray(d["class_balance"], dtype=float)
    return model


def write_model(path, model, config=None):
    _write_json(path, model_to_dict(model, config))


def read_model(path):
    return model_from_dict(_read_json(path))


def write_predictions(path, rows, fs):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row"] + [f"p_{k + 1}" for k in range(fs.r)]
                   + [f"task_{s + 1}" for s in range(fs.t)] + ["tie"])
        for i, row in enumerate(rows):
            w.writerow([i + 1] + [repr(float(x)) for x in row.probs]
                       + list(fs[row.argmax]) + [int(row.tie)])


def moments_to_dict(moments: dict) -> dict:
    return {"subproblems": {k: {"mean": me.mean.tolist(), "sigma_O": me.sigma_O.tolist()}
                            for k, me in moments.items()}}


def moments_from_dict(d: dict, model) -> dict:
    from .statistics import MomentEstimates

    out = {}
    subs = d.get("subproblems", {})
    for sp in model.subproblems:
        if sp.label not in subs:
            raise InputError(f"moments file lacks subproblem {sp.label}")
        e = subs[sp.label]
        mean = np.asarray(e["mean"], dtype=float)
        S = np.asarray(e["sigma_O"], dtype=float)
        if mean.shape != (sp.layout.d,) or S.shape != (sp.layout.d, sp.layout.d):
            raise InputError(f"moments for {sp.label} have the wrong dimension")
        out[sp.label] = MomentEstimates(mean, S, 0.0, float("inf"), sp.layout)
    return out
