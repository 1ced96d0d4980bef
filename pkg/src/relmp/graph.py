"""Multi-relational directed graphs and the mean-normalized aggregation op.

A RelGraph stores, for every relation, a destination-grouped adjacency: for
each node v and relation r, the ascending list of source nodes N_r(v). That
layout fixes the summation order (ascending source index), which makes the
aggregation deterministic bit-for-bit across runs.

Normalization is the in-neighborhood mean. The normalizing weight for a slot
is the exact rational 1/|N_r(v)|; the implementation divides the neighbor sum
by the integer degree rather than multiplying by a rounded float reciprocal,
so `norm_weight(v, r) * degree == 1` holds exactly in rational arithmetic.

The aggregation output packs one slot per (relation, node) pair in node-major
row order: row v*R + r holds the mean over N_r(v). Node-major order makes the
downstream "concatenate a node's relation slots" reshape a zero-copy view.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DataError, GraphError, ShapeError
from .tensor import Tensor, _charge, _result


class RelGraph:
    """Immutable multi-relational directed graph.

    Edges are triples (src, dst, rel); src is an in-neighbor of dst under rel.
    Duplicate triples are rejected. Canonical edge order is (rel, dst, src)
    ascending, which is also the storage order.
    """

    def __init__(self, num_nodes: int, num_relations: int, edges):
        if num_nodes < 0 or num_relations < 0:
            raise GraphError("node and relation counts must be non-negative")
        triples = [(int(s), int(d), int(r)) for (s, d, r) in edges]
        for s, d, r in triples:
            if not (0 <= s < num_nodes and 0 <= d < num_nodes):
                raise GraphError(f"edge ({s},{d},{r}) references a node out of range")
            if not (0 <= r < num_relations):
                raise GraphError(f"edge ({s},{d},{r}) references relation out of range")
        triples.sort(key=lambda e: (e[2], e[1], e[0]))
        for a, b in zip(triples, triples[1:]):
            if a == b:
                raise GraphError(f"duplicate edge {a}")
        self.num_nodes = num_nodes
        self.num_relations = num_relations
        self._src = np.array([t[0] for t in triples], dtype=np.int64)
        self._dst = np.array([t[1] for t in triples], dtype=np.int64)
        self._rel = np.array([t[2] for t in triples], dtype=np.int64)
        # indptr[r*V + v] bounds the sources of slot (r, v) in storage order
        counts = np.zeros(num_relations * num_nodes, dtype=np.int64)
        if triples:
            slot_of_edge = self._rel * num_nodes + self._dst
            np.add.at(counts, slot_of_edge, 1)
        self._indptr = np.zeros(counts.size + 1, dtype=np.int64)
        np.cumsum(counts, out=self._indptr[1:])
        self._degrees = counts.reshape(num_relations, num_nodes)

    @property
    def num_edges(self) -> int:
        return int(self._src.size)

    def edge_list(self):
        """All edges as (src, dst, rel) triples in canonical order."""
        return list(zip(self._src.tolist(), self._dst.tolist(), self._rel.tolist()))

    def in_neighbors(self, v: int, r: int) -> np.ndarray:
        """Ascending source indices of N_r(v)."""
        if not (0 <= v < self.num_nodes):
            raise IndexError(f"node {v} out of range")
        if not (0 <= r < self.num_relations):
            raise IndexError(f"relation {r} out of range")
        slot = r * self.num_nodes + v
        return self._src[self._indptr[slot]:self._indptr[slot + 1]].copy()

    def in_degree(self, v: int, r: int) -> int:
        if not (0 <= v < self.num_nodes):
            raise IndexError(f"node {v} out of range")
        if not (0 <= r < self.num_relations):
            raise IndexError(f"relation {r} out of range")
        return int(self._degrees[r, v])

    def norm_weight(self, v: int, r: int) -> Fraction:
        """Exact mean-normalization weight 1/|N_r(v)| (0 for empty slots)."""
        deg = self.in_degree(v, r)
        return Fraction(0) if deg == 0 else Fraction(1, deg)

    def __repr__(self):
        return (f"RelGraph(nodes={self.num_nodes}, relations={self.num_relations}, "
                f"edges={self.num_edges})")


@dataclass
class DegreeProfile:
    """Mean in-degree per relation and the overall average degree."""
    per_relation: list[float]
    overall: float


def degree_profile(graph: RelGraph) -> DegreeProfile:
    if graph.num_nodes == 0 or graph.num_relations == 0:
        return DegreeProfile(per_relation=[0.0] * graph.num_relations, overall=0.0)
    per_rel = graph._degrees.mean(axis=1)
    overall = graph.num_edges / (graph.num_relations * graph.num_nodes)
    return DegreeProfile(per_relation=[float(x) for x in per_rel], overall=float(overall))


def rel_aggregate(graph: RelGraph, z: Tensor) -> Tensor:
    """Mean-pooled neighbor features for every (relation, node) slot.

    Input z is [num_nodes, C]; output is [num_relations * num_nodes, C] with
    slot (r, v) stored at row v*R + r. Empty neighborhoods yield zero rows.
    Sources are summed in ascending index order and the sum is divided by the
    integer degree. Charged 2*|E|*C FLOPs (one multiply-add per edge element).
    """
    if z.data.ndim != 2:
        raise ShapeError("rel_aggregate expects [num_nodes, C] features")
    if z.shape[0] != graph.num_nodes:
        raise ShapeError(f"feature rows {z.shape[0]} != num_nodes {graph.num_nodes}")
    v_count, r_count, c = graph.num_nodes, graph.num_relations, z.shape[1]
    sums = np.zeros((r_count * v_count, c), dtype=z.data.dtype)
    if graph.num_edges:
        slot_of_edge = graph._rel * v_count + graph._dst
        np.add.at(sums, slot_of_edge, z.data[graph._src])
    deg = graph._degrees.reshape(-1, 1).astype(z.data.dtype)
    nonzero = graph._degrees.reshape(-1) > 0
    out = np.zeros_like(sums)
    if nonzero.any():
        out[nonzero] = sums[nonzero] / deg[nonzero]
    # rows are stored (r, v)-major in `out`; emit node-major order v*R + r
    out_nodemajor = out.reshape(r_count, v_count, c).transpose(1, 0, 2).reshape(-1, c)
    out_nodemajor = np.ascontiguousarray(out_nodemajor)
    _charge("rel_aggregate", 2 * graph.num_edges * c)

    def backward(g):
        g_rv = g.reshape(v_count, r_count, c).transpose(1, 0, 2).reshape(-1, c)
        scaled = np.zeros_like(g_rv)
        if nonzero.any():
            scaled[nonzero] = g_rv[nonzero] / deg[nonzero]
        gz = np.zeros_like(z.data)
        if graph.num_edges:
            np.add.at(gz, graph._src, scaled[graph._rel * v_count + graph._dst])
        z._accumulate(gz)

    return _result(out_nodemajor, "rel_aggregate", (z,), backward)


# -- line graphs --------------------------------------------------------------------


def angle_bin(u: np.ndarray, v: np.ndarray, num_bins: int) -> int:
    """Bin the angle between two displacement vectors into equal slices of
    [0, pi]. A zero-length displacement gets bin 0 by convention."""
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0
    cosang = float(np.dot(u, v)) / (nu * nv)
    theta = float(np.arccos(np.clip(cosang, -1.0, 1.0)))
    return min(int(theta / (np.pi / num_bins)), num_bins - 1)


def build_line_graph(graph: RelGraph, coords: np.ndarray, num_bins: int = 8,
                     include_reverse: bool = True) -> RelGraph:
    """Directed line graph with angle-bin relations.

    Nodes are the edges of `graph` in canonical order. For every chained pair
    e1 = (a, b), e2 = (b, c) a line edge e1 -> e2 is added; its relation is the
    bin of the angle between displacements (b - a) and (c - b). The degenerate
    pair of an edge with itself is skipped. Reverse pairs (a -> b followed by
    b -> a), whose angle is pi, are included when `include_reverse` is set and
    skipped otherwise.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[0] != graph.num_nodes:
        raise ShapeError("coords must be [num_nodes, dim]")
    if num_bins < 1:
        raise GraphError("num_bins must be positive")
    edges = graph.edge_list()
    by_tail: dict[int, list[int]] = {}
    for j, (s, _, _) in enumerate(edges):
        by_tail.setdefault(s, []).append(j)
    line_edges = []
    for i, (a, b, _) in enumerate(edges):
        u = coords[b] - coords[a]
        for j in by_tail.get(b, ()):
            if j == i:
                continue
            s2, d2, _ = edges[j]
            if not include_reverse and (s2, d2) == (b, a):
                continue
            v = coords[d2] - coords[s2]
            line_edges.append((i, j, angle_bin(u, v, num_bins)))
    return RelGraph(len(edges), num_bins, line_edges)


# -- edge-list files -----------------------------------------------------------------


def save_edge_list(path, graph: RelGraph, comments=()) -> None:
    """Write src<TAB>dst<TAB>rel rows; node/relation counts go in # comments."""
    with open(path, "w", encoding="utf-8") as f:
        for line in comments:
            f.write(f"# {line}\n")
        f.write(f"# nodes={graph.num_nodes} relations={graph.num_relations}\n")
        for s, d, r in graph.edge_list():
            f.write(f"{s}\t{d}\t{r}\n")


def load_edge_list(path) -> RelGraph:
    """Read an edge-list file written by save_edge_list.

    Counts are taken from the `# nodes=... relations=...` comment when present
    and inferred from the data otherwise.
    """
    num_nodes = num_relations = None
    triples = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("nodes="):
                    try:
                        parts = dict(p.split("=") for p in body.split())
                        num_nodes = int(parts["nodes"])
                        num_relations = int(parts["relations"])
                    except (ValueError, KeyError) as e:
                        raise DataError(f"{path}:{lineno}: bad count comment") from e
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields")
            try:
                triples.append((int(fields[0]), int(fields[1]), int(fields[2])))
            except ValueError as e:
                raise DataError(f"{path}:{lineno}: non-integer field") from e
    if num_nodes is None:
        num_nodes = 1 + max((max(s, d) for s, d, _ in triples), default=-1)
        num_relations = 1 + max((r for _, _, r in triples), default=-1)
    try:
        return RelGraph(num_nodes, num_relations, triples)
    except GraphError as e:
        raise DataError(f"{path}: {e}") from e
