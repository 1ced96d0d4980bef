"""Domain graph constructors: image patch grids, protein chains, triplet stores.

Three edge families, one registry convention. Every builder returns plain edge
triples or a RelGraph together with the ordered relation names, so callers can
persist a stable name -> id registry. Construction is pure numpy on raw
arrays: graph topology is not differentiable and is never FLOP-counted.

Feature-space nearest-neighbor edges use unnormalized Euclidean distance on
the raw features (whether to normalize first is left open by the reference
description; this build does not, and the flag below records the choice).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .graph import RelGraph

# Medium-range similarity is plain Euclidean distance on raw features.
# Exposed as a module-level default so the choice is visible and overridable.
NORMALIZE_MEDIUM_FEATURES = False

SHORT_RELATIONS = ("up", "down", "left", "right")
LONG_RELATIONS = ("long_global", "long_context")
MEDIUM_RELATION = "medium"

# 20 standard amino acids plus selenocysteine (U) and pyrrolysine (O)
AMINO_ACIDS = "ACDEFGHIKLMNPQRSTVWYUO"
PROTEIN_RELATIONS = ("seq-2", "seq-1", "seq+0", "seq+1", "seq+2",
                     "radius", "medium_near", "medium_far", "virtual")


# -- image patch grids ---------------------------------------------------------------


@dataclass
class PatchGrid:
    """Row-major grid of patch feature vectors; features has H*W rows."""
    height: int
    width: int
    features: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features)
        if self.features.ndim != 2 or self.features.shape[0] != self.height * self.width:
            raise DataError("patch grid features must be [H*W, C]")
        if not np.all(np.isfinite(self.features)):
            raise DataError("patch grid features must be finite")

    @property
    def channels(self) -> int:
        return int(self.features.shape[1])


_GRID_MAGIC = 0x44524750  # b"PGRD" little-endian


def save_patch_grid(path, grid: PatchGrid) -> None:
    """Binary layout: magic, H, W, C as LE uint32, then H*W*C LE float32."""
    with open(path, "wb") as f:
        f.write(struct.pack("<IIII", _GRID_MAGIC, grid.height, grid.width,
                            grid.channels))
        f.write(grid.features.astype("<f4").tobytes())


def load_patch_grid(path) -> PatchGrid:
    with open(path, "rb") as f:
        head = f.read(16)
        if len(head) != 16:
            raise DataError(f"{path}: truncated patch-grid header")
        magic, h, w, c = struct.unpack("<IIII", head)
        if magic != _GRID_MAGIC:
            raise DataError(f"{path}: not a patch-grid file")
        body = f.read()
    want = h * w * c * 4
    if len(body) != want:
        raise DataError(f"{path}: expected {want} payload bytes, found {len(body)}")
    feats = np.frombuffer(body, dtype="<f4").reshape(h * w, c).astype(np.float32)
    return PatchGrid(h, w, feats)


def image_short_edges(height: int, width: int) -> list[tuple[int, int, int]]:
    """One incoming edge per existing 4-neighbor; relation picks the direction.

    Relation ids follow SHORT_RELATIONS: the "up" relation carries the message
    from the patch above. Totals 2H(W-1) + 2W(H-1) directed edges.
    """
    if height < 1 or width < 1:
        raise ConfigError("grid sides must be positive")
    edges = []
    for i in range(height):
        for j in range(width):
            dst = i * width + j
            if i > 0:
                edges.append(((i - 1) * width + j, dst, 0))   # up
            if i < height - 1:
                edges.append(((i + 1) * width + j, dst, 1))   # down
            if j > 0:
                edges.append((i * width + j - 1, dst, 2))     # left
            if j < width - 1:
                edges.append((i * width + j + 1, dst, 3))     # right
    return edges


def image_medium_edges(grid: PatchGrid, k: int,
                       relation: int = 0) -> list[tuple[int, int, int]]:
    """K nearest patches by feature distance, excluding the 2x2 home window.

    Windows partition the grid into non-overlapping 2x2 blocks (smaller at odd
    boundaries). Candidates are ranked nearest first with ascending-index tie
    breaks; the top min(K, available) become incoming edges on one relation.
    """
    if k < 0:
        raise ConfigError("K must be non-negative")
    p = grid.height * grid.width
    if k == 0 or p == 1:
        return []
    feats = grid.features.astype(np.float64)
    if NORMALIZE_MEDIUM_FEATURES:
        norms = np.linalg.norm(feats, axis=1, keepdims=True)
        feats = feats / np.maximum(norms, 1e-12)
    sq = (feats * feats).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (feats @ feats.T)
    np.maximum(d2, 0.0, out=d2)
    rows = np.arange(p) // grid.width
    cols = np.arange(p) % grid.width
    window = (rows // 2) * ((grid.width + 1) // 2) + cols // 2
    edges = []
    order_base = np.arange(p)
    for v in range(p):
        allowed = window != window[v]
        cand = order_base[allowed]
        if cand.size == 0:
            continue
        # stable sort on distance keeps ascending-index ties
        ranked = cand[np.argsort(d2[cand, v], kind="stable")]
        for u in ranked[:k]:
            edges.append((int(u), v, relation))
    return edges


@dataclass
class LongRangeSpec:
    """Virtual-edge plan for a patch grid: not materialized rows.

    One global node fans out to every patch on the first long relation; one
    context node per patch feeds that patch on the second. Features of both
    kinds are recomputed at every layer call, so only the topology is fixed.
    """
    height: int
    width: int
    relations: tuple[str, str] = LONG_RELATIONS

    @property
    def num_patches(self) -> int:
        return self.height * self.width

    @property
    def num_virtual_nodes(self) -> int:
        return 1 + self.num_patches

    def global_edges(self, global_node: int, relation: int):
        return [(global_node, v, relation) for v in range(self.num_patches)]

    def context_edges(self, first_context_node: int, relation: int):
        return [(first_context_node + v, v, relation) for v in range(self.num_patches)]


def image_long_edge_spec(height: int, width: int) -> LongRangeSpec:
    if height < 1 or width < 1:
        raise ConfigError("grid sides must be positive")
    return LongRangeSpec(height, width)


def build_image_graph(grid: PatchGrid, k_medium: int,
                      include_medium: bool) -> tuple[RelGraph, list[str]]:
    """Full per-stage graph: patches plus the long-range virtual nodes.

    Node layout: patches 0..P-1, the global node at P, context node for patch
    v at P+1+v. Relation order: the four short directions, the medium relation
    when enabled, then the two long relations.
    """
    p = grid.height * grid.width
    names = list(SHORT_RELATIONS)
    edges = image_short_edges(grid.height, grid.width)
    if include_medium:
        rel_medium = len(names)
        names.append(MEDIUM_RELATION)
        edges += image_medium_edges(grid, k_medium, relation=rel_medium)
    spec = image_long_edge_spec(grid.height, grid.width)
    rel_global = len(names)
    rel_context = len(names) + 1
    names += list(spec.relations)
    edges += spec.global_edges(p, rel_global)
    edges += spec.context_edges(p + 1, rel_context)
    graph = RelGraph(p + spec.num_virtual_nodes, len(names), edges)
    return graph, names


# -- protein chains ------------------------------------------------------------------


@dataclass
class ProteinChain:
    """Single chain: one-letter residue codes and Calpha coordinates (angstrom)."""
    sequence: str
    coords: np.ndarray

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 2 or self.coords.shape[1] != 3:
            raise DataError("coords must be [L, 3]")
        if len(self.sequence) != self.coords.shape[0]:
            raise DataError("sequence length and coordinate rows differ")
        if not np.all(np.isfinite(self.coords)):
            raise DataError("coordinates must be finite")
        for ch in self.sequence:
            if ch not in AMINO_ACIDS:
                raise DataError(f"unknown amino-acid code {ch!r}")

    @property
    def length(self) -> int:
        return len(self.sequence)

    def one_hot(self) -> np.ndarray:
        out = np.zeros((self.length, len(AMINO_ACIDS)), dtype=np.float64)
        for i, ch in enumerate(self.sequence):
            out[i, AMINO_ACIDS.index(ch)] = 1.0
        return out


def save_protein_chain(path, chain: ProteinChain) -> None:
    """One residue per line: index, one-letter code, x, y, z."""
    with open(path, "w", encoding="utf-8") as f:
        for i, ch in enumerate(chain.sequence):
            x, y, z = chain.coords[i]
            f.write(f"{i} {ch} {x:.6f} {y:.6f} {z:.6f}\n")


def load_protein_chain(path) -> ProteinChain:
    codes = []
    coords = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) != 5:
                raise DataError(f"{path}:{lineno}: expected 5 fields")
            try:
                idx = int(fields[0])
                xyz = [float(v) for v in fields[2:5]]
            except ValueError as e:
                raise DataError(f"{path}:{lineno}: bad numeric field") from e
            if idx != len(codes):
                raise DataError(f"{path}:{lineno}: residue index {idx} out of order")
            codes.append(fields[1])
            coords.append(xyz)
    if not codes:
        raise DataError(f"{path}: empty chain")
    try:
        return ProteinChain("".join(codes), np.array(coords))
    except DataError as e:
        raise DataError(f"{path}: {e}") from e


def protein_edges(chain: ProteinChain, radius: float = 10.0, seq_window: int = 2,
                  medium_seq_cutoff: int = 5,
                  medium_rank_bounds: tuple[int, int] = (5, 10)
                  ) -> tuple[RelGraph, list[str]]:
    """Nine-relation residue graph plus one virtual node at index L.

    Relations, in registry order: sequence offsets -2..+2 (offset 0 is the
    self-loop), radius contacts within `radius` angstrom (self excluded), two
    medium bands over candidates that survive the sequence/radius filter
    (ranks 1..5 and 6..10 by ascending distance, index tie-break), and the
    virtual relation from the summary node to every residue. All rules depend
    on distances and indices only, so any rigid motion or reflection of the
    coordinates that stays clear of threshold ties leaves the graph unchanged.
    """
    length = chain.length
    coords = chain.coords
    edges = []
    offsets = list(range(-seq_window, seq_window + 1))
    for v in range(length):
        for rel, off in enumerate(offsets):
            u = v + off
            if 0 <= u < length:
                edges.append((u, v, rel))
    rel_radius = len(offsets)
    rel_med_near = rel_radius + 1
    rel_med_far = rel_radius + 2
    rel_virtual = rel_radius + 3
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    for v in range(length):
        ranked = []
        for u in range(length):
            if u == v:
                continue
            if dist[u, v] <= radius:
                edges.append((u, v, rel_radius))
            if abs(u - v) > medium_seq_cutoff and dist[u, v] > radius:
                ranked.append((dist[u, v], u))
        ranked.sort()
        near, far = medium_rank_bounds
        for rank, (_, u) in enumerate(ranked[:far], start=1):
            edges.append((u, v, rel_med_near if rank <= near else rel_med_far))
    virtual = length
    for v in range(length):
        edges.append((virtual, v, rel_virtual))
    graph = RelGraph(length + 1, len(PROTEIN_RELATIONS), edges)
    return graph, list(PROTEIN_RELATIONS)


# -- knowledge-graph triplets ----------------------------------------------------------


@dataclass
class TripletStore:
    """Indexed triples for one split; relation count includes inverses."""
    num_entities: int
    num_relations: int          # after doubling
    triplets: list[tuple[int, int, int]]
    split: str = "train"

    def __post_init__(self):
        half = self.num_relations // 2
        for h, r, t in self.triplets:
            if not (0 <= h < self.num_entities and 0 <= t < self.num_entities):
                raise DataError(f"entity index out of range in ({h},{r},{t})")
            if not (0 <= r < half):
                raise DataError(f"relation index out of range in ({h},{r},{t})")

    def inverse_relation(self, r: int) -> int:
        return r + self.num_relations // 2


@dataclass
class KGDataset:
    entities: list[str]
    relations: list[str]        # original names; inverses are implied
    train: TripletStore
    valid: TripletStore
    test: TripletStore
    entity_index: dict = field(repr=False, default_factory=dict)
    relation_index: dict = field(repr=False, default_factory=dict)

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return 2 * len(self.relations)


def _read_triplet_file(path):
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise DataError(f"{path}:{lineno}: expected head<TAB>relation<TAB>tail")
            rows.append(tuple(fields))
    return rows


def load_triplets(train_path, valid_path=None, test_path=None) -> KGDataset:
    """Read the split files and index a shared vocabulary.

    Entity and relation vocabularies cover the union of all splits (unknown
    test entities are legal); relation ids double to make room for inverses.
    A missing valid/test path yields an empty split.
    """
    raw = {"train": _read_triplet_file(train_path),
           "valid": [] if valid_path is None else _read_triplet_file(valid_path),
           "test": [] if test_path is None else _read_triplet_file(test_path)}
    entities: dict[str, int] = {}
    relations: dict[str, int] = {}
    for split_rows in raw.values():
        for h, r, t in split_rows:
            for e in (h, t):
                if e not in entities:
                    entities[e] = len(entities)
            if r not in relations:
                relations[r] = len(relations)
    stores = {}
    for split, rows in raw.items():
        trips = [(entities[h], relations[r], entities[t]) for h, r, t in rows]
        stores[split] = TripletStore(len(entities), 2 * len(relations), trips, split)
    return KGDataset(entities=list(entities), relations=list(relations),
                     train=stores["train"], valid=stores["valid"],
                     test=stores["test"], entity_index=entities,
                     relation_index=relations)


def fact_graph(train: TripletStore) -> RelGraph:
    """Message-passing graph from training triples plus their inverses.

    Each triple (h, r, t) contributes the edge h -> t under r and t -> h under
    the inverse relation. Duplicates collapse, so re-adding an inverse that is
    already present leaves the graph unchanged.
    """
    half = train.num_relations // 2
    edge_set = set()
    for h, r, t in train.triplets:
        edge_set.add((h, t, r))
        edge_set.add((t, h, r + half))
    return RelGraph(train.num_entities, train.num_relations, sorted(edge_set))


def save_triplets(path, store: TripletStore, entities, relations) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for h, r, t in store.triplets:
            f.write(f"{entities[h]}\t{relations[r]}\t{entities[t]}\n")
