"""Fixed-topology triangle meshes and padded neighbor tables.

A mesh is a template: every sample in a dataset shares its vertex count and
face connectivity. Convolutions see the mesh only through a
:class:`NeighborTable`, an (N, K) array of vertex indices whose row ``i``
holds vertex ``i`` itself in slot 0 followed by its one-ring neighbors;
rows shorter than K are padded and padded slots contribute zero features.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from . import backend

logger = logging.getLogger(__name__)

PAD = -1
PAD_EXPORT = 0xFFFFFFFF  # sentinel in the binary table export
TABLE_MAGIC = b"PCNT1\n"


class MeshError(ValueError):
    """Raised for unparseable or structurally invalid mesh data."""


class MeshTopology:
    """Vertices, triangle faces, and connectivity derived from them.

    Parameters
    ----------
    num_vertices : int
        Vertex count N; faces index into ``range(N)``.
    faces : array_like, shape (F, 3)
        Triangle corner indices. Each face must have three distinct,
        in-range corners.
    vertex_positions : array_like, shape (N, 3), optional
        Coordinates in mm. Present for template meshes, absent for
        connectivity-only use.
    """

    def __init__(self, num_vertices, faces, vertex_positions=None):
        self.num_vertices = int(num_vertices)
        self.faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= self.num_vertices):
            raise MeshError("face index out of range")
        degenerate = (
            (self.faces[:, 0] == self.faces[:, 1])
            | (self.faces[:, 1] == self.faces[:, 2])
            | (self.faces[:, 0] == self.faces[:, 2])
        )
        if degenerate.any():
            raise MeshError(f"{int(degenerate.sum())} degenerate face(s)")
        if vertex_positions is not None:
            vertex_positions = np.asarray(vertex_positions, dtype=np.float64)
            if vertex_positions.shape != (self.num_vertices, 3):
                raise MeshError(
                    f"positions shape {vertex_positions.shape} != ({self.num_vertices}, 3)"
                )
        self.vertex_positions = vertex_positions
        self.edges, self._edge_face_count = _edges_from_faces(self.num_vertices, self.faces)
        if self._edge_face_count.size and self._edge_face_count.max() > 2:
            logger.warning(
                "mesh is non-manifold: %d edge(s) shared by more than two faces",
                int((self._edge_face_count > 2).sum()),
            )
        self._adjacency = _adjacency_lists(self.num_vertices, self.edges)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    def neighbors(self, i: int) -> np.ndarray:
        """One-ring neighbor indices of vertex ``i``, ascending, center excluded."""
        return self._adjacency[i]

    def boundary_edges(self) -> np.ndarray:
        """Edges incident to exactly one face, as (E_b, 2) sorted pairs."""
        return self.edges[self._edge_face_count == 1]

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(u), int(v)) for u, v in self.edges}

    def euler_characteristic(self) -> int:
        return self.num_vertices - len(self.edges) + len(self.faces)

    def is_watertight(self) -> bool:
        return bool(len(self.edges)) and bool((self._edge_face_count == 2).all())


def _edges_from_faces(n, faces):
    if not len(faces):
        return np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=np.int64)
    pairs = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [0, 2]]])
    pairs = np.sort(pairs, axis=1)
    edges, counts = np.unique(pairs, axis=0, return_counts=True)
    return edges, counts


def _adjacency_lists(n, edges):
    adj = [[] for _ in range(n)]
    for u, v in edges:
        adj[u].append(v)
        adj[v].append(u)
    return [np.array(sorted(a), dtype=np.int64) for a in adj]


@dataclass
class NeighborTable:
    """Padded per-vertex neighbor rows of fixed width K.

    ``indices[i, 0] == i`` always; slots ``1..`` hold distinct one-ring
    neighbors and unused slots carry :data:`PAD` with ``mask == 0``.
    """

    indices: np.ndarray  # (N, K) int32, PAD for unused slots
    mask: np.ndarray     # (N, K) uint8
    k: int
    order: str = "by-index"
    seed: int | None = None

    @property
    def num_vertices(self) -> int:
        return self.indices.shape[0]

    def valid_counts(self) -> np.ndarray:
        return self.mask.sum(axis=1)


def build_neighbor_table(topology: MeshTopology, k: int,
                         order: str = "by-index", seed: int | None = None) -> NeighborTable:
    """Build the (N, K) neighbor table defining a convolution's receptive fields.

    Slot 0 is the center vertex. The remaining slots take the one-ring
    neighbors in ascending index order (``order="by-index"``) or in a
    per-vertex seeded random order (``order="seeded-shuffle"``), truncated
    to K-1 entries or padded. A vertex of degree >= K keeps whichever
    neighbors come first in the chosen order.
    """
    if k < 1:
        raise ValueError("neighbor size must be >= 1")
    if order not in ("by-index", "seeded-shuffle"):
        raise ValueError(f"unknown neighbor order {order!r}")
    if order == "seeded-shuffle" and seed is None:
        raise ValueError("seeded-shuffle order requires a seed")

    n = topology.num_vertices
    indices = np.full((n, k), PAD, dtype=np.int32)
    mask = np.zeros((n, k), dtype=np.uint8)
    rng = np.random.Generator(np.random.PCG64(seed)) if order == "seeded-shuffle" else None
    for i in range(n):
        ring = topology.neighbors(i)
        if rng is not None and len(ring) > 1:
            ring = ring[rng.permutation(len(ring))]
        row = ring[: k - 1]
        indices[i, 0] = i
        indices[i, 1 : 1 + len(row)] = row
        mask[i, : 1 + len(row)] = 1
    return NeighborTable(indices=indices, mask=mask, k=k, order=order, seed=seed)


def gather_neighbors(x: np.ndarray, table: NeighborTable) -> np.ndarray:
    """Expand (B, N, D) features into (B, N, D, K) padded neighbor blocks."""
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[1] != table.num_vertices:
        raise ValueError(f"features shaped {x.shape} do not match table with "
                         f"N={table.num_vertices}")
    return backend.gather_fw(x, table.indices)


def permute_table_slots(table: NeighborTable, slot_perm: np.ndarray) -> NeighborTable:
    """Reorder slots 1..K-1 of every row by ``slot_perm`` (length K-1).

    Slot 0 stays the center vertex. Used by the reshuffle-equivariance
    checks; retraining ablations rebuild the table with seeded-shuffle
    instead.
    """
    slot_perm = np.asarray(slot_perm, dtype=np.int64)
    if sorted(slot_perm.tolist()) != list(range(table.k - 1)):
        raise ValueError("slot_perm must permute 0..K-2")
    cols = np.concatenate([[0], slot_perm + 1])
    return NeighborTable(
        indices=table.indices[:, cols].copy(),
        mask=table.mask[:, cols].copy(),
        k=table.k,
        order=table.order,
        seed=table.seed,
    )


def save_neighbor_table(table: NeighborTable, path) -> None:
    """Write the binary table blob plus its JSON sidecar.

    Layout: magic, little-endian uint32 N and K, then N*K little-endian
    uint32 indices with 0xFFFFFFFF marking padded slots.
    """
    path = str(path)
    idx = table.indices.astype(np.int64).copy()
    idx[table.mask == 0] = PAD_EXPORT
    with open(path, "wb") as fh:
        fh.write(TABLE_MAGIC)
        np.array([table.num_vertices, table.k], dtype="<u4").tofile(fh)
        idx.astype("<u4").tofile(fh)
    sidecar = {"order": table.order, "seed": table.seed,
               "num_vertices": table.num_vertices, "k": table.k}
    with open(path + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")


def load_neighbor_table(path) -> NeighborTable:
    path = str(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(TABLE_MAGIC))
        if magic != TABLE_MAGIC:
            raise MeshError(f"{path}: not a neighbor table blob")
        n, k = (int(v) for v in np.fromfile(fh, dtype="<u4", count=2))
        raw = np.fromfile(fh, dtype="<u4", count=n * k)
    if raw.size != n * k:
        raise MeshError(f"{path}: truncated table blob")
    raw = raw.reshape(n, k)
    mask = (raw != PAD_EXPORT).astype(np.uint8)
    indices = np.where(mask, raw, 0).astype(np.int32)
    indices[mask == 0] = PAD
    try:
        with open(path + ".json") as fh:
            sidecar = json.load(fh)
    except FileNotFoundError:
        sidecar = {}
    return NeighborTable(indices=indices, mask=mask, k=k,
                         order=sidecar.get("order", "by-index"),
                         seed=sidecar.get("seed"))
