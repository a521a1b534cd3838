"""Hierarchical mesh down/up-sampling operators.

Down-sampling greedily collapses edges to an endpoint in order of quadric
error until ceil(N/factor) vertices remain, so the operator is a sparse
selection matrix. Up-sampling maps every kept vertex back one-hot and
projects each discarded vertex barycentrically onto its nearest coarse
face. Operators are deterministic for a given mesh, precomputed once per
template, and never trained.
"""
from __future__ import annotations

import heapq
import json
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .mesh import MeshTopology

logger = logging.getLogger(__name__)

CACHE_MAGIC = b"PCSMP1\n"
_TRIPLET = np.dtype([("row", "<i4"), ("col", "<i4"), ("val", "<f8")])

# weight for the perpendicular planes pinning open boundaries, times bbox diag^2
BOUNDARY_PENALTY = 1e3


@dataclass
class SamplingOperator:
    """One level of the sampling hierarchy: fine N -> coarse M and back."""

    down: sp.csr_matrix   # (M, N) one-hot selection rows
    up: sp.csr_matrix     # (N, M) barycentric rows summing to 1
    coarse: MeshTopology
    factor: float

    @property
    def fine_vertices(self) -> int:
        return self.down.shape[1]

    @property
    def coarse_vertices(self) -> int:
        return self.down.shape[0]


def _plane_quadric(normal, point, weight=1.0):
    d = -float(normal @ point)
    h = np.array([normal[0], normal[1], normal[2], d])
    return weight * np.outer(h, h)


def _face_normal(p0, p1, p2):
    n = np.cross(p1 - p0, p2 - p0)
    norm = np.linalg.norm(n)
    if norm < 1e-30:
        return None
    return n / norm


def _vertex_quadrics(mesh: MeshTopology) -> np.ndarray:
    pos = mesh.vertex_positions
    quadrics = np.zeros((mesh.num_vertices, 4, 4))
    edge_faces: dict[tuple[int, int], list[int]] = {}
    for fi, (a, b, c) in enumerate(mesh.faces):
        n = _face_normal(pos[a], pos[b], pos[c])
        if n is None:
            continue
        q = _plane_quadric(n, pos[a])
        quadrics[a] += q
        quadrics[b] += q
        quadrics[c] += q
        for u, v in ((a, b), (b, c), (a, c)):
            edge_faces.setdefault((min(u, v), max(u, v)), []).append(fi)

    if mesh.num_vertices:
        span = pos.max(axis=0) - pos.min(axis=0)
        penalty = BOUNDARY_PENALTY * float(span @ span)
        for (u, v), incident in edge_faces.items():
            if len(incident) != 1:
                continue
            a, b, c = mesh.faces[incident[0]]
            fn = _face_normal(pos[a], pos[b], pos[c])
            edge_dir = pos[v] - pos[u]
            if fn is None or np.linalg.norm(edge_dir) < 1e-30:
                continue
            perp = np.cross(fn, edge_dir / np.linalg.norm(edge_dir))
            q = _plane_quadric(perp, pos[u], weight=penalty)
            quadrics[u] += q
            quadrics[v] += q
    return quadrics


def _qform(quadric, point) -> float:
    h = np.array([point[0], point[1], point[2], 1.0])
    return float(h @ quadric @ h)


class _CollapseState:
    """Mutable connectivity while decimating; all updates keep determinism."""

    def __init__(self, mesh: MeshTopology):
        self.pos = mesh.vertex_positions
        self.nbr = [set(mesh.neighbors(i).tolist()) for i in range(mesh.num_vertices)]
        self.faces: dict[int, tuple[int, int, int]] = {
            i: tuple(int(v) for v in f) for i, f in enumerate(mesh.faces)
        }
        self.vertex_faces: list[set[int]] = [set() for _ in range(mesh.num_vertices)]
        for fi, f in self.faces.items():
            for v in f:
                self.vertex_faces[v].add(fi)
        self.alive = np.ones(mesh.num_vertices, dtype=bool)
        self.version = np.zeros(mesh.num_vertices, dtype=np.int64)
        self.quadrics = _vertex_quadrics(mesh)
        self.edge_ids: dict[tuple[int, int], int] = {}
        for u, v in mesh.edges:
            self.edge_ids[(int(u), int(v))] = len(self.edge_ids)

    def edge_id(self, u, v):
        key = (min(u, v), max(u, v))
        if key not in self.edge_ids:
            self.edge_ids[key] = len(self.edge_ids)
        return self.edge_ids[key]

    def cost(self, u, v):
        q = self.quadrics[u] + self.quadrics[v]
        cu, cv = _qform(q, self.pos[u]), _qform(q, self.pos[v])
        if cu < cv:
            return cu, u, v
        if cv < cu:
            return cv, v, u
        return cu, min(u, v), max(u, v)

    def link_ok(self, u, v) -> bool:
        apexes = set()
        for fi in self.vertex_faces[u] & self.vertex_faces[v]:
            apexes.update(self.faces[fi])
        apexes -= {u, v}
        return (self.nbr[u] & self.nbr[v]) == apexes

    def collapse(self, survivor, dying):
        self.quadrics[survivor] += self.quadrics[dying]
        self.alive[dying] = False
        self.version[survivor] += 1
        self.version[dying] += 1
        for fi in sorted(self.vertex_faces[dying]):
            face = self.faces.pop(fi)
            for v in face:
                self.vertex_faces[v].discard(fi)
            if survivor in face:
                continue
            remapped = tuple(survivor if v == dying else v for v in face)
            if any(self._same_face(remapped, self.faces[fj])
                   for v in remapped for fj in self.vertex_faces[v]):
                continue
            self.faces[fi] = remapped
            for v in remapped:
                self.vertex_faces[v].add(fi)
        self.nbr[survivor] |= self.nbr[dying]
        self.nbr[survivor] -= {survivor, dying}
        for x in self.nbr[dying]:
            if x == survivor:
                continue
            self.nbr[x].discard(dying)
            self.nbr[x].add(survivor)
        self.nbr[dying].clear()

    @staticmethod
    def _same_face(f1, f2) -> bool:
        return sorted(f1) == sorted(f2)

    def push_edges_of(self, heap, vertex):
        for x in sorted(self.nbr[vertex]):
            cost, s, d = self.cost(vertex, x)
            heapq.heappush(heap, (cost, self.edge_id(vertex, x), vertex, x,
                                  self.version[vertex], self.version[x], s, d))


def quadric_decimate(mesh: MeshTopology, factor: float,
                     collapse_costs: list | None = None) -> tuple[MeshTopology, sp.csr_matrix]:
    """Collapse edges by least quadric error down to ceil(N/factor) vertices.

    Collapses go to an existing endpoint, so the returned down operator is
    an (M, N) one-hot selection matrix. Ties are broken by edge index,
    then by smaller vertex index, which makes the result a pure function
    of the mesh. If no legal collapse remains before the target is
    reached, the best effort so far is returned with a warning.

    ``collapse_costs``, when given a list, receives the quadric error of
    every performed collapse in order, for greedy-step audits.
    """
    if mesh.vertex_positions is None:
        raise ValueError("decimation needs vertex positions")
    if factor < 1:
        raise ValueError("factor must be >= 1")
    n = mesh.num_vertices
    target = math.ceil(n / factor)
    if factor == 1 or target >= n:
        return mesh, sp.identity(n, format="csr")

    state = _CollapseState(mesh)
    heap: list = []
    for u, v in mesh.edges:
        cost, s, d = state.cost(int(u), int(v))
        heapq.heappush(heap, (cost, state.edge_id(int(u), int(v)), int(u), int(v),
                              state.version[u], state.version[v], s, d))

    alive_count = n
    reseeds = 0
    while alive_count > target:
        if not heap:
            # faces around an edge can change without touching its endpoints'
            # versions, so a failed link test may become passable: reseed once
            if reseeds >= 1:
                break
            reseeds += 1
            for (u, v) in sorted(state.edge_ids):
                if state.alive[u] and state.alive[v] and v in state.nbr[u]:
                    cost, s, d = state.cost(u, v)
                    heapq.heappush(heap, (cost, state.edge_id(u, v), u, v,
                                          state.version[u], state.version[v], s, d))
            if not heap:
                break
            continue
        cost, eid, u, v, ver_u, ver_v, survivor, dying = heapq.heappop(heap)
        if not (state.alive[u] and state.alive[v]):
            continue
        if state.version[u] != ver_u or state.version[v] != ver_v:
            continue  # a fresh entry was pushed when the version bumped
        if not state.link_ok(u, v):
            continue
        state.collapse(survivor, dying)
        if collapse_costs is not None:
            collapse_costs.append(cost)
        alive_count -= 1
        reseeds = 0
        state.push_edges_of(heap, survivor)

    if alive_count > target:
        logger.warning("decimation stalled at %d vertices (target %d)", alive_count, target)

    survivors = np.flatnonzero(state.alive)
    coarse_index = {int(v): m for m, v in enumerate(survivors)}
    coarse_faces = []
    for fi in sorted(state.faces):
        face = state.faces[fi]
        coarse_faces.append([coarse_index[v] for v in face])
    coarse = MeshTopology(len(survivors), np.array(coarse_faces, dtype=np.int64).reshape(-1, 3),
                          vertex_positions=mesh.vertex_positions[survivors])
    down = sp.csr_matrix(
        (np.ones(len(survivors)), (np.arange(len(survivors)), survivors)),
        shape=(len(survivors), n),
    )
    return coarse, down


def closest_point_on_triangle(p, a, b, c):
    """Closest point to ``p`` on triangle abc and its barycentric weights."""
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = float(ab @ ap), float(ac @ ap)
    if d1 <= 0 and d2 <= 0:
        return a, (1.0, 0.0, 0.0)
    bp = p - b
    d3, d4 = float(ab @ bp), float(ac @ bp)
    if d3 >= 0 and d4 <= d3:
        return b, (0.0, 1.0, 0.0)
    vc = d1 * d4 - d3 * d2
    if vc <= 0 and d1 >= 0 and d3 <= 0:
        t = d1 / (d1 - d3) if d1 != d3 else 0.0
        return a + t * ab, (1.0 - t, t, 0.0)
    cp = p - c
    d5, d6 = float(ab @ cp), float(ac @ cp)
    if d6 >= 0 and d5 <= d6:
        return c, (0.0, 0.0, 1.0)
    vb = d5 * d2 - d1 * d6
    if vb <= 0 and d2 >= 0 and d6 <= 0:
        t = d2 / (d2 - d6) if d2 != d6 else 0.0
        return a + t * ac, (1.0 - t, 0.0, t)
    va = d3 * d6 - d5 * d4
    if va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
        denom = (d4 - d3) + (d5 - d6)
        t = (d4 - d3) / denom if denom != 0 else 0.0
        return b + t * (c - b), (0.0, 1.0 - t, t)
    denom = va + vb + vc
    v = vb / denom
    w = vc / denom
    return a + ab * v + ac * w, (1.0 - v - w, v, w)


def build_upsampler(coarse: MeshTopology, fine: MeshTopology, down: sp.csr_matrix) -> sp.csr_matrix:
    """Barycentric (N, M) up operator inverting the selection on kept vertices.

    Kept fine vertices get a one-hot row on their coarse counterpart; each
    discarded vertex is projected to the closest point over all coarse
    faces and weighted by that point's barycentric coordinates. A coarse
    mesh without faces degrades to nearest-vertex rows.
    """
    if coarse.num_vertices == 0:
        raise ValueError("coarse mesh is empty")
    if coarse.vertex_positions is None or fine.vertex_positions is None:
        raise ValueError("both meshes need positions")
    n, m = fine.num_vertices, coarse.num_vertices
    kept = {}
    coo = down.tocoo()
    for row, col in zip(coo.row, coo.col):
        kept[int(col)] = int(row)

    rows, cols, vals = [], [], []
    cpos = coarse.vertex_positions
    for i in range(n):
        if i in kept:
            rows.append(i)
            cols.append(kept[i])
            vals.append(1.0)
            continue
        p = fine.vertex_positions[i]
        if coarse.num_faces == 0:
            j = int(np.argmin(np.linalg.norm(cpos - p, axis=1)))
            rows.append(i)
            cols.append(j)
            vals.append(1.0)
            continue
        best = None
        for face in coarse.faces:
            point, bary = closest_point_on_triangle(p, cpos[face[0]], cpos[face[1]], cpos[face[2]])
            dist = float(np.linalg.norm(p - point))
            if best is None or dist < best[0]:
                best = (dist, face, bary)
        _, face, bary = best
        for corner, w in zip(face, bary):
            rows.append(i)
            cols.append(int(corner))
            vals.append(float(w))
    up = sp.csr_matrix((vals, (rows, cols)), shape=(n, m))
    up.sum_duplicates()
    return up


def build_sampling_operator(mesh: MeshTopology, factor: float) -> SamplingOperator:
    coarse, down = quadric_decimate(mesh, factor)
    up = build_upsampler(coarse, mesh, down)
    return SamplingOperator(down=down, up=up, coarse=coarse, factor=factor)


def build_hierarchy(mesh: MeshTopology, levels: int, factor: float) -> list[SamplingOperator]:
    """Stacked operators: level i maps mesh_i -> mesh_{i+1}."""
    ops = []
    current = mesh
    for _ in range(levels):
        op = build_sampling_operator(current, factor)
        ops.append(op)
        current = op.coarse
    return ops


def apply_sampling(x, mat):
    """Apply a down or up operator along the vertex axis of (B, N, D) features."""
    if isinstance(x, ad.Tensor):
        return ad.sparse_apply(mat, x)
    x = np.asarray(x)
    b, n, d = x.shape
    if n != mat.shape[1]:
        raise ValueError(f"operator {mat.shape} cannot apply to features {x.shape}")
    flat = x.transpose(1, 0, 2).reshape(n, b * d)
    out = (mat @ flat).astype(x.dtype, copy=False)
    return np.ascontiguousarray(out.reshape(mat.shape[0], b, d).transpose(1, 0, 2))


def save_sampling(op: SamplingOperator, path) -> None:
    """Cache an operator: JSON header then little-endian COO triplets."""
    down, up = op.down.tocoo(), op.up.tocoo()
    header = {
        "fine_n": op.fine_vertices,
        "coarse_m": op.coarse_vertices,
        "factor": op.factor,
        "down_nnz": int(down.nnz),
        "up_nnz": int(up.nnz),
        "coarse_faces": op.coarse.faces.tolist(),
        "coarse_positions": op.coarse.vertex_positions.tolist(),
    }
    blob = json.dumps(header).encode()

    def triplets(mat):
        arr = np.empty(mat.nnz, dtype=_TRIPLET)
        arr["row"], arr["col"], arr["val"] = mat.row, mat.col, mat.data
        return arr

    with open(str(path), "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(np.array([len(blob)], dtype="<u8").tobytes())
        fh.write(blob)
        triplets(down).tofile(fh)
        triplets(up).tofile(fh)


def load_sampling(path) -> SamplingOperator:
    with open(str(path), "rb") as fh:
        if fh.read(len(CACHE_MAGIC)) != CACHE_MAGIC:
            raise ValueError(f"{path}: not a sampling cache")
        (hlen,) = np.frombuffer(fh.read(8), dtype="<u8")
        header = json.loads(fh.read(int(hlen)).decode())
        d_arr = np.fromfile(fh, dtype=_TRIPLET, count=header["down_nnz"])
        u_arr = np.fromfile(fh, dtype=_TRIPLET, count=header["up_nnz"])
    n, m = header["fine_n"], header["coarse_m"]
    down = sp.csr_matrix((d_arr["val"], (d_arr["row"], d_arr["col"])), shape=(m, n))
    up = sp.csr_matrix((u_arr["val"], (u_arr["row"], u_arr["col"])), shape=(n, m))
    coarse = MeshTopology(m, np.array(header["coarse_faces"], dtype=np.int64).reshape(-1, 3),
                          vertex_positions=np.array(header["coarse_positions"]))
    return SamplingOperator(down=down, up=up, coarse=coarse, factor=header["factor"])
