"""Edge-contraction simplification with a quadric + new-edge-length error.

Each candidate edge ``(i, j)`` is scored by the quadric error of its
contracted vertex plus ``lam`` times the longest edge that would connect the
new vertex to the former neighbors of ``i`` and ``j``. Penalizing long new
edges keeps coarse triangles evenly sized, so every coarse vertex pools a
similarly sized patch of the fine mesh.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import logging
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .mesh import Adjacency, Mesh, build_adjacency, load_obj, save_obj

logger = logging.getLogger(__name__)

HIER_MAGIC = b"MVAE-HIER"
HIER_VERSION = 1
DEFAULT_LAMBDA = 0.001


class SimplificationStalled(RuntimeError):
    """No legal contraction remains before the target vertex count."""

    def __init__(self, reached: int, target: int):
        super().__init__("stalled at V=%d (target %d)" % (reached, target))
        self.reached = reached
        self.target = target


# -- quadrics ---------------------------------------------------------------

def face_planes(positions: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Unit plane ``(a, b, c, d)`` per face; zero rows for zero-area faces."""
    p0, p1, p2 = (positions[faces[:, k]] for k in range(3))
    n = np.cross(p1 - p0, p2 - p0)
    norm = np.linalg.norm(n, axis=1)
    planes = np.zeros((len(faces), 4))
    ok = norm > 0.0
    if (~ok).any():
        logger.warning("%d zero-area face(s) contribute no quadric", int((~ok).sum()))
    planes[ok, :3] = n[ok] / norm[ok, None]
    planes[ok, 3] = -(planes[ok, :3] * p0[ok]).sum(axis=1)
    return planes


def vertex_quadrics(mesh: Mesh) -> np.ndarray:
    """Sum of plane quadrics ``p p^T`` over incident faces, for every vertex."""
    planes = face_planes(mesh.positions, mesh.faces)
    fq = planes[:, :, None] * planes[:, None, :]
    Q = np.zeros((mesh.n_vertices, 4, 4))
    for k in range(3):
        np.add.at(Q, mesh.faces[:, k], fq)
    return Q


def vertex_quadric(mesh: Mesh, vertex: int) -> np.ndarray:
    incident = np.flatnonzero((mesh.faces == vertex).any(axis=1))
    planes = face_planes(mesh.positions, mesh.faces[incident])
    return planes.T @ planes


def quadric_error(Q: np.ndarray, point) -> float:
    v = np.append(np.asarray(point, dtype=np.float64), 1.0)
    return float(v @ Q @ v)


def optimal_position(q_sum: np.ndarray, v1, v2, det_tol: float = 1e-10):
    """Minimizer of the summed quadric, or the best of midpoint/v1/v2.

    Returns ``(point, optimal)``; ``optimal`` is False when the 3x3 block is
    (near) singular and a fallback candidate was used. On fallback ties the
    midpoint wins.
    """
    A = q_sum[:3, :3]
    scale = np.abs(A).max()
    det = np.linalg.det(A)
    if scale > 0.0 and abs(det) >= det_tol * scale ** 3:
        return np.linalg.solve(A, -q_sum[:3, 3]), True
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    best, best_err = None, math.inf
    for cand in ((v1 + v2) / 2.0, v1, v2):
        err = quadric_error(q_sum, cand)
        if err < best_err:
            best, best_err = cand, err
    return best, False


# -- contraction state ------------------------------------------------------

@dataclass(frozen=True)
class ContractionMap:
    """Fine-to-coarse vertex assignment recorded while simplifying."""

    fine_count: int
    coarse_count: int
    parent: np.ndarray
    coarse_positions: np.ndarray
    contraction_log: tuple  # (kept, removed, new_position) in fine indices

    def __post_init__(self):
        if self.coarse_count != self.fine_count - len(self.contraction_log):
            raise ValueError("coarse_count inconsistent with contraction log")


def replay_contractions(fine_count: int, log) -> np.ndarray:
    """Rebuild the ``parent`` map from an ordered contraction log."""
    rep = np.arange(fine_count)
    for kept, removed, _ in log:
        rep[removed] = kept

    def root(v):
        while rep[v] != v:
            v = rep[v]
        return v

    roots = np.array([root(v) for v in range(fine_count)], dtype=np.int64)
    survivors = np.unique(roots)
    return np.searchsorted(survivors, roots)


class EdgeCollapser:
    """Greedy edge-contraction state over a triangle mesh.

    Attributes are public so that tests can inspect the live state between
    contractions: ``positions`` and ``quadrics`` are indexed by fine vertex
    id, ``faces`` holds live faces only after :meth:`live_faces`.
    """

    def __init__(self, mesh: Mesh, lam: float = DEFAULT_LAMBDA):
        build_adjacency(mesh)  # validates edge-manifoldness
        self.lam = float(lam)
        self.n_fine = mesh.n_vertices
        self.positions = mesh.positions.copy()
        self.quadrics = vertex_quadrics(mesh)
        self.faces = [list(f) for f in mesh.faces.tolist()]
        self.face_alive = [True] * len(self.faces)
        self.alive = np.ones(self.n_fine, dtype=bool)
        self.n_alive = self.n_fine
        self.vf = [set() for _ in range(self.n_fine)]
        self.nbrs = [set() for _ in range(self.n_fine)]
        for fid, (a, b, c) in enumerate(self.faces):
            for u, w in ((a, b), (b, c), (c, a)):
                self.vf[u].add(fid)
                self.nbrs[u].add(w)
                self.nbrs[w].add(u)
        self.log: list[tuple[int, int, tuple]] = []
        self.errors: list[float] = []
        self._cache: dict[tuple[int, int], tuple] = {}
        self._heap: list = []
        self._stamp = 0
        for i in range(self.n_fine):
            for j in self.nbrs[i]:
                if i < j:
                    self._refresh(i, j)

    # scoring

    def candidate(self, i: int, j: int):
        """``(error, position, optimal)`` for contracting edge ``(i, j)``."""
        q = self.quadrics[i] + self.quadrics[j]
        v, optimal = optimal_position(q, self.positions[i], self.positions[j])
        vh = np.append(v, 1.0)
        err = float(vh @ q @ vh)
        if self.lam != 0.0:
            others = (self.nbrs[i] | self.nbrs[j]) - {i, j}
            if others:
                d = self.positions[sorted(others)] - v
                err += self.lam * float(np.sqrt((d * d).sum(axis=1)).max())
        return err, v, optimal

    def cached_error(self, i: int, j: int) -> float:
        return self._cache[(min(i, j), max(i, j))][0]

    def live_edges(self):
        return sorted(self._cache)

    def live_faces(self) -> list[tuple[int, int, int]]:
        return [tuple(f) for f, ok in zip(self.faces, self.face_alive) if ok]

    def _refresh(self, i: int, j: int):
        err, v, optimal = self.candidate(i, j)
        self._stamp += 1
        self._cache[(i, j)] = (err, v, optimal, self._stamp)
        heapq.heappush(self._heap, (err, i, j, self._stamp))

    # legality

    def _edge_faces(self, i, j):
        return self.vf[i] & self.vf[j]

    def _on_boundary(self, v) -> bool:
        return any(len(self.vf[v] & self.vf[m]) == 1 for m in self.nbrs[v])

    def is_legal(self, i: int, j: int, v) -> bool:
        shared = self._edge_faces(i, j)
        opposite = set()
        for fid in shared:
            opposite.update(self.faces[fid])
        opposite -= {i, j}
        # link condition; also rejects |N_i & N_j| > 2
        if (self.nbrs[i] & self.nbrs[j]) != opposite:
            return False
        if len(shared) == 2 and self._on_boundary(i) and self._on_boundary(j):
            return False
        P = self.positions
        for fid in (self.vf[i] | self.vf[j]) - shared:
            a, b, c = self.faces[fid]
            pa, pb, pc = P[a], P[b], P[c]
            n_old = np.cross(pb - pa, pc - pa)
            qa = v if a in (i, j) else pa
            qb = v if b in (i, j) else pb
            qc = v if c in (i, j) else pc
            n_new = np.cross(qb - qa, qc - qa)
            dot = float(n_old @ n_new)
            if dot < 0.0 or (dot == 0.0 and float(n_old @ n_old) > 0.0):
                return False
        return True

    # contraction

    def next_edge(self):
        """Pop the cheapest legal edge, or None if none remains."""
        while self._heap:
            err, i, j, stamp = heapq.heappop(self._heap)
            entry = self._cache.get((i, j))
            if entry is None or entry[3] != stamp:
                continue
            if self.is_legal(i, j, entry[1]):
                return i, j
        return None

    def contract(self, i: int, j: int):
        keep, rem = min(i, j), max(i, j)
        err, v, _, _ = self._cache[(keep, rem)]
        self.log.append((keep, rem, tuple(float(x) for x in v)))
        self.errors.append(err)
        for fid in list(self.vf[rem]):
            face = self.faces[fid]
            if keep in face:
                self.face_alive[fid] = False
                for u in face:
                    self.vf[u].discard(fid)
            else:
                face[face.index(rem)] = keep
                self.vf[keep].add(fid)
        self.vf[rem] = set()
        for m in self.nbrs[rem]:
            self._cache.pop((min(m, rem), max(m, rem)), None)
            self.nbrs[m].discard(rem)
            if m != keep:
                self.nbrs[m].add(keep)
                self.nbrs[keep].add(m)
        self.nbrs[keep].discard(rem)
        self.nbrs[rem] = set()
        self.positions[keep] = v
        self.quadrics[keep] = self.quadrics[keep] + self.quadrics[rem]
        self.alive[rem] = False
        self.n_alive -= 1
        touched = set()
        for a in self.nbrs[keep] | {keep}:
            for b in self.nbrs[a]:
                touched.add((a, b) if a < b else (b, a))
        for a, b in sorted(touched):
            self._refresh(a, b)

    def result(self):
        parent = replay_contractions(self.n_fine, self.log)
        survivors = np.flatnonzero(self.alive)
        coarse_pos = self.positions[survivors]
        faces = [tuple(parent[u] for u in f) for f in self.live_faces()]
        coarse = Mesh(coarse_pos, np.array(faces, dtype=np.int64).reshape(-1, 3))
        cmap = ContractionMap(self.n_fine, len(survivors), parent, coarse_pos.copy(), tuple(self.log))
        return coarse, cmap


def contraction_error(collapser: EdgeCollapser, i: int, j: int, v=None, lam=None) -> float:
    """Quadric error at ``v`` plus ``lam`` times the longest new edge.

    ``v`` defaults to the quadric-optimal placement for the edge and ``lam``
    to the collapser's weight.
    """
    lam = collapser.lam if lam is None else lam
    q = collapser.quadrics[i] + collapser.quadrics[j]
    if v is None:
        v, _ = optimal_position(q, collapser.positions[i], collapser.positions[j])
    err = quadric_error(q, v)
    others = (collapser.nbrs[i] | collapser.nbrs[j]) - {i, j}
    if lam and others:
        err += lam * max(float(np.linalg.norm(collapser.positions[m] - v)) for m in others)
    return err


@dataclass
class SimplifyResult:
    mesh: Mesh
    map: ContractionMap
    stalled: bool = False

    @property
    def status(self) -> str:
        return "stalled at V=%d" % self.mesh.n_vertices if self.stalled else "ok"

    def __iter__(self):
        return iter((self.mesh, self.map))


def simplify_to(mesh: Mesh, target_count: int, lam: float = DEFAULT_LAMBDA, trace=None) -> SimplifyResult:
    """Greedily contract edges of ``mesh`` until ``target_count`` vertices remain.

    ``trace(collapser, edge)`` is called before each contraction. If no legal
    contraction remains early, the partial result is returned with
    ``stalled=True``.
    """
    if not 1 <= target_count <= mesh.n_vertices:
        raise ValueError("target_count must be in [1, %d], got %d" % (mesh.n_vertices, target_count))
    col = EdgeCollapser(mesh, lam)
    stalled = False
    while col.n_alive > target_count:
        edge = col.next_edge()
        if edge is None:
            stalled = True
            logger.warning("simplification stalled at V=%d (target %d)", col.n_alive, target_count)
            break
        if trace is not None:
            trace(col, edge)
        col.contract(*edge)
    coarse, cmap = col.result()
    return SimplifyResult(coarse, cmap, stalled)


# -- hierarchy ----------------------------------------------------------------

def coarse_size(n_vertices: int) -> int:
    """Vertex count after contracting half of ``n_vertices``."""
    return (n_vertices + 2) // 2


@dataclass
class Hierarchy:
    levels: list  # [(Mesh, Adjacency)]
    maps: list  # [ContractionMap]
    lam: float = DEFAULT_LAMBDA
    _hash: bytes | None = field(default=None, repr=False, compare=False)

    @property
    def sizes(self) -> list[int]:
        return [m.n_vertices for m, _ in self.levels]

    def content_hash(self) -> bytes:
        if self._hash is None:
            h = hashlib.sha256()
            for mesh, _ in self.levels:
                h.update(np.ascontiguousarray(mesh.faces, dtype="<u4").tobytes())
            for cmap in self.maps:
                h.update(np.ascontiguousarray(cmap.parent, dtype="<u4").tobytes())
            self._hash = h.digest()
        return self._hash


def build_hierarchy(mesh: Mesh, num_levels: int = 1, lam: float = DEFAULT_LAMBDA,
                    normalize: bool = False) -> Hierarchy:
    """Simplify ``mesh`` ``num_levels`` times, halving the vertex count each time.

    With ``normalize`` the edge-length weight is multiplied by each level's
    bounding-box diagonal, making the ordering invariant to uniform scaling.
    """
    if num_levels < 0:
        raise ValueError("num_levels must be >= 0")
    levels = [(mesh, build_adjacency(mesh))]
    maps = []
    for _ in range(num_levels):
        cur = levels[-1][0]
        lam_k = lam * cur.bbox_diagonal() if normalize else lam
        res = simplify_to(cur, coarse_size(cur.n_vertices), lam_k)
        if res.stalled:
            raise SimplificationStalled(res.mesh.n_vertices, coarse_size(cur.n_vertices))
        levels.append((res.mesh, build_adjacency(res.mesh)))
        maps.append(res.map)
    return Hierarchy(levels, maps, lam)


def write_map(cmap: ContractionMap) -> bytes:
    out = [HIER_MAGIC, struct.pack("<III", HIER_VERSION, cmap.fine_count, cmap.coarse_count)]
    out.append(np.asarray(cmap.parent, dtype="<u4").tobytes())
    for kept, removed, p in cmap.contraction_log:
        out.append(struct.pack("<II3d", kept, removed, *p))
    return b"".join(out)


def read_map(data: bytes) -> ContractionMap:
    n = len(HIER_MAGIC)
    if data[:n] != HIER_MAGIC:
        raise ValueError("not a hierarchy map file (bad magic)")
    if len(data) < n + 12:
        raise ValueError("truncated hierarchy map header")
    version, fine, coarse = struct.unpack_from("<III", data, n)
    if version != HIER_VERSION:
        raise ValueError("unsupported hierarchy map version %d" % version)
    off = n + 12
    rec = struct.calcsize("<II3d")
    expected = off + 4 * fine + rec * (fine - coarse)
    if len(data) != expected:
        raise ValueError("hierarchy map size %d, expected %d" % (len(data), expected))
    parent = np.frombuffer(data, dtype="<u4", count=fine, offset=off).astype(np.int64)
    off += 4 * fine
    log = []
    for _ in range(fine - coarse):
        k, r, x, y, z = struct.unpack_from("<II3d", data, off)
        log.append((k, r, (x, y, z)))
        off += rec
    # coarse positions live in the level OBJ files; load_hierarchy fills them
    return ContractionMap(fine, coarse, parent, None, tuple(log))


def save_hierarchy(hier: Hierarchy, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    for k, (mesh, _) in enumerate(hier.levels):
        save_obj(mesh, os.path.join(directory, "level_%d.obj" % k))
    for k, cmap in enumerate(hier.maps):
        with open(os.path.join(directory, "map_%d.bin" % k), "wb") as fh:
            fh.write(write_map(cmap))
    with open(os.path.join(directory, "hierarchy.json"), "w") as fh:
        json.dump({"levels": len(hier.levels), "lambda": hier.lam, "sizes": hier.sizes}, fh)


def load_hierarchy(directory) -> Hierarchy:
    with open(os.path.join(directory, "hierarchy.json")) as fh:
        meta = json.load(fh)
    levels, maps = [], []
    for k in range(meta["levels"]):
        mesh = load_obj(os.path.join(directory, "level_%d.obj" % k))
        levels.append((mesh, build_adjacency(mesh)))
    for k in range(meta["levels"] - 1):
        with open(os.path.join(directory, "map_%d.bin" % k), "rb") as fh:
            cmap = read_map(fh.read())
        coarse = levels[k + 1][0]
        if cmap.fine_count != levels[k][0].n_vertices or cmap.coarse_count != coarse.n_vertices:
            raise ValueError("map %d does not match level sizes" % k)
        maps.append(ContractionMap(cmap.fine_count, cmap.coarse_count, cmap.parent,
                                   coarse.positions.copy(), cmap.contraction_log))
    return Hierarchy(levels, maps, meta["lambda"])
