"""Triangle meshes with shared connectivity: OBJ I/O, adjacency, graph Laplacian."""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np
from scipy import sparse

logger = logging.getLogger(__name__)


class MeshError(ValueError):
    """Raised for malformed mesh input or invalid connectivity."""


@dataclass(frozen=True, eq=False)
class Mesh:
    """Vertex positions (V, 3) plus triangle faces (F, 3) of vertex indices."""

    positions: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        fcs = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if fcs.size and (fcs.min() < 0 or fcs.max() >= len(pos)):
            raise MeshError("face index out of range [0, %d)" % len(pos))
        bad = (fcs[:, 0] == fcs[:, 1]) | (fcs[:, 1] == fcs[:, 2]) | (fcs[:, 0] == fcs[:, 2])
        if bad.any():
            raise MeshError("degenerate face %d: %s" % (int(np.argmax(bad)), fcs[bad][0].tolist()))
        pos.setflags(write=False)
        fcs.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "faces", fcs)

    @property
    def n_vertices(self) -> int:
        return len(self.positions)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def with_positions(self, positions) -> "Mesh":
        positions = np.asarray(positions, dtype=np.float64)
        if positions.shape != self.positions.shape:
            raise MeshError("expected positions of shape %s, got %s" % (self.positions.shape, positions.shape))
        return Mesh(positions, self.faces)

    def bbox_diagonal(self) -> float:
        if self.n_vertices == 0:
            return 0.0
        return float(np.linalg.norm(self.positions.max(0) - self.positions.min(0)))

    def __eq__(self, other):
        if not isinstance(other, Mesh):
            return NotImplemented
        return np.array_equal(self.positions, other.positions) and np.array_equal(self.faces, other.faces)


@dataclass(frozen=True)
class Adjacency:
    """Undirected edge list, sorted one-rings and vertex degrees."""

    edges: np.ndarray  # (E, 2), i < j, lexicographically sorted
    one_rings: tuple = field(repr=False)
    degrees: np.ndarray = field(repr=False)

    @property
    def n_vertices(self) -> int:
        return len(self.one_rings)


def _parse_index(token: str, n_vertices: int, lineno: int) -> int:
    head = token.split("/", 1)[0]
    try:
        idx = int(head)
    except ValueError:
        raise MeshError("line %d: malformed face index %r" % (lineno, token)) from None
    if idx < 0:
        idx = n_vertices + idx
    else:
        idx -= 1
    if not 0 <= idx < n_vertices:
        raise MeshError("line %d: face index %s out of range (%d vertices)" % (lineno, head, n_vertices))
    return idx


def parse_obj(text: str | TextIO) -> Mesh:
    """Parse Wavefront OBJ ``v`` and ``f`` records into a :class:`Mesh`.

    Texture and normal references (``f 1/2/3 ...``) are stripped. Faces with
    more than three corners are rejected rather than triangulated.
    """
    if isinstance(text, str):
        text = io.StringIO(text)
    verts: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []
    for lineno, line in enumerate(text, 1):
        parts = line.split("#", 1)[0].split()
        if not parts:
            continue
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise MeshError("line %d: vertex needs 3 coordinates" % lineno)
            try:
                verts.append((float(parts[1]), float(parts[2]), float(parts[3])))
            except ValueError:
                raise MeshError("line %d: malformed vertex %r" % (lineno, line.strip())) from None
        elif tag == "f":
            if len(parts) != 4:
                raise MeshError("line %d: only triangular faces are supported, got %d corners"
                                % (lineno, len(parts) - 1))
            n = len(verts)
            faces.append(tuple(_parse_index(tok, n, lineno) for tok in parts[1:]))
    return Mesh(np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


def write_obj(mesh: Mesh) -> str:
    """Serialize a mesh as OBJ text; coordinates use 17 significant digits."""
    out = io.StringIO()
    for x, y, z in mesh.positions:
        out.write("v %.17g %.17g %.17g\n" % (x, y, z))
    for a, b, c in mesh.faces:
        out.write("f %d %d %d\n" % (a + 1, b + 1, c + 1))
    return out.getvalue()


def load_obj(path) -> Mesh:
    with open(path, encoding="utf-8") as fh:
        return parse_obj(fh)


def save_obj(mesh: Mesh, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(write_obj(mesh))


@dataclass(frozen=True)
class ConnectivityReport:
    ok: bool
    message: str = ""
    face_index: int | None = None

    def __bool__(self):
        return self.ok


def validate_same_connectivity(reference: Mesh, other: Mesh) -> ConnectivityReport:
    """Check that ``other`` has exactly the vertex count and face list of ``reference``."""
    if reference.n_vertices != other.n_vertices:
        return ConnectivityReport(False, "vertex count %d != %d" % (reference.n_vertices, other.n_vertices))
    if reference.n_faces != other.n_faces:
        return ConnectivityReport(False, "face count %d != %d" % (reference.n_faces, other.n_faces))
    diff = np.flatnonzero((reference.faces != other.faces).any(axis=1))
    if diff.size:
        k = int(diff[0])
        return ConnectivityReport(
            False,
            "face %d differs: %s != %s" % (k, reference.faces[k].tolist(), other.faces[k].tolist()),
            face_index=k,
        )
    return ConnectivityReport(True)


def _edge_face_counts(faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if len(faces) == 0:
        return np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=np.int64)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0, return_counts=True)


def build_adjacency(mesh: Mesh) -> Adjacency:
    """Deduplicated undirected edges and ascending one-rings of ``mesh``.

    Raises :class:`MeshError` if an edge is shared by more than two faces.
    """
    edges, counts = _edge_face_counts(mesh.faces)
    if (counts > 2).any():
        k = int(np.argmax(counts > 2))
        raise MeshError("non-manifold edge %s shared by %d faces" % (edges[k].tolist(), counts[k]))
    V = mesh.n_vertices
    rings: list[list[int]] = [[] for _ in range(V)]
    for i, j in edges.tolist():
        rings[i].append(j)
        rings[j].append(i)
    one_rings = tuple(tuple(sorted(r)) for r in rings)
    degrees = np.array([len(r) for r in one_rings], dtype=np.int64)
    return Adjacency(edges, one_rings, degrees)


def boundary_edges(mesh: Mesh) -> np.ndarray:
    edges, counts = _edge_face_counts(mesh.faces)
    return edges[counts == 1]


def adjacency_matrix(adj: Adjacency) -> sparse.csr_matrix:
    V = adj.n_vertices
    i, j = adj.edges[:, 0], adj.edges[:, 1]
    data = np.ones(2 * len(i))
    A = sparse.coo_matrix((data, (np.concatenate([i, j]), np.concatenate([j, i]))), shape=(V, V))
    return A.tocsr()


def normalized_laplacian(adj: Adjacency) -> sparse.csr_matrix:
    """Return ``I - D^{-1/2} A D^{-1/2}`` with unit edge weights.

    The result is exactly symmetric: every off-diagonal value is computed
    from the unordered vertex pair.
    """
    V = adj.n_vertices
    deg = adj.degrees
    if V and (deg == 0).any():
        raise MeshError("isolated vertex %d has no edges" % int(np.argmax(deg == 0)))
    if V and _n_components(adj) > 1:
        logger.warning("graph is disconnected; Laplacian has a multi-dimensional null space")
    i, j = adj.edges[:, 0], adj.edges[:, 1]
    w = -1.0 / np.sqrt(deg[i].astype(np.float64) * deg[j])
    rows = np.concatenate([np.arange(V), i, j])
    cols = np.concatenate([np.arange(V), j, i])
    vals = np.concatenate([np.ones(V), w, w])
    return sparse.csr_matrix((vals, (rows, cols)), shape=(V, V))


def _n_components(adj: Adjacency) -> int:
    from scipy.sparse.csgraph import connected_components

    n, _ = connected_components(adjacency_matrix(adj), directed=False)
    return n


def estimate_lambda_max(L, tol: float = 1e-8, max_iter: int = 200, seed: int = 0) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration.

    Stops when the Rayleigh quotient changes by less than ``tol`` relative.
    Returns 2.0 (the normalized-Laplacian bound) when the iteration does not
    converge or the matrix annihilates the start vector.
    """
    n = L.shape[0]
    if n == 0:
        return 2.0
    v = np.random.default_rng(seed).uniform(0.5, 1.5, n)
    v /= np.linalg.norm(v)
    lam = None
    for _ in range(max_iter):
        w = L @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 2.0
        new = float(v @ w)
        v = w / norm
        if lam is not None and abs(new - lam) <= tol * abs(new):
            return min(new, 2.0)
        lam = new
    logger.info("power iteration did not converge in %d steps, using bound 2", max_iter)
    return 2.0


def iter_edges(faces: Iterable) -> Iterable[tuple[int, int]]:
    for a, b, c in faces:
        yield (a, b) if a < b else (b, a)
        yield (b, c) if b < c else (c, b)
        yield (c, a) if c < a else (a, c)
