"""Per-vertex 9-dimensional deformation features and shape reconstruction.

A shape is described relative to a base mesh by a deformation gradient
``T_i`` per vertex, factored as ``T_i = R_i S_i``. The feature row is the
axis-angle vector of ``R_i`` followed by the upper triangle of ``S_i``
(``s11, s12, s13, s22, s23, s33``), scaled column-wise into [-0.95, 0.95]
so a tanh output layer can reproduce it.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .mesh import Adjacency, Mesh, MeshError, build_adjacency, validate_same_connectivity

logger = logging.getLogger(__name__)

FEAT_MAGIC = b"MVAE-FEAT"
FEAT_VERSION = 1
N_FEATURES = 9
SCALE_RANGE = 0.95
MIN_WEIGHT = 1e-6

_UPPER = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


class ReconstructionError(RuntimeError):
    pass


# -- geometry helpers ---------------------------------------------------------

def cotangent_weights(mesh: Mesh, adj: Adjacency | None = None) -> np.ndarray:
    """Half-cotangent edge weights aligned with ``adj.edges``, clamped below."""
    adj = build_adjacency(mesh) if adj is None else adj
    P, F = mesh.positions, mesh.faces
    V = mesh.n_vertices
    rows, cols, vals = [], [], []
    for k in range(3):
        a, b, c = F[:, k], F[:, (k + 1) % 3], F[:, (k + 2) % 3]
        u, w = P[b] - P[a], P[c] - P[a]
        cross = np.linalg.norm(np.cross(u, w), axis=1)
        dot = (u * w).sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            cot = np.where(cross > 0, dot / cross, 0.0)
        lo, hi = np.minimum(b, c), np.maximum(b, c)
        rows.append(lo)
        cols.append(hi)
        vals.append(0.5 * cot)
    W = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(V, V)).tocsr()
    w = np.asarray(W[adj.edges[:, 0], adj.edges[:, 1]]).ravel()
    return np.maximum(w, MIN_WEIGHT)


def boundary_vertices(mesh: Mesh) -> np.ndarray:
    from .mesh import boundary_edges

    mask = np.zeros(mesh.n_vertices, dtype=bool)
    mask[boundary_edges(mesh).ravel()] = True
    return mask


@dataclass
class GradientReport:
    regularized: list = field(default_factory=list)


def _one_ring_system(base: Mesh, adj: Adjacency, report: GradientReport | None = None):
    """Directed edges ``src -> dst`` with weights and per-vertex inverse moment matrices."""
    V = base.n_vertices
    if V and (adj.degrees == 0).any():
        raise MeshError("vertex %d has an empty one-ring" % int(np.argmax(adj.degrees == 0)))
    w = cotangent_weights(base, adj)
    i, j = adj.edges[:, 0], adj.edges[:, 1]
    # directed copies so each vertex sees all of its edges
    src = np.concatenate([i, j])
    dst = np.concatenate([j, i])
    wd = np.concatenate([w, w])
    wd = np.where(boundary_vertices(base)[src], 1.0, wd)
    e = base.positions[src] - base.positions[dst]
    A = np.zeros((V, 3, 3))
    np.add.at(A, src, wd[:, None, None] * e[:, :, None] * e[:, None, :])
    tr = np.trace(A, axis1=1, axis2=2)
    det = np.linalg.det(A)
    singular = np.abs(det) < 1e-12 * (tr / 3.0) ** 3
    if singular.any():
        idx = np.flatnonzero(singular)
        logger.info("regularizing %d degenerate one-ring system(s)", len(idx))
        A[idx] += 1e-8 * tr[idx, None, None] * np.eye(3)
        if report is not None:
            report.regularized.extend(idx.tolist())
    return src, dst, wd, e, np.linalg.inv(A)


def deformation_gradients(base: Mesh, deformed, adj: Adjacency | None = None,
                          report: GradientReport | None = None) -> np.ndarray:
    """Per-vertex least-squares affine map from base one-ring edges to deformed ones.

    Returns an array of shape (V, 3, 3). Cotangent weights are used except at
    boundary vertices, whose open one-rings fall back to uniform weights.
    """
    adj = build_adjacency(base) if adj is None else adj
    deformed = np.asarray(deformed, dtype=np.float64)
    if deformed.shape != base.positions.shape:
        raise MeshError("deformed positions %s do not match base %s" % (deformed.shape, base.positions.shape))
    src, dst, wd, e, Ainv = _one_ring_system(base, adj, report)
    e2 = deformed[src] - deformed[dst]
    B = np.zeros((base.n_vertices, 3, 3))
    np.add.at(B, src, wd[:, None, None] * e2[:, :, None] * e[:, None, :])
    return B @ Ainv


def gradient_operator(base: Mesh, adj: Adjacency | None = None) -> sparse.csr_matrix:
    """Sparse (3V, V) map taking one coordinate of deformed positions to one row of every ``T_i``.

    ``(G @ x)[3 i + b] == T_i[a, b]`` when ``x`` is coordinate ``a`` of the
    deformed positions, matching :func:`deformation_gradients` exactly.
    """
    adj = build_adjacency(base) if adj is None else adj
    src, dst, wd, e, Ainv = _one_ring_system(base, adj)
    g = wd[:, None] * np.einsum("eab,eb->ea", Ainv[src], e)
    rows = (3 * src[:, None] + np.arange(3)).ravel()
    rows = np.concatenate([rows, rows])
    cols = np.concatenate([np.repeat(src, 3), np.repeat(dst, 3)])
    vals = np.concatenate([g.ravel(), -g.ravel()])
    V = base.n_vertices
    return sparse.coo_matrix((vals, (rows, cols)), shape=(3 * V, V)).tocsr()


def polar_decompose(T: np.ndarray):
    """Split ``T`` (3x3 or batched) into a proper rotation ``R`` and symmetric ``S``."""
    T = np.asarray(T, dtype=np.float64)
    U, sig, Wt = np.linalg.svd(T)
    d = np.sign(np.linalg.det(U @ Wt))
    d = np.where(d == 0, 1.0, d)
    D = np.ones(sig.shape)
    D[..., -1] = d
    R = (U * D[..., None, :]) @ Wt
    W = np.swapaxes(Wt, -1, -2)
    S = (W * (D * sig)[..., None, :]) @ Wt
    S = 0.5 * (S + np.swapaxes(S, -1, -2))
    return R, S


def _vee(M):
    return np.stack([M[..., 2, 1] - M[..., 1, 2], M[..., 0, 2] - M[..., 2, 0], M[..., 1, 0] - M[..., 0, 1]], -1)


def rotation_log(R: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation, angle in [0, pi]."""
    R = np.asarray(R, dtype=np.float64)
    single = R.ndim == 2
    R = R.reshape(-1, 3, 3)
    w = 0.5 * _vee(R)  # sin(theta) * axis
    s = np.linalg.norm(w, axis=1)
    c = 0.5 * (np.trace(R, axis1=1, axis2=2) - 1.0)
    theta = np.arctan2(s, c)
    out = np.zeros((len(R), 3))
    small = c >= 0
    nz = small & (s > 0)
    out[nz] = w[nz] * (theta[nz] / s[nz])[:, None]
    big = ~small
    if big.any():
        sym = 0.5 * (R[big] + np.swapaxes(R[big], 1, 2))
        aa = (sym - c[big, None, None] * np.eye(3)) / (1.0 - c[big])[:, None, None]
        k = np.argmax(np.diagonal(aa, axis1=1, axis2=2), axis=1)
        axis = aa[np.arange(len(k)), :, k]
        axis /= np.linalg.norm(axis, axis=1, keepdims=True)
        sgn = np.sign((axis * w[big]).sum(axis=1))
        # at exactly pi the sign is free; fix it by the largest component
        sgn = np.where(sgn == 0, np.sign(axis[np.arange(len(k)), k]), sgn)
        out[big] = axis * (sgn * theta[big])[:, None]
    return out[0] if single else out


def rotation_exp(v: np.ndarray) -> np.ndarray:
    """Rodrigues' formula: rotation matrix of an axis-angle vector."""
    v = np.asarray(v, dtype=np.float64)
    single = v.ndim == 1
    v = v.reshape(-1, 3)
    theta = np.linalg.norm(v, axis=1)
    K = np.zeros((len(v), 3, 3))
    K[:, 0, 1], K[:, 0, 2], K[:, 1, 2] = -v[:, 2], v[:, 1], -v[:, 0]
    K[:, 1, 0], K[:, 2, 0], K[:, 2, 1] = v[:, 2], -v[:, 1], v[:, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(theta > 1e-8, np.sin(theta) / theta, 1.0 - theta ** 2 / 6.0)
        b = np.where(theta > 1e-8, (1.0 - np.cos(theta)) / theta ** 2, 0.5 - theta ** 2 / 24.0)
    R = np.eye(3) + a[:, None, None] * K + b[:, None, None] * (K @ K)
    return R[0] if single else R


def gradients_to_features(T: np.ndarray) -> np.ndarray:
    """Unscaled (V, 9) feature rows from deformation gradients."""
    R, S = polar_decompose(T)
    q = np.empty(T.shape[:-2] + (N_FEATURES,))
    q[..., :3] = rotation_log(R.reshape(-1, 3, 3)).reshape(T.shape[:-2] + (3,))
    for k, (r, c) in enumerate(_UPPER):
        q[..., 3 + k] = S[..., r, c]
    return q


def features_to_gradients(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    lead = q.shape[:-1]
    S = np.empty(lead + (3, 3))
    for k, (r, c) in enumerate(_UPPER):
        S[..., r, c] = q[..., 3 + k]
        S[..., c, r] = q[..., 3 + k]
    R = rotation_exp(q[..., :3].reshape(-1, 3)).reshape(lead + (3, 3))
    return R @ S


# -- scaling ------------------------------------------------------------------

def fit_scaling(raw: np.ndarray) -> np.ndarray:
    """Per-column ``(a, b)`` so that ``a * x + b`` maps [min, max] onto [-0.95, 0.95].

    Constant columns (range below 1e-12) get ``a = 1, b = -min`` and map to 0.
    """
    flat = raw.reshape(-1, raw.shape[-1])
    lo, hi = flat.min(axis=0), flat.max(axis=0)
    span = hi - lo
    params = np.empty((raw.shape[-1], 2))
    for k in range(raw.shape[-1]):
        if span[k] < 1e-12:
            params[k] = (1.0, -lo[k])
        else:
            a = 2.0 * SCALE_RANGE / span[k]
            params[k] = (a, -SCALE_RANGE - a * lo[k])
    return params


def apply_scaling(raw: np.ndarray, params: np.ndarray) -> np.ndarray:
    return raw * params[:, 0] + params[:, 1]


def invert_scaling(X: np.ndarray, params: np.ndarray) -> np.ndarray:
    return (X - params[:, 1]) / params[:, 0]


@dataclass
class FeatureSet:
    shapes: list  # scaled (V, 9) arrays
    scale_params: np.ndarray  # (9, 2)
    reference: str = ""

    @property
    def array(self) -> np.ndarray:
        return np.stack(self.shapes)

    @property
    def n_vertices(self) -> int:
        return self.shapes[0].shape[0] if self.shapes else 0


def raw_features(base: Mesh, positions, adj: Adjacency | None = None) -> np.ndarray:
    return gradients_to_features(deformation_gradients(base, positions, adj))


def encode_features(base: Mesh, shapes, adj: Adjacency | None = None, reference: str = "") -> FeatureSet:
    """Scaled deformation features for every shape relative to ``base``.

    ``shapes`` may hold meshes (connectivity is checked against ``base``) or
    bare (V, 3) position arrays.
    """
    shapes = list(shapes)
    if not shapes:
        raise ValueError("empty dataset")
    adj = build_adjacency(base) if adj is None else adj
    raw = []
    for k, s in enumerate(shapes):
        if isinstance(s, Mesh):
            rep = validate_same_connectivity(base, s)
            if not rep:
                raise MeshError("shape %d: %s" % (k, rep.message))
            s = s.positions
        raw.append(raw_features(base, s, adj))
    raw = np.stack(raw)
    params = fit_scaling(raw)
    scaled = apply_scaling(raw, params)
    return FeatureSet(list(scaled), params, reference)


def decode_features(X: np.ndarray, scale_params: np.ndarray) -> np.ndarray:
    """Deformation gradients (V, 3, 3) from scaled feature rows."""
    return features_to_gradients(invert_scaling(np.asarray(X, dtype=np.float64), scale_params))


# -- reconstruction -------------------------------------------------------------

def _solve_anchored(N: sparse.csr_matrix, rhs: np.ndarray, a_idx: int, a_pos: np.ndarray, tol: float):
    V = N.shape[0]
    free = np.ones(V, dtype=bool)
    free[a_idx] = False
    out = np.empty((V, 3))
    out[a_idx] = a_pos
    if V == 1:
        return out
    Nf = N[free]
    Nff = Nf[:, free].tocsc()
    b = rhs[free] - Nf[:, [a_idx]].toarray() * a_pos
    if V < 5000:
        out[free] = splinalg.splu(Nff).solve(b)
        return out
    sol = np.empty_like(b)
    for k in range(3):
        x, info = splinalg.cg(Nff, b[:, k], rtol=tol, atol=0.0, maxiter=10 * V)
        if info != 0:
            res = np.linalg.norm(Nff @ x - b[:, k]) / max(np.linalg.norm(b[:, k]), 1e-300)
            raise ReconstructionError("CG did not converge (column %d, relative residual %.3e)" % (k, res))
        sol[:, k] = x
    out[free] = sol
    return out


def reconstruct_positions(base: Mesh, T: np.ndarray, adj: Adjacency | None = None,
                          anchor: tuple | None = None, tol: float = 1e-10,
                          method: str = "inverse") -> np.ndarray:
    """Deformed positions whose deformation gradients best match ``T``.

    ``method="inverse"`` solves least squares against the exact linear map
    used by :func:`deformation_gradients`, so gradients computed from real
    positions reconstruct those positions exactly. ``method="edge"``
    instead matches every edge to ``0.5 (T_i + T_j)`` applied to the base
    edge (cotangent weighted), a Poisson-style solve that is only exact for
    globally affine deformations.

    The anchor ``(vertex, point)`` fixes translation; it defaults to vertex 0
    at its base position. Meshes under 5000 vertices use a sparse LU solve,
    larger ones conjugate gradients.
    """
    adj = build_adjacency(base) if adj is None else adj
    V = base.n_vertices
    a_idx, a_pos = (0, base.positions[0]) if anchor is None else anchor
    a_pos = np.asarray(a_pos, dtype=np.float64)
    if not 0 <= a_idx < V:
        raise ValueError("anchor vertex %d out of range" % a_idx)
    T = np.asarray(T, dtype=np.float64)
    if method == "inverse":
        G = gradient_operator(base, adj)
        N = (G.T @ G).tocsr()
        # column a of the rhs is G^T applied to row a of every T_i
        rhs = np.column_stack([G.T @ T[:, a, :].ravel() for a in range(3)])
        return _solve_anchored(N, rhs, a_idx, a_pos, tol)
    if method != "edge":
        raise ValueError("unknown reconstruction method %r" % method)
    w = cotangent_weights(base, adj)
    i, j = adj.edges[:, 0], adj.edges[:, 1]
    e = base.positions[i] - base.positions[j]
    target = 0.5 * np.einsum("eab,eb->ea", T[i] + T[j], e)
    L = sparse.coo_matrix(
        (np.concatenate([w, w, -w, -w]), (np.concatenate([i, j, i, j]), np.concatenate([i, j, j, i]))),
        shape=(V, V)).tocsr()
    rhs = np.zeros((V, 3))
    np.add.at(rhs, i, w[:, None] * target)
    np.add.at(rhs, j, -w[:, None] * target)
    return _solve_anchored(L, rhs, a_idx, a_pos, tol)


def reconstruction_energy(base: Mesh, T: np.ndarray, positions: np.ndarray, adj: Adjacency | None = None,
                          method: str = "inverse") -> float:
    """Objective minimized by :func:`reconstruct_positions` for ``method``."""
    adj = build_adjacency(base) if adj is None else adj
    positions = np.asarray(positions, dtype=np.float64)
    if method == "inverse":
        r = deformation_gradients(base, positions, adj) - T
        return float((r * r).sum())
    w = cotangent_weights(base, adj)
    i, j = adj.edges[:, 0], adj.edges[:, 1]
    e = base.positions[i] - base.positions[j]
    r = (positions[i] - positions[j]) - 0.5 * np.einsum("eab,eb->ea", T[i] + T[j], e)
    return float((w * (r * r).sum(axis=1)).sum())


# -- file format ----------------------------------------------------------------

def write_features(fs: FeatureSet) -> bytes:
    V = fs.n_vertices
    head = FEAT_MAGIC + struct.pack("<IIII", FEAT_VERSION, V, N_FEATURES, len(fs.shapes))
    body = np.asarray(fs.scale_params, dtype="<f8").tobytes()
    body += b"".join(np.ascontiguousarray(s, dtype="<f8").tobytes() for s in fs.shapes)
    return head + body


def read_features(data: bytes, reference: str = "") -> FeatureSet:
    n = len(FEAT_MAGIC)
    if data[:n] != FEAT_MAGIC:
        raise ValueError("not a feature file (bad magic)")
    if len(data) < n + 16:
        raise ValueError("truncated feature header")
    version, V, C, M = struct.unpack_from("<IIII", data, n)
    if version != FEAT_VERSION:
        raise ValueError("unsupported feature file version %d" % version)
    if C != N_FEATURES:
        raise ValueError("expected %d feature columns, got %d" % (N_FEATURES, C))
    off = n + 16
    expected = off + 8 * (C * 2 + M * V * C)
    if len(data) != expected:
        raise ValueError("feature file size %d, expected %d" % (len(data), expected))
    params = np.frombuffer(data, dtype="<f8", count=2 * C, offset=off).reshape(C, 2).astype(np.float64)
    off += 16 * C
    arr = np.frombuffer(data, dtype="<f8", count=M * V * C, offset=off).reshape(M, V, C).astype(np.float64)
    return FeatureSet(list(arr), params, reference)


def save_features(fs: FeatureSet, path) -> None:
    with open(path, "wb") as fh:
        fh.write(write_features(fs))


def load_features(path) -> FeatureSet:
    with open(path, "rb") as fh:
        return read_features(fh.read())
