"""Average pooling and copy de-pooling driven by a contraction map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .simplify import ContractionMap


@dataclass(frozen=True)
class PoolOperator:
    fine_count: int
    coarse_count: int
    parent: np.ndarray
    cluster_members: tuple
    P: sparse.csr_matrix  # coarse x fine, row-stochastic
    Dp: sparse.csr_matrix  # fine x coarse, one 1 per row


def build_pool_operator(cmap: ContractionMap | np.ndarray, coarse_count: int | None = None) -> PoolOperator:
    """Pool operator from a contraction map (or a bare ``parent`` array).

    Each coarse vertex averages every fine vertex that was merged into it,
    including chains of contractions.
    """
    if isinstance(cmap, ContractionMap):
        parent, coarse_count = np.asarray(cmap.parent), cmap.coarse_count
    else:
        parent = np.asarray(cmap)
        if coarse_count is None:
            coarse_count = int(parent.max()) + 1 if parent.size else 0
    parent = parent.astype(np.int64)
    fine = len(parent)
    if fine and (parent.min() < 0 or parent.max() >= coarse_count):
        raise ValueError("parent index out of range [0, %d)" % coarse_count)
    sizes = np.bincount(parent, minlength=coarse_count)
    if (sizes == 0).any():
        raise ValueError("coarse vertex %d has no fine members" % int(np.argmax(sizes == 0)))
    members = _cluster_members(parent, coarse_count)
    cols = np.arange(fine)
    P = sparse.csr_matrix((_cluster_weights(parent, members, sizes), (parent, cols)), shape=(coarse_count, fine))
    Dp = sparse.csr_matrix((np.ones(fine), (cols, parent)), shape=(fine, coarse_count))
    parent.setflags(write=False)
    return PoolOperator(fine, coarse_count, parent, members, P, Dp)


_UNIT = 2.0 ** -52


def _cluster_weights(parent, members, sizes) -> np.ndarray:
    """Per-fine-vertex averaging weight, each within 2**-52 of ``1/size``.

    Weights are integer multiples of 2**-52 whose cluster total is exactly
    2**52 units, so any partial sum is representable and every row of ``P``
    (and of ``P @ Dp``) sums to exactly 1 regardless of summation order.
    """
    w = np.empty(len(parent))
    total = 2 ** 52
    for c, group in enumerate(members):
        n = int(sizes[c])
        q, r = divmod(total, n)
        units = np.full(n, q, dtype=np.int64)
        units[:r] += 1
        w[list(group)] = units * _UNIT
    return w


def _cluster_members(parent, coarse_count):
    order = np.argsort(parent, kind="stable")
    splits = np.cumsum(np.bincount(parent, minlength=coarse_count))[:-1]
    return tuple(tuple(g.tolist()) for g in np.split(order, splits))


def _check_rows(X, n, what):
    if X.shape[-2] != n:
        raise ValueError("%s expects %d rows, got %d" % (what, n, X.shape[-2]))


def _apply(M: sparse.csr_matrix, X: np.ndarray) -> np.ndarray:
    # X is (V, C) or batched (B, V, C)
    if X.ndim == 2:
        return M @ X
    B, V, C = X.shape
    Y = M @ X.transpose(1, 0, 2).reshape(V, B * C)
    return Y.reshape(M.shape[0], B, C).transpose(1, 0, 2)


def pool(op: PoolOperator, X: np.ndarray) -> np.ndarray:
    """Average fine-vertex rows into their coarse vertex: ``P @ X``."""
    X = np.asarray(X, dtype=np.float64)
    _check_rows(X, op.fine_count, "pool")
    return _apply(op.P, X)


def depool(op: PoolOperator, Y: np.ndarray) -> np.ndarray:
    """Copy each coarse row to all of its fine members: ``Dp @ Y``."""
    Y = np.asarray(Y, dtype=np.float64)
    _check_rows(Y, op.coarse_count, "depool")
    return Y[..., op.parent, :]


def pool_backward(op: PoolOperator, dY: np.ndarray) -> np.ndarray:
    _check_rows(dY, op.coarse_count, "pool_backward")
    return _apply(op.P.T.tocsr(), dY)


def depool_backward(op: PoolOperator, dX: np.ndarray) -> np.ndarray:
    _check_rows(dX, op.fine_count, "depool_backward")
    return _apply(op.Dp.T.tocsr(), dX)


def transpose_backprop(op: PoolOperator, upstream: np.ndarray, which: str = "pool") -> np.ndarray:
    """Gradient through ``pool`` (``P^T g``) or ``depool`` (``Dp^T g``)."""
    if which == "pool":
        return pool_backward(op, upstream)
    if which == "depool":
        return depool_backward(op, upstream)
    raise ValueError("which must be 'pool' or 'depool'")
