"""Chebyshev spectral graph convolution and elementwise activations.

Feature tensors are ``(V, C)`` or batched ``(B, V, C)``; the graph operator
always acts on the vertex axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

DEFAULT_ORDER = 3


def scale_laplacian(L, lambda_max: float) -> sparse.csr_matrix:
    """Rescale a Laplacian's spectrum from [0, lambda_max] to [-1, 1]."""
    if not lambda_max > 0:
        raise ValueError("lambda_max must be positive, got %r" % lambda_max)
    L = sparse.csr_matrix(L)
    return (L * (2.0 / lambda_max) - sparse.identity(L.shape[0], format="csr")).tocsr()


def _matmul(L, X):
    if X.ndim == 2:
        return L @ X
    B, V, C = X.shape
    Y = L @ X.transpose(1, 0, 2).reshape(V, B * C)
    return Y.reshape(V, B, C).transpose(1, 0, 2)


def cheb_apply(L_tilde, X: np.ndarray, H: int) -> list:
    """``[T_0(L~) X, ..., T_{H-1}(L~) X]`` via the three-term recurrence."""
    X = np.asarray(X, dtype=np.float64)
    out = [X]
    if H > 1:
        out.append(_matmul(L_tilde, X))
    for _ in range(2, H):
        out.append(2.0 * _matmul(L_tilde, out[-1]) - out[-2])
    return out


@dataclass
class ChebLayer:
    """``Y = sum_h T_h(L~) X theta[h]`` with ``theta`` of shape (H, C_in, C_out)."""

    theta: np.ndarray
    L_tilde: sparse.csr_matrix

    @property
    def H(self) -> int:
        return self.theta.shape[0]

    def forward(self, X):
        return gconv_forward(self, X)

    def backward(self, X, dY):
        return gconv_backward(self, X, dY)


def _check(layer: ChebLayer, X):
    if X.shape[-1] != layer.theta.shape[1]:
        raise ValueError("input has %d channels, layer expects %d" % (X.shape[-1], layer.theta.shape[1]))
    if X.shape[-2] != layer.L_tilde.shape[0]:
        raise ValueError("input has %d vertices, operator has %d" % (X.shape[-2], layer.L_tilde.shape[0]))


def gconv_forward(layer: ChebLayer, X: np.ndarray, basis: list | None = None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    _check(layer, X)
    basis = cheb_apply(layer.L_tilde, X, layer.H) if basis is None else basis
    Y = basis[0] @ layer.theta[0]
    for h in range(1, layer.H):
        Y = Y + basis[h] @ layer.theta[h]
    return Y


def gconv_backward(layer: ChebLayer, X: np.ndarray, dY: np.ndarray, basis: list | None = None):
    """Return ``(dX, dtheta)`` for upstream gradient ``dY``.

    Uses the symmetry of ``T_h(L~)`` so the input gradient is another
    Chebyshev expansion, this time of ``dY theta[h]^T``.
    """
    X = np.asarray(X, dtype=np.float64)
    _check(layer, X)
    if dY.shape[:-1] != X.shape[:-1] or dY.shape[-1] != layer.theta.shape[2]:
        raise ValueError("upstream gradient shape %s does not match output" % (dY.shape,))
    basis = cheb_apply(layer.L_tilde, X, layer.H) if basis is None else basis
    C_in, C_out = layer.theta.shape[1:]
    dtheta = np.stack([b.reshape(-1, C_in).T @ dY.reshape(-1, C_out) for b in basis])
    # Clenshaw summation of sum_h T_h(L~) (dY theta_h^T)
    G = [dY @ layer.theta[h].T for h in range(layer.H)]
    b1 = np.zeros_like(X)
    b2 = np.zeros_like(X)
    for h in range(layer.H - 1, 0, -1):
        b1, b2 = G[h] + 2.0 * _matmul(layer.L_tilde, b1) - b2, b1
    dX = G[0] + _matmul(layer.L_tilde, b1) - b2
    return dX, dtheta


# -- activations ------------------------------------------------------------------

def activation(kind: str, X: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(X)
    if kind == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * X))
    if kind == "linear":
        return X
    raise ValueError("unknown activation %r" % kind)


def activation_backward(kind: str, Y: np.ndarray, dY: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the pre-activation, given the activation output ``Y``."""
    if kind == "tanh":
        return dY * (1.0 - Y * Y)
    if kind == "sigmoid":
        return dY * Y * (1.0 - Y)
    if kind == "linear":
        return dY
    raise ValueError("unknown activation %r" % kind)
