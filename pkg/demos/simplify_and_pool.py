"""
Simplification hierarchy and mesh pooling
=========================================

Halve a sphere twice with the edge-length-aware quadric simplifier, then
push a per-vertex signal down the hierarchy and back up again.
"""

import numpy as np

from meshvae import shapes, simplify
from meshvae import pooling as pl

# an icosphere with 642 vertices
mesh = shapes.icosphere(3)
hier = simplify.build_hierarchy(mesh, num_levels=2)
print("vertex counts:", " -> ".join(str(n) for n in hier.sizes))

# each contraction map says which coarse vertex absorbed each fine vertex
ops = [pl.build_pool_operator(cmap) for cmap in hier.maps]
for op in ops:
    sizes = np.bincount(op.parent, minlength=op.coarse_count)
    print("level %d -> %d: clusters of size %d..%d" % (op.fine_count, op.coarse_count, sizes.min(), sizes.max()))

# a smooth signal: height above the equator
signal = mesh.positions[:, 2:3]
coarse = pl.pool(ops[1], pl.pool(ops[0], signal))
back = pl.depool(ops[0], pl.depool(ops[1], coarse))
print("pooled signal range: %.3f .. %.3f" % (coarse.min(), coarse.max()))
print("mean abs change after pool/depool round trip: %.4f" % np.abs(back - signal).mean())

# pooling after depooling is the identity, exactly
Y = np.random.default_rng(0).normal(size=(ops[0].coarse_count, 9))
print("max |pool(depool(Y)) - Y| =", np.abs(pl.pool(ops[0], pl.depool(ops[0], Y)) - Y).max())

# the edge-length term keeps coarse triangles even on graded input
grid = shapes.graded_grid(12, 10.0)
target = simplify.coarse_size(grid.n_vertices)
for lam in (0.0, 0.001):
    coarse_mesh = simplify.simplify_to(grid, target, lam * grid.bbox_diagonal()).mesh
    adj = simplify.build_adjacency(coarse_mesh)
    e = coarse_mesh.positions[adj.edges]
    print("lambda=%g: longest coarse edge %.3f" % (lam, np.linalg.norm(e[:, 0] - e[:, 1], axis=1).max()))
