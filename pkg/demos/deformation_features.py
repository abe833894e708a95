"""
Rotation-invariant deformation features
=======================================

Encode a few deformed cylinders as per-vertex 9-vectors (rotation
axis-angle plus symmetric stretch), then rebuild the geometry from them.
"""

import numpy as np

from meshvae import features as F
from meshvae import shapes, toydata

base = toydata.base_cylinder()
P0 = base.positions
print("base cylinder: %d vertices, %d faces" % (base.n_vertices, len(base.faces)))

deformed = {
    "bend": shapes.bend(P0, 1.2),
    "twist": shapes.twist(P0, 1.5),
    "taper": shapes.taper(P0, 0.6),
}
fs = F.encode_features(base, list(deformed.values()))
print("feature array:", fs.array.shape, "values in [%.3f, %.3f]" % (fs.array.min(), fs.array.max()))

# columns 0-2 are the rotation log, 3-8 the upper triangle of S
raw = F.invert_scaling(fs.array, fs.scale_params)
for name, r in zip(deformed, raw):
    print("%-6s max |rotation| %.3f   max |S - I| %.3f" % (
        name, np.linalg.norm(r[:, :3], axis=1).max(), np.abs(r[:, [3, 6, 8]] - 1).max()))

# decode and reconstruct; anchor vertex 0 to its true position
diag = base.bbox_diagonal()
for (name, P), x in zip(deformed.items(), fs.shapes):
    T = F.decode_features(x, fs.scale_params)
    R = F.reconstruct_positions(base, T, anchor=(0, P[0]))
    print("%-6s reconstruction error %.2e x diagonal" % (name, np.abs(R - P).max() / diag))

# S ignores rigid motion; the rotation part only ignores translation
Q = shapes.rotation_matrix([1, 1, 0], 0.7)
a = F.raw_features(base, deformed["bend"])
b = F.raw_features(base, deformed["bend"] @ Q.T + [3.0, -1.0, 0.5])
c = F.raw_features(base, deformed["bend"] + [3.0, -1.0, 0.5])
print("after rotate+translate: S change %.1e, rotation change %.2f" % (
    np.abs(a[:, 3:] - b[:, 3:]).max(), np.abs(a[:, :3] - b[:, :3]).max()))
print("after translate only:   any change %.1e" % np.abs(a - c).max())
