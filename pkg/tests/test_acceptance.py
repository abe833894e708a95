"""End-to-end acceptance criteria, one test per criterion.

Each test appends a PASS/FAIL line to ``RESULTS``; the conftest hook prints
them in the terminal summary.
"""

import os
import shutil
import time

import numpy as np
import pytest
from scipy import sparse

from meshvae import apps, shapes, simplify, toydata
from meshvae import features as F
from meshvae import pooling as pl
from meshvae import vae
from meshvae.gconv import ChebLayer, activation, activation_backward, gconv_backward, gconv_forward

from test_gconv import graph_tilde, random_graph
from test_simplify import naive_error, random_sphere, resort_choice

RESULTS = []


def record(name, ok, detail, seconds, limit):
    timed = seconds <= limit
    status = "PASS" if ok and timed else "FAIL"
    RESULTS.append("%s  %-34s %s  [%.1f s, limit %g s]" % (status, name, detail, seconds, limit))
    assert ok, detail
    assert timed, "%s took %.1f s (limit %g s)" % (name, seconds, limit)


def numeric_grad(f, x, h=1e-5):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel(a, b):
    return float(np.abs(a - b).max() / max(np.abs(b).max(), 1e-300))


# -- 1, 2 ---------------------------------------------------------------------------

@pytest.mark.parametrize("V,expected", [(6890, 7_941_042), (3573, 4_118_706)])
def test_c1_parameter_count(V, expected):
    t0 = time.perf_counter()
    params = vae.init_params(vae.ArchSpec(), [V, simplify.coarse_size(V)])
    got = vae.count_parameters(params)
    record("1 parameter count V=%d" % V, got == expected, "got %d, expected %d" % (got, expected),
           time.perf_counter() - t0, 1.0)


@pytest.mark.parametrize("V,expected", [(6890, 3446), (3573, 1787)])
def test_c2_hierarchy_sizes(V, expected):
    mesh = shapes.fibonacci_sphere(V)
    t0 = time.perf_counter()
    hier = simplify.build_hierarchy(mesh, 1)
    dt = time.perf_counter() - t0
    model = vae.MeshVAE(vae.init_params(vae.ArchSpec(), hier.sizes), vae.GraphOperators.from_hierarchy(hier))
    n = vae.count_parameters(model)
    ok = hier.sizes == [V, expected] and n == 2 * expected * 9 * 128 + 1458
    record("2 hierarchy V=%d" % V, ok, "sizes %s, built-model parameters %d" % (hier.sizes, n), dt, 30.0)


# -- 3a-f ---------------------------------------------------------------------------

def test_c3a_gradient_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    errs = {}

    Lt = graph_tilde(rng, 8)
    theta = rng.normal(size=(3, 2, 3))
    X = rng.normal(size=(8, 2))
    W = rng.normal(size=(8, 3))
    dX, dth = gconv_backward(ChebLayer(theta, Lt), X, W)
    errs["gconv input"] = rel(dX, numeric_grad(lambda: float((gconv_forward(ChebLayer(theta, Lt), X) * W).sum()), X))
    errs["gconv theta"] = rel(dth, numeric_grad(lambda: float((gconv_forward(ChebLayer(theta, Lt), X) * W).sum()), theta))

    op = pl.build_pool_operator(np.array([0, 1, 0, 2, 1, 1, 2]))
    Xp, Wp = rng.normal(size=(7, 2)), rng.normal(size=(3, 2))
    errs["pool"] = rel(pl.pool_backward(op, Wp), numeric_grad(lambda: float((pl.pool(op, Xp) * Wp).sum()), Xp))
    Yd, Wd = rng.normal(size=(3, 2)), rng.normal(size=(7, 2))
    errs["depool"] = rel(pl.depool_backward(op, Wd), numeric_grad(lambda: float((pl.depool(op, Yd) * Wd).sum()), Yd))

    for kind in ("tanh", "sigmoid", "linear"):
        x, w = rng.normal(size=10), rng.normal(size=10)
        errs[kind] = rel(activation_backward(kind, activation(kind, x), w),
                         numeric_grad(lambda: float((activation(kind, x) * w).sum()), x))

    A, xin, wout = rng.normal(size=(6, 4)), rng.normal(size=(3, 6)), rng.normal(size=(3, 4))
    errs["fc"] = rel(xin.T @ wout, numeric_grad(lambda: float(((xin @ A) * wout).sum()), A))

    mu, sig = rng.normal(size=5), rng.uniform(0.1, 0.9, size=5)
    errs["kl mu"] = rel(mu, numeric_grad(lambda: float(vae.kl_divergence(mu, sig)), mu))
    errs["kl sigma"] = rel(sig - 1 / sig, numeric_grad(lambda: float(vae.kl_divergence(mu, sig)), sig))

    hier = simplify.build_hierarchy(shapes.icosahedron(), 1)
    model = vae.build_model(hier, vae.ArchSpec("CCPC", latent=8), seed=1)
    Xm = rng.uniform(-0.9, 0.9, size=(2, 12, 9))
    eps = rng.normal(size=(2, 8))
    _, G = model.loss_and_grads(Xm, eps, 0.3)
    f = lambda: model.loss_and_grads(Xm, eps, 0.3, grads=False)[0]["loss"]
    for name, t in model.params.tensors.items():
        errs["model " + name] = rel(G[name], numeric_grad(f, t))

    worst = max(errs, key=errs.get)
    record("3a gradient suite", errs[worst] < 1e-5,
           "max rel err %.2e (%s), %d checks" % (errs[worst], worst, len(errs)), time.perf_counter() - t0, 60.0)


def test_c3b_spectral_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(20):
        Lt = graph_tilde(rng, 10)
        lam, U = np.linalg.eigh(Lt.toarray())
        X = rng.normal(size=(10, 3))
        theta = rng.normal(size=(3, 3, 2))
        Tl = np.polynomial.chebyshev.chebvander(lam, 2)
        dense = sum(U @ np.diag(Tl[:, h]) @ U.T @ X @ theta[h] for h in range(3))
        worst = max(worst, float(np.abs(gconv_forward(ChebLayer(theta, Lt), X) - dense).max()))
    record("3b spectral oracle", worst < 1e-10, "max abs err %.2e over 20 graphs" % worst,
           time.perf_counter() - t0, 10.0)


def test_c3c_pooling_algebra():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    _, cmap = simplify.simplify_to(shapes.icosphere(3), 322)
    ops = [pl.build_pool_operator(cmap)]
    ops += [pl.build_pool_operator(rng.permutation(np.repeat(np.arange(n), rng.integers(1, 12, n))), n)
            for n in (5, 17, 40)]
    row_err, exact, comp = 0.0, True, 0.0
    for op in ops:
        k = op.P.shape[0]
        row_err = max(row_err, float(np.abs(np.asarray(op.P.sum(axis=1)).ravel() - 1).max()))
        exact &= (op.P @ op.Dp != sparse.identity(k)).nnz == 0
        for _ in range(25):
            Y = rng.normal(size=(k, 9))
            comp = max(comp, float(np.abs(pl.pool(op, pl.depool(op, Y)) - Y).max()))
    ok = row_err <= 1e-15 and exact and comp <= 1e-14
    record("3c pooling algebra", ok,
           "row-sum err %.1e, P*Dp==I %s, pool(depool) err %.1e (100 matrices)" % (row_err, exact, comp),
           time.perf_counter() - t0, 10.0)


def test_c3d_simplification_oracle():
    t0 = time.perf_counter()
    worst, n_checks = 0.0, 0
    mesh = random_sphere(20, seed=3)

    def trace(col, edge):
        nonlocal worst, n_checks
        for i, j in col.live_edges():
            v = col._cache[(i, j)][1]
            worst = max(worst, abs(col.cached_error(i, j) - naive_error(mesh, col, i, j, v, 0.001)))
            n_checks += 1

    simplify.simplify_to(mesh, 8, 0.001, trace=trace)
    mismatches = []
    for m in (random_sphere(50, 1), random_sphere(100, 2), shapes.icosphere(1)):
        def order_trace(col, edge):
            if edge != resort_choice(col):
                mismatches.append(edge)

        simplify.simplify_to(m, simplify.coarse_size(m.n_vertices), 0.0, trace=order_trace)
    ok = worst <= 1e-12 and not mismatches
    record("3d simplification oracle", ok,
           "max err %.1e over %d edge checks, %d order mismatches" % (worst, n_checks, len(mismatches)),
           time.perf_counter() - t0, 60.0)


def test_c3e_feature_roundtrip():
    t0 = time.perf_counter()
    base = toydata.base_cylinder()
    P0 = base.positions
    deformations = [
        shapes.bend(P0, 1.2),
        shapes.twist(P0, 1.5),
        shapes.taper(P0, 0.6),
        shapes.bend_region(shapes.twist(P0, -0.8), 1.0, 0.5, 1.5, azimuth=0.7),
        P0 @ np.diag([1.3, 0.8, 1.1]) @ shapes.rotation_matrix([1, 2, 3], 0.9).T,
    ]
    fs = F.encode_features(base, deformations)
    diag = base.bbox_diagonal()
    worst = 0.0
    for P, x in zip(deformations, fs.shapes):
        T = F.decode_features(x, fs.scale_params)
        R = F.reconstruct_positions(base, T, anchor=(0, P[0]))
        worst = max(worst, float(np.abs(R - P).max()) / diag)
    record("3e feature roundtrip", worst < 1e-6, "max error %.1e x bbox diagonal (V=%d)" % (worst, base.n_vertices),
           time.perf_counter() - t0, 60.0)


OVERFIT_BATCH = 4


def test_c3f_overfit():
    t0 = time.perf_counter()
    base, meshes = toydata.bent_cylinders()
    hier = simplify.build_hierarchy(base, 1)
    fs = F.encode_features(base, meshes)
    X = fs.array
    model = vae.build_model(hier, "CCPC", seed=0)
    log = vae.train(model, X, vae.TrainConfig(epochs=2000, seed=0, batch_size=OVERFIT_BATCH))
    Xh = np.stack([model.reconstruct(x) for x in X])
    mse = float(((Xh - X) ** 2).mean())
    diag = base.bbox_diagonal()
    rms = []
    for m, x in zip(meshes, Xh):
        P = F.reconstruct_positions(base, F.decode_features(x, fs.scale_params), anchor=(0, m.positions[0]))
        rms.append(apps.rms_error(P, m.positions)[0] / diag)
    rms = float(np.mean(rms))
    dt = time.perf_counter() - t0
    ok = mse < 1e-3 and rms < 0.02 and log[99].total < log[0].total
    record("3f overfit", ok,
           "MSE %.2e, RMS %.2f%% of diag, loss@1 %.4g > loss@100 %.4g" % (mse, 100 * rms, log[0].total, log[99].total),
           dt, 600.0)


# -- 4-7 -----------------------------------------------------------------------------

def max_edge_length(mesh):
    adj = simplify.build_adjacency(mesh)
    e = adj.edges
    return float(np.linalg.norm(mesh.positions[e[:, 0]] - mesh.positions[e[:, 1]], axis=1).max())


def test_c4_max_edge_length():
    t0 = time.perf_counter()
    mesh = shapes.graded_grid(12, 10.0)
    target = simplify.coarse_size(mesh.n_vertices)
    with_len = simplify.simplify_to(mesh, target, 0.001 * mesh.bbox_diagonal()).mesh
    plain = simplify.simplify_to(mesh, target, 0.0).mesh
    a, b = max_edge_length(with_len), max_edge_length(plain)
    record("4 max edge length", a <= b, "lambda=0.001 (normalized): %.4f, lambda=0: %.4f" % (a, b),
           time.perf_counter() - t0, 10.0)


def _project(root, base, meshes, labels=None, extra=""):
    toydata.write_dataset(os.path.join(root, "data"), base, meshes, labels)
    path = os.path.join(root, "run.ini")
    with open(path, "w") as fh:
        fh.write("[data]\ndataset_dir = data\n[run]\nout = out\nseed = 3\n" + extra)
    return path


def test_c5_train_determinism(tmp_path):
    t0 = time.perf_counter()
    base, meshes = toydata.bent_cylinders(n=6)
    cfg = _project(str(tmp_path), base, meshes, extra="[train]\nepochs = 100\nbatch_size = 2\nmax_steps = 10\n")
    for cmd in ("hierarchy", "features", "train"):
        assert apps.main([cmd, "--config", cfg]) == 0
    first = open(tmp_path / "out" / "model.ckpt", "rb").read()
    os.remove(tmp_path / "out" / "model.ckpt")
    assert apps.main(["train", "--config", cfg]) == 0
    second = open(tmp_path / "out" / "model.ckpt", "rb").read()
    steps = sum(1 for _ in open(tmp_path / "out" / "loss.tsv"))
    record("5 train determinism", first == second,
           "checkpoints %s after 10 steps (%d bytes, %d loss rows)" % ("identical" if first == second else "DIFFER",
                                                                  len(first), steps),
           time.perf_counter() - t0, 60.0)


def test_c6_interpolation_endpoints(tmp_path):
    t0 = time.perf_counter()
    base, meshes = toydata.bent_cylinders(n=4, rings=12, segments=12)
    cfg_path = _project(str(tmp_path), base, meshes, extra="[arch]\nlatent = 16\n[train]\nepochs = 20\n")
    for cmd in ("hierarchy", "features", "train"):
        assert apps.main([cmd, "--config", cfg_path]) == 0
    cfg = apps.load_config(cfg_path)
    frames = apps.cmd_interpolate(cfg, "shape_000.obj", "shape_003.obj", steps=5)
    ws = apps.open_workspace(cfg)
    ok = True
    for frame, name in ((frames[0], "shape_000.obj"), (frames[-1], "shape_003.obj")):
        k = ws.index.lookup(name)
        mu = ws.model.encode(ws.features.array[k]).mean
        direct = F.reconstruct_positions(ws.base, F.decode_features(ws.model.decode(mu), ws.features.scale_params))
        ok &= np.array_equal(frame, direct)
    written = sorted(os.listdir(tmp_path / "out" / "interpolate"))
    record("6 interpolation endpoints", ok and len(written) == 5,
           "frames 0 and 4 %s direct decode" % ("bit-identical to" if ok else "DIFFER from"),
           time.perf_counter() - t0, 30.0)


def test_c7_conditional_separation(tmp_path):
    t0 = time.perf_counter()
    base, meshes, labels = toydata.two_class_cylinders()
    hier = simplify.build_hierarchy(base, 1)
    X = F.encode_features(base, meshes).array
    model = vae.build_model(hier, vae.ArchSpec("CCPC", condition_dim=2), seed=0)
    vae.train(model, X, vae.TrainConfig(epochs=200, seed=0), conditions=apps.one_hot(labels, 2))
    z = np.random.default_rng(0).standard_normal(model.arch.latent)
    a = model.decode(z, [1.0, 0.0])
    b = model.decode(z, [0.0, 1.0])
    diff = float(np.abs(a - b).mean())
    record("7 conditional separation", diff > 0.05, "mean |X(c=0) - X(c=1)| = %.4f (threshold 0.05)" % diff,
           time.perf_counter() - t0, 300.0)
