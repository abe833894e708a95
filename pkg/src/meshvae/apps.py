"""Command-line pipeline and the generative applications built on a trained model.

The pipeline is driven by an INI-style run configuration::

    [data]
    dataset_dir = shapes/
    reference = reference.obj

    [hierarchy]
    lam = 0.001
    levels = 1

    [arch]
    layers = CCPC
    conditional = false

    [train]
    epochs = 200

    [run]
    out = run/
    seed = 0

Every subcommand reads and writes a fixed layout inside the output
directory: ``hierarchy/``, ``features.bin`` with its ``shapes.tsv`` index,
``model.ckpt`` and ``loss.tsv``, then ``generate/``, ``interpolate/``,
``embedding.tsv`` and ``eval.tsv``.
"""

from __future__ import annotations

import argparse
import configparser
import glob
import logging
import os
import sys
from dataclasses import dataclass, field, fields

import numpy as np

from . import features as feat
from . import vae
from .mesh import Mesh, MeshError, build_adjacency, load_obj, save_obj, validate_same_connectivity
from .simplify import DEFAULT_LAMBDA, SimplificationStalled, build_hierarchy, load_hierarchy, save_hierarchy

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3


class ConfigError(ValueError):
    """Bad or inconsistent run configuration, or unusable input files."""


# -- configuration ---------------------------------------------------------------

def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("not a boolean: %r" % text)


def _opt_int(text: str):
    t = text.strip().lower()
    return None if t in ("", "none", "full") else int(t)


# section -> key -> (RunConfig field, parser)
_SCHEMA = {
    "data": {
        "dataset_dir": ("dataset_dir", str),
        "reference": ("reference", str),
        "labels": ("labels", str),
    },
    "hierarchy": {
        "lam": ("lam", float),
        "levels": ("levels", int),
        "normalize": ("normalize", _bool),
    },
    "arch": {
        "layers": ("layers", str),
        "width": ("width", int),
        "latent": ("latent", int),
        "h": ("H", int),
        "conditional": ("conditional", _bool),
    },
    "train": {
        "alpha": ("alpha", float),
        "lr": ("lr", float),
        "beta1": ("beta1", float),
        "beta2": ("beta2", float),
        "eps": ("eps", float),
        "l2": ("l2", float),
        "epochs": ("epochs", int),
        "batch_size": ("batch_size", _opt_int),
        "max_steps": ("max_steps", _opt_int),
    },
    "run": {
        "out": ("out", str),
        "seed": ("seed", int),
    },
}


@dataclass
class RunConfig:
    dataset_dir: str = ""
    reference: str = "reference.obj"
    labels: str = "labels.tsv"
    lam: float = DEFAULT_LAMBDA
    levels: int = 1
    normalize: bool = False
    layers: str = "CCPC"
    width: int = 9
    latent: int = 128
    H: int = 3
    conditional: bool = False
    alpha: float = 0.3
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    l2: float = 1e-5
    epochs: int = 100
    batch_size: int | None = None
    max_steps: int | None = None
    out: str = "run"
    seed: int = 0
    source: str = field(default="", repr=False)

    @property
    def reference_path(self) -> str:
        return os.path.join(self.dataset_dir, self.reference)

    @property
    def labels_path(self) -> str:
        return os.path.join(self.dataset_dir, self.labels)

    def arch(self, condition_dim: int = 0) -> vae.ArchSpec:
        return vae.ArchSpec(self.layers, self.width, self.latent, self.H, condition_dim)

    def train_config(self) -> vae.TrainConfig:
        return vae.TrainConfig(self.alpha, self.lr, self.beta1, self.beta2, self.eps, self.l2,
                               self.epochs, self.batch_size, self.seed)

    # output layout
    def path(self, *parts) -> str:
        return os.path.join(self.out, *parts)


def parse_config(text: str, base_dir: str = ".") -> RunConfig:
    """Parse configuration text; relative paths resolve against ``base_dir``.

    Unknown sections or keys raise :class:`ConfigError`, as do missing
    dataset directories and reference meshes.
    """
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("cannot parse configuration: %s" % exc) from None
    values = {}
    for section in cp.sections():
        schema = _SCHEMA.get(section.lower())
        if schema is None:
            raise ConfigError("unknown section [%s]" % section)
        for key, raw in cp.items(section):
            if key not in schema:
                raise ConfigError("unknown key %r in [%s]" % (key, section))
            name, conv = schema[key]
            try:
                values[name] = conv(raw)
            except ValueError as exc:
                raise ConfigError("[%s] %s: %s" % (section, key, exc)) from None
    cfg = RunConfig(**values)
    for name in ("dataset_dir", "out"):
        value = getattr(cfg, name)
        if value and not os.path.isabs(value):
            setattr(cfg, name, os.path.normpath(os.path.join(base_dir, value)))
    if not cfg.dataset_dir:
        raise ConfigError("[data] dataset_dir is required")
    if not os.path.isdir(cfg.dataset_dir):
        raise ConfigError("dataset directory %s does not exist" % cfg.dataset_dir)
    if not os.path.isfile(cfg.reference_path):
        raise ConfigError("reference mesh %s does not exist" % cfg.reference_path)
    try:
        cfg.arch()
        cfg.train_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.levels < 0:
        raise ConfigError("[hierarchy] levels must be >= 0")
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("cannot read configuration %s: %s" % (path, exc.strerror)) from None
    cfg = parse_config(text, os.path.dirname(os.path.abspath(path)))
    cfg.source = str(path)
    return cfg


def config_fields() -> list[str]:
    return [f.name for f in fields(RunConfig) if f.name != "source"]


# -- dataset helpers -----------------------------------------------------------------

def dataset_files(cfg: RunConfig) -> list[str]:
    """Sorted OBJ file names in the dataset directory (reference included)."""
    return sorted(os.path.basename(p) for p in glob.glob(os.path.join(cfg.dataset_dir, "*.obj")))


def read_labels(path) -> dict:
    labels = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ConfigError("%s:%d: expected 'name<TAB>label'" % (path, lineno))
            try:
                labels[parts[0]] = int(parts[1])
            except ValueError:
                raise ConfigError("%s:%d: label must be an integer" % (path, lineno)) from None
    return labels


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError("label out of range [0, %d)" % n_classes)
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


@dataclass
class ShapeIndex:
    """Names (and labels, -1 when absent) of the shapes in ``features.bin``, in order."""

    names: list
    labels: np.ndarray

    @property
    def labeled(self) -> np.ndarray:
        return np.flatnonzero(self.labels >= 0)

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def lookup(self, key: str) -> int:
        if key in self.names:
            return self.names.index(key)
        try:
            k = int(key)
        except ValueError:
            raise ConfigError("unknown shape %r" % key) from None
        if not 0 <= k < len(self.names):
            raise ConfigError("shape index %d out of range [0, %d)" % (k, len(self.names)))
        return k


def write_shape_index(index: ShapeIndex, path) -> None:
    with open(path, "w") as fh:
        for k, (name, lab) in enumerate(zip(index.names, index.labels)):
            fh.write("%d\t%s\t%d\n" % (k, name, lab))


def read_shape_index(path) -> ShapeIndex:
    names, labels = [], []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                _, name, lab = line.rstrip("\n").split("\t")
                names.append(name)
                labels.append(int(lab))
    return ShapeIndex(names, np.array(labels, dtype=np.int64))


@dataclass
class Workspace:
    """Everything a trained run needs for the applications."""

    cfg: RunConfig
    hierarchy: object
    model: vae.MeshVAE
    features: feat.FeatureSet
    index: ShapeIndex

    @property
    def base(self) -> Mesh:
        return self.hierarchy.levels[0][0]

    @property
    def conditional(self) -> bool:
        return self.model.arch.condition_dim > 0

    def usable(self) -> np.ndarray:
        """Shapes the model can encode: all of them, or the labeled ones if conditional."""
        return self.index.labeled if self.conditional else np.arange(len(self.index.names))

    def conditions(self, idx):
        if not self.conditional:
            return None
        labels = self.index.labels[np.atleast_1d(idx)]
        if (labels < 0).any():
            k = int(np.atleast_1d(idx)[np.argmax(labels < 0)])
            raise ConfigError("shape %s has no label; the model is conditional" % self.index.names[k])
        return one_hot(labels, self.model.arch.condition_dim)


def _load_hierarchy(cfg: RunConfig):
    d = cfg.path("hierarchy")
    if not os.path.isfile(os.path.join(d, "hierarchy.json")):
        raise ConfigError("no hierarchy in %s; run the hierarchy command first" % d)
    try:
        return load_hierarchy(d)
    except (OSError, ValueError) as exc:
        raise ConfigError("cannot load hierarchy from %s: %s" % (d, exc)) from None


def _load_features(cfg: RunConfig):
    path = cfg.path("features.bin")
    try:
        fs = feat.load_features(path)
        index = read_shape_index(cfg.path("shapes.tsv"))
    except (OSError, ValueError) as exc:
        raise ConfigError("cannot load features from %s: %s" % (path, exc)) from None
    if len(index.names) != len(fs.shapes):
        raise ConfigError("shapes.tsv lists %d shapes, feature file has %d" % (len(index.names), len(fs.shapes)))
    return fs, index


def open_workspace(cfg: RunConfig, checkpoint: str | None = None) -> Workspace:
    hier = _load_hierarchy(cfg)
    fs, index = _load_features(cfg)
    path = checkpoint or cfg.path("model.ckpt")
    try:
        model = vae.load_model(path, hier)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError("cannot load checkpoint %s: %s" % (path, exc)) from None
    if fs.n_vertices != model.n_vertices:
        raise ConfigError("features have %d vertices, model expects %d" % (fs.n_vertices, model.n_vertices))
    return Workspace(cfg, hier, model, fs, index)


def features_to_positions(X: np.ndarray, scale_params: np.ndarray, base: Mesh, adj=None) -> np.ndarray:
    """Scaled features of one shape to vertex positions, anchored at vertex 0."""
    return feat.reconstruct_positions(base, feat.decode_features(X, scale_params), adj)


def decode_positions(ws: Workspace, z: np.ndarray, cond=None) -> list:
    """Decode latent codes (n, latent) and reconstruct each shape's positions.

    Codes are decoded one at a time: batched BLAS products may round
    differently, and a frame must not depend on its neighbours.
    """
    z = np.atleast_2d(z)
    cond = None if cond is None else np.atleast_2d(cond)
    adj = ws.hierarchy.levels[0][1]
    out = []
    for k in range(len(z)):
        x = ws.model.decode(z[k], None if cond is None else cond[k])
        out.append(features_to_positions(x, ws.features.scale_params, ws.base, adj))
    return out


def encode_means(ws: Workspace, idx) -> np.ndarray:
    """Encoder means of dataset shapes ``idx``, one shape per forward pass."""
    idx = np.atleast_1d(idx)
    conds = ws.conditions(idx)
    return np.stack([ws.model.encode(ws.features.array[k], None if conds is None else conds[j]).mean
                     for j, k in enumerate(idx)])


def mean_vertex_distance(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b), axis=1).mean())


def rms_error(pred: np.ndarray, truth: np.ndarray) -> tuple[float, float]:
    """RMS vertex distance, as given and after aligning centroids."""
    pred, truth = np.asarray(pred, float), np.asarray(truth, float)
    diff = pred - truth
    raw = float(np.sqrt((diff * diff).sum(axis=1).mean()))
    diff -= diff.mean(axis=0)
    aligned = float(np.sqrt((diff * diff).sum(axis=1).mean()))
    return raw, aligned


# -- commands ----------------------------------------------------------------------

def cmd_hierarchy(cfg: RunConfig):
    try:
        ref = load_obj(cfg.reference_path)
    except OSError as exc:
        raise ConfigError("cannot read reference mesh %s: %s" % (cfg.reference_path, exc.strerror)) from None
    hier = build_hierarchy(ref, cfg.levels, cfg.lam, normalize=cfg.normalize)
    save_hierarchy(hier, cfg.path("hierarchy"))
    print(" → ".join(str(s) for s in hier.sizes))
    return hier


def cmd_features(cfg: RunConfig):
    names = dataset_files(cfg)
    if not names:
        raise ConfigError("no OBJ files in %s" % cfg.dataset_dir)
    ref = load_obj(cfg.reference_path)
    meshes, bad = [], []
    for name in names:
        try:
            m = load_obj(os.path.join(cfg.dataset_dir, name))
        except (OSError, MeshError) as exc:
            raise ConfigError("cannot read %s: %s" % (name, exc)) from None
        rep = validate_same_connectivity(ref, m)
        if not rep:
            bad.append("%s (%s)" % (name, rep.message))
        meshes.append(m)
    if bad:
        raise ConfigError("connectivity differs from %s in: %s" % (cfg.reference, "; ".join(bad)))
    labels = np.full(len(names), -1, dtype=np.int64)
    if os.path.isfile(cfg.labels_path):
        table = read_labels(cfg.labels_path)
        labels = np.array([table.get(n, -1) for n in names], dtype=np.int64)
    fs = feat.encode_features(ref, meshes, build_adjacency(ref), reference=cfg.reference)
    os.makedirs(cfg.out, exist_ok=True)
    feat.save_features(fs, cfg.path("features.bin"))
    write_shape_index(ShapeIndex(names, labels), cfg.path("shapes.tsv"))
    raw = feat.invert_scaling(fs.array, fs.scale_params)
    lo, hi = raw.min(axis=(0, 1)), raw.max(axis=(0, 1))
    print("%d shapes, %d vertices" % (len(names), fs.n_vertices))
    for c, (a, b) in enumerate(zip(lo, hi)):
        print("column %d\t%.6g\t%.6g" % (c, a, b))
    return fs


def cmd_train(cfg: RunConfig):
    hier = _load_hierarchy(cfg)
    fs, index = _load_features(cfg)
    if fs.n_vertices != hier.sizes[0]:
        raise ConfigError("features have %d vertices, hierarchy has %d" % (fs.n_vertices, hier.sizes[0]))
    X, conds, cdim = fs.array, None, 0
    if cfg.conditional:
        use = index.labeled
        if use.size == 0:
            raise ConfigError("conditional training needs labeled shapes (%s)" % cfg.labels_path)
        if use.size < len(index.names):
            logger.info("training on %d labeled shapes of %d", use.size, len(index.names))
        cdim = index.n_classes
        X, conds = X[use], one_hot(index.labels[use], cdim)
    model = vae.build_model(hier, cfg.arch(cdim), seed=cfg.seed)
    log = vae.train(model, X, cfg.train_config(), conds, max_steps=cfg.max_steps)
    if not np.isfinite(log[-1].total):
        raise vae.NumericalError("final loss is not finite")
    vae.save_params(model.params, cfg.path("model.ckpt"))
    with open(cfg.path("loss.tsv"), "w") as fh:
        for rec in log:
            fh.write(rec.line() + "\n")
    print("epochs %d, final loss %.6g" % (len(log), log[-1].total))
    return model, log


def _check_label(ws: Workspace, label):
    if label is None:
        if ws.conditional:
            raise ConfigError("model is conditional; pass --label in [0, %d)" % ws.model.arch.condition_dim)
        return None
    if not ws.conditional:
        raise ConfigError("--label given but the model is unconditional")
    if not 0 <= label < ws.model.arch.condition_dim:
        raise ConfigError("label %d out of range [0, %d)" % (label, ws.model.arch.condition_dim))
    return label


def cmd_generate(cfg: RunConfig, n: int = 1, label: int | None = None, mean: bool = False,
                 checkpoint: str | None = None):
    """Sample (or take z = 0) ``n`` codes, decode and write ``gen_####.obj``."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    ws = open_workspace(cfg, checkpoint)
    label = _check_label(ws, label)
    rng = np.random.default_rng(cfg.seed)
    latent = ws.model.arch.latent
    z = np.zeros((n, latent)) if mean else rng.standard_normal((n, latent))
    cond = None if label is None else one_hot(np.full(n, label), ws.model.arch.condition_dim)
    positions = decode_positions(ws, z, cond)
    train_pos = _training_positions(ws)
    out = cfg.path("generate")
    os.makedirs(out, exist_ok=True)
    report = []
    for k, p in enumerate(positions):
        save_obj(ws.base.with_positions(p), os.path.join(out, "gen_%04d.obj" % k))
        d = [mean_vertex_distance(p, t) for t in train_pos]
        j = int(np.argmin(d))
        report.append((k, j, ws.index.names[j], d[j]))
    with open(os.path.join(out, "nearest.tsv"), "w") as fh:
        for k, j, name, dist in report:
            fh.write("gen_%04d.obj\t%d\t%s\t%.17g\n" % (k, j, name, dist))
    print("wrote %d shapes to %s" % (n, out))
    return positions, report


def _training_positions(ws: Workspace) -> list:
    out = []
    for name in ws.index.names:
        path = os.path.join(ws.cfg.dataset_dir, name)
        try:
            out.append(load_obj(path).positions)
        except OSError as exc:
            raise ConfigError("cannot read training shape %s: %s" % (path, exc.strerror)) from None
    return out


def interpolation_codes(mu_a: np.ndarray, mu_b: np.ndarray, steps: int) -> np.ndarray:
    """``(1 - t) mu_a + t mu_b`` for ``t = k / (steps - 1)``."""
    if steps < 2:
        raise ValueError("steps must be >= 2")
    t = np.arange(steps, dtype=np.float64)[:, None] / (steps - 1)
    return (1.0 - t) * mu_a + t * mu_b


def cmd_interpolate(cfg: RunConfig, a: str, b: str, steps: int = 10, checkpoint: str | None = None):
    if steps < 2:
        raise ConfigError("steps must be >= 2")
    ws = open_workspace(cfg, checkpoint)
    ia, ib = ws.index.lookup(str(a)), ws.index.lookup(str(b))
    conds = ws.conditions([ia, ib])
    mu = encode_means(ws, [ia, ib])
    z = interpolation_codes(mu[0], mu[1], steps)
    cond = None if conds is None else interpolation_codes(conds[0], conds[1], steps)
    positions = decode_positions(ws, z, cond)
    out = cfg.path("interpolate")
    os.makedirs(out, exist_ok=True)
    for k, p in enumerate(positions):
        save_obj(ws.base.with_positions(p), os.path.join(out, "interp_%04d.obj" % k))
    print("wrote %d frames from %s to %s" % (steps, ws.index.names[ia], ws.index.names[ib]))
    return positions


@dataclass
class EmbeddingResult:
    coords: np.ndarray  # (M, 2)
    dims: tuple
    variances: np.ndarray


def embed_codes(mu: np.ndarray) -> EmbeddingResult:
    """Coordinates in the two latent dimensions of largest variance (lower index wins ties)."""
    mu = np.asarray(mu, dtype=np.float64)
    if mu.ndim != 2 or mu.shape[0] < 2:
        raise ValueError("embedding needs at least two shapes")
    if mu.shape[1] < 2:
        raise ValueError("embedding needs a latent dimension of at least 2")
    var = mu.var(axis=0)
    d0, d1 = (int(d) for d in np.argsort(-var, kind="stable")[:2])
    return EmbeddingResult(mu[:, [d0, d1]], (d0, d1), var)


def _orient(p, q, r):
    return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])


def _segments_cross(a, b, c, d) -> bool:
    d1, d2 = _orient(c, d, a), _orient(c, d, b)
    d3, d4 = _orient(a, b, c), _orient(a, b, d)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and 0 not in (d1, d2, d3, d4)


def polyline_self_intersections(points, closed: bool = True) -> int:
    """Number of properly crossing pairs of non-adjacent segments."""
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    segs = [(k, (k + 1) % n) for k in range(n if closed else n - 1)]
    count = 0
    for s in range(len(segs)):
        for t in range(s + 1, len(segs)):
            if set(segs[s]) & set(segs[t]):
                continue
            a, b = pts[segs[s][0]], pts[segs[s][1]]
            c, d = pts[segs[t][0]], pts[segs[t][1]]
            count += _segments_cross(a, b, c, d)
    return count


def cmd_embed(cfg: RunConfig, checkpoint: str | None = None):
    ws = open_workspace(cfg, checkpoint)
    use = ws.usable()
    if len(use) < 2:
        raise ConfigError("embedding needs at least two shapes")
    mu = ws.model.encode(ws.features.array[use], ws.conditions(use)).mean
    res = embed_codes(mu)
    crossings = polyline_self_intersections(res.coords)
    with open(cfg.path("embedding.tsv"), "w") as fh:
        fh.write("# dims\t%d\t%d\n" % res.dims)
        fh.write("# variances\t%.17g\t%.17g\n" % tuple(res.variances[list(res.dims)]))
        fh.write("# closed_polyline_self_intersections\t%d\n" % crossings)
        for k, (x, y) in zip(use, res.coords):
            fh.write("%d\t%s\t%.17g\t%.17g\n" % (k, ws.index.names[k], x, y))
    print("dimensions %d, %d; polyline self-intersections %d" % (res.dims + (crossings,)))
    return res, crossings


def cmd_eval(cfg: RunConfig, dataset_dir: str | None = None, checkpoint: str | None = None):
    """Reconstruct shapes through the encoder mean and report RMS vertex error.

    Without ``dataset_dir`` the training shapes are evaluated. A held-out
    directory is encoded with the training feature scaling; its files are
    all evaluated, and any ``labels.tsv`` there supplies conditions.
    """
    ws = open_workspace(cfg, checkpoint)
    adj = ws.hierarchy.levels[0][1]
    if dataset_dir is None:
        use = ws.usable()
        names = [ws.index.names[k] for k in use]
        X, conds = ws.features.array[use], ws.conditions(use)
        truth = [load_obj(os.path.join(cfg.dataset_dir, n)).positions for n in names]
    else:
        names = sorted(os.path.basename(p) for p in glob.glob(os.path.join(dataset_dir, "*.obj")))
        if not names:
            raise ConfigError("no OBJ files in %s" % dataset_dir)
        truth, X = [], []
        for name in names:
            m = load_obj(os.path.join(dataset_dir, name))
            rep = validate_same_connectivity(ws.base, m)
            if not rep:
                raise ConfigError("%s: %s" % (name, rep.message))
            truth.append(m.positions)
            X.append(feat.apply_scaling(feat.raw_features(ws.base, m.positions, adj), ws.features.scale_params))
        X = np.stack(X)
        conds = None
        if ws.conditional:
            table = read_labels(os.path.join(dataset_dir, "labels.tsv"))
            conds = one_hot([table[n] for n in names], ws.model.arch.condition_dim)
    Xh = ws.model.reconstruct(X, conds)
    rows = []
    for name, x, t in zip(names, Xh, truth):
        p = features_to_positions(x, ws.features.scale_params, ws.base, adj)
        rows.append((name,) + rms_error(p, t))
    raw = float(np.mean([r[1] for r in rows]))
    aligned = float(np.mean([r[2] for r in rows]))
    with open(cfg.path("eval.tsv"), "w") as fh:
        fh.write("# shape\trms\trms_centroid_aligned\n")
        for name, a, b in rows:
            fh.write("%s\t%.17g\t%.17g\n" % (name, a, b))
        fh.write("mean\t%.17g\t%.17g\n" % (raw, aligned))
    print("mean RMS %.6g (centroid aligned %.6g) over %d shapes" % (raw, aligned, len(rows)))
    return rows


# -- entry point ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="run configuration file")
    common.add_argument("--seed", type=int, help="overrides [run] seed")
    common.add_argument("--out", help="overrides [run] out")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="meshvae", description="Mesh VAE pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("hierarchy", parents=[common], help="build the simplification hierarchy")
    sub.add_parser("features", parents=[common], help="extract deformation features")
    sub.add_parser("train", parents=[common], help="train the VAE")
    p = sub.add_parser("generate", parents=[common], help="decode random latent codes")
    p.add_argument("-n", type=int, default=1)
    p.add_argument("--label", type=int)
    p.add_argument("--mean", action="store_true", help="decode z = 0 instead of sampling")
    p.add_argument("--checkpoint")
    p = sub.add_parser("interpolate", parents=[common], help="interpolate between two shapes")
    p.add_argument("a", help="shape name or index")
    p.add_argument("b", help="shape name or index")
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--checkpoint")
    p = sub.add_parser("embed", parents=[common], help="2D embedding of the dataset")
    p.add_argument("--checkpoint")
    p = sub.add_parser("eval", parents=[common], help="RMS reconstruction error")
    p.add_argument("--dataset", help="held-out directory (defaults to the training shapes)")
    p.add_argument("--checkpoint")
    return parser


def run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = os.path.abspath(args.out)
    cmd = args.command
    if cmd == "hierarchy":
        cmd_hierarchy(cfg)
    elif cmd == "features":
        cmd_features(cfg)
    elif cmd == "train":
        cmd_train(cfg)
    elif cmd == "generate":
        cmd_generate(cfg, args.n, args.label, args.mean, args.checkpoint)
    elif cmd == "interpolate":
        cmd_interpolate(cfg, args.a, args.b, args.steps, args.checkpoint)
    elif cmd == "embed":
        cmd_embed(cfg, args.checkpoint)
    elif cmd == "eval":
        cmd_eval(cfg, args.dataset, args.checkpoint)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (vae.NumericalError, feat.ReconstructionError, FloatingPointError) as exc:
        print("numerical failure: %s" % exc, file=sys.stderr)
        return EXIT_NUMERICAL
    except SimplificationStalled as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_INPUT
    except (ConfigError, MeshError, ValueError, OSError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
