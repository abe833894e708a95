"""Mesh VAE built from Chebyshev convolutions and contraction pooling.

The encoder follows an architecture string over ``C`` (graph convolution)
and ``P`` (pooling to the next hierarchy level). Its flattened output feeds
two fully-connected maps giving the latent mean (linear) and deviation
(sigmoid). The decoder mirrors the string in reverse with de-pooling; it
reuses the transpose of the mean map as its fully-connected layer and starts
each convolution from the transpose of the matching encoder kernel, which
is then trained as a separate tensor. Gradients are computed by hand.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import gconv
from .mesh import estimate_lambda_max, normalized_laplacian
from .pooling import PoolOperator, build_pool_operator, depool, depool_backward, pool, pool_backward
from .simplify import Hierarchy

logger = logging.getLogger(__name__)

CKPT_MAGIC = b"MVAE-CKPT"
CKPT_VERSION = 1
FEATURE_DIM = 9


class NumericalError(FloatingPointError):
    """Raised when the loss or an intermediate tensor becomes non-finite."""


@dataclass(frozen=True)
class ArchSpec:
    layers: str = "CCPC"
    width: int = 9
    latent: int = 128
    H: int = gconv.DEFAULT_ORDER
    condition_dim: int = 0
    in_channels: int = FEATURE_DIM

    def __post_init__(self):
        if not self.layers or set(self.layers) - {"C", "P"}:
            raise ValueError("architecture must be a nonempty string over {C, P}, got %r" % self.layers)
        if self.layers[-1] != "C":
            raise ValueError("architecture must end with a convolution, got %r" % self.layers)
        if self.H < 1 or self.width < 1 or self.latent < 1 or self.condition_dim < 0:
            raise ValueError("invalid architecture sizes")

    @property
    def n_pool(self) -> int:
        return self.layers.count("P")

    @property
    def n_conv(self) -> int:
        return self.layers.count("C")


@dataclass
class TrainConfig:
    alpha: float = 0.3
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    l2: float = 1e-5
    epochs: int = 100
    batch_size: int | None = None  # None: full batch
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not self.lr >= 0:
            raise ValueError("lr must be >= 0")


@dataclass
class VaeParams:
    tensors: dict  # name -> ndarray, in declaration order
    arch: ArchSpec
    seed: int = 0
    hierarchy_hash: bytes = b"\0" * 32

    def copy(self) -> "VaeParams":
        return VaeParams({k: v.copy() for k, v in self.tensors.items()}, self.arch, self.seed, self.hierarchy_hash)

    def __getitem__(self, name):
        return self.tensors[name]


@dataclass
class LatentCode:
    mean: np.ndarray
    deviation: np.ndarray
    z: np.ndarray | None = None
    eps: np.ndarray | None = None


# -- structure ------------------------------------------------------------------

def _conv_channels(arch: ArchSpec):
    """(C_in, C_out) for every encoder convolution."""
    chans = []
    c = arch.in_channels + arch.condition_dim
    for ch in arch.layers:
        if ch == "C":
            chans.append((c, arch.width))
            c = arch.width
    return chans


def pooled_size(arch: ArchSpec, level_sizes) -> int:
    if arch.n_pool >= len(level_sizes):
        raise ValueError("architecture %r needs %d pooling levels, hierarchy has %d"
                         % (arch.layers, arch.n_pool, len(level_sizes) - 1))
    return level_sizes[arch.n_pool]


def parameter_shapes(arch: ArchSpec, level_sizes) -> dict:
    """Tensor shapes in declaration order for a hierarchy with ``level_sizes``."""
    flat = pooled_size(arch, level_sizes) * arch.width
    shapes = {}
    chans = _conv_channels(arch)
    for k, (ci, co) in enumerate(chans):
        shapes["enc_conv%d" % k] = (arch.H, ci, co)
    shapes["fc_mean"] = (flat, arch.latent)
    shapes["fc_dev"] = (flat, arch.latent)
    if arch.condition_dim:
        shapes["dec_cond"] = (arch.condition_dim, flat)
    for k, (ci, co) in enumerate(chans):
        shapes["dec_conv%d" % k] = (arch.H, co, arch.in_channels if k == 0 else ci)
    return shapes


def count_parameters(model) -> int:
    """Number of trainable scalars (the tied decoder fully-connected map is not extra)."""
    params = model.params if isinstance(model, MeshVAE) else model
    return int(sum(t.size for t in params.tensors.values()))


def _glorot(rng, shape):
    if len(shape) == 3:
        fan_in, fan_out = shape[0] * shape[1], shape[0] * shape[2]
    else:
        fan_in, fan_out = shape
    s = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape)


def init_params(arch: ArchSpec, level_sizes, seed: int = 0, hierarchy_hash: bytes = b"\0" * 32) -> VaeParams:
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in parameter_shapes(arch, level_sizes).items():
        if name.startswith("dec_conv"):
            enc = tensors["enc_" + name[4:]]
            tensors[name] = np.ascontiguousarray(enc.transpose(0, 2, 1)[:, :, :shape[2]])
        else:
            tensors[name] = _glorot(rng, shape)
    return VaeParams(tensors, arch, seed, hierarchy_hash)


@dataclass
class GraphOperators:
    """Scaled Laplacians per level and pool operators between levels."""

    L_tilde: list
    pools: list  # PoolOperator per transition
    lambda_max: list = field(default_factory=list)

    @classmethod
    def from_hierarchy(cls, hier: Hierarchy, n_levels: int | None = None) -> "GraphOperators":
        n = len(hier.levels) if n_levels is None else n_levels
        Ls, lams = [], []
        for mesh, adj in hier.levels[:n]:
            L = normalized_laplacian(adj)
            lam = estimate_lambda_max(L)
            Ls.append(gconv.scale_laplacian(L, lam))
            lams.append(lam)
        pools = [build_pool_operator(m) for m in hier.maps[:max(n - 1, 0)]]
        return cls(Ls, pools, lams)

    @property
    def sizes(self):
        return [L.shape[0] for L in self.L_tilde]


# -- model ----------------------------------------------------------------------------

class MeshVAE:
    """Parameters plus the graph operators needed to run them."""

    def __init__(self, params: VaeParams, ops: GraphOperators):
        self.params = params
        self.ops = ops
        self.arch = params.arch
        pooled_size(self.arch, ops.sizes)

    @property
    def n_vertices(self) -> int:
        return self.ops.sizes[0]

    def _with_condition(self, X, cond):
        c = self.arch.condition_dim
        if c == 0:
            if cond is not None:
                raise ValueError("model is unconditional but a condition was given")
            return X
        if cond is None:
            raise ValueError("conditional model needs a condition")
        cond = np.asarray(cond, dtype=np.float64).reshape(X.shape[0], c)
        cols = np.broadcast_to(cond[:, None, :], X.shape[:2] + (c,))
        return np.concatenate([X, cols], axis=-1)

    # encoder

    def _encode(self, X, cond=None):
        P = self.params.tensors
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 2
        if single:
            X = X[None]
        if X.shape[1:] != (self.n_vertices, self.arch.in_channels):
            raise ValueError("expected features of shape (V=%d, %d), got %s"
                             % (self.n_vertices, self.arch.in_channels, X.shape[1:]))
        h = self._with_condition(X, cond)
        trace = []
        level, k = 0, 0
        last_conv = self.arch.layers.rindex("C")
        for pos, ch in enumerate(self.arch.layers):
            if ch == "C":
                layer = gconv.ChebLayer(P["enc_conv%d" % k], self.ops.L_tilde[level])
                basis = gconv.cheb_apply(layer.L_tilde, h, layer.H)
                kind = "linear" if pos == last_conv else "tanh"
                out = gconv.activation(kind, gconv.gconv_forward(layer, h, basis))
                trace.append(("C", layer, h, basis, kind, out))
                h = out
                k += 1
            else:
                trace.append(("P", self.ops.pools[level]))
                h = pool(self.ops.pools[level], h)
                level += 1
        f = h.reshape(h.shape[0], -1)
        mu = f @ P["fc_mean"]
        sigma = gconv.activation("sigmoid", f @ P["fc_dev"])
        return mu, sigma, f, trace, single

    def encode(self, X, cond=None) -> LatentCode:
        mu, sigma, _, _, single = self._encode(X, cond)
        if single:
            mu, sigma = mu[0], sigma[0]
        return LatentCode(mu, sigma)

    # decoder

    def _decode(self, z, cond=None):
        P = self.params.tensors
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != self.arch.latent:
            raise ValueError("latent vector has length %d, expected %d" % (z.shape[-1], self.arch.latent))
        single = z.ndim == 1
        if single:
            z = z[None]
        pre = z @ P["fc_mean"].T
        if self.arch.condition_dim:
            if cond is None:
                raise ValueError("conditional model needs a condition")
            cond = np.asarray(cond, dtype=np.float64).reshape(z.shape[0], self.arch.condition_dim)
            pre = pre + cond @ P["dec_cond"]
        elif cond is not None:
            raise ValueError("model is unconditional but a condition was given")
        g = np.tanh(pre).reshape(z.shape[0], -1, self.arch.width)
        trace = [("FC", g)]
        level = self.arch.n_pool
        k = self.arch.n_conv - 1
        for ch in reversed(self.arch.layers):
            if ch == "C":
                layer = gconv.ChebLayer(P["dec_conv%d" % k], self.ops.L_tilde[level])
                basis = gconv.cheb_apply(layer.L_tilde, g, layer.H)
                out = np.tanh(gconv.gconv_forward(layer, g, basis))
                trace.append(("C", layer, g, basis, "tanh", out))
                g = out
                k -= 1
            else:
                level -= 1
                trace.append(("P", self.ops.pools[level]))
                g = depool(self.ops.pools[level], g)
        return g, z, cond, trace, single

    def decode(self, z, cond=None) -> np.ndarray:
        g, _, _, _, single = self._decode(z, cond)
        return g[0] if single else g

    def reconstruct(self, X, cond=None) -> np.ndarray:
        """Decode the encoder mean of ``X``."""
        return self.decode(self.encode(X, cond).mean, cond)

    # training objective

    def loss_and_grads(self, X, eps, alpha: float = 0.3, cond=None, grads: bool = True):
        """Batch loss ``recon + alpha * KL`` and its exact parameter gradients.

        ``recon = sum ||X - X_hat||^2 / (2B)`` and ``KL`` is the mean over the
        batch of the closed-form divergence from N(0, I). Returns
        ``(terms, grads)`` with ``terms`` a dict of ``recon``, ``kl``, ``loss``.
        """
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            X = X[None]
        B = X.shape[0]
        mu, sigma, f, etrace, _ = self._encode(X, cond)
        eps = np.asarray(eps, dtype=np.float64).reshape(mu.shape)
        z = mu + sigma * eps
        Xh, _, cond_d, dtrace, _ = self._decode(z, cond)
        diff = Xh - X
        recon = 0.5 * float((diff * diff).sum()) / B
        sc = np.maximum(sigma, 1e-6)
        kl_each = 0.5 * (mu * mu + sigma * sigma - 2.0 * np.log(sc) - 1.0).sum(axis=1)
        kl = float(kl_each.mean())
        terms = {"recon": recon, "kl": kl, "loss": recon + alpha * kl}
        _check_finite(terms=terms, X_hat=Xh, mean=mu, deviation=sigma)
        if not grads:
            return terms, None
        P = self.params.tensors
        G = {name: np.zeros_like(t) for name, t in P.items()}

        # decoder, last layer first
        dg = diff / B
        k = 0
        for entry in reversed(dtrace[1:]):
            if entry[0] == "C":
                _, layer, inp, basis, kind, out = entry
                dpre = gconv.activation_backward(kind, out, dg)
                dg, dth = gconv.gconv_backward(layer, inp, dpre, basis)
                G["dec_conv%d" % k] += dth
                k += 1
            else:
                dg = depool_backward(entry[1], dg)
        g_fc = dtrace[0][1]
        dpre = gconv.activation_backward("tanh", g_fc, dg).reshape(B, -1)
        G["fc_mean"] += dpre.T @ z
        if self.arch.condition_dim:
            G["dec_cond"] += cond_d.T @ dpre
        dz = dpre @ P["fc_mean"]

        # reparameterization and KL
        dmu = dz + alpha * mu / B
        dsig = dz * eps + alpha * (sigma - np.where(sigma > 1e-6, 1.0 / sc, 0.0)) / B
        da = gconv.activation_backward("sigmoid", sigma, dsig)
        G["fc_mean"] += f.T @ dmu
        G["fc_dev"] += f.T @ da
        dh = (dmu @ P["fc_mean"].T + da @ P["fc_dev"].T).reshape(B, -1, self.arch.width)

        # encoder
        k = self.arch.n_conv - 1
        for entry in reversed(etrace):
            if entry[0] == "C":
                _, layer, inp, basis, kind, out = entry
                dpre = gconv.activation_backward(kind, out, dh)
                dh, dth = gconv.gconv_backward(layer, inp, dpre, basis)
                G["enc_conv%d" % k] += dth
                k -= 1
            else:
                dh = pool_backward(entry[1], dh)
        return terms, G


def _check_finite(**named):
    for name, value in named.items():
        if isinstance(value, dict):
            for k, v in value.items():
                if not np.all(np.isfinite(v)):
                    raise NumericalError("non-finite %s" % k)
        elif not np.all(np.isfinite(value)):
            raise NumericalError("non-finite values in %s" % name)


def build_model(hierarchy: Hierarchy, arch: ArchSpec | str = "CCPC", seed: int = 0) -> MeshVAE:
    """Initialize a model for ``hierarchy`` following ``arch``."""
    if isinstance(arch, str):
        arch = ArchSpec(arch)
    if arch.n_pool > len(hierarchy.maps):
        raise ValueError("architecture %r needs %d pooling levels, hierarchy has %d"
                         % (arch.layers, arch.n_pool, len(hierarchy.maps)))
    ops = GraphOperators.from_hierarchy(hierarchy, arch.n_pool + 1)
    params = init_params(arch, ops.sizes, seed, hierarchy.content_hash())
    return MeshVAE(params, ops)


def reparameterize(mu, sigma, eps):
    return np.asarray(mu) + np.asarray(sigma) * np.asarray(eps)


def kl_divergence(mu, sigma) -> np.ndarray:
    """``KL(N(mu, sigma^2) || N(0, I))`` summed over the last axis."""
    mu, sigma = np.asarray(mu, float), np.asarray(sigma, float)
    sc = np.maximum(sigma, 1e-6)
    return 0.5 * (mu * mu + sigma * sigma - 2.0 * np.log(sc) - 1.0).sum(axis=-1)


# -- optimization -------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    scratch: dict = field(default_factory=dict, repr=False)


def adam_step(params: dict, grads: dict, state: AdamState, config: TrainConfig) -> None:
    """In-place bias-corrected Adam update; L2 adds ``2 * l2 * w`` to each gradient."""
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, w in params.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(w)
            state.v[name] = np.zeros_like(w)
            state.scratch[name] = np.empty_like(w)
        v, g = state.v[name], state.scratch[name]
        np.copyto(g, grads[name])
        if config.l2:
            g += (2.0 * config.l2) * w
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        g *= g
        g *= 1.0 - b2
        v += g
        np.divide(v, c2, out=g)
        np.sqrt(g, out=g)
        g += config.eps
        np.divide(m, g, out=g)
        g *= config.lr / c1
        w -= g


def l2_penalty(params: dict, l2: float) -> float:
    if not l2:
        return 0.0
    return l2 * float(sum(np.dot(w.ravel(), w.ravel()) for w in params.values()))


@dataclass
class EpochRecord:
    epoch: int
    recon: float
    kl: float
    total: float

    def line(self) -> str:
        return "%d\t%.17g\t%.17g\t%.17g" % (self.epoch, self.recon, self.kl, self.total)


def train(model: MeshVAE, X, config: TrainConfig, conditions=None, callback=None, max_steps: int | None = None):
    """Fit ``model`` in place with Adam; returns the per-epoch loss records.

    ``X`` is (M, V, 9). Each epoch visits shapes in a seeded random order
    (or all at once when ``batch_size`` is None). ``max_steps`` stops early
    after that many optimizer steps.
    """
    X = np.asarray(X, dtype=np.float64)
    M = X.shape[0]
    if M == 0:
        raise ValueError("empty training set")
    if model.arch.condition_dim and conditions is None:
        raise ValueError("conditional model needs per-shape conditions")
    conds = None if conditions is None else np.asarray(conditions, dtype=np.float64).reshape(M, -1)
    rng = np.random.default_rng(config.seed)
    bs = M if not config.batch_size else min(config.batch_size, M)
    state = AdamState()
    log = []
    steps = 0
    for epoch in range(1, config.epochs + 1):
        order = np.arange(M) if bs == M else rng.permutation(M)
        sums = np.zeros(3)
        n_batches = 0
        for start in range(0, M, bs):
            idx = order[start:start + bs]
            eps = rng.standard_normal((len(idx), model.arch.latent))
            terms, grads = model.loss_and_grads(
                X[idx], eps, config.alpha, None if conds is None else conds[idx])
            l2 = l2_penalty(model.params.tensors, config.l2)
            sums += (terms["recon"], terms["kl"], terms["loss"] + l2)
            n_batches += 1
            adam_step(model.params.tensors, grads, state, config)
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
        rec = EpochRecord(epoch, *(sums / n_batches))
        log.append(rec)
        if callback is not None:
            callback(rec)
        if max_steps is not None and steps >= max_steps:
            break
    return log


# -- persistence ----------------------------------------------------------------------

def write_params(params: VaeParams) -> bytes:
    arch = params.arch.layers.encode("ascii")
    if len(params.hierarchy_hash) != 32:
        raise ValueError("hierarchy hash must be 32 bytes")
    out = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(arch)), arch,
           struct.pack("<II", params.arch.latent, params.arch.H), params.hierarchy_hash,
           struct.pack("<QI", params.seed, len(params.tensors))]
    for name, t in params.tensors.items():
        nb = name.encode("ascii")
        out.append(struct.pack("<I", len(nb)) + nb + struct.pack("<I", t.ndim))
        out.append(struct.pack("<%dI" % t.ndim, *t.shape))
        out.append(np.ascontiguousarray(t, dtype="<f8").tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data):
        self.data, self.off = data, 0

    def take(self, n):
        if self.off + n > len(self.data):
            raise ValueError("truncated checkpoint at byte %d" % self.off)
        chunk = self.data[self.off:self.off + n]
        self.off += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_params(data: bytes, expected_hash: bytes | None = None) -> VaeParams:
    r = _Reader(data)
    if r.take(len(CKPT_MAGIC)) != CKPT_MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    version, n_arch = r.unpack("<II")
    if version != CKPT_VERSION:
        raise ValueError("unsupported checkpoint version %d" % version)
    layers = r.take(n_arch).decode("ascii")
    latent, H = r.unpack("<II")
    hhash = r.take(32)
    if expected_hash is not None and hhash != expected_hash:
        raise ValueError("checkpoint was trained on hierarchy %s, refusing to load against %s"
                         % (hhash.hex(), expected_hash.hex()))
    seed, n_tensors = r.unpack("<QI")
    tensors = {}
    for _ in range(n_tensors):
        (n,) = r.unpack("<I")
        name = r.take(n).decode("ascii")
        (ndim,) = r.unpack("<I")
        shape = r.unpack("<%dI" % ndim)
        count = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    if r.off != len(data):
        raise ValueError("trailing bytes in checkpoint")
    enc0 = tensors["enc_conv0"]
    in_ch = tensors["dec_conv0"].shape[2]
    arch = ArchSpec(layers, width=enc0.shape[2], latent=latent, H=H,
                    condition_dim=enc0.shape[1] - in_ch, in_channels=in_ch)
    return VaeParams(tensors, arch, seed, hhash)


def save_params(params: VaeParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(write_params(params))


def load_params(path, hierarchy: Hierarchy | None = None) -> VaeParams:
    with open(path, "rb") as fh:
        data = fh.read()
    return read_params(data, None if hierarchy is None else hierarchy.content_hash())


def load_model(path, hierarchy: Hierarchy) -> MeshVAE:
    params = load_params(path, hierarchy)
    ops = GraphOperators.from_hierarchy(hierarchy, params.arch.n_pool + 1)
    return MeshVAE(params, ops)
