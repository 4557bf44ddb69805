"""Dual-stream saliency network with hand-written backpropagation.

Geometry stream: shared per-point MLP on [position; normal] descriptors
with a 16-neighbor max-pool (the reference stand-in for any m x 64 feature
provider), projected to the 32-dim latent. Semantic stream: two-layer
bottleneck from the input feature width through 512 to 32, batch-normalized
and rectified. Fusion: multi-head attention in which geometry queries
semantics, added back residually; alternative strategies (self-attention,
concatenation, addition, single-stream) are selectable for ablations.
A 32 -> 64 -> 1 sigmoid head scores the sampled points and inverse distance
weighting lifts the scores to the full vertex set.

Training optimizes 10 * KL(gt || pred) - 2 * CC(gt, pred) with decoupled
weight decay; the whole module is float64 and deterministic given a seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import DimMismatch, NonFiniteLoss, ZeroVariance
from .io import FUSION_MAGIC, load_checkpoint, save_checkpoint
from .maps import SaliencyMap, as_values
from .mesh import Mesh, SampleSet, uniform_sample
from .metrics import KL_EPS
from .spatial import SpatialIndex

FUSION_MODES = ("cross_attention", "self_attention", "concat", "add",
                "geo_only", "sem_only")


@dataclass
class ModelConfig:
    sem_dim: int = 2048        # input semantic width
    sem_hidden: int = 512      # bottleneck middle layer
    hidden: int = 32           # shared latent width d_h
    heads: int = 4
    point_hidden: int = 32     # per-point branch of the reference encoder
    pool_k: int = 16           # neighborhood max-pool size
    head_hidden: int = 64
    fusion: str = "cross_attention"
    idw_k: int = 3
    idw_eps: float = 1e-8
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.fusion not in FUSION_MODES:
            raise ValueError(f"fusion must be one of {FUSION_MODES}")
        if self.hidden % self.heads:
            raise ValueError("hidden dim must divide evenly into heads")

    @property
    def fused_dim(self) -> int:
        return 2 * self.hidden if self.fusion == "concat" else self.hidden


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    epochs: int = 100
    batch_size: int = 1
    m: int = 2048
    w_kl: float = 10.0
    w_cc: float = 2.0
    seed: int = 0


@dataclass
class TrainResult:
    params: dict
    state: dict
    curve: list = field(repr=False)  # rows: (epoch, mean_loss, mean_kl, mean_cc)


def assemble_geo_descriptors(sample: SampleSet, centroid, diag: float) -> np.ndarray:
    """m x 6 rows [centered-and-scaled position ; unit normal]."""
    pos = (sample.positions - np.asarray(centroid)) / diag
    return np.concatenate([pos, sample.normals], axis=1)


def idw_interpolate(values_m, sample_positions, full_positions,
                    k: int = 3, eps: float = 1e-8):
    """Inverse-distance interpolation from m samples to N targets.

    Weights are 1/(d + eps) over the k nearest samples. Returns the N
    values plus (indices (N,k), normalized weights (N,k)) -- the operator
    is linear, so that pair is also its transpose for backprop.
    """
    values_m = np.asarray(values_m, dtype=np.float64).reshape(-1)
    sample_positions = np.asarray(sample_positions, dtype=np.float64)
    if len(values_m) < k:
        raise ValueError(f"need at least k={k} samples, got {len(values_m)}")
    tree = SpatialIndex(sample_positions)
    n = len(full_positions)
    idx = np.empty((n, k), dtype=np.int64)
    wn = np.empty((n, k))
    for i, p in enumerate(np.asarray(full_positions, dtype=np.float64)):
        ii, dd = tree.knn(p, k)
        w = 1.0 / (dd + eps)
        idx[i] = ii
        wn[i] = w / w.sum()
    return (wn * values_m[idx]).sum(axis=1), (idx, wn)


def idw_backward(dpred, idw_cache, m: int):
    idx, wn = idw_cache
    dv = np.zeros(m)
    np.add.at(dv, idx.ravel(), (wn * dpred[:, None]).ravel())
    return dv


def hybrid_loss(pred_full, gt, w_kl: float = 10.0, w_cc: float = 2.0):
    """w_kl * KL(gt || pred-as-distribution) - w_cc * Pearson(gt, pred).

    Returns (loss, kl, cc). Predictions are normalized internally for the
    KL term only; the correlation uses raw values.
    """
    loss, kl, ccv, _ = _loss_with_grad(as_values(pred_full), as_values(gt),
                                       w_kl, w_cc)
    return loss, kl, ccv


def _loss_with_grad(r, g, w_kl, w_cc):
    if len(r) != len(g):
        raise DimMismatch(f"prediction length {len(r)} vs ground truth {len(g)}")
    gs = g.sum()
    g = g / gs if gs > 0 else np.full(len(g), 1.0 / len(g))

    s = r.sum()
    p = r / s
    nz = g > 0
    kl = float(np.sum(g[nz] * np.log(g[nz] / (p[nz] + KL_EPS))))
    # d kl / d r through the normalization
    dkl_dp = np.zeros_like(r)
    dkl_dp[nz] = -g[nz] / (p[nz] + KL_EPS)
    dkl_dr = (dkl_dp - (dkl_dp * p).sum()) / s

    u = g - g.mean()
    v = r - r.mean()
    bu = np.sqrt((u * u).sum())
    bv = np.sqrt((v * v).sum())
    if bu == 0.0 or bv == 0.0:
        raise ZeroVariance("constant map inside the hybrid loss")
    a = (u * v).sum()
    ccv = float(a / (bu * bv))
    dcc_dr = u / (bu * bv) - (a / (bu * bv**3)) * v  # already zero-mean

    loss = w_kl * kl - w_cc * ccv
    dloss_dr = w_kl * dkl_dr - w_cc * dcc_dr
    return loss, kl, ccv, dloss_dr


class FusionModel:
    """Holds parameters, running statistics, and the forward/backward pair."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.params = self._init_params(np.random.default_rng(seed))
        self.state = self._init_state()

    def _init_params(self, rng):
        c = self.config
        h = c.hidden
        p = {}
        p["enc.w"] = nn.init_uniform(rng, 6, (6, c.point_hidden))
        p["enc.b"] = nn.init_uniform(rng, 6, (c.point_hidden,))
        raw_dim = 2 * c.point_hidden
        p["geo.w"] = nn.init_uniform(rng, raw_dim, (raw_dim, h))
        p["geo.b"] = nn.init_uniform(rng, raw_dim, (h,))
        p["geo.gamma"] = np.ones(h)
        p["geo.beta"] = np.zeros(h)
        p["sem.w1"] = nn.init_uniform(rng, c.sem_dim, (c.sem_dim, c.sem_hidden))
        p["sem.b1"] = nn.init_uniform(rng, c.sem_dim, (c.sem_hidden,))
        p["sem.gamma1"] = np.ones(c.sem_hidden)
        p["sem.beta1"] = np.zeros(c.sem_hidden)
        p["sem.w2"] = nn.init_uniform(rng, c.sem_hidden, (c.sem_hidden, h))
        p["sem.b2"] = nn.init_uniform(rng, c.sem_hidden, (h,))
        p["sem.gamma2"] = np.ones(h)
        p["sem.beta2"] = np.zeros(h)
        p["attn.wq"] = nn.init_uniform(rng, h, (h, h))
        p["attn.wk"] = nn.init_uniform(rng, h, (h, h))
        p["attn.wv"] = nn.init_uniform(rng, h, (h, h))
        p["attn.wo"] = nn.init_uniform(rng, h, (h, h))
        p["head.w1"] = nn.init_uniform(rng, c.fused_dim, (c.fused_dim, c.head_hidden))
        p["head.b1"] = nn.init_uniform(rng, c.fused_dim, (c.head_hidden,))
        p["head.w2"] = nn.init_uniform(rng, c.head_hidden, (c.head_hidden, 1))
        p["head.b2"] = nn.init_uniform(rng, c.head_hidden, (1,))
        return p

    def _init_state(self):
        c = self.config
        return {
            "geo.rm": np.zeros(c.hidden), "geo.rv": np.ones(c.hidden),
            "sem.rm1": np.zeros(c.sem_hidden), "sem.rv1": np.ones(c.sem_hidden),
            "sem.rm2": np.zeros(c.hidden), "sem.rv2": np.ones(c.hidden),
        }

    # -- forward ------------------------------------------------------------

    def _bn(self, x, prefix, stats_key, train, cache):
        p = self.params
        if train:
            out, bn_cache, mu, var = nn.bn_fwd_train(
                x, p[f"{prefix}.gamma"], p[f"{prefix}.beta"])
            mom = self.config.bn_momentum
            rm, rv = f"{stats_key}m", f"{stats_key}v"
            self.state[rm] = (1 - mom) * self.state[rm] + mom * mu
            self.state[rv] = (1 - mom) * self.state[rv] + mom * var
            cache[f"{prefix}.bn"] = bn_cache
            return out
        return nn.bn_fwd_eval(x, p[f"{prefix}.gamma"], p[f"{prefix}.beta"],
                              self.state[f"{stats_key}m"],
                              self.state[f"{stats_key}v"])

    def encode_geometry(self, geo_desc, cache=None, train=True):
        """Reference encoder: per-point MLP + 16-NN max pool -> m x 64."""
        p = self.params
        m = len(geo_desc)
        k = min(self.config.pool_k, m)
        tree = SpatialIndex(geo_desc[:, :3])
        neighbors = np.empty((m, k), dtype=np.int64)
        for i in range(m):
            neighbors[i], _ = tree.knn(geo_desc[i, :3], k)
        z1, lin1 = nn.linear_fwd(geo_desc, p["enc.w"], p["enc.b"])
        h1, mask1 = nn.relu_fwd(z1)
        pooled, pool_cache = nn.maxpool_fwd(h1, neighbors)
        raw = np.concatenate([h1, pooled], axis=1)
        if cache is not None:
            cache["enc.lin"] = lin1
            cache["enc.mask"] = mask1
            cache["enc.pool"] = pool_cache
        return raw

    def forward(self, geo_desc, sem_feats, train=True, want_cache=False):
        """Sampled-point saliency scores in (0, 1). Returns (y_m, cache)."""
        c = self.config
        p = self.params
        if sem_feats.shape[1] != c.sem_dim:
            raise DimMismatch(
                f"semantic width {sem_feats.shape[1]} != configured {c.sem_dim}")
        cache: dict = {"train": train}

        raw = self.encode_geometry(geo_desc, cache if want_cache else None, train)
        zg, geo_lin = nn.linear_fwd(raw, p["geo.w"], p["geo.b"])
        bg = self._bn(zg, "geo", "geo.r", train, cache)
        h_geo, geo_mask = nn.relu_fwd(bg)

        z1, sem_lin1 = nn.linear_fwd(sem_feats, p["sem.w1"], p["sem.b1"])
        b1 = self._bn_sem(z1, 1, train, cache)
        h1, sem_mask1 = nn.relu_fwd(b1)
        z2, sem_lin2 = nn.linear_fwd(h1, p["sem.w2"], p["sem.b2"])
        b2 = self._bn_sem(z2, 2, train, cache)
        h_sem, sem_mask2 = nn.relu_fwd(b2)

        mode = c.fusion
        attn_cache = None
        if mode == "cross_attention":
            h_attn, attn_cache = nn.attention_fwd(
                h_geo, h_sem, p["attn.wq"], p["attn.wk"], p["attn.wv"],
                p["attn.wo"], c.heads)
            fused = h_geo + h_attn
        elif mode == "self_attention":
            tokens = h_geo + h_sem
            h_attn, attn_cache = nn.attention_fwd(
                tokens, tokens, p["attn.wq"], p["attn.wk"], p["attn.wv"],
                p["attn.wo"], c.heads)
            fused = tokens + h_attn
        elif mode == "concat":
            fused = np.concatenate([h_geo, h_sem], axis=1)
        elif mode == "add":
            fused = h_geo + h_sem
        elif mode == "geo_only":
            fused = h_geo
        else:  # sem_only
            fused = h_sem

        a1, head_lin1 = nn.linear_fwd(fused, p["head.w1"], p["head.b1"])
        h_head, head_mask = nn.relu_fwd(a1)
        a2, head_lin2 = nn.linear_fwd(h_head, p["head.w2"], p["head.b2"])
        y, sig = nn.sigmoid_fwd(a2[:, 0])

        if want_cache:
            cache.update(
                geo_lin=geo_lin, geo_mask=geo_mask, sem_lin1=sem_lin1,
                sem_mask1=sem_mask1, sem_lin2=sem_lin2, sem_mask2=sem_mask2,
                attn=attn_cache, head_lin1=head_lin1, head_mask=head_mask,
                head_lin2=head_lin2, sig=sig, mode=mode)
        return y, cache

    def _bn_sem(self, x, layer, train, cache):
        p = self.params
        if train:
            out, bn_cache, mu, var = nn.bn_fwd_train(
                x, p[f"sem.gamma{layer}"], p[f"sem.beta{layer}"])
            mom = self.config.bn_momentum
            self.state[f"sem.rm{layer}"] = ((1 - mom) * self.state[f"sem.rm{layer}"]
                                            + mom * mu)
            self.state[f"sem.rv{layer}"] = ((1 - mom) * self.state[f"sem.rv{layer}"]
                                            + mom * var)
            cache[f"sem{layer}.bn"] = bn_cache
            return out
        return nn.bn_fwd_eval(x, p[f"sem.gamma{layer}"], p[f"sem.beta{layer}"],
                              self.state[f"sem.rm{layer}"],
                              self.state[f"sem.rv{layer}"])

    # -- backward -----------------------------------------------------------

    def backward(self, dy, cache):
        """Gradients of a scalar loss w.r.t. every parameter tensor.

        dy: gradient at the sampled-point outputs (m,). The cache must come
        from forward(..., train=True, want_cache=True).
        """
        if not cache.get("train"):
            raise ValueError("backward needs a train-mode forward cache")
        c = self.config
        grads = {name: np.zeros_like(val) for name, val in self.params.items()}

        da2 = nn.sigmoid_bwd(dy, cache["sig"])[:, None]
        dh_head, grads["head.w2"], grads["head.b2"] = nn.linear_bwd(
            da2, cache["head_lin2"])
        da1 = nn.relu_bwd(dh_head, cache["head_mask"])
        dfused, grads["head.w1"], grads["head.b1"] = nn.linear_bwd(
            da1, cache["head_lin1"])

        mode = cache["mode"]
        h = c.hidden
        if mode == "cross_attention":
            dhq, dhkv, dattn = nn.attention_bwd(dfused, cache["attn"])
            dh_geo = dfused + dhq
            dh_sem = dhkv
        elif mode == "self_attention":
            dhq, dhkv, dattn = nn.attention_bwd(dfused, cache["attn"])
            dtokens = dfused + dhq + dhkv
            dh_geo = dtokens
            dh_sem = dtokens
        else:
            dattn = None
            if mode == "concat":
                dh_geo = dfused[:, :h]
                dh_sem = dfused[:, h:]
            elif mode == "add":
                dh_geo = dfused
                dh_sem = dfused
            elif mode == "geo_only":
                dh_geo = dfused
                dh_sem = np.zeros_like(dfused)
            else:
                dh_geo = np.zeros_like(dfused)
                dh_sem = dfused
        if dattn is not None:
            for key in ("wq", "wk", "wv", "wo"):
                grads[f"attn.{key}"] = dattn[key]

        # semantic stream
        db2 = nn.relu_bwd(dh_sem, cache["sem_mask2"])
        dz2, grads["sem.gamma2"], grads["sem.beta2"] = nn.bn_bwd(
            db2, cache["sem2.bn"])
        dh1, grads["sem.w2"], grads["sem.b2"] = nn.linear_bwd(dz2, cache["sem_lin2"])
        db1 = nn.relu_bwd(dh1, cache["sem_mask1"])
        dz1, grads["sem.gamma1"], grads["sem.beta1"] = nn.bn_bwd(
            db1, cache["sem1.bn"])
        _, grads["sem.w1"], grads["sem.b1"] = nn.linear_bwd(dz1, cache["sem_lin1"])

        # geometry stream
        dbg = nn.relu_bwd(dh_geo, cache["geo_mask"])
        dzg, grads["geo.gamma"], grads["geo.beta"] = nn.bn_bwd(dbg, cache["geo.bn"])
        draw, grads["geo.w"], grads["geo.b"] = nn.linear_bwd(dzg, cache["geo_lin"])
        ph = c.point_hidden
        dh1_enc = draw[:, :ph] + nn.maxpool_bwd(draw[:, ph:], cache["enc.pool"])
        dz1_enc = nn.relu_bwd(dh1_enc, cache["enc.mask"])
        _, grads["enc.w"], grads["enc.b"] = nn.linear_bwd(dz1_enc, cache["enc.lin"])
        return grads

    # -- persistence ----------------------------------------------------------

    def save(self, path, extra_config: dict | None = None) -> None:
        cfg = {"model": vars(self.config)}
        if extra_config:
            cfg.update(extra_config)
        tensors = dict(self.params)
        tensors.update({f"state.{k}": v for k, v in self.state.items()})
        save_checkpoint(path, FUSION_MAGIC, tensors, cfg)

    @classmethod
    def load(cls, path) -> "FusionModel":
        tensors, cfg = load_checkpoint(path, FUSION_MAGIC)
        model = cls(ModelConfig(**cfg["model"]), seed=0)
        for name in model.params:
            model.params[name] = tensors[name]
        for name in model.state:
            model.state[name] = tensors[f"state.{name}"]
        return model


def full_forward(model: FusionModel, mesh: Mesh, features, sample: SampleSet,
                 train=True, want_cache=False):
    """Network forward plus IDW lift to the full vertex set."""
    geo = assemble_geo_descriptors(sample, mesh.centroid, mesh.bbox_diagonal)
    sem = features.data[sample.indices]
    y_m, cache = model.forward(geo, sem, train=train, want_cache=want_cache)
    pred, idw_cache = idw_interpolate(y_m, sample.positions, mesh.vertices,
                                      k=model.config.idw_k,
                                      eps=model.config.idw_eps)
    if want_cache:
        cache["idw"] = idw_cache
        cache["m"] = len(y_m)
    return pred, cache


def loss_and_grads(model: FusionModel, mesh: Mesh, features, sample: SampleSet,
                   gt, w_kl=10.0, w_cc=2.0):
    """One training example: loss terms plus parameter gradients."""
    pred, cache = full_forward(model, mesh, features, sample,
                               train=True, want_cache=True)
    loss, kl, ccv, dpred = _loss_with_grad(pred, as_values(gt), w_kl, w_cc)
    dy = idw_backward(dpred, cache["idw"], cache["m"])
    grads = model.backward(dy, cache)
    return loss, kl, ccv, grads


def predict(mesh: Mesh, features, model: FusionModel, m: int = 2048,
            seed: int = 0) -> SaliencyMap:
    """Inference-mode saliency over all N vertices (raw sigmoid scale)."""
    sample = uniform_sample(mesh, min(m, mesh.n_vertices), seed)
    pred, _ = full_forward(model, mesh, features, sample, train=False)
    return SaliencyMap(np.clip(pred, 0.0, None))


def train_fusion(dataset, model: FusionModel, config: TrainConfig) -> TrainResult:
    """AdamW over (mesh, FeatureField, SaliencyMap) examples.

    Points are re-sampled each visit from a per-run seed stream; the best
    epoch's parameters (lowest mean loss) are returned along with the
    per-epoch loss curve.
    """
    if not dataset:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(config.seed)
    opt = nn.AdamW(model.params.keys(), lr=config.learning_rate,
                   weight_decay=config.weight_decay)
    curve = []
    best = None
    step_grads = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(dataset))
        losses, kls, ccs = [], [], []
        for pos, di in enumerate(order):
            mesh, feats, gt = dataset[di]
            sample = uniform_sample(mesh, min(config.m, mesh.n_vertices),
                                    seed=int(rng.integers(2**31)))
            gt_vals = as_values(gt)
            gt_vals = gt_vals / gt_vals.sum()
            loss, kl, ccv, grads = loss_and_grads(
                model, mesh, feats, sample, gt_vals, config.w_kl, config.w_cc)
            if not np.isfinite(loss):
                raise NonFiniteLoss(
                    f"loss={loss} at epoch {epoch}, example {di}")
            losses.append(loss)
            kls.append(kl)
            ccs.append(ccv)
            step_grads.append(grads)
            if len(step_grads) == config.batch_size or pos == len(order) - 1:
                mean_grads = {
                    k: sum(g[k] for g in step_grads) / len(step_grads)
                    for k in model.params
                }
                opt.step(model.params, mean_grads)
                step_grads = []
        row = (epoch, float(np.mean(losses)), float(np.mean(kls)),
               float(np.mean(ccs)))
        curve.append(row)
        if best is None or row[1] < best[0]:
            best = (row[1],
                    {k: v.copy() for k, v in model.params.items()},
                    {k: v.copy() for k, v in model.state.items()})
    model.params = best[1]
    model.state = best[2]
    return TrainResult(params=model.params, state=model.state, curve=curve)


def save_curve_csv(curve, path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,mean_loss,mean_kl,mean_cc\n")
        for epoch, loss, kl, ccv in curve:
            fh.write(f"{epoch},{loss!r},{kl!r},{ccv!r}\n")
