"""Training for the three planning networks.

The latent model couples an image encoder, a decoder conditioned on an
environment image, and a latent dynamics net. Its objective blends plain
reconstruction of the current frame, reconstruction of the decoded one-step
prediction, and a latent prediction error measured in a metric derived from
the linearized dynamics: the inverse of the regularized reachability Gramian
G = A B B^T A^T + eps*I, so prediction error costs what the control energy to
correct it would cost. The metric is annealed in from a plain squared error
because G is meaningless before the dynamics net has structure.

The collision classifier is trained afterwards, with the latent model frozen.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import nn
from .data import CollisionDataset, DynamicsDataset
from .world import WorldConfig, draw_robot


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 128
    lr: float = 1e-3
    lam_rec: float = 1.0
    lam_pred_rec: float = 1.0
    lam_dyn: float = 0.1
    gramian_eps: float = 1e-3
    seed: int = 0
    d_z: int = 2
    conv_encoder: bool = False
    ssam_temperature: float = 1.0
    enc_hidden: tuple[int, ...] = (256, 64)
    dec_hidden: tuple[int, ...] = (256,)
    dyn_hidden: tuple[int, ...] = (64, 64)
    cc_hidden: tuple[int, ...] = (128, 64)
    cc_epochs: int = 20
    cc_lr: float = 1e-3
    cc_batch_size: int = 256
    cc_collision_weight: float = 1.0   # extra BCE weight on in-collision samples
    holdout_frac: float = 0.1
    bank_size: int = 2000

    def to_dict(self):
        d = asdict(self)
        for key in ("enc_hidden", "dec_hidden", "dyn_hidden", "cc_hidden"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("enc_hidden", "dec_hidden", "dyn_hidden", "cc_hidden"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def beta_schedule(epoch: int, total_epochs: int) -> float:
    """Anneal weight from the plain squared error to the Gramian metric:
    zero for the first quarter of training, then a linear ramp to one over
    the next half."""
    if total_epochs <= 0:
        return 0.0
    b = (epoch - total_epochs / 4.0) / (total_epochs / 2.0)
    return float(min(1.0, max(0.0, b)))


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------


@dataclass
class LatentModel:
    encoder: nn.Network     # image (S*S) -> z (d_z)
    decoder: nn.Network     # [z, env image] (d_z + S*S) -> image (S*S)
    dynamics: nn.Network    # [z, u] (d_z + d_u) -> z next
    d_z: int
    image_side: int

    def encode(self, x):
        return self.encoder.forward(x)

    def decode(self, z, env_image):
        z = np.asarray(z, dtype=float)
        env = np.asarray(env_image, dtype=float)
        if z.ndim == 1:
            return self.decoder.forward(np.concatenate([z, env.ravel()]))
        env2 = env.reshape(1, -1) if env.ndim <= 2 else env.reshape(env.shape[0], -1)
        if env2.shape[0] == 1 and z.shape[0] > 1:
            env2 = np.broadcast_to(env2, (z.shape[0], env2.shape[1]))
        return self.decoder.forward(np.concatenate([z, env2], axis=1))

    def dyn_step(self, z, u):
        z = np.asarray(z, dtype=float)
        u = np.asarray(u, dtype=float)
        if z.ndim == 1:
            return self.dynamics.forward(np.concatenate([z, u]))
        return self.dynamics.forward(np.concatenate([z, u], axis=1))

    def params(self):
        return self.encoder.params() + self.decoder.params() + self.dynamics.params()


def build_latent_model(cfg: TrainConfig, image_side: int = 32,
                       rng: np.random.Generator | None = None) -> LatentModel:
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    n_px = image_side * image_side
    if cfg.conv_encoder:
        c1 = nn.Conv2D(1, 8, 5, 2, image_side, image_side)
        c2 = nn.Conv2D(8, 16, 5, 2, c1.out_height, c1.out_width)
        ssam = nn.SpatialSoftArgmax(16, c2.out_height, c2.out_width,
                                    cfg.ssam_temperature)
        encoder = nn.Network([c1, nn.Relu(), c2, nn.Relu(), ssam,
                              nn.Dense(ssam.out_dim, cfg.d_z)])
        encoder.init_params(rng)
    else:
        encoder = nn.mlp([n_px, *cfg.enc_hidden, cfg.d_z], rng=rng)
    decoder = nn.mlp([cfg.d_z + n_px, *cfg.dec_hidden, n_px], output="sigmoid", rng=rng)
    dynamics = nn.mlp([cfg.d_z + 2, *cfg.dyn_hidden, cfg.d_z], rng=rng)
    return LatentModel(encoder, decoder, dynamics, cfg.d_z, image_side)


def build_collision_net(cfg: TrainConfig, feature_dim: int,
                        rng: np.random.Generator | None = None) -> nn.Network:
    if rng is None:
        rng = np.random.default_rng(cfg.seed + 1)
    return nn.mlp([2 * cfg.d_z + feature_dim, *cfg.cc_hidden, 1],
                  hidden="relu", rng=rng)


# ---------------------------------------------------------------------------
# Gramian and the blended latent metric
# ---------------------------------------------------------------------------


def gramian(model: LatentModel, z, u, eps: float) -> np.ndarray:
    """Regularized reachability Gramian of the linearized latent dynamics at
    (z, u): A B B^T A^T + eps*I with A = d(dyn)/dz and B = d(dyn)/du."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    z = np.asarray(z, dtype=float).ravel()
    u = np.asarray(u, dtype=float).ravel()
    J = model.dynamics.jacobian(np.concatenate([z, u]))
    A = J[:, : model.d_z]
    B = J[:, model.d_z:]
    AB = A @ B
    return AB @ AB.T + eps * np.eye(model.d_z)


def gramian_batch(model: LatentModel, z: np.ndarray, u: np.ndarray,
                  eps: float) -> np.ndarray:
    """Per-sample Gramians for a batch, via d_z one-hot backward passes."""
    B_n, d_z = z.shape
    x = np.concatenate([z, u], axis=1)
    _, cache = model.dynamics.forward(x, want_cache=True)
    J = np.empty((B_n, d_z, x.shape[1]))
    for k in range(d_z):
        seed = np.zeros((B_n, d_z))
        seed[:, k] = 1.0
        _, dx = model.dynamics.backward(cache, seed)
        J[:, k, :] = dx
    A = J[:, :, :d_z]
    Bm = J[:, :, d_z:]
    AB = A @ Bm
    G = AB @ AB.transpose(0, 2, 1)
    G[:, np.arange(d_z), np.arange(d_z)] += eps
    return G


def dyn_metric_loss(z_hat, z_true, G_reg: np.ndarray, beta: float) -> float:
    """Blend (1-beta)*||e||^2 + beta*e^T G^{-1} e for e = z_true - z_hat.

    The inverse is applied through an SPD solve; gradients (taken elsewhere)
    flow to z_hat only, with G and z_true held constant.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    e = np.asarray(z_true, dtype=float).ravel() - np.asarray(z_hat, dtype=float).ravel()
    l2 = float(e @ e)
    if beta == 0.0:
        return l2
    w = cho_solve(cho_factor(G_reg, lower=True), e)
    return (1.0 - beta) * l2 + beta * float(e @ w)


# ---------------------------------------------------------------------------
# Latent model training
# ---------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    rec: float
    pred_rec: float
    dyn: float
    total: float
    beta: float


def write_loss_curves(path, records: list[EpochRecord]) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,rec,pred_rec,dyn,total,beta\n")
        for r in records:
            fh.write(f"{r.epoch},{r.rec!r},{r.pred_rec!r},{r.dyn!r},{r.total!r},{r.beta!r}\n")


def train_latent_model(model: LatentModel, dataset: DynamicsDataset,
                       cfg: TrainConfig, log=None) -> list[EpochRecord]:
    """Jointly train encoder, decoder and dynamics on one-step transitions.

    Per transition (x_t, u_t, x_{t+1}) the objective is
        lam_rec      * ||x_t     - dec(enc(x_t), env)||^2
      + lam_pred_rec * ||x_{t+1} - dec(dyn(enc(x_t), u_t), env)||^2
      + lam_dyn      * blended latent metric on dyn(enc(x_t), u_t)
    averaged over the batch. Deterministic in cfg.seed.
    """
    xt, u, xn, env_idx = dataset.transitions()
    env_flat = dataset.env_images.reshape(dataset.n_envs, -1)
    N = xt.shape[0]
    params = model.params()
    state = nn.AdamState(params, lr=cfg.lr)
    n_enc = len(model.encoder.params())
    n_dec = len(model.decoder.params())
    records = []
    for epoch in range(cfg.epochs):
        beta = beta_schedule(epoch, cfg.epochs)
        order = np.random.default_rng([cfg.seed, 7, epoch]).permutation(N)
        sums = np.zeros(3)
        for lo in range(0, N, cfg.batch_size):
            idx = order[lo: lo + cfg.batch_size]
            bx = np.asarray(xt[idx], dtype=float)
            bu = np.asarray(u[idx], dtype=float)
            bxn = np.asarray(xn[idx], dtype=float)
            benv = np.asarray(env_flat[env_idx[idx]], dtype=float)
            B = len(idx)

            # forward
            z, enc_cache = model.encoder.forward(bx, want_cache=True)
            rec_in = np.concatenate([z, benv], axis=1)
            x_rec, dec_cache1 = model.decoder.forward(rec_in, want_cache=True)
            z_hat, dyn_cache = model.dynamics.forward(
                np.concatenate([z, bu], axis=1), want_cache=True)
            pred_in = np.concatenate([z_hat, benv], axis=1)
            x_pred, dec_cache2 = model.decoder.forward(pred_in, want_cache=True)
            z_next = model.encoder.forward(bxn)          # constant target

            e_rec = x_rec - bx
            e_pred = x_pred - bxn
            e_dyn = z_next - z_hat
            rec = float((e_rec * e_rec).sum() / B)
            pred_rec = float((e_pred * e_pred).sum() / B)
            if beta > 0.0:
                G = gramian_batch(model, z, bu, cfg.gramian_eps)
                w = np.linalg.solve(G, e_dyn[:, :, None])[:, :, 0]
            else:
                w = e_dyn
            l2_terms = (e_dyn * e_dyn).sum(axis=1)
            qf_terms = (e_dyn * w).sum(axis=1)
            dyn_loss = float(((1.0 - beta) * l2_terms + beta * qf_terms).mean())
            total = cfg.lam_rec * rec + cfg.lam_pred_rec * pred_rec + cfg.lam_dyn * dyn_loss
            if not np.isfinite(total):
                raise RuntimeError(f"training diverged (non-finite loss) at epoch {epoch}")
            sums += (rec * B, pred_rec * B, dyn_loss * B)

            # backward
            g_dec1, d_rec_in = model.decoder.backward(
                dec_cache1, cfg.lam_rec * 2.0 * e_rec / B)
            g_dec2, d_pred_in = model.decoder.backward(
                dec_cache2, cfg.lam_pred_rec * 2.0 * e_pred / B)
            d_zhat = d_pred_in[:, : cfg.d_z]
            # latent metric: d/dz_hat of (1-b)||e||^2 + b e^T G^-1 e, e = z_next - z_hat
            d_zhat = d_zhat - cfg.lam_dyn * 2.0 / B * ((1.0 - beta) * e_dyn + beta * w)
            g_dyn, d_dyn_in = model.dynamics.backward(dyn_cache, d_zhat)
            d_z = d_rec_in[:, : cfg.d_z] + d_dyn_in[:, : cfg.d_z]
            g_enc, _ = model.encoder.backward(enc_cache, d_z)

            g_dec = [a + b for a, b in zip(g_dec1, g_dec2)]
            grads = g_enc + g_dec + g_dyn
            nn.adam_step(params, grads, state)

        rec_m, pred_m, dyn_m = sums / N
        total_m = cfg.lam_rec * rec_m + cfg.lam_pred_rec * pred_m + cfg.lam_dyn * dyn_m
        records.append(EpochRecord(epoch, rec_m, pred_m, dyn_m, total_m, beta))
        if log:
            log(f"epoch {epoch:3d}  rec {rec_m:9.4f}  pred {pred_m:9.4f}  "
                f"dyn {dyn_m:9.5f}  beta {beta:.2f}")
    _ = n_enc, n_dec
    return records


# ---------------------------------------------------------------------------
# Collision classifier training
# ---------------------------------------------------------------------------


def encode_collision_inputs(model: LatentModel, dataset: CollisionDataset,
                            chunk: int = 1024):
    """Render and encode both endpoints of every labeled pair. The encoder is
    used read-only."""
    wcfg = dataset.cfg
    N = len(dataset)
    za = np.empty((N, model.d_z))
    zb = np.empty((N, model.d_z))
    for lo in range(0, N, chunk):
        hi = min(lo + chunk, N)
        imgs_a = np.empty((hi - lo, model.image_side ** 2))
        imgs_b = np.empty_like(imgs_a)
        for i in range(lo, hi):
            env = dataset.env_images[dataset.env_index[i]]
            imgs_a[i - lo] = draw_robot(env, dataset.xa[i], wcfg).ravel()
            imgs_b[i - lo] = draw_robot(env, dataset.xb[i], wcfg).ravel()
        za[lo:hi] = model.encode(imgs_a)
        zb[lo:hi] = model.encode(imgs_b)
    return za, zb


def confusion_counts(logits: np.ndarray, labels: np.ndarray) -> dict:
    """Counts with 'collision free' as the positive class at threshold 0.5."""
    pred_free = logits.ravel() > 0.0
    actual_free = labels.ravel() > 0.5
    tp = int(np.sum(pred_free & actual_free))
    fp = int(np.sum(pred_free & ~actual_free))
    tn = int(np.sum(~pred_free & ~actual_free))
    fn = int(np.sum(~pred_free & actual_free))
    return {"TP": tp, "FP": fp, "TN": tn, "FN": fn}


def classifier_metrics(logits: np.ndarray, labels: np.ndarray) -> dict:
    c = confusion_counts(logits, labels)
    n = max(1, c["TP"] + c["FP"] + c["TN"] + c["FN"])
    n_coll = max(1, c["FP"] + c["TN"])
    return {
        "accuracy": (c["TP"] + c["TN"]) / n,
        "false_positive_rate": c["FP"] / n_coll,
        "confusion": c,
        "n": n,
    }


def train_collision_net(ccnet: nn.Network, model: LatentModel,
                        dataset: CollisionDataset, cfg: TrainConfig,
                        log=None) -> dict:
    """Binary cross-entropy training of the latent collision classifier.

    The latent model is frozen: only its encoder forward pass is used, to
    embed the pair endpoints. Returns held-out metrics (accuracy, confusion
    counts, false positive rate) on a 10% split.
    """
    za, zb = encode_collision_inputs(model, dataset)
    feats = np.asarray(dataset.features[dataset.env_index], dtype=float)
    X = np.concatenate([za, zb, feats], axis=1)
    y = np.asarray(dataset.labels, dtype=float)
    N = X.shape[0]
    perm = np.random.default_rng([cfg.seed, 11]).permutation(N)
    n_hold = max(1, int(round(N * cfg.holdout_frac)))
    hold, train = perm[:n_hold], perm[n_hold:]
    # extra weight on in-collision samples pushes mistakes toward the safe side
    weights = np.where(y > 0.5, 1.0, cfg.cc_collision_weight)
    params = ccnet.params()
    state = nn.AdamState(params, lr=cfg.cc_lr)
    for epoch in range(cfg.cc_epochs):
        order = np.random.default_rng([cfg.seed, 13, epoch]).permutation(len(train))
        for lo in range(0, len(train), cfg.cc_batch_size):
            idx = train[order[lo: lo + cfg.cc_batch_size]]
            logits, cache = ccnet.forward(X[idx], want_cache=True)
            l = logits[:, 0]
            p = nn.sigmoid(l)
            w = weights[idx]
            dlogit = (w * (p - y[idx]) / len(idx))[:, None]
            grads, _ = ccnet.backward(cache, dlogit)
            nn.adam_step(params, grads, state)
        if log:
            tr_logits = ccnet.forward(X[train])
            m = classifier_metrics(tr_logits, y[train])
            log(f"cc epoch {epoch:3d}  train acc {m['accuracy']:.4f}  "
                f"fpr {m['false_positive_rate']:.4f}")
    hold_logits = ccnet.forward(X[hold])
    return classifier_metrics(hold_logits, y[hold])


# ---------------------------------------------------------------------------
# Model bundle io
# ---------------------------------------------------------------------------

MODEL_FORMAT = "lsbmp-model-v1"


@dataclass
class ModelBundle:
    model: LatentModel
    collision: nn.Network | None = None
    train_config: TrainConfig = field(default_factory=TrainConfig)
    world_config: WorldConfig = field(default_factory=WorldConfig)
    sample_bank: np.ndarray | None = None      # (m, d_z) encoded corpus states
    collision_metrics: dict | None = None
    train_seconds: float | None = None

    def save(self, path):
        doc = {
            "format": MODEL_FORMAT,
            "d_z": self.model.d_z,
            "image_side": self.model.image_side,
            "encoder": self.model.encoder.to_json_dict(),
            "decoder": self.model.decoder.to_json_dict(),
            "dynamics": self.model.dynamics.to_json_dict(),
            "collision": None if self.collision is None else self.collision.to_json_dict(),
            "train_config": self.train_config.to_dict(),
            "world_config": self.world_config.to_dict(),
            "sample_bank": None if self.sample_bank is None else self.sample_bank.tolist(),
            "collision_metrics": self.collision_metrics,
            "train_seconds": self.train_seconds,
        }
        with open(path, "w") as fh:
            json.dump(doc, fh)

    @classmethod
    def load(cls, path) -> "ModelBundle":
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("format") != MODEL_FORMAT:
            raise ValueError(f"unsupported model format: {doc.get('format')!r}")
        model = LatentModel(
            encoder=nn.Network.from_json_dict(doc["encoder"]),
            decoder=nn.Network.from_json_dict(doc["decoder"]),
            dynamics=nn.Network.from_json_dict(doc["dynamics"]),
            d_z=doc["d_z"],
            image_side=doc["image_side"],
        )
        cc = doc.get("collision")
        return cls(
            model=model,
            collision=None if cc is None else nn.Network.from_json_dict(cc),
            train_config=TrainConfig.from_dict(doc["train_config"]),
            world_config=WorldConfig.from_dict(doc["world_config"]),
            sample_bank=(None if doc.get("sample_bank") is None
                         else np.asarray(doc["sample_bank"], dtype=float)),
            collision_metrics=doc.get("collision_metrics"),
            train_seconds=doc.get("train_seconds"),
        )
